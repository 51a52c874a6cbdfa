//! Workspace layout, manifest and atomic stage commits.
//!
//! Each stage writes into a hidden staging directory which is renamed into
//! place once complete; the manifest is then replaced via write-and-rename.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
/// Aborts the process after this many file writes; used to test atomicity.
pub const ENV_KILL_AFTER_WRITES: &str = "ATTRFORGE_KILL_AFTER_WRITES";

static WRITES: AtomicUsize = AtomicUsize::new(0);

fn count_write() {
    let n = WRITES.fetch_add(1, Ordering::SeqCst) + 1;
    if let Some(limit) = std::env::var(ENV_KILL_AFTER_WRITES)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n >= limit {
            eprintln!("kill injection: aborting after {n} writes");
            std::process::abort();
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    fs::read(path).map(|b| sha256_hex(&b)).map_err(|e| CliError::io(path, e))
}

/// One record per line, keys in declaration order, trailing newline.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Parses JSONL, reporting the 1-based line number of the first bad record.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    count_write();
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub dir: String,
    /// Digest of everything the stage consumed.
    pub inputs_sha256: String,
    pub artifacts: BTreeMap<String, Artifact>,
    pub counters: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub config: serde_json::Value,
    pub stages: BTreeMap<String, StageEntry>,
}

pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let ws = Self {
            root: root.to_path_buf(),
        };
        ws.clear_staging()?;
        Ok(ws)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn clear_staging(&self) -> Result<()> {
        let entries = fs::read_dir(&self.root).map_err(|e| CliError::io(&self.root, e))?;
        for entry in entries.flatten() {
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name.starts_with(".staging-") {
                fs::remove_dir_all(entry.path()).map_err(|e| CliError::io(entry.path(), e))?;
            } else if name.ends_with(".tmp") {
                fs::remove_file(entry.path()).map_err(|e| CliError::io(entry.path(), e))?;
            }
        }
        Ok(())
    }

    pub fn load_manifest(&self) -> Result<Option<Manifest>> {
        let p = self.path(MANIFEST);
        if !p.exists() {
            return Ok(None);
        }
        read_json(&p).map(Some)
    }

    /// Existing manifest for `run_id`, a fresh one if none exists, or an
    /// error if the workspace belongs to another configuration (unless `force`).
    pub fn manifest_for(&self, run_id: &str, config: serde_json::Value, force: bool) -> Result<Manifest> {
        match self.load_manifest()? {
            Some(m) if m.run_id == run_id => Ok(m),
            Some(m) if !force => Err(CliError::Validation(format!(
                "workspace {} holds run {} but the configuration gives run {run_id}; pass --force to start over",
                self.root.display(),
                m.run_id
            ))),
            _ => Ok(Manifest {
                run_id: run_id.to_string(),
                config,
                stages: BTreeMap::new(),
            }),
        }
    }

    pub fn save_manifest(&self, m: &Manifest) -> Result<()> {
        write_atomic(&self.path(MANIFEST), pretty(m).as_bytes())
    }

    /// Artifacts whose file is missing or whose digest differs.
    pub fn verify(&self, entry: &StageEntry) -> Vec<String> {
        entry
            .artifacts
            .values()
            .filter_map(|a| {
                let p = self.path(&a.path);
                match sha256_file(&p) {
                    Ok(d) if d == a.sha256 => None,
                    Ok(_) => Some(format!("{}: digest mismatch", a.path)),
                    Err(_) => Some(format!("{}: missing", a.path)),
                }
            })
            .collect()
    }

    /// True when `stage` completed with the same inputs and its files are intact.
    pub fn is_complete(&self, m: &Manifest, stage: &str, inputs_sha256: &str) -> bool {
        m.stages
            .get(stage)
            .is_some_and(|e| e.inputs_sha256 == inputs_sha256 && self.verify(e).is_empty())
    }

    pub fn stage(&self, name: &str) -> Result<StageWriter> {
        let staging = self.path(&format!(".staging-{name}"));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
        Ok(StageWriter {
            name: name.to_string(),
            staging,
            artifacts: BTreeMap::new(),
        })
    }
}

pub struct StageWriter {
    name: String,
    staging: PathBuf,
    artifacts: BTreeMap<String, Artifact>,
}

impl StageWriter {
    fn put(&mut self, file: &str, bytes: &[u8], records: Option<usize>) -> Result<()> {
        let p = self.staging.join(file);
        fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))?;
        count_write();
        let key = file.rsplit_once('.').map_or(file, |(stem, _)| stem).to_string();
        self.artifacts.insert(
            key,
            Artifact {
                path: format!("{}/{file}", self.name),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
                records,
            },
        );
        Ok(())
    }

    pub fn jsonl<T: Serialize>(&mut self, file: &str, records: &[T]) -> Result<()> {
        self.put(file, to_jsonl(records).as_bytes(), Some(records.len()))
    }

    pub fn json<T: Serialize>(&mut self, file: &str, value: &T) -> Result<()> {
        self.put(file, pretty(value).as_bytes(), None)
    }

    pub fn text(&mut self, file: &str, text: &str) -> Result<()> {
        self.put(file, text.as_bytes(), None)
    }

    /// Moves the staged files into place and records the stage in `manifest`.
    pub fn commit(
        self,
        ws: &Workspace,
        manifest: &mut Manifest,
        inputs_sha256: String,
        counters: BTreeMap<String, serde_json::Value>,
        elapsed_ms: Option<u64>,
    ) -> Result<()> {
        let target = ws.path(&self.name);
        manifest.stages.remove(&self.name);
        if target.exists() {
            // Forget the old stage before its files disappear.
            ws.save_manifest(manifest)?;
            fs::remove_dir_all(&target).map_err(|e| CliError::io(&target, e))?;
        }
        fs::rename(&self.staging, &target).map_err(|e| CliError::io(&target, e))?;
        manifest.stages.insert(
            self.name.clone(),
            StageEntry {
                dir: self.name,
                inputs_sha256,
                artifacts: self.artifacts,
                counters,
                elapsed_ms,
            },
        );
        ws.save_manifest(manifest)
    }
}
