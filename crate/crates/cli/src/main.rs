use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use attrforge::commands::{eval, iterate, report, synth, Session, StageOutcome};
use attrforge::config::{Overrides, RunConfig};
use attrforge::CliError;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "attrforge", version, about = "Self-taught attribution data pipeline")]
struct Cli {
    /// TOML run configuration (ATTRFORGE_CONFIG takes precedence).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    /// Rerun stages that are already complete.
    #[arg(long, global = true)]
    force: bool,
    /// Bind every model role to the deterministic mock backend.
    #[arg(long, global = true)]
    mock: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize attributed examples and the warm-up dataset.
    Synth {
        #[arg(long)]
        queries: Option<PathBuf>,
    },
    /// Sample, score, select and pair candidates for one iteration.
    Iterate {
        #[arg(long = "iter")]
        iteration: u32,
    },
    /// Score predictions for correctness and citation quality.
    Eval {
        #[arg(long, value_enum)]
        adapter: eval::Adapter,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gold: Option<PathBuf>,
    },
    /// Summarize the workspace manifest.
    Report {
        #[arg(long)]
        json: bool,
    },
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_outcome(o: &StageOutcome) {
    let verb = if o.skipped { "up to date" } else { "done" };
    let counters = o
        .counters
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ");
    emit(&format!("{} {verb}: {counters}\n", o.stage));
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ov = Overrides {
        config: cli.config,
        seed: cli.seed,
        parallelism: cli.parallelism,
        workspace: cli.workspace,
        queries: match &cli.command {
            Command::Synth { queries } => queries.clone(),
            _ => None,
        },
        mock: cli.mock,
    };
    let cfg = RunConfig::load(&ov)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Report { json } => {
            let summary = report::run(cfg.workspace()?)?;
            if json {
                emit(&format!("{}\n", serde_json::to_string_pretty(&summary).expect("summary serializes")));
            } else {
                emit(&report::render(&summary));
            }
            Ok(())
        }
        command => {
            let session = Session::open(cfg, cli.force)?;
            match command {
                Command::Synth { .. } => print_outcome(&synth::run(&session)?),
                Command::Iterate { iteration } => print_outcome(&iterate::run(&session, iteration)?),
                Command::Eval {
                    adapter,
                    predictions,
                    gold,
                } => {
                    let (outcome, rep) = eval::run(&session, adapter, &predictions, gold.as_deref())?;
                    print_outcome(&outcome);
                    emit(&rep.table());
                }
                Command::Report { .. } => unreachable!("handled above"),
            }
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
