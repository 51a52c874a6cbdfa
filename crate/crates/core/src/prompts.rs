//! Prompt templates with bracketed placeholders (`[Question]`, `[Response]`,
//! `[Claim]`, `[Documents]`).
//!
//! Defaults are compiled in from `templates/`; a directory holding files with
//! the same names overrides them.

use std::fs;
use std::path::Path;

use crate::citation::Document;

pub const QUESTION: &str = "Question";
pub const RESPONSE: &str = "Response";
pub const CLAIM: &str = "Claim";
pub const DOCUMENTS: &str = "Documents";

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template {name} is missing placeholder [{placeholder}]")]
    MissingPlaceholder { name: String, placeholder: String },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    text: String,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            text: text.into(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn require(&self, placeholders: &[&str]) -> Result<(), TemplateError> {
        for p in placeholders {
            if !self.text.contains(&format!("[{p}]")) {
                return Err(TemplateError::MissingPlaceholder {
                    name: self.name.clone(),
                    placeholder: (*p).to_string(),
                });
            }
        }
        Ok(())
    }

    /// Substitutes placeholders in one pass over the template, so values that
    /// happen to contain `[Claim]` and the like are inserted verbatim.
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.text.len() + 256);
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('[') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let hit = after.find(']').and_then(|close| {
                let key = &after[..close];
                values
                    .iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, v)| (close, *v))
            });
            match hit {
                Some((close, value)) => {
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                None => {
                    out.push('[');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

/// `Document [k](Title: ...): body`, one per line, 1-based.
pub fn render_documents<'a>(docs: impl IntoIterator<Item = &'a Document>) -> String {
    docs.into_iter()
        .enumerate()
        .map(|(i, d)| format!("Document [{}](Title: {}): {}", i + 1, d.title, d.body.trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub response_generation: PromptTemplate,
    pub claim_decomposition: PromptTemplate,
    pub document_generation: PromptTemplate,
    pub attributed_answer: PromptTemplate,
    pub attributed_answer_yesno: PromptTemplate,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            response_generation: PromptTemplate::new(
                "response_generation",
                include_str!("../templates/response_generation.txt"),
            ),
            claim_decomposition: PromptTemplate::new(
                "claim_decomposition",
                include_str!("../templates/claim_decomposition.txt"),
            ),
            document_generation: PromptTemplate::new(
                "document_generation",
                include_str!("../templates/document_generation.txt"),
            ),
            attributed_answer: PromptTemplate::new(
                "attributed_answer",
                include_str!("../templates/attributed_answer.txt"),
            ),
            attributed_answer_yesno: PromptTemplate::new(
                "attributed_answer_yesno",
                include_str!("../templates/attributed_answer_yesno.txt"),
            ),
        }
    }
}

impl PromptSet {
    /// Loads `<name>.txt` files from `dir`, falling back to the built-in
    /// template for any file that is absent.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::default();
        for tpl in set.templates_mut() {
            let path = dir.join(format!("{}.txt", tpl.name));
            if path.exists() {
                tpl.text = fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
            }
        }
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        self.response_generation.require(&[QUESTION])?;
        self.claim_decomposition.require(&[RESPONSE])?;
        self.document_generation.require(&[CLAIM])?;
        self.attributed_answer.require(&[QUESTION, DOCUMENTS])?;
        self.attributed_answer_yesno.require(&[QUESTION, DOCUMENTS])
    }

    fn templates_mut(&mut self) -> [&mut PromptTemplate; 5] {
        [
            &mut self.response_generation,
            &mut self.claim_decomposition,
            &mut self.document_generation,
            &mut self.attributed_answer,
            &mut self.attributed_answer_yesno,
        ]
    }

    pub fn closed_book(&self, question: &str) -> String {
        self.response_generation.render(&[(QUESTION, question)])
    }

    pub fn decomposition(&self, response: &str) -> String {
        self.claim_decomposition.render(&[(RESPONSE, response)])
    }

    pub fn document(&self, claims: &[&str]) -> String {
        self.document_generation
            .render(&[(CLAIM, &claims.join("\n"))])
    }

    pub fn attribution<'a>(
        &self,
        question: &str,
        docs: impl IntoIterator<Item = &'a Document>,
    ) -> String {
        self.attributed_answer
            .render(&[(QUESTION, question), (DOCUMENTS, &render_documents(docs))])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PromptSet::default().validate().unwrap();
    }

    #[test]
    fn question_placeholder_replaced_verbatim() {
        let p = PromptSet::default().closed_book("Why is the sky blue? [Claim] [1]");
        assert!(p.ends_with("Question: Why is the sky blue? [Claim] [1]\n"));
        assert!(!p.contains("[Question]"));
    }

    #[test]
    fn claims_joined_by_newline() {
        let p = PromptSet::default().document(&["Claim one.", "Claim two."]);
        assert!(p.contains("Claim: Claim one.\nClaim two."));
    }

    #[test]
    fn attribution_prompt_lists_documents_in_order() {
        let docs = [Document::new("a", "First", "Alpha body."), Document::new("b", "Second", "Beta body.")];
        let p = PromptSet::default().attribution("Q?", &docs);
        let first = p.find("Document [1](Title: First): Alpha body.").unwrap();
        let second = p.find("Document [2](Title: Second): Beta body.").unwrap();
        assert!(first < second);
        // The instruction's own "[1][2][3]" is not a placeholder.
        assert!(p.contains("use [1][2][3]"));
    }

    #[test]
    fn missing_placeholder_rejected() {
        let t = PromptTemplate::new("x", "no placeholders");
        assert!(matches!(t.require(&[QUESTION]), Err(TemplateError::MissingPlaceholder { .. })));
    }
}
