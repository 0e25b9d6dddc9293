use serde::{Deserialize, Serialize};

use super::{CorpusError, GrammarRule, Rulebook};
use crate::rulecraft::CodeStyle;

/// Presentation of a rule in prompts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum RuleFormat {
    Text,
    Code,
}

impl RuleFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleFormat::Text => "text",
            RuleFormat::Code => "code",
        }
    }
}

impl std::str::FromStr for RuleFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" => Ok(RuleFormat::Text),
            "code" => Ok(RuleFormat::Code),
            o => Err(format!("unknown rule format {o:?}")),
        }
    }
}

/// The rule as shown in a prompt: its text, or the rendered code form of the
/// requested style.
pub fn rule_view(rule: &GrammarRule, format: RuleFormat, style: CodeStyle) -> Result<String, CorpusError> {
    match format {
        RuleFormat::Text => Ok(rule.text.clone()),
        RuleFormat::Code => {
            let code = match style {
                CodeStyle::Application => rule.code_application.as_ref(),
                CodeStyle::RetrievalCheck => rule.code_retrieval.as_ref(),
            };
            code.map(|c| c.render()).ok_or_else(|| CorpusError::MissingCode(rule.id.clone()))
        }
    }
}

/// The whole book as one string: `Rule {n}: {content}` blocks in book order,
/// numbered from 1. Code format uses application-style code.
pub fn book_string(book: &Rulebook, format: RuleFormat) -> Result<String, CorpusError> {
    book_string_with(book, format, CodeStyle::Application)
}

pub fn book_string_with(book: &Rulebook, format: RuleFormat, style: CodeStyle) -> Result<String, CorpusError> {
    let mut blocks = Vec::with_capacity(book.rules().len());
    for (i, rule) in book.rules().iter().enumerate() {
        blocks.push(format!("Rule {}: {}", i + 1, rule_view(rule, format, style)?));
    }
    Ok(blocks.join("\n\n"))
}
