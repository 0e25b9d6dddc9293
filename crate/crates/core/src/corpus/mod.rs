//! Rulebook data model: grammar rules, parallel examples, lexicons and IGT.

mod book;
mod extract;
mod io;
mod stats;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rulecraft::CodeRule;
use crate::ruleengine::RuleProgram;
use crate::text;

pub use book::{book_string, book_string_with, rule_view, RuleFormat};
pub use extract::{extract_from_prose, ExtractOutput, ExtractPatterns, ExtractedRule, RawExample, SkipEntry};
pub use io::{load_rulebook, save_rulebook};
pub use stats::{compute_stats, DatasetStats};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("parse error in {file} line {line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("rule {0} has no code form")]
    MissingCode(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

macro_rules! closed_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $s)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $s),+ }
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($s => Ok($name::$variant),)+
                    other => Err(format!(
                        "unknown {} {:?} (expected one of: {})",
                        stringify!($name),
                        other,
                        [$($s),+].join(", ")
                    )),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

closed_enum!(
    /// Atomic operation needed when applying a rule.
    ActionKind {
        Add => "add",
        Delete => "delete",
        Reorder => "reorder",
        Break => "break",
        Select => "select",
    }
);

closed_enum!(Difficulty {
    Easy => "easy",
    Medium => "medium",
    Hard => "hard",
});

closed_enum!(
    /// WALS-style linguistic domain of a rule.
    WalsDomain {
        Morphology => "morphology",
        NominalCategories => "nominal_categories",
        NominalSyntax => "nominal_syntax",
        VerbalCategories => "verbal_categories",
        WordOrder => "word_order",
        SimpleClauses => "simple_clauses",
        ComplexSentences => "complex_sentences",
        Lexicon => "lexicon",
    }
);

closed_enum!(
    /// Translation direction relative to the low-resource language.
    Direction {
        LoToHi => "lo_to_hi",
        HiToLo => "hi_to_lo",
    }
);

closed_enum!(Granularity {
    Phrase => "phrase",
    Sentence => "sentence",
});

closed_enum!(IgtSource {
    Book => "book",
    Generated => "generated",
});

impl Direction {
    /// Short label such as `za2zh` for a book's language pair.
    pub fn label(self, book: &Rulebook) -> String {
        let (lo, hi) = (&book.manifest.source_language, &book.manifest.target_language);
        match self {
            Direction::LoToHi => format!("{lo}2{hi}"),
            Direction::HiToLo => format!("{hi}2{lo}"),
        }
    }
}

// The enum comes from `closed_enum!`, which does not take a `#[default]`.
#[allow(clippy::derivable_impls)]
impl Default for Direction {
    fn default() -> Self {
        Direction::LoToHi
    }
}

/// Bilingual word map attached to one example.
///
/// Entries keep their authored order, which is the order they are shown in
/// prompts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lexicon(pub IndexMap<String, String>);

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, k: impl Into<String>, v: impl Into<String>) {
        self.0.insert(k.into(), v.into());
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &String)> {
        self.0.iter()
    }

    /// Entries as an input-side to output-side map for `want`, given that the
    /// stored entries run in direction `stored`. Low-resource keys are
    /// lowercased. On inversion the first entry for a value wins.
    pub fn oriented(&self, stored: Direction, want: Direction) -> IndexMap<String, String> {
        let mut out = IndexMap::new();
        for (k, v) in &self.0 {
            let (lo, hi) = match stored {
                Direction::LoToHi => (k, v),
                Direction::HiToLo => (v, k),
            };
            match want {
                Direction::LoToHi => {
                    out.entry(lo.to_lowercase()).or_insert_with(|| hi.clone());
                }
                Direction::HiToLo => {
                    out.entry(hi.clone()).or_insert_with(|| lo.to_lowercase());
                }
            }
        }
        out
    }
}

impl FromIterator<(String, String)> for Lexicon {
    fn from_iter<T: IntoIterator<Item = (String, String)>>(iter: T) -> Self {
        Lexicon(iter.into_iter().collect())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("IGT has {surface} surface tokens but {gloss} glosses")]
pub struct IgtAlignmentError {
    pub surface: usize,
    pub gloss: usize,
}

/// Interlinear glossed text: one gloss per surface token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "IgtRecord", into = "IgtRecord")]
pub struct Igt {
    surface_tokens: Vec<String>,
    gloss_tokens: Vec<String>,
    gloss_symbols_used: BTreeSet<String>,
}

#[derive(Serialize, Deserialize)]
struct IgtRecord {
    surface: Vec<String>,
    gloss: Vec<String>,
}

impl TryFrom<IgtRecord> for Igt {
    type Error = IgtAlignmentError;
    fn try_from(r: IgtRecord) -> Result<Self, Self::Error> {
        Igt::new(r.surface, r.gloss)
    }
}

impl From<Igt> for IgtRecord {
    fn from(i: Igt) -> Self {
        IgtRecord { surface: i.surface_tokens, gloss: i.gloss_tokens }
    }
}

impl Igt {
    pub fn new(surface: Vec<String>, gloss: Vec<String>) -> Result<Self, IgtAlignmentError> {
        if surface.len() != gloss.len() {
            return Err(IgtAlignmentError { surface: surface.len(), gloss: gloss.len() });
        }
        let gloss_symbols_used = gloss.iter().flat_map(|g| gloss_symbols(g)).collect();
        Ok(Igt { surface_tokens: surface, gloss_tokens: gloss, gloss_symbols_used })
    }

    pub fn surface_tokens(&self) -> &[String] {
        &self.surface_tokens
    }

    pub fn gloss_tokens(&self) -> &[String] {
        &self.gloss_tokens
    }

    pub fn gloss_symbols_used(&self) -> &BTreeSet<String> {
        &self.gloss_symbols_used
    }

    /// Symbols not present in `inventory` (compared case-insensitively).
    pub fn unknown_symbols(&self, inventory: &[String]) -> Vec<String> {
        let inv: BTreeSet<String> = inventory.iter().map(|s| s.to_uppercase()).collect();
        self.gloss_symbols_used.iter().filter(|s| !inv.contains(*s)).cloned().collect()
    }

    pub fn gloss_line(&self) -> String {
        self.gloss_tokens.join(" ")
    }
}

/// Grammatical symbols inside one gloss, e.g. `CL-个` yields `CL`.
pub fn gloss_symbols(gloss: &str) -> Vec<String> {
    gloss
        .split(['-', '.', '=', ':', '>'])
        .filter(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric()))
        .filter(|p| {
            let letters: String = p.chars().filter(|c| c.is_ascii_alphabetic()).collect();
            if letters.is_empty() {
                return false;
            }
            let person = p.starts_with(|c: char| c.is_ascii_digit())
                && matches!(letters.to_lowercase().as_str(), "sg" | "pl" | "du");
            person || letters.chars().all(|c| c.is_ascii_uppercase())
        })
        .map(|p| p.to_uppercase())
        .collect()
}

/// One atomic grammar rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrammarRule {
    pub id: String,
    pub text: String,
    pub rule_language: String,
    pub actions: BTreeSet<ActionKind>,
    pub difficulty: Difficulty,
    pub wals_domain: WalsDomain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_application: Option<CodeRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_retrieval: Option<CodeRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<RuleProgram>,
}

/// A parallel phrase or sentence that requires one or more rules.
///
/// `source_text` is written in the book's source (low-resource) language and
/// `target_text` in its target language, independent of the direction an
/// experiment translates in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParallelExample {
    pub id: String,
    pub rule_ids: Vec<String>,
    pub source_text: String,
    pub target_text: String,
    pub lexicon: Lexicon,
    #[serde(default, skip_serializing_if = "is_lo_to_hi")]
    pub lexicon_direction: Direction,
    /// Optional word-class tags used by rule programs.
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub tags: IndexMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub igt: Option<Igt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub igt_source: Option<IgtSource>,
    pub granularity: Granularity,
}

fn is_lo_to_hi(d: &Direction) -> bool {
    *d == Direction::LoToHi
}

impl ParallelExample {
    /// Text to translate in `dir`.
    pub fn input_text(&self, dir: Direction) -> &str {
        match dir {
            Direction::LoToHi => &self.source_text,
            Direction::HiToLo => &self.target_text,
        }
    }

    /// Reference translation in `dir`.
    pub fn reference(&self, dir: Direction) -> &str {
        match dir {
            Direction::LoToHi => &self.target_text,
            Direction::HiToLo => &self.source_text,
        }
    }

    /// Lexicon oriented from the input side to the output side of `dir`.
    pub fn lexicon_for(&self, dir: Direction) -> IndexMap<String, String> {
        self.lexicon.oriented(self.lexicon_direction, dir)
    }

    pub fn is_multi_rule(&self) -> bool {
        self.rule_ids.len() > 1
    }
}

/// Manifest stored in `book.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BookManifest {
    pub name: String,
    /// Low-resource language tag, e.g. `za`.
    pub source_language: String,
    /// High-resource language tag, e.g. `zh`.
    pub target_language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_language_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_language_name: Option<String>,
    /// Language of prompt templates (`zh` or `en`).
    #[serde(default = "default_prompt_language")]
    pub prompt_language: String,
    #[serde(default)]
    pub gloss_inventory: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extract_patterns: Option<ExtractPatterns>,
}

fn default_prompt_language() -> String {
    "zh".into()
}

impl BookManifest {
    pub fn new(name: &str, source_language: &str, target_language: &str) -> Self {
        BookManifest {
            name: name.into(),
            source_language: source_language.into(),
            target_language: target_language.into(),
            source_language_name: None,
            target_language_name: None,
            prompt_language: default_prompt_language(),
            gloss_inventory: Vec::new(),
            extract_patterns: None,
        }
    }
}

/// Validated, immutable collection of rules and examples.
#[derive(Clone, Debug)]
pub struct Rulebook {
    pub manifest: BookManifest,
    rules: Vec<GrammarRule>,
    examples: Vec<ParallelExample>,
    rule_index: HashMap<String, usize>,
    example_index: HashMap<String, usize>,
}

impl PartialEq for Rulebook {
    fn eq(&self, other: &Self) -> bool {
        self.manifest == other.manifest && self.rules == other.rules && self.examples == other.examples
    }
}

pub(crate) fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

impl Rulebook {
    /// Validates and sorts rules and examples by id (natural order).
    pub fn new(
        manifest: BookManifest,
        mut rules: Vec<GrammarRule>,
        mut examples: Vec<ParallelExample>,
    ) -> Result<Self, CorpusError> {
        rules.sort_by(|a, b| text::natural_cmp(&a.id, &b.id));
        examples.sort_by(|a, b| text::natural_cmp(&a.id, &b.id));

        let mut rule_index = HashMap::new();
        for (i, r) in rules.iter().enumerate() {
            if !valid_id(&r.id) {
                return Err(CorpusError::Schema(format!("invalid rule id {:?}", r.id)));
            }
            if r.text.trim().is_empty() {
                return Err(CorpusError::Schema(format!("rule {} has empty text", r.id)));
            }
            if let Some(p) = &r.program {
                p.validate().map_err(|e| CorpusError::Schema(format!("rule {}: {e}", r.id)))?;
            }
            if rule_index.insert(r.id.clone(), i).is_some() {
                return Err(CorpusError::Integrity(format!("duplicate rule id {}", r.id)));
            }
        }
        let mut example_index = HashMap::new();
        for (i, e) in examples.iter().enumerate() {
            if !valid_id(&e.id) {
                return Err(CorpusError::Schema(format!("invalid example id {:?}", e.id)));
            }
            if e.rule_ids.is_empty() {
                return Err(CorpusError::Integrity(format!("example {} has no rule ids", e.id)));
            }
            let mut seen = BTreeSet::new();
            for rid in &e.rule_ids {
                if !rule_index.contains_key(rid) {
                    return Err(CorpusError::Integrity(format!(
                        "example {} references unknown rule {rid}",
                        e.id
                    )));
                }
                if !seen.insert(rid) {
                    return Err(CorpusError::Integrity(format!("example {} repeats rule {rid}", e.id)));
                }
            }
            if example_index.insert(e.id.clone(), i).is_some() {
                return Err(CorpusError::Integrity(format!("duplicate example id {}", e.id)));
            }
        }
        Ok(Rulebook { manifest, rules, examples, rule_index, example_index })
    }

    pub fn empty(manifest: BookManifest) -> Self {
        Rulebook::new(manifest, Vec::new(), Vec::new()).expect("empty book is valid")
    }

    pub fn rules(&self) -> &[GrammarRule] {
        &self.rules
    }

    pub fn examples(&self) -> &[ParallelExample] {
        &self.examples
    }

    pub fn rule(&self, id: &str) -> Option<&GrammarRule> {
        self.rule_index.get(id).map(|&i| &self.rules[i])
    }

    /// 1-based position of a rule in book order.
    pub fn rule_number(&self, id: &str) -> Option<usize> {
        self.rule_index.get(id).map(|&i| i + 1)
    }

    pub fn example(&self, id: &str) -> Option<&ParallelExample> {
        self.example_index.get(id).map(|&i| &self.examples[i])
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Single-rule examples whose only rule is `rule_id`.
    pub fn examples_for_rule<'a>(&'a self, rule_id: &str) -> impl Iterator<Item = &'a ParallelExample> + 'a {
        let rule_id = rule_id.to_string();
        self.examples.iter().filter(move |e| e.rule_ids.len() == 1 && e.rule_ids[0] == rule_id)
    }

    /// Whether every rule required by `ex` carries an oracle program.
    pub fn is_programmed(&self, ex: &ParallelExample) -> bool {
        ex.rule_ids.iter().all(|r| self.rule(r).is_some_and(|r| r.program.is_some()))
    }

    /// Returns a copy of this book with `f` applied to every rule.
    pub fn map_rules(&self, f: impl FnMut(&mut GrammarRule)) -> Result<Rulebook, CorpusError> {
        let mut rules = self.rules.clone();
        rules.iter_mut().for_each(f);
        Rulebook::new(self.manifest.clone(), rules, self.examples.clone())
    }

    /// Returns a copy of this book with `f` applied to every example.
    pub fn map_examples(&self, f: impl FnMut(&mut ParallelExample)) -> Result<Rulebook, CorpusError> {
        let mut examples = self.examples.clone();
        examples.iter_mut().for_each(f);
        Rulebook::new(self.manifest.clone(), self.rules.clone(), examples)
    }

    pub fn source_language_name(&self) -> String {
        self.manifest
            .source_language_name
            .clone()
            .unwrap_or_else(|| language_name(&self.manifest.source_language, &self.manifest.prompt_language))
    }

    pub fn target_language_name(&self) -> String {
        self.manifest
            .target_language_name
            .clone()
            .unwrap_or_else(|| language_name(&self.manifest.target_language, &self.manifest.prompt_language))
    }

    /// SHA-256 over the canonical serialized bundle.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.manifest).expect("manifest serializes"));
        for r in &self.rules {
            h.update(serde_json::to_vec(r).expect("rule serializes"));
            h.update(b"\n");
        }
        for e in &self.examples {
            h.update(serde_json::to_vec(e).expect("example serializes"));
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

fn language_name(tag: &str, prompt_language: &str) -> String {
    let zh = prompt_language == "zh";
    match (tag, zh) {
        ("za", true) => "壮语".into(),
        ("zh", true) => "汉语".into(),
        ("en", true) => "英语".into(),
        ("kgv", true) => "卡拉芒语".into(),
        ("za", false) => "Zhuang".into(),
        ("zh", false) => "Chinese".into(),
        ("en", false) => "English".into(),
        ("kgv", false) => "Kalamang".into(),
        (other, _) => other.to_string(),
    }
}

/// A low-resource token that no lexicon entry accounts for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CoverageWarning {
    pub example_id: String,
    pub token: String,
}

/// Lexicon-coverage check. Uncovered tokens are warnings, never errors.
///
/// A token counts as covered when it is a lexicon key, part of a multi-word
/// key, or contains a key (affixed forms such as `doxndaq` for `ndaq`).
pub fn lexicon_coverage(book: &Rulebook) -> Vec<CoverageWarning> {
    let mut out = Vec::new();
    for ex in book.examples() {
        let keys: Vec<String> = ex.lexicon_for(Direction::LoToHi).keys().cloned().collect();
        let words: BTreeSet<&str> = keys.iter().flat_map(|k| k.split_whitespace()).collect();
        for tok in text::latin_tokens(&ex.source_text) {
            let covered = words.contains(tok.as_str()) || keys.iter().any(|k| tok.contains(k.as_str()));
            if !covered {
                out.push(CoverageWarning { example_id: ex.id.clone(), token: tok });
            }
        }
    }
    out
}
