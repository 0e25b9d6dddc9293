//! Rule retrieval: lexical BM25, and LLM-based Full-Book and Rule-by-Rule
//! selection over textual or code-format rules.

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{book_string_with, rule_view, CorpusError, Direction, ParallelExample, RuleFormat, Rulebook};
use crate::llm::{LlmClient, LlmError, Message, RequestTag, CLASSIFY_MAX_TOKENS, DEFAULT_MAX_TOKENS};
use crate::prompts::{self, Lang};
use crate::rulecraft::CodeStyle;
use crate::text;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot index an empty rulebook")]
    EmptyBook,
    #[error("unknown instance {0}")]
    UnknownInstance(String),
    #[error("prompt needs about {estimated} tokens, over the context budget of {budget}")]
    ContextOverflow { estimated: usize, budget: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Llm(LlmError),
}

impl From<LlmError> for RetrievalError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::ContextOverflow { estimated, budget } => RetrievalError::ContextOverflow { estimated, budget },
            other => RetrievalError::Llm(other),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Bm25,
    FullBook,
    RuleByRule,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Bm25 => "bm25",
            Strategy::FullBook => "full_book",
            Strategy::RuleByRule => "rule_by_rule",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bm25" => Ok(Strategy::Bm25),
            "full_book" => Ok(Strategy::FullBook),
            "rule_by_rule" => Ok(Strategy::RuleByRule),
            o => Err(format!("unknown retrieval strategy {o:?}")),
        }
    }
}

/// What one BM25 document covers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocScope {
    #[default]
    RuleText,
    RuleTextPlusExamples,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.5, b: 0.75 }
    }
}

/// Mixed-script tokens: bigrams over each run of CJK ideographs (a lone
/// ideograph stays a unigram) plus lowercased alphanumeric words.
pub fn bm25_tokens(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut run: Vec<char> = Vec::new();
    let mut word = String::new();
    let flush_run = |run: &mut Vec<char>, out: &mut Vec<String>| {
        match run.len() {
            0 => {}
            1 => out.push(run[0].to_string()),
            _ => out.extend(run.windows(2).map(|w| w.iter().collect::<String>())),
        }
        run.clear();
    };
    let flush_word = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            out.push(std::mem::take(word).to_lowercase());
        }
    };
    for c in s.chars() {
        if text::is_cjk_ideograph(c) {
            flush_word(&mut word, &mut out);
            run.push(c);
        } else if c.is_alphanumeric() {
            flush_run(&mut run, &mut out);
            word.push(c);
        } else {
            flush_run(&mut run, &mut out);
            flush_word(&mut word, &mut out);
        }
    }
    flush_run(&mut run, &mut out);
    flush_word(&mut word, &mut out);
    out
}

/// Okapi BM25 over one document per rule.
#[derive(Clone, Debug)]
pub struct Bm25Index {
    ids: Vec<String>,
    df: HashMap<String, usize>,
    tf: Vec<HashMap<String, usize>>,
    lens: Vec<usize>,
    avgdl: f64,
    params: Bm25Params,
}

impl Bm25Index {
    /// Builds from `(id, tokens)` documents; ids are assumed unique and in
    /// tie-break order.
    pub fn from_documents(docs: Vec<(String, Vec<String>)>, params: Bm25Params) -> Result<Self, RetrievalError> {
        if docs.is_empty() {
            return Err(RetrievalError::EmptyBook);
        }
        let mut ids = Vec::with_capacity(docs.len());
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut tf = Vec::with_capacity(docs.len());
        let mut lens = Vec::with_capacity(docs.len());
        for (id, tokens) in docs {
            let mut counts: HashMap<String, usize> = HashMap::new();
            for t in &tokens {
                *counts.entry(t.clone()).or_default() += 1;
            }
            for t in counts.keys() {
                *df.entry(t.clone()).or_default() += 1;
            }
            ids.push(id);
            lens.push(tokens.len());
            tf.push(counts);
        }
        let total: usize = lens.iter().sum();
        // Guard against all-empty documents so avgdl stays positive.
        let avgdl = (total as f64 / ids.len() as f64).max(f64::MIN_POSITIVE);
        Ok(Bm25Index { ids, df, tf, lens, avgdl, params })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn df(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.df(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Score of document `i` for query tokens; repeated query terms count
    /// repeatedly.
    pub fn score(&self, query: &[String], i: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let norm = k1 * (1.0 - b + b * self.lens[i] as f64 / self.avgdl);
        query
            .iter()
            .map(|t| {
                let f = self.tf[i].get(t).copied().unwrap_or(0) as f64;
                if f == 0.0 {
                    0.0
                } else {
                    self.idf(t) * f * (k1 + 1.0) / (f + norm)
                }
            })
            .sum()
    }

    /// Top `k` documents by score, ties broken by document order, zero
    /// scores excluded.
    pub fn query_tokens(&self, query: &[String], k: usize) -> Vec<(String, f64)> {
        let mut scored: Vec<(usize, f64)> =
            (0..self.ids.len()).map(|i| (i, self.score(query, i))).filter(|(_, s)| *s > 0.0).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.into_iter().take(k).map(|(i, s)| (self.ids[i].clone(), s)).collect()
    }
}

pub fn bm25_build(book: &Rulebook, scope: DocScope, params: Bm25Params) -> Result<Bm25Index, RetrievalError> {
    let docs = book
        .rules()
        .iter()
        .map(|r| {
            let mut doc = r.text.clone();
            if scope == DocScope::RuleTextPlusExamples {
                for e in book.examples_for_rule(&r.id) {
                    doc.push('\n');
                    doc.push_str(&e.source_text);
                    doc.push('\n');
                    doc.push_str(&e.target_text);
                }
            }
            (r.id.clone(), bm25_tokens(&doc))
        })
        .collect();
    Bm25Index::from_documents(docs, params)
}

pub fn bm25_query(index: &Bm25Index, sentence: &str, k: usize) -> Vec<(String, f64)> {
    index.query_tokens(&bm25_tokens(sentence), k.max(1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub instance_id: String,
    pub strategy: Strategy,
    pub rule_format: RuleFormat,
    pub retrieved: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_llm_output: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default)]
    pub partial: bool,
}

/// Settings shared by the LLM strategies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalOptions {
    pub rule_format: RuleFormat,
    pub include_lexicon: bool,
    pub direction: Direction,
}

impl Default for RetrievalOptions {
    fn default() -> Self {
        RetrievalOptions { rule_format: RuleFormat::Text, include_lexicon: true, direction: Direction::LoToHi }
    }
}

pub fn retrieve_bm25(index: &Bm25Index, instance: &ParallelExample, direction: Direction, k: usize) -> RetrievalResult {
    RetrievalResult {
        instance_id: instance.id.clone(),
        strategy: Strategy::Bm25,
        rule_format: RuleFormat::Text,
        retrieved: bm25_query(index, instance.input_text(direction), k).into_iter().map(|(id, _)| id).collect(),
        raw_llm_output: None,
        flags: Vec::new(),
        partial: false,
    }
}

fn output_language(book: &Rulebook, direction: Direction) -> String {
    match direction {
        Direction::LoToHi => book.target_language_name(),
        Direction::HiToLo => book.source_language_name(),
    }
}

fn dict_for(instance: &ParallelExample, opts: &RetrievalOptions) -> Option<String> {
    opts.include_lexicon.then(|| prompts::dictionary(&instance.lexicon_for(opts.direction)))
}

pub fn full_book_request(
    instance: &ParallelExample,
    book: &Rulebook,
    opts: &RetrievalOptions,
    client: &LlmClient,
) -> Result<crate::llm::CompletionRequest, RetrievalError> {
    let lang = Lang::of(&book.manifest.prompt_language);
    let listing = book_string_with(book, opts.rule_format, CodeStyle::RetrievalCheck)?;
    let prompt = prompts::full_book_prompt(
        lang,
        &book.source_language_name(),
        &output_language(book, opts.direction),
        &listing,
        instance.input_text(opts.direction),
        dict_for(instance, opts).as_deref(),
    );
    let req = client.request(
        vec![Message::user(prompt)],
        DEFAULT_MAX_TOKENS,
        RequestTag::FullBook { instance_id: instance.id.clone() },
    );
    client.check_budget(&req)?;
    Ok(req)
}

/// Asks for every relevant rule with the whole book in the prompt.
pub fn retrieve_full_book(
    instance: &ParallelExample,
    book: &Rulebook,
    opts: &RetrievalOptions,
    client: &LlmClient,
) -> Result<RetrievalResult, RetrievalError> {
    let req = full_book_request(instance, book, opts, client)?;
    let reply = client.complete(&req)?;
    let (retrieved, dropped) = parse_full_book_reply(&reply.text, book);
    let mut flags = Vec::new();
    for n in &dropped {
        log::warn!("{}: reply cites rule {n}, which is not in the book", instance.id);
        flags.push(format!("dropped_index:{n}"));
    }
    if retrieved.is_empty() && !says_none(&reply.text) {
        flags.push("parse_failure".into());
    }
    Ok(RetrievalResult {
        instance_id: instance.id.clone(),
        strategy: Strategy::FullBook,
        rule_format: opts.rule_format,
        retrieved,
        raw_llm_output: Some(reply.text),
        flags,
        partial: false,
    })
}

fn says_none(reply: &str) -> bool {
    let t = reply.trim().trim_matches(|c: char| text::is_punct(c) || c.is_whitespace()).to_lowercase();
    matches!(t.as_str(), "无" | "没有" | "none" | "no rules")
}

fn number_list_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)(?:\brules?|规则|第)\s*#?\s*(\d+(?:\s*(?:,|，|、|;|and|&|和|与|及|or)\s*(?:rules?\s*|规则\s*)?#?\s*\d+)*)").unwrap()
    })
}

fn leading_number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^\s*[-*]?\s*(\d+)\s*[.、):：]").unwrap())
}

fn digits_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+").unwrap())
}

/// Rule ids cited in a Full-Book reply, in book order, plus cited numbers
/// that fall outside the book.
///
/// Accepts rule numbers (`Rule 3`, `Rules 3 and 7`, `规则3`, `3.` at line
/// start) and verbatim rule-text prefixes of at least 15 characters.
pub fn parse_full_book_reply(reply: &str, book: &Rulebook) -> (Vec<String>, Vec<usize>) {
    let mut numbers: BTreeSet<usize> = BTreeSet::new();
    for cap in number_list_re().captures_iter(reply) {
        for d in digits_re().find_iter(&cap[1]) {
            if let Ok(n) = d.as_str().parse() {
                numbers.insert(n);
            }
        }
    }
    for cap in leading_number_re().captures_iter(reply) {
        if let Ok(n) = cap[1].parse() {
            numbers.insert(n);
        }
    }
    let rules = book.rules();
    let mut hit: BTreeSet<usize> = BTreeSet::new();
    let mut dropped = Vec::new();
    for n in numbers {
        if (1..=rules.len()).contains(&n) {
            hit.insert(n - 1);
        } else {
            dropped.push(n);
        }
    }
    for (i, r) in rules.iter().enumerate() {
        let prefix: String = r.text.trim().chars().take(15).collect();
        if prefix.chars().count() >= 15 && reply.contains(&prefix) {
            hit.insert(i);
        }
    }
    (hit.into_iter().map(|i| rules[i].id.clone()).collect(), dropped)
}

/// Normalized yes/no from the first token of a reply; `None` when the reply
/// is neither.
pub fn parse_yes_no(reply: &str) -> Option<bool> {
    let t = reply.trim_start().trim_start_matches(|c: char| text::is_punct(c) || c == '*' || c == '"' || c == '“');
    if t.starts_with('是') {
        return Some(true);
    }
    if t.starts_with('否') {
        return Some(false);
    }
    let word: String = t.chars().take_while(|c| c.is_ascii_alphabetic()).collect::<String>().to_lowercase();
    match word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

pub fn classify_request(
    instance: &ParallelExample,
    book: &Rulebook,
    rule_id: &str,
    opts: &RetrievalOptions,
    client: &LlmClient,
) -> Result<crate::llm::CompletionRequest, RetrievalError> {
    let lang = Lang::of(&book.manifest.prompt_language);
    let rule = book.rule(rule_id).ok_or_else(|| CorpusError::Integrity(format!("unknown rule {rule_id}")))?;
    let view = rule_view(rule, opts.rule_format, CodeStyle::RetrievalCheck)?;
    let prompt = prompts::classify_prompt(
        lang,
        &book.source_language_name(),
        &output_language(book, opts.direction),
        &view,
        instance.input_text(opts.direction),
        dict_for(instance, opts).as_deref(),
    );
    Ok(client.request(
        vec![Message::user(prompt)],
        CLASSIFY_MAX_TOKENS,
        RequestTag::Classify { instance_id: instance.id.clone(), rule_id: rule_id.to_string() },
    ))
}

/// One relevance classification per rule, issued concurrently; results are
/// in book order regardless of completion order.
pub fn retrieve_rule_by_rule(
    instance: &ParallelExample,
    book: &Rulebook,
    opts: &RetrievalOptions,
    client: &LlmClient,
) -> Result<RetrievalResult, RetrievalError> {
    let reqs = book
        .rules()
        .iter()
        .map(|r| classify_request(instance, book, &r.id, opts, client))
        .collect::<Result<Vec<_>, _>>()?;
    let outcomes = client.complete_many(&reqs);
    let mut retrieved = Vec::new();
    let mut flags = Vec::new();
    let mut partial = false;
    let mut raw = Vec::new();
    for (rule, outcome) in book.rules().iter().zip(outcomes) {
        match outcome {
            Ok(c) => {
                match parse_yes_no(&c.text) {
                    Some(true) => retrieved.push(rule.id.clone()),
                    Some(false) => {}
                    None => flags.push(format!("unparsed_answer:{}", rule.id)),
                }
                raw.push(format!("{}\t{}", rule.id, c.text.trim()));
            }
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => {
                log::warn!("{}: classification of {} failed: {e}", instance.id, rule.id);
                flags.push(format!("call_failed:{}", rule.id));
                partial = true;
            }
        }
    }
    Ok(RetrievalResult {
        instance_id: instance.id.clone(),
        strategy: Strategy::RuleByRule,
        rule_format: opts.rule_format,
        retrieved,
        raw_llm_output: Some(raw.join("\n")),
        flags,
        partial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn three_docs() -> Bm25Index {
        let docs = vec![("d1".into(), toks("a b")), ("d2".into(), toks("a a")), ("d3".into(), toks("c"))];
        Bm25Index::from_documents(docs, Bm25Params::default()).unwrap()
    }

    #[test]
    fn three_document_oracle() {
        let idx = three_docs();
        let idf = 1.6f64.ln();
        assert!((idx.idf("a") - idf).abs() < 1e-12);
        assert!((idx.avgdl() - 5.0 / 3.0).abs() < 1e-12);
        let d1 = idf * 2.5 / (1.0 + 1.5 * (0.25 + 0.75 * 2.0 / (5.0 / 3.0)));
        let d2 = idf * 2.0 * 2.5 / (2.0 + 1.5 * (0.25 + 0.75 * 2.0 / (5.0 / 3.0)));
        assert!((d1 - idf * 2.5 / 2.725).abs() < 1e-12);
        assert!((d2 - idf * 5.0 / 3.725).abs() < 1e-12);
        let ranked = idx.query_tokens(&toks("a"), 10);
        assert_eq!(ranked.len(), 2);
        assert_eq!(ranked[0].0, "d2");
        assert!((ranked[0].1 - d2).abs() < 1e-12);
        assert_eq!(ranked[1].0, "d1");
        assert!((ranked[1].1 - d1).abs() < 1e-12);
    }

    #[test]
    fn unseen_query_and_ties() {
        let idx = three_docs();
        assert!(idx.query_tokens(&toks("zzz"), 5).is_empty());
        let dup = Bm25Index::from_documents(
            vec![("x2".into(), toks("p q")), ("x1".into(), toks("p q")), ("x3".into(), toks("r"))],
            Bm25Params::default(),
        )
        .unwrap();
        let r = dup.query_tokens(&toks("p"), 5);
        assert_eq!(r[0].1, r[1].1);
        assert_eq!((r[0].0.as_str(), r[1].0.as_str()), ("x2", "x1"));
    }

    #[test]
    fn empty_book_is_an_error() {
        assert!(matches!(Bm25Index::from_documents(vec![], Bm25Params::default()), Err(RetrievalError::EmptyBook)));
    }

    #[test]
    fn mixed_tokenization() {
        assert_eq!(bm25_tokens("否定词mbouj放在"), ["否定", "定词", "mbouj", "放在"]);
        assert_eq!(bm25_tokens("我。Gou, DWG!"), ["我", "gou", "dwg"]);
    }

    #[test]
    fn yes_no_normalization() {
        assert_eq!(parse_yes_no("是"), Some(true));
        assert_eq!(parse_yes_no("否。这条规则无关"), Some(false));
        assert_eq!(parse_yes_no("  Yes, it applies"), Some(true));
        assert_eq!(parse_yes_no("NO"), Some(false));
        assert_eq!(parse_yes_no("maybe"), None);
        assert_eq!(parse_yes_no("nothing"), None);
    }
}
