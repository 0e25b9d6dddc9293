//! Executable rule programs.
//!
//! A [`RuleProgram`] is a list of token-rewrite steps whose variants mirror the
//! rule action taxonomy: add → [`Step::Insert`], delete → [`Step::Delete`],
//! reorder → [`Step::Permute`], break → [`Step::Split`], select →
//! [`Step::Branch`]. Programs are deterministic and total over token lists;
//! they serve as the ground-truth oracle and drive the offline mock backend.
//!
//! Token conventions: a token ending in `+` is glued to the following token
//! and a token starting with `+` to the preceding one; tokens containing
//! spaces are split into words. Both are resolved after the last step.

use std::collections::{BTreeSet, HashSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Direction, ParallelExample, Rulebook};
use crate::text;

pub const MAX_BRANCH_DEPTH: usize = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProgramError {
    #[error("invalid program: {0}")]
    Invalid(String),
    #[error("mandatory pattern {0} did not match")]
    PatternNotMatched(String),
    #[error("cannot compose programs with directions {0} and {1}")]
    DirectionMismatch(Direction, Direction),
    #[error("rule {0} has no program")]
    MissingProgram(String),
    #[error("unknown rule {0}")]
    UnknownRule(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenPredicate {
    Eq(String),
    OneOf(Vec<String>),
    Tag(String),
    Any,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentencePredicate {
    Contains(String),
    ContainsAny(Vec<String>),
    ContainsTag(String),
    Not(Box<SentencePredicate>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionSpec {
    Start,
    End,
    Before(TokenPredicate),
    After(TokenPredicate),
    Index(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Step {
    /// Replace each token by its lexicon entry; unknown tokens pass through.
    MapTokens,
    Insert {
        token: String,
        position: PositionSpec,
    },
    /// Remove every token matching the predicate.
    Delete {
        predicate: TokenPredicate,
    },
    /// Rewrite each non-overlapping window matching `pattern` into
    /// `order`: output slot j takes the window token at `order[j]`.
    Permute {
        pattern: Vec<TokenPredicate>,
        order: Vec<usize>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        mandatory: bool,
    },
    /// Replace each matching token by `parts`; `{}` in a part stands for the token.
    Split {
        predicate: TokenPredicate,
        parts: Vec<String>,
    },
    Branch {
        predicate: SentencePredicate,
        then_steps: Vec<Step>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        else_steps: Vec<Step>,
    },
}

/// Deterministic executable form of one rule (or a composition of rules).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleProgram {
    pub direction: Direction,
    /// Rule-intrinsic vocabulary (function words, markers), input → output.
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub lexicon: IndexMap<String, String>,
    /// Extra multi-character units for segmenting unsegmented input.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<String>,
    /// Word-class tags consulted by `tag` predicates.
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub tags: IndexMap<String, String>,
    pub steps: Vec<Step>,
}

/// Result of running a program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Applied {
    pub tokens: Vec<String>,
    /// Tokens `MapTokens` found no entry for.
    pub unmapped: Vec<String>,
}

struct Env<'a> {
    lexicon: &'a IndexMap<String, String>,
    values: HashSet<&'a str>,
    tags: &'a IndexMap<String, String>,
}

impl Env<'_> {
    fn tag_of(&self, tok: &str) -> Option<&str> {
        self.tags.get(tok).or_else(|| self.tags.get(&tok.to_lowercase())).map(String::as_str)
    }

    fn token_matches(&self, p: &TokenPredicate, tok: &str) -> bool {
        match p {
            TokenPredicate::Eq(s) => s == tok,
            TokenPredicate::OneOf(v) => v.iter().any(|s| s == tok),
            TokenPredicate::Tag(t) => self.tag_of(tok) == Some(t.as_str()),
            TokenPredicate::Any => true,
        }
    }

    fn sentence_matches(&self, p: &SentencePredicate, toks: &[String]) -> bool {
        match p {
            SentencePredicate::Contains(s) => toks.iter().any(|t| t == s),
            SentencePredicate::ContainsAny(v) => toks.iter().any(|t| v.contains(t)),
            SentencePredicate::ContainsTag(tag) => toks.iter().any(|t| self.tag_of(t) == Some(tag.as_str())),
            SentencePredicate::Not(inner) => !self.sentence_matches(inner, toks),
        }
    }
}

fn describe(p: &[TokenPredicate]) -> String {
    serde_json::to_string(p).unwrap_or_default()
}

fn run_steps(
    steps: &[Step],
    input: Vec<String>,
    env: &Env<'_>,
    unmapped: &mut Vec<String>,
) -> Result<Vec<String>, ProgramError> {
    let mut toks = input;
    for step in steps {
        toks = match step {
            Step::MapTokens => toks
                .into_iter()
                .map(|t| {
                    if let Some(v) = env.lexicon.get(&t).or_else(|| env.lexicon.get(&t.to_lowercase())) {
                        v.clone()
                    } else {
                        if !env.values.contains(t.as_str()) {
                            unmapped.push(t.clone());
                        }
                        t
                    }
                })
                .collect(),
            Step::Insert { token, position } => {
                let at = match position {
                    PositionSpec::Start => Some(0),
                    PositionSpec::End => Some(toks.len()),
                    PositionSpec::Index(n) => Some((*n).min(toks.len())),
                    PositionSpec::Before(p) => toks.iter().position(|t| env.token_matches(p, t)),
                    PositionSpec::After(p) => toks.iter().position(|t| env.token_matches(p, t)).map(|i| i + 1),
                };
                let mut out = toks;
                if let Some(i) = at {
                    out.insert(i, token.clone());
                }
                out
            }
            Step::Delete { predicate } => toks.into_iter().filter(|t| !env.token_matches(predicate, t)).collect(),
            Step::Permute { pattern, order, mandatory } => {
                let w = pattern.len();
                let mut out = Vec::with_capacity(toks.len());
                let mut i = 0;
                let mut matched = false;
                while i < toks.len() {
                    let fits = i + w <= toks.len()
                        && pattern.iter().zip(&toks[i..i + w]).all(|(p, t)| env.token_matches(p, t));
                    if fits {
                        out.extend(order.iter().map(|&j| toks[i + j].clone()));
                        i += w;
                        matched = true;
                    } else {
                        out.push(toks[i].clone());
                        i += 1;
                    }
                }
                if *mandatory && !matched {
                    return Err(ProgramError::PatternNotMatched(describe(pattern)));
                }
                out
            }
            Step::Split { predicate, parts } => toks
                .into_iter()
                .flat_map(|t| {
                    if env.token_matches(predicate, &t) {
                        parts.iter().map(|p| p.replace("{}", &t)).collect::<Vec<_>>()
                    } else {
                        vec![t]
                    }
                })
                .collect(),
            Step::Branch { predicate, then_steps, else_steps } => {
                let chosen = if env.sentence_matches(predicate, &toks) { then_steps } else { else_steps };
                run_steps(chosen, toks, env, unmapped)?
            }
        };
    }
    Ok(toks)
}

/// Resolves glue markers and splits multi-word tokens.
fn finish(tokens: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(tokens.len());
    let mut glue_next = false;
    for tok in tokens.into_iter().flat_map(|t| t.split_whitespace().map(str::to_string).collect::<Vec<_>>()) {
        let (lead, body) = match tok.strip_prefix('+') {
            Some(rest) if !rest.is_empty() => (true, rest.to_string()),
            _ => (false, tok),
        };
        let (body, trail) = match body.strip_suffix('+') {
            Some(rest) if !rest.is_empty() => (rest.to_string(), true),
            _ => (body, false),
        };
        match out.last_mut() {
            Some(prev) if glue_next || lead => prev.push_str(&body),
            _ => out.push(body),
        }
        glue_next = trail;
    }
    out
}

impl RuleProgram {
    pub fn new(direction: Direction, steps: Vec<Step>) -> Self {
        RuleProgram { direction, lexicon: IndexMap::new(), segments: Vec::new(), tags: IndexMap::new(), steps }
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        if self.steps.is_empty() {
            return Err(ProgramError::Invalid("program has no steps".into()));
        }
        validate_steps(&self.steps, 0)
    }

    /// Literal output material the program introduces: inserted tokens,
    /// split parts and vocabulary outputs (glue markers removed).
    pub fn anchors(&self) -> Vec<String> {
        fn walk(steps: &[Step], out: &mut BTreeSet<String>) {
            for s in steps {
                match s {
                    Step::Insert { token, .. } => {
                        out.insert(token.trim_matches('+').to_string());
                    }
                    Step::Split { parts, .. } => {
                        for p in parts.iter().filter(|p| !p.contains("{}")) {
                            out.insert(p.trim_matches('+').to_string());
                        }
                    }
                    Step::Branch { then_steps, else_steps, .. } => {
                        walk(then_steps, out);
                        walk(else_steps, out);
                    }
                    _ => {}
                }
            }
        }
        let mut out = BTreeSet::new();
        walk(&self.steps, &mut out);
        for v in self.lexicon.values() {
            if !text::contains_cjk(v) || self.direction == Direction::LoToHi {
                out.insert(v.clone());
            }
        }
        out.into_iter().filter(|s| !s.is_empty()).collect()
    }
}

fn validate_steps(steps: &[Step], depth: usize) -> Result<(), ProgramError> {
    for s in steps {
        match s {
            Step::Permute { pattern, order, .. } => {
                if pattern.is_empty() {
                    return Err(ProgramError::Invalid("permute pattern is empty".into()));
                }
                let mut seen = vec![false; pattern.len()];
                if order.len() != pattern.len() {
                    return Err(ProgramError::Invalid(format!(
                        "permute order {order:?} is not a permutation of {} slots",
                        pattern.len()
                    )));
                }
                for &j in order {
                    if j >= pattern.len() || std::mem::replace(&mut seen[j], true) {
                        return Err(ProgramError::Invalid(format!(
                            "permute order {order:?} is not a permutation of {} slots",
                            pattern.len()
                        )));
                    }
                }
            }
            Step::Split { parts, .. } if parts.is_empty() => {
                return Err(ProgramError::Invalid("split has no parts".into()));
            }
            Step::Insert { token, .. } if token.trim().is_empty() => {
                return Err(ProgramError::Invalid("insert of empty token".into()));
            }
            Step::Branch { then_steps, else_steps, .. } => {
                if depth + 1 > MAX_BRANCH_DEPTH {
                    return Err(ProgramError::Invalid(format!("branches nest deeper than {MAX_BRANCH_DEPTH}")));
                }
                validate_steps(then_steps, depth + 1)?;
                validate_steps(else_steps, depth + 1)?;
            }
            _ => {}
        }
    }
    Ok(())
}

/// Runs `program` over `tokens`. Lexicon maps input-side to output-side words.
pub fn apply_program(
    program: &RuleProgram,
    tokens: &[String],
    lexicon: &IndexMap<String, String>,
) -> Result<Applied, ProgramError> {
    apply_program_with_tags(program, tokens, lexicon, &IndexMap::new())
}

/// As [`apply_program`], with extra word-class tags (e.g. from the example).
pub fn apply_program_with_tags(
    program: &RuleProgram,
    tokens: &[String],
    lexicon: &IndexMap<String, String>,
    tags: &IndexMap<String, String>,
) -> Result<Applied, ProgramError> {
    program.validate()?;
    let mut merged_lex = program.lexicon.clone();
    for (k, v) in lexicon {
        merged_lex.entry(k.clone()).or_insert_with(|| v.clone());
    }
    let mut merged_tags = program.tags.clone();
    for (k, v) in tags {
        merged_tags.entry(k.clone()).or_insert_with(|| v.clone());
    }
    let env = Env {
        values: merged_lex.values().map(String::as_str).collect(),
        lexicon: &merged_lex,
        tags: &merged_tags,
    };
    let mut unmapped = Vec::new();
    let out = run_steps(&program.steps, tokens.to_vec(), &env, &mut unmapped)?;
    Ok(Applied { tokens: finish(out), unmapped })
}

/// Sequential composition: steps of `a` then steps of `b`.
pub fn compose_programs(a: &RuleProgram, b: &RuleProgram) -> Result<RuleProgram, ProgramError> {
    if a.direction != b.direction {
        return Err(ProgramError::DirectionMismatch(a.direction, b.direction));
    }
    let mut out = a.clone();
    for (k, v) in &b.lexicon {
        out.lexicon.entry(k.clone()).or_insert_with(|| v.clone());
    }
    for s in &b.segments {
        if !out.segments.contains(s) {
            out.segments.push(s.clone());
        }
    }
    for (k, v) in &b.tags {
        out.tags.entry(k.clone()).or_insert_with(|| v.clone());
    }
    out.steps.extend(b.steps.iter().cloned());
    Ok(out)
}

/// Splits `text` into program input tokens.
///
/// CJK text is segmented by greedy longest match over `keys`; other text is
/// whitespace-tokenized (lowercased), merging multi-word keys such as
/// `laj mbanj`.
pub fn tokenize_input<'a>(text: &str, keys: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let keys: Vec<&str> = keys.into_iter().collect();
    if text::contains_cjk(text) {
        return text::segment_longest(text, keys.iter().copied());
    }
    let words = text::latin_tokens(text);
    let multi: Vec<Vec<String>> = keys
        .iter()
        .filter(|k| k.contains(' '))
        .map(|k| k.split_whitespace().map(str::to_lowercase).collect())
        .collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let best = multi.iter().filter(|m| words[i..].starts_with(m)).map(Vec::len).max();
        match best {
            Some(n) => {
                out.push(words[i..i + n].join(" "));
                i += n;
            }
            None => {
                out.push(words[i].clone());
                i += 1;
            }
        }
    }
    out
}

/// Composes the programs of `rule_ids` in order.
pub fn program_for_rules(book: &Rulebook, rule_ids: &[String]) -> Result<RuleProgram, ProgramError> {
    let mut composed: Option<RuleProgram> = None;
    for id in rule_ids {
        let rule = book.rule(id).ok_or_else(|| ProgramError::UnknownRule(id.clone()))?;
        let p = rule.program.as_ref().ok_or_else(|| ProgramError::MissingProgram(id.clone()))?;
        composed = Some(match composed {
            None => p.clone(),
            Some(acc) => compose_programs(&acc, p)?,
        });
    }
    composed.ok_or_else(|| ProgramError::Invalid("no rules given".into()))
}

/// Input tokens of `ex` for `program`, using the example lexicon and the
/// program vocabulary as segmentation units.
pub fn example_tokens(program: &RuleProgram, ex: &ParallelExample) -> Vec<String> {
    let lex = ex.lexicon_for(program.direction);
    let keys: Vec<&str> = lex
        .keys()
        .map(String::as_str)
        .chain(program.lexicon.keys().map(String::as_str))
        .chain(program.segments.iter().map(String::as_str))
        .collect();
    tokenize_input(ex.input_text(program.direction), keys)
}

/// Runs `program` on example `ex` and realizes the surface string.
pub fn run_on_example(program: &RuleProgram, ex: &ParallelExample) -> Result<(String, Applied), ProgramError> {
    let tokens = example_tokens(program, ex);
    let applied = apply_program_with_tags(program, &tokens, &ex.lexicon_for(program.direction), &ex.tags)?;
    let surface = text::realize(&applied.tokens, ex.input_text(program.direction));
    Ok((surface, applied))
}

/// Oracle translation of `ex` using the programs of `rule_ids`.
pub fn oracle_translate(book: &Rulebook, ex: &ParallelExample, rule_ids: &[String]) -> Result<String, ProgramError> {
    let program = program_for_rules(book, rule_ids)?;
    Ok(run_on_example(&program, ex)?.0)
}

/// Lexicon-only translation: map every token, keep source order.
pub fn word_by_word(ex: &ParallelExample, direction: Direction) -> String {
    let lex = ex.lexicon_for(direction);
    let tokens = tokenize_input(ex.input_text(direction), lex.keys().map(String::as_str));
    let mapped: Vec<String> =
        tokens.into_iter().map(|t| lex.get(&t).cloned().unwrap_or(t)).collect();
    text::realize(&finish(mapped), ex.input_text(direction))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn lex(pairs: &[(&str, &str)]) -> IndexMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn adjective_after_noun() {
        let mut p = RuleProgram::new(
            Direction::HiToLo,
            vec![
                Step::MapTokens,
                Step::Permute {
                    pattern: vec![TokenPredicate::Tag("adj".into()), TokenPredicate::Tag("noun".into())],
                    order: vec![1, 0],
                    mandatory: true,
                },
            ],
        );
        p.tags = lex(&[("henj", "adj"), ("byoem", "noun")]);
        let out = apply_program(&p, &toks(&["黄", "头发"]), &lex(&[("黄", "henj"), ("头发", "byoem")])).unwrap();
        assert_eq!(out.tokens, toks(&["byoem", "henj"]));
        assert!(out.unmapped.is_empty());
    }

    #[test]
    fn identity_lexicon_leaves_input() {
        let p = RuleProgram::new(Direction::HiToLo, vec![Step::MapTokens]);
        let input = toks(&["a", "b", "c"]);
        let out = apply_program(&p, &input, &lex(&[("a", "a"), ("b", "b"), ("c", "c")])).unwrap();
        assert_eq!(out.tokens, input);
    }

    #[test]
    fn missing_entries_pass_through_flagged() {
        let p = RuleProgram::new(Direction::HiToLo, vec![Step::MapTokens]);
        let out = apply_program(&p, &toks(&["我", "的"]), &lex(&[("我", "gou")])).unwrap();
        assert_eq!(out.tokens, toks(&["gou", "的"]));
        assert_eq!(out.unmapped, toks(&["的"]));
    }

    #[test]
    fn mandatory_permute_failure() {
        let p = RuleProgram::new(
            Direction::HiToLo,
            vec![Step::Permute { pattern: vec![TokenPredicate::Eq("x".into())], order: vec![0], mandatory: true }],
        );
        assert!(matches!(apply_program(&p, &toks(&["y"]), &IndexMap::new()), Err(ProgramError::PatternNotMatched(_))));
    }

    #[test]
    fn invalid_permutation_and_depth_rejected() {
        let bad = RuleProgram::new(
            Direction::HiToLo,
            vec![Step::Permute { pattern: vec![TokenPredicate::Any, TokenPredicate::Any], order: vec![0, 0], mandatory: false }],
        );
        assert!(bad.validate().is_err());
        let leaf = Step::Branch { predicate: SentencePredicate::Contains("a".into()), then_steps: vec![Step::MapTokens], else_steps: vec![] };
        let two = Step::Branch { predicate: SentencePredicate::Contains("a".into()), then_steps: vec![leaf.clone()], else_steps: vec![] };
        assert!(RuleProgram::new(Direction::HiToLo, vec![two.clone()]).validate().is_ok());
        let three = Step::Branch { predicate: SentencePredicate::Contains("a".into()), then_steps: vec![two], else_steps: vec![] };
        assert!(RuleProgram::new(Direction::HiToLo, vec![three]).validate().is_err());
        assert!(RuleProgram::new(Direction::HiToLo, vec![]).validate().is_err());
    }

    #[test]
    fn glue_and_multiword_resolution() {
        assert_eq!(finish(toks(&["dox+", "ndaq"])), toks(&["doxndaq"]));
        assert_eq!(finish(toks(&["gangj", "+gonq"])), toks(&["gangjgonq"]));
        assert_eq!(finish(toks(&["gou", "yaep ndeu"])), toks(&["gou", "yaep", "ndeu"]));
        assert_eq!(finish(toks(&["+"])), toks(&["+"]));
    }

    #[test]
    fn split_and_insert_positions() {
        let p = RuleProgram::new(
            Direction::HiToLo,
            vec![
                Step::Split { predicate: TokenPredicate::Eq("ab".into()), parts: toks(&["a", "{}", "b"]) },
                Step::Insert { token: "x".into(), position: PositionSpec::Before(TokenPredicate::Eq("b".into())) },
                Step::Insert { token: "y".into(), position: PositionSpec::After(TokenPredicate::Eq("zz".into())) },
                Step::Insert { token: "z".into(), position: PositionSpec::Index(99) },
            ],
        );
        let out = apply_program(&p, &toks(&["ab"]), &IndexMap::new()).unwrap();
        assert_eq!(out.tokens, toks(&["a", "ab", "x", "b", "z"]));
    }

    #[test]
    fn compose_requires_same_direction() {
        let a = RuleProgram::new(Direction::HiToLo, vec![Step::MapTokens]);
        let b = RuleProgram::new(Direction::LoToHi, vec![Step::MapTokens]);
        assert_eq!(compose_programs(&a, &b).unwrap_err(), ProgramError::DirectionMismatch(Direction::HiToLo, Direction::LoToHi));
    }

    #[test]
    fn compose_order_matters() {
        // Brute force both orders on a crafted input.
        let a = RuleProgram::new(Direction::HiToLo, vec![Step::Insert { token: "x".into(), position: PositionSpec::End }]);
        let b = RuleProgram::new(
            Direction::HiToLo,
            vec![Step::Permute { pattern: vec![TokenPredicate::Any, TokenPredicate::Eq("x".into())], order: vec![1, 0], mandatory: false }],
        );
        let input = toks(&["p", "q"]);
        let ab = apply_program(&compose_programs(&a, &b).unwrap(), &input, &IndexMap::new()).unwrap().tokens;
        let ba = apply_program(&compose_programs(&b, &a).unwrap(), &input, &IndexMap::new()).unwrap().tokens;
        assert_eq!(ab, toks(&["p", "x", "q"]));
        assert_eq!(ba, toks(&["p", "q", "x"]));
        assert_ne!(ab, ba);
    }

    #[test]
    fn tokenize_merges_multiword_keys() {
        let t = tokenize_input("Daxmeh gou vunz laj mbanj.", ["laj mbanj", "gou"]);
        assert_eq!(t, toks(&["daxmeh", "gou", "vunz", "laj mbanj"]));
    }

    #[test]
    fn program_json_grammar() {
        let json = r#"{"direction":"hi_to_lo","steps":[
            {"op":"branch","predicate":{"contains":"不"},"then_steps":[],"else_steps":[{"op":"delete","predicate":{"eq":"是"}}]},
            {"op":"map_tokens"},
            {"op":"permute","pattern":[{"tag":"pron"},{"tag":"noun"}],"order":[1,0]},
            {"op":"insert","token":"gonq","position":"end"},
            {"op":"insert","token":"dox+","position":{"before":"any"}},
            {"op":"split","predicate":{"one_of":["a"]},"parts":["b","c"]}]}"#;
        let p: RuleProgram = serde_json::from_str(json).unwrap();
        assert_eq!(p.steps.len(), 6);
        let back: RuleProgram = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<RuleProgram>(r#"{"direction":"hi_to_lo","steps":[{"op":"shuffle"}]}"#).is_err());
    }
}
