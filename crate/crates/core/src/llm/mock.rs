//! Deterministic oracle-backed backend.
//!
//! Answers come from the structured [`RequestTag`] and the rulebook: rule
//! programs for translation, gold rule ids for retrieval, and code synthesis
//! for conversion. Degraded profiles draw from seeded uniforms so every
//! answer is a pure function of `(seed, request)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use indexmap::IndexMap;

use super::{ChatBackend, Completion, CompletionRequest, LlmError, RequestTag, Usage};
use crate::corpus::{Direction, ParallelExample, Rulebook};
use crate::rulecraft::{merge_bodies, orchestrator, synthesize_code, InducedRule};
use crate::ruleengine::{self, ProgramError};
use crate::translator::CombineStrategy;
use crate::{seeded_unit, text};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClassifierProfile {
    /// Says yes exactly for gold rules.
    Perfect,
    AlwaysYes,
    /// Each judgment is correct with probability p.
    Distracted(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TranslatorProfile {
    /// Applies the programs of the gold rules shown in the prompt.
    Perfect,
    /// Lexicon substitution in source order.
    NoRule,
    /// Correct with probability p^k for k irrelevant rules in the prompt,
    /// otherwise the no-rule output.
    Distracted(f64),
}

pub const DEFAULT_DISTRACTION: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MockProfile {
    pub classifier: ClassifierProfile,
    pub translator: TranslatorProfile,
}

impl Default for MockProfile {
    fn default() -> Self {
        MockProfile { classifier: ClassifierProfile::Perfect, translator: TranslatorProfile::Perfect }
    }
}

fn parse_p(name: &str, part: &str) -> Result<Option<f64>, String> {
    let Some(rest) = part.strip_prefix(name) else { return Ok(None) };
    if rest.is_empty() {
        return Ok(Some(DEFAULT_DISTRACTION));
    }
    let inner = rest
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| format!("expected {name}(p), got {part:?}"))?;
    let p: f64 = inner.trim().parse().map_err(|_| format!("bad probability in {part:?}"))?;
    if !(0.0..=1.0).contains(&p) {
        return Err(format!("probability {p} outside [0, 1]"));
    }
    Ok(Some(p))
}

impl FromStr for MockProfile {
    type Err = String;

    /// Comma-separated parts, e.g. `perfect_classifier,distracted_translator(0.9)`.
    /// A bare `distracted(p)` sets both sides.
    fn from_str(s: &str) -> Result<Self, String> {
        let mut out = MockProfile::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "perfect" => out = MockProfile::default(),
                "perfect_classifier" => out.classifier = ClassifierProfile::Perfect,
                "always_yes" => out.classifier = ClassifierProfile::AlwaysYes,
                "perfect_translator" => out.translator = TranslatorProfile::Perfect,
                "no_rule_translator" => out.translator = TranslatorProfile::NoRule,
                _ => {
                    if let Some(p) = parse_p("distracted_classifier", part)? {
                        out.classifier = ClassifierProfile::Distracted(p);
                    } else if let Some(p) = parse_p("distracted_translator", part)? {
                        out.translator = TranslatorProfile::Distracted(p);
                    } else if let Some(p) = parse_p("distracted", part)? {
                        out.classifier = ClassifierProfile::Distracted(p);
                        out.translator = TranslatorProfile::Distracted(p);
                    } else {
                        return Err(format!("unknown mock profile part {part:?}"));
                    }
                }
            }
        }
        Ok(out)
    }
}

impl fmt::Display for MockProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.classifier {
            ClassifierProfile::Perfect => write!(f, "perfect_classifier")?,
            ClassifierProfile::AlwaysYes => write!(f, "always_yes")?,
            ClassifierProfile::Distracted(p) => write!(f, "distracted_classifier({p})")?,
        }
        match self.translator {
            TranslatorProfile::Perfect => write!(f, ",perfect_translator"),
            TranslatorProfile::NoRule => write!(f, ",no_rule_translator"),
            TranslatorProfile::Distracted(p) => write!(f, ",distracted_translator({p})"),
        }
    }
}

/// Hook consulted before the oracle; `Some(text)` short-circuits it.
pub type Override = Arc<dyn Fn(&CompletionRequest) -> Option<String> + Send + Sync>;

pub struct MockBackend {
    book: Arc<Rulebook>,
    profile: MockProfile,
    seed: u64,
    overrides: Vec<Override>,
}

impl MockBackend {
    pub fn new(book: Arc<Rulebook>, profile: MockProfile, seed: u64) -> Self {
        MockBackend { book, profile, seed, overrides: Vec::new() }
    }

    pub fn with_override(mut self, f: impl Fn(&CompletionRequest) -> Option<String> + Send + Sync + 'static) -> Self {
        self.overrides.push(Arc::new(f));
        self
    }

    fn zh(&self) -> bool {
        self.book.manifest.prompt_language == "zh"
    }

    fn instance(&self, id: &str) -> Result<&ParallelExample, LlmError> {
        self.book.example(id).ok_or_else(|| LlmError::Profile(format!("unknown instance {id}")))
    }

    fn judge(&self, ex: &ParallelExample, rule_id: &str) -> bool {
        let gold = ex.rule_ids.iter().any(|r| r == rule_id);
        match self.profile.classifier {
            ClassifierProfile::Perfect => gold,
            ClassifierProfile::AlwaysYes => true,
            ClassifierProfile::Distracted(p) => {
                let correct = seeded_unit(self.seed, &["classify", &ex.id, rule_id]) < p;
                gold == correct
            }
        }
    }

    fn classify(&self, instance_id: &str, rule_id: &str) -> Result<String, LlmError> {
        let yes = self.judge(self.instance(instance_id)?, rule_id);
        Ok(match (yes, self.zh()) {
            (true, true) => "是",
            (false, true) => "否",
            (true, false) => "yes",
            (false, false) => "no",
        }
        .into())
    }

    fn full_book(&self, instance_id: &str) -> Result<String, LlmError> {
        let ex = self.instance(instance_id)?;
        let numbers: Vec<String> = self
            .book
            .rules()
            .iter()
            .enumerate()
            .filter(|(_, r)| self.judge(ex, &r.id))
            .map(|(i, _)| format!("Rule {}", i + 1))
            .collect();
        Ok(if numbers.is_empty() {
            if self.zh() { "无" } else { "None" }.to_string()
        } else {
            numbers.join(", ")
        })
    }

    /// Gold rules the prompt makes available: shown verbatim, or through an
    /// induced rule that mentions every output anchor of the gold program.
    fn available_gold(&self, ex: &ParallelExample, shown: &[String], induced: &[InducedRule]) -> (Vec<String>, usize) {
        let mut available = Vec::new();
        for g in &ex.rule_ids {
            let via_induced = induced.iter().any(|ind| {
                ind.rule_id == *g
                    && self.book.rule(g).and_then(|r| r.program.as_ref()).is_some_and(|p| {
                        let lower = ind.text.to_lowercase();
                        p.anchors().iter().flat_map(|a| a.split_whitespace()).all(|w| lower.contains(&w.to_lowercase()))
                    })
            });
            if shown.contains(g) || via_induced {
                available.push(g.clone());
            }
        }
        let irrelevant = shown.iter().filter(|r| !ex.rule_ids.contains(r)).count()
            + induced.iter().filter(|i| !available.contains(&i.rule_id)).count();
        (available, irrelevant)
    }

    fn no_rule(&self, ex: &ParallelExample, direction: Direction, use_lexicon: bool) -> String {
        if use_lexicon {
            ruleengine::word_by_word(ex, direction)
        } else {
            ex.input_text(direction).to_string()
        }
    }

    fn apply_gold(&self, ex: &ParallelExample, direction: Direction, rules: &[String], use_lexicon: bool) -> Result<String, LlmError> {
        if direction == Direction::LoToHi {
            // Programs run high-to-low only; the reverse oracle is the reference.
            return Ok(ex.reference(direction).to_string());
        }
        let program = ruleengine::program_for_rules(&self.book, rules).map_err(|e| match e {
            ProgramError::MissingProgram(r) => LlmError::Profile(format!("rule {r} has no oracle program")),
            other => LlmError::Profile(other.to_string()),
        })?;
        if !use_lexicon {
            let mut bare = ex.clone();
            bare.lexicon = Default::default();
            return ruleengine::run_on_example(&program, &bare).map(|r| r.0).map_err(|e| LlmError::Profile(e.to_string()));
        }
        ruleengine::run_on_example(&program, ex).map(|r| r.0).map_err(|e| LlmError::Profile(e.to_string()))
    }

    fn translate(
        &self,
        instance_id: &str,
        direction: Direction,
        shown: &[String],
        induced: &[InducedRule],
        want_igt: bool,
        use_lexicon: bool,
    ) -> Result<String, LlmError> {
        let ex = self.instance(instance_id)?;
        let (available, irrelevant) = self.available_gold(ex, shown, induced);
        let correct = match self.profile.translator {
            TranslatorProfile::Perfect => true,
            TranslatorProfile::NoRule => false,
            TranslatorProfile::Distracted(p) => {
                seeded_unit(self.seed, &["translate", instance_id]) < p.powi(irrelevant as i32)
            }
        };
        let out = if correct && !available.is_empty() {
            self.apply_gold(ex, direction, &available, use_lexicon)?
        } else {
            self.no_rule(ex, direction, use_lexicon)
        };
        if !want_igt {
            return Ok(out);
        }
        let gloss = match &ex.igt {
            Some(igt) => igt.gloss_line(),
            None => {
                let lex = ex.lexicon_for(direction);
                text::latin_tokens(ex.input_text(direction))
                    .iter()
                    .map(|t| lex.get(t).cloned().unwrap_or_else(|| t.clone()))
                    .collect::<Vec<_>>()
                    .join(" ")
            }
        };
        Ok(format!("IGT：{gloss}\n{out}"))
    }

    fn igt(&self, tokens: &[String], lexicon: &IndexMap<String, String>, memory: &IndexMap<String, String>) -> String {
        let glosses: Vec<String> = tokens
            .iter()
            .map(|t| {
                memory
                    .get(t)
                    .or_else(|| lexicon.get(t))
                    .map(|g| g.split_whitespace().collect::<Vec<_>>().join("_"))
                    .unwrap_or_else(|| "UNK".into())
            })
            .collect();
        format!("IGT：{}", glosses.join(" "))
    }

    fn induce(&self, example_ids: &[String]) -> Result<String, LlmError> {
        let exs: Vec<&ParallelExample> = example_ids.iter().map(|id| self.instance(id)).collect::<Result<_, _>>()?;
        Ok(induce_text(&exs, &self.book.source_language_name(), &self.book.target_language_name(), self.zh()))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Slot {
    Prefix,
    Suffix,
    Word,
}

/// Material the examples' lexicons leave unexplained, rendered as a rule.
pub(crate) fn induce_text(exs: &[&ParallelExample], lo_name: &str, hi_name: &str, zh: bool) -> String {
    // Low-resource fragments: key -> (slot, number of examples containing it).
    let mut frags: BTreeMap<(String, Slot), BTreeSet<usize>> = BTreeMap::new();
    let mut hi_left: BTreeMap<char, BTreeSet<usize>> = BTreeMap::new();
    for (i, ex) in exs.iter().enumerate() {
        let lex = ex.lexicon_for(Direction::LoToHi);
        let mut words: Vec<String> = lex.keys().flat_map(|k| k.split_whitespace().map(str::to_string)).collect();
        words.sort_by_key(|w| std::cmp::Reverse(w.chars().count()));
        for tok in text::latin_tokens(&ex.source_text) {
            if words.contains(&tok) {
                continue;
            }
            match words.iter().find(|w| tok.contains(w.as_str())) {
                Some(w) => {
                    let pos = tok.find(w.as_str()).expect("contained");
                    let (pre, post) = (&tok[..pos], &tok[pos + w.len()..]);
                    if !pre.is_empty() {
                        frags.entry((pre.to_string(), Slot::Prefix)).or_default().insert(i);
                    }
                    if !post.is_empty() {
                        frags.entry((post.to_string(), Slot::Suffix)).or_default().insert(i);
                    }
                }
                None => {
                    frags.entry((tok, Slot::Word)).or_default().insert(i);
                }
            }
        }
        let covered: String = lex.values().cloned().collect();
        for c in ex.target_text.chars().filter(|c| text::is_cjk_ideograph(*c) && !covered.contains(*c)) {
            hi_left.entry(c).or_default().insert(i);
        }
    }
    let shared = |n: usize| n >= 2 || exs.len() < 2;
    let mut picked: Vec<(String, Slot)> = frags.iter().filter(|(_, s)| shared(s.len())).map(|(k, _)| k.clone()).collect();
    if picked.is_empty() {
        picked = frags.keys().cloned().collect();
    }
    let his: Vec<String> = hi_left.iter().filter(|(_, s)| shared(s.len())).map(|(c, _)| c.to_string()).collect();
    let his = if his.is_empty() { hi_left.keys().map(|c| c.to_string()).collect() } else { his };
    let quote = |v: &[String]| v.iter().map(|s| format!("“{s}”")).collect::<Vec<_>>().join("");
    let of = |slot: Slot| picked.iter().filter(|(_, s)| *s == slot).map(|(f, _)| f.clone()).collect::<Vec<_>>();
    let (pre, suf, word) = (of(Slot::Prefix), of(Slot::Suffix), of(Slot::Word));
    let meaning = if his.is_empty() {
        String::new()
    } else if zh {
        format!("，对应{hi_name}中的{}", quote(&his))
    } else {
        format!(", corresponding to {} in {hi_name}", quote(&his))
    };
    let mut parts = Vec::new();
    if zh {
        if !pre.is_empty() {
            parts.push(format!("在{lo_name}中，可以在相关动词前添加前缀{}，与动词连写{meaning}", quote(&pre)));
        }
        if !suf.is_empty() {
            parts.push(format!("在{lo_name}中，可以在相关词语后添加后缀{}{meaning}", quote(&suf)));
        }
        if !word.is_empty() {
            parts.push(format!("在{lo_name}中，翻译这类句子时需要使用{}{meaning}", quote(&word)));
        }
        if parts.is_empty() {
            parts.push(format!("在{lo_name}中，词序与{hi_name}不同，需要按照例句调整词语的顺序"));
        }
        parts.join("；") + "。"
    } else {
        if !pre.is_empty() {
            parts.push(format!("In {lo_name}, the prefix {} is attached to the verb{meaning}", quote(&pre)));
        }
        if !suf.is_empty() {
            parts.push(format!("In {lo_name}, the suffix {} is attached to the word{meaning}", quote(&suf)));
        }
        if !word.is_empty() {
            parts.push(format!("In {lo_name}, such sentences use {}{meaning}", quote(&word)));
        }
        if parts.is_empty() {
            parts.push(format!("In {lo_name}, word order differs from {hi_name} and follows the examples"));
        }
        parts.join("; ") + "."
    }
}

impl ChatBackend for MockBackend {
    fn call(&self, req: &CompletionRequest) -> Result<Completion, LlmError> {
        let text = match self.overrides.iter().find_map(|f| f(req)) {
            Some(t) => t,
            None => match &req.tag {
                None => return Err(LlmError::Profile("mock backend needs a tagged request".into())),
                Some(RequestTag::Classify { instance_id, rule_id }) => self.classify(instance_id, rule_id)?,
                Some(RequestTag::FullBook { instance_id }) => self.full_book(instance_id)?,
                Some(RequestTag::Translate { instance_id, direction, rule_ids, induced, want_igt, use_lexicon }) => {
                    self.translate(instance_id, *direction, rule_ids, induced, *want_igt, *use_lexicon)?
                }
                Some(RequestTag::ConvertRule { rule_id, style }) => {
                    let rule = self.book.rule(rule_id).ok_or_else(|| LlmError::Profile(format!("unknown rule {rule_id}")))?;
                    format!("```python\n{}\n```", synthesize_code(rule, *style, &self.book.manifest.prompt_language).render())
                }
                Some(RequestTag::GenerateIgt { tokens, lexicon, memory }) => self.igt(tokens, lexicon, memory),
                Some(RequestTag::Induce { example_ids }) => self.induce(example_ids)?,
                Some(RequestTag::Combine { strategy, first, second }) => match strategy {
                    CombineStrategy::FuncCall => orchestrator(first, second).render(),
                    CombineStrategy::InlineLlm | CombineStrategy::InlineTemplate => merge_bodies(first, second).render(),
                },
            },
        };
        let usage = Usage {
            prompt_tokens: req.estimated_tokens() as u64,
            completion_tokens: text::estimate_tokens(&text) as u64,
        };
        Ok(Completion::new(text, usage))
    }

    fn describe(&self) -> String {
        format!("mock({}; seed {})", self.profile, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_parsing() {
        assert_eq!("".parse::<MockProfile>().unwrap(), MockProfile::default());
        let p: MockProfile = "always_yes,distracted_translator(0.9)".parse().unwrap();
        assert_eq!(p.classifier, ClassifierProfile::AlwaysYes);
        assert_eq!(p.translator, TranslatorProfile::Distracted(0.9));
        let d: MockProfile = "distracted".parse().unwrap();
        assert_eq!(d.translator, TranslatorProfile::Distracted(DEFAULT_DISTRACTION));
        assert!("distracted(1.5)".parse::<MockProfile>().is_err());
        assert!("clairvoyant".parse::<MockProfile>().is_err());
        let round: MockProfile = p.to_string().parse().unwrap();
        assert_eq!(round, p);
    }
}
