//! Rule-application prompts, multi-rule combination and answer extraction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{rule_view, CorpusError, Direction, ParallelExample, RuleFormat, Rulebook};
use crate::llm::{CompletionRequest, LlmClient, LlmError, Message, RequestTag, DEFAULT_MAX_TOKENS};
use crate::prompts::{self, Lang};
use crate::rulecraft::{
    merge_bodies, parse_code_rule, parse_functions, renamed, validate_code_rule, CodeRule, CodeStyle, InducedRule,
    Violation,
};
use crate::derive_seed;

#[derive(Debug, Error)]
pub enum TranslatorError {
    #[error("IGT lines are only available when translating from the low-resource language")]
    IgtUnavailable,
    #[error("combining needs two application-style code rules: {0}")]
    CombineInput(String),
    #[error("combined rule failed validation: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),
    #[error("combination still invalid after retry: {}", .0.join("; "))]
    GenerationInvalid(Vec<String>),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleMode {
    None,
    Random,
    #[default]
    Gold,
}

impl RuleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleMode::None => "none",
            RuleMode::Random => "random",
            RuleMode::Gold => "gold",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineStrategy {
    /// An orchestrator calls the two rule functions in sequence.
    FuncCall,
    /// Bodies concatenated locally in seeded random order.
    InlineTemplate,
    /// The model writes one merged function.
    InlineLlm,
}

impl CombineStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            CombineStrategy::FuncCall => "func_call",
            CombineStrategy::InlineTemplate => "inline_template",
            CombineStrategy::InlineLlm => "inline_llm",
        }
    }
}

impl std::str::FromStr for CombineStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "func_call" => Ok(CombineStrategy::FuncCall),
            "inline_template" => Ok(CombineStrategy::InlineTemplate),
            "inline_llm" => Ok(CombineStrategy::InlineLlm),
            o => Err(format!("unknown combine strategy {o:?}")),
        }
    }
}

/// Where in-context examples are drawn from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExamplePool {
    /// Single-rule examples of the instance's gold rules, in every rule mode.
    #[default]
    SameRule,
    /// Any other example in the book.
    Any,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApplicationConfig {
    pub rule_mode: RuleMode,
    pub rule_format: RuleFormat,
    pub n_examples: usize,
    pub use_igt: bool,
    pub use_lexicon: bool,
    pub direction: Direction,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub combine: Option<CombineStrategy>,
    pub example_pool: ExamplePool,
}

impl Default for ApplicationConfig {
    fn default() -> Self {
        ApplicationConfig {
            rule_mode: RuleMode::Gold,
            rule_format: RuleFormat::Text,
            n_examples: 2,
            use_igt: false,
            use_lexicon: true,
            direction: Direction::LoToHi,
            seed: 0,
            combine: None,
            example_pool: ExamplePool::SameRule,
        }
    }
}

impl ApplicationConfig {
    /// Cell label such as `gold/text/ex2/igt`, without direction.
    pub fn condition(&self) -> String {
        let mut s = format!("{}/{}/ex{}", self.rule_mode.as_str(), self.rule_format.as_str(), self.n_examples);
        if self.use_igt {
            s.push_str("/igt");
        }
        if !self.use_lexicon {
            s.push_str("/nolex");
        }
        if let Some(c) = self.combine {
            s.push('/');
            s.push_str(c.as_str());
        }
        s
    }

    pub fn check(&self) -> Result<(), TranslatorError> {
        if self.use_igt && self.direction == Direction::HiToLo {
            return Err(TranslatorError::IgtUnavailable);
        }
        Ok(())
    }
}

/// Rules placed in a prompt.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RuleSelection {
    pub rule_ids: Vec<String>,
    pub induced: Vec<InducedRule>,
    /// Replaces the per-rule code blocks when set.
    pub combined: Option<CodeRule>,
}

/// A prompt plus what went into it.
#[derive(Clone, Debug)]
pub struct BuiltPrompt {
    pub request: CompletionRequest,
    pub rule_ids: Vec<String>,
    pub example_ids: Vec<String>,
    pub flags: Vec<String>,
}

/// Rules the rule mode selects for `instance`.
pub fn select_rules(instance: &ParallelExample, book: &Rulebook, cfg: &ApplicationConfig) -> Vec<String> {
    match cfg.rule_mode {
        RuleMode::None => Vec::new(),
        RuleMode::Gold => instance.rule_ids.clone(),
        RuleMode::Random => {
            let mut pool: Vec<String> =
                book.rules().iter().map(|r| r.id.clone()).filter(|id| !instance.rule_ids.contains(id)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &["random_rules", &instance.id]));
            pool.shuffle(&mut rng);
            pool.truncate(instance.rule_ids.len());
            pool
        }
    }
}

/// In-context examples for `instance`: seeded sample without the instance
/// itself. The second value is true when fewer than requested exist.
pub fn sample_examples<'a>(
    instance: &ParallelExample,
    book: &'a Rulebook,
    cfg: &ApplicationConfig,
) -> (Vec<&'a ParallelExample>, bool) {
    if cfg.n_examples == 0 {
        return (Vec::new(), false);
    }
    let mut pool: Vec<&ParallelExample> = match cfg.example_pool {
        ExamplePool::SameRule => {
            let mut v: Vec<&ParallelExample> = Vec::new();
            for g in &instance.rule_ids {
                for e in book.examples_for_rule(g) {
                    if e.id != instance.id && !v.iter().any(|x| x.id == e.id) {
                        v.push(e);
                    }
                }
            }
            v
        }
        ExamplePool::Any => book.examples().iter().filter(|e| e.id != instance.id).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &["examples", &instance.id]));
    pool.shuffle(&mut rng);
    let short = pool.len() < cfg.n_examples;
    pool.truncate(cfg.n_examples);
    (pool, short)
}

fn language_names(book: &Rulebook, direction: Direction) -> (String, String) {
    match direction {
        Direction::LoToHi => (book.source_language_name(), book.target_language_name()),
        Direction::HiToLo => (book.target_language_name(), book.source_language_name()),
    }
}

fn rule_block(book: &Rulebook, sel: &RuleSelection, format: RuleFormat, lang: Lang) -> Result<Option<String>, CorpusError> {
    let code = format == RuleFormat::Code;
    let mut bodies: Vec<String> = Vec::new();
    match &sel.combined {
        Some(c) => bodies.push(prompts::fenced(&c.render())),
        None => {
            for id in &sel.rule_ids {
                let rule = book.rule(id).ok_or_else(|| CorpusError::Integrity(format!("unknown rule {id}")))?;
                let view = rule_view(rule, format, CodeStyle::Application)?;
                bodies.push(if code { prompts::fenced(&view) } else { view });
            }
        }
    }
    bodies.extend(sel.induced.iter().map(|r| r.text.clone()));
    if bodies.is_empty() {
        return Ok(None);
    }
    let listed = if bodies.len() == 1 {
        bodies.remove(0)
    } else {
        bodies.iter().enumerate().map(|(i, b)| prompts::numbered_rule(lang, i + 1, b)).collect::<Vec<_>>().join("\n\n")
    };
    Ok(Some(format!("{}\n{listed}", prompts::rules_heading(lang, code))))
}

/// Assembles the application prompt for `instance` with an explicit rule
/// selection. Sections, in order: framing, rules, examples, test dictionary,
/// test sentence, answer cue.
pub fn build_prompt_with(
    instance: &ParallelExample,
    book: &Rulebook,
    cfg: &ApplicationConfig,
    sel: &RuleSelection,
    model_id: &str,
) -> Result<BuiltPrompt, TranslatorError> {
    cfg.check()?;
    let lang = Lang::of(&book.manifest.prompt_language);
    let colon = lang.colon();
    let (src, tgt) = language_names(book, cfg.direction);
    let mut flags = Vec::new();
    let (examples, short) = sample_examples(instance, book, cfg);
    if short {
        flags.push("insufficient_examples".to_string());
    }
    let rules = rule_block(book, sel, cfg.rule_format, lang)?;

    let framing = if cfg.use_lexicon {
        prompts::translate_framing(lang, &src, &tgt, rules.is_some(), !examples.is_empty())
    } else {
        prompts::translate_framing_no_lexicon(lang, &src, &tgt, rules.is_some(), !examples.is_empty())
    };
    let mut sections = vec![framing];
    if let Some(r) = rules {
        sections.push(r);
    }
    if !examples.is_empty() {
        let mut block = vec![prompts::examples_heading(lang).to_string()];
        for (i, ex) in examples.iter().enumerate() {
            let mut lines = vec![prompts::example_label(lang, i + 1)];
            if cfg.use_lexicon {
                lines.push(format!("{}{}", prompts::dictionary_label(lang), prompts::dictionary(&ex.lexicon_for(cfg.direction))));
            }
            lines.push(format!("{src}{colon}{}", ex.input_text(cfg.direction)));
            if cfg.use_igt {
                match &ex.igt {
                    Some(igt) => lines.push(format!("IGT{colon}{}", igt.gloss_line())),
                    None => flags.push(format!("example_without_igt:{}", ex.id)),
                }
            }
            lines.push(format!("{tgt}{colon}{}", ex.reference(cfg.direction)));
            block.push(lines.join("\n"));
        }
        sections.push(block.join("\n\n"));
    }
    if cfg.use_lexicon {
        sections.push(format!(
            "{}\n{}",
            prompts::test_dictionary_heading(lang),
            prompts::dictionary(&instance.lexicon_for(cfg.direction))
        ));
    }
    sections.push(format!("{}\n{src}{colon}{}", prompts::test_sentence_heading(lang), instance.input_text(cfg.direction)));
    sections.push(prompts::answer_cue(lang, &tgt, cfg.use_igt));

    let tag = RequestTag::Translate {
        instance_id: instance.id.clone(),
        direction: cfg.direction,
        rule_ids: sel.rule_ids.clone(),
        induced: sel.induced.clone(),
        want_igt: cfg.use_igt,
        use_lexicon: cfg.use_lexicon,
    };
    let request = CompletionRequest::new(model_id, vec![Message::user(sections.join("\n\n"))], DEFAULT_MAX_TOKENS).with_tag(tag);
    Ok(BuiltPrompt {
        request,
        rule_ids: sel.rule_ids.clone(),
        example_ids: examples.iter().map(|e| e.id.clone()).collect(),
        flags,
    })
}

/// Prompt for `instance` with rules chosen by `cfg.rule_mode`.
pub fn build_prompt(
    instance: &ParallelExample,
    book: &Rulebook,
    cfg: &ApplicationConfig,
    model_id: &str,
) -> Result<BuiltPrompt, TranslatorError> {
    let sel = RuleSelection { rule_ids: select_rules(instance, book, cfg), ..Default::default() };
    build_prompt_with(instance, book, cfg, &sel, model_id)
}

/// Coin for the inline-template order. Consecutive seeds always land on
/// opposite orders for the same pair.
fn template_coin(seed: u64, first: &CodeRule, second: &CodeRule) -> bool {
    let pair = derive_seed(0, &["inline_template", &first.comment_block, &second.comment_block]);
    seed.wrapping_add(pair).is_multiple_of(2)
}

fn check_pair(first: &CodeRule, second: &CodeRule) -> Result<(), TranslatorError> {
    for c in [first, second] {
        if c.style != CodeStyle::Application {
            return Err(TranslatorError::CombineInput(format!("{} is {}-style", c.function_name, c.style.as_str())));
        }
        let v = validate_code_rule(c);
        if !v.is_empty() {
            return Err(TranslatorError::Validation(v));
        }
    }
    Ok(())
}

/// Combines two application-style code rules into one.
pub fn combine_code_rules(
    first: &CodeRule,
    second: &CodeRule,
    strategy: CombineStrategy,
    client: &LlmClient,
    seed: u64,
    lang: Lang,
) -> Result<CodeRule, TranslatorError> {
    check_pair(first, second)?;
    match strategy {
        CombineStrategy::InlineTemplate => {
            let merged = if template_coin(seed, first, second) {
                merge_bodies(first, second)
            } else {
                merge_bodies(second, first)
            };
            let v = validate_code_rule(&merged);
            if v.is_empty() {
                Ok(merged)
            } else {
                Err(TranslatorError::Validation(v))
            }
        }
        CombineStrategy::FuncCall => {
            let h1 = renamed(first, "apply_rule_1");
            let h2 = renamed(second, "apply_rule_2");
            let helpers = format!("{}\n\n{}", h1.render(), h2.render());
            let prompt = prompts::combine_func_call_prompt(lang, &helpers, &h1.function_name, &h2.function_name);
            let tag = RequestTag::Combine { strategy, first: h1.clone(), second: h2.clone() };
            let names = [h1.function_name.clone(), h2.function_name.clone()];
            with_retry(client, lang, prompt, tag, |reply| {
                let funcs = parse_functions(reply, CodeStyle::Application);
                let mut orchestrator = funcs
                    .into_iter()
                    .find(|f| !names.contains(&f.function_name))
                    .ok_or_else(|| vec!["no orchestrating function found".to_string()])?;
                orchestrator.helpers = vec![h1.clone(), h2.clone()];
                checked(orchestrator)
            })
        }
        CombineStrategy::InlineLlm => {
            let prompt = prompts::combine_inline_prompt(lang, &first.render(), &second.render());
            let tag = RequestTag::Combine { strategy, first: first.clone(), second: second.clone() };
            with_retry(client, lang, prompt, tag, |reply| {
                let merged = parse_code_rule(reply, CodeStyle::Application).map_err(|e| vec![e.to_string()])?;
                checked(merged)
            })
        }
    }
}

fn checked(c: CodeRule) -> Result<CodeRule, Vec<String>> {
    let v = validate_code_rule(&c);
    if v.is_empty() {
        Ok(c)
    } else {
        Err(v.iter().map(ToString::to_string).collect())
    }
}

fn with_retry(
    client: &LlmClient,
    lang: Lang,
    prompt: String,
    tag: RequestTag,
    check: impl Fn(&str) -> Result<CodeRule, Vec<String>>,
) -> Result<CodeRule, TranslatorError> {
    let reply = client.complete(&client.request(vec![Message::user(prompt.clone())], DEFAULT_MAX_TOKENS, tag.clone()))?;
    let problems = match check(&reply.text) {
        Ok(c) => return Ok(c),
        Err(p) => p,
    };
    let messages = vec![
        Message::user(prompt),
        Message { role: "assistant".into(), content: reply.text },
        Message::user(prompts::retry_feedback(lang, &problems)),
    ];
    let retry = client.complete(&client.request(messages, DEFAULT_MAX_TOKENS, tag))?;
    check(&retry.text).map_err(TranslatorError::GenerationInvalid)
}

/// Folds the selected rules' application code into one combined rule.
pub fn combine_selection(
    book: &Rulebook,
    rule_ids: &[String],
    strategy: CombineStrategy,
    client: &LlmClient,
    seed: u64,
) -> Result<CodeRule, TranslatorError> {
    let lang = Lang::of(&book.manifest.prompt_language);
    let mut codes = Vec::with_capacity(rule_ids.len());
    for id in rule_ids {
        let rule = book.rule(id).ok_or_else(|| CorpusError::Integrity(format!("unknown rule {id}")))?;
        codes.push(rule.code_application.clone().ok_or_else(|| CorpusError::MissingCode(id.clone()))?);
    }
    let mut it = codes.into_iter();
    let mut acc = it.next().ok_or_else(|| TranslatorError::CombineInput("no rules selected".into()))?;
    for next in it {
        acc = combine_code_rules(&acc, &next, strategy, client, seed, lang)?;
    }
    Ok(acc)
}

/// One translated instance. Failed calls keep the record with an empty
/// translation and the error text, so they score as zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationRecord {
    pub instance_id: String,
    pub direction: Direction,
    pub condition: String,
    pub prompt_digest: String,
    pub raw_output: String,
    pub extracted_translation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted_igt: Option<String>,
    pub reference: String,
    pub rule_ids_in_prompt: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn strip_quotes(s: &str) -> &str {
    s.trim().trim_matches(|c| matches!(c, '"' | '\'' | '“' | '”' | '「' | '」' | '《' | '》' | '`' | '*')).trim()
}

fn strip_label<'a>(line: &'a str, labels: &[String]) -> &'a str {
    let t = line.trim().trim_start_matches(['*', '#', '-', '>']).trim_start();
    for l in labels {
        if let Some(rest) = t.strip_prefix(l.as_str()) {
            let rest = rest.trim_start_matches(['*', ' ']);
            if let Some(r) = rest.strip_prefix('：').or_else(|| rest.strip_prefix(':')) {
                return r.trim();
            }
        }
    }
    t
}

fn strip_igt_label(line: &str) -> Option<&str> {
    let t = line.trim();
    let rest = t.strip_prefix("IGT").or_else(|| t.strip_prefix("igt"))?;
    Some(rest.trim_start_matches([':', '：', ' ']).trim())
}

/// Translation (and IGT when `want_igt`) from a free-form reply: the last
/// non-empty line with answer labels and quotes stripped; the IGT is the
/// line before it.
pub fn extract_answer(raw: &str, labels: &[String], want_igt: bool) -> (String, Option<String>) {
    let lines: Vec<&str> = raw.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with("```")).collect();
    let Some(last) = lines.last() else { return (String::new(), None) };
    let translation = strip_quotes(strip_label(last, labels)).to_string();
    let igt = if want_igt && lines.len() >= 2 {
        let prev = lines[lines.len() - 2];
        Some(strip_igt_label(prev).unwrap_or(prev).to_string())
    } else {
        None
    };
    (translation, igt)
}

/// Labels for a book and direction.
pub fn labels_for(book: &Rulebook, direction: Direction) -> Vec<String> {
    let (src, tgt) = language_names(book, direction);
    prompts::answer_labels(&src, &tgt)
}

/// Turns a completion outcome into a record.
pub fn record_from(
    instance: &ParallelExample,
    book: &Rulebook,
    cfg: &ApplicationConfig,
    built: &BuiltPrompt,
    outcome: Result<String, String>,
) -> TranslationRecord {
    let mut flags = built.flags.clone();
    let (raw, error) = match outcome {
        Ok(t) => (t, None),
        Err(e) => (String::new(), Some(e)),
    };
    let (translation, igt) = extract_answer(&raw, &labels_for(book, cfg.direction), cfg.use_igt);
    if translation.is_empty() && error.is_none() {
        flags.push("empty_output".into());
    }
    TranslationRecord {
        instance_id: instance.id.clone(),
        direction: cfg.direction,
        condition: cfg.condition(),
        prompt_digest: built.request.key().0,
        raw_output: raw,
        extracted_translation: translation,
        extracted_igt: igt,
        reference: instance.reference(cfg.direction).to_string(),
        rule_ids_in_prompt: built.rule_ids.clone(),
        flags,
        error,
    }
}

/// Selection for `instance` under `cfg`, combining code rules when a
/// strategy is set and more than one rule is shown.
pub fn selection_for(
    instance: &ParallelExample,
    book: &Rulebook,
    cfg: &ApplicationConfig,
    rule_ids: Vec<String>,
    client: &LlmClient,
) -> Result<RuleSelection, TranslatorError> {
    let combined = match cfg.combine {
        Some(strategy) if cfg.rule_format == RuleFormat::Code && rule_ids.len() > 1 => {
            Some(combine_selection(book, &rule_ids, strategy, client, derive_seed(cfg.seed, &[&instance.id]))?)
        }
        _ => None,
    };
    Ok(RuleSelection { rule_ids, induced: Vec::new(), combined })
}

/// Builds, sends and parses one application prompt.
pub fn translate(
    instance: &ParallelExample,
    book: &Rulebook,
    cfg: &ApplicationConfig,
    client: &LlmClient,
) -> Result<TranslationRecord, TranslatorError> {
    let sel = selection_for(instance, book, cfg, select_rules(instance, book, cfg), client)?;
    translate_with(instance, book, cfg, &sel, client)
}

pub fn translate_with(
    instance: &ParallelExample,
    book: &Rulebook,
    cfg: &ApplicationConfig,
    sel: &RuleSelection,
    client: &LlmClient,
) -> Result<TranslationRecord, TranslatorError> {
    let built = build_prompt_with(instance, book, cfg, sel, client.model_id())?;
    let outcome = match client.complete(&built.request) {
        Ok(c) => Ok(c.text),
        Err(e) if e.is_fatal() => return Err(e.into()),
        Err(e) => Err(e.to_string()),
    };
    Ok(record_from(instance, book, cfg, &built, outcome))
}

/// Translates many instances with explicit selections concurrently; records
/// keep input order.
pub fn translate_many(
    items: &[(&ParallelExample, RuleSelection)],
    book: &Rulebook,
    cfg: &ApplicationConfig,
    client: &LlmClient,
) -> Result<Vec<TranslationRecord>, TranslatorError> {
    let built: Vec<BuiltPrompt> = items
        .iter()
        .map(|(ex, sel)| build_prompt_with(ex, book, cfg, sel, client.model_id()))
        .collect::<Result<_, _>>()?;
    let reqs: Vec<CompletionRequest> = built.iter().map(|b| b.request.clone()).collect();
    let outcomes = client.complete_many(&reqs);
    let mut out = Vec::with_capacity(items.len());
    for (((ex, _), b), o) in items.iter().zip(&built).zip(outcomes) {
        let o = match o {
            Ok(c) => Ok(c.text),
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => Err(e.to_string()),
        };
        out.push(record_from(ex, book, cfg, b, o));
    }
    Ok(out)
}
