//! LLM-assisted rule transformation: text-to-code conversion, IGT
//! generation and rule induction.

mod code;

pub use code::*;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{GrammarRule, Igt, ParallelExample, Rulebook};
use crate::llm::{LlmClient, LlmError, Message, RequestTag, DEFAULT_MAX_TOKENS};
use crate::prompts::{self, Lang};
use crate::text;

#[derive(Debug, Error)]
pub enum RulecraftError {
    #[error("generation for {subject} still invalid after retry: {}", problems.join("; "))]
    GenerationInvalid { subject: String, problems: Vec<String> },
    #[error("IGT for {sentence:?} has {glosses} glosses for {tokens} tokens after retry")]
    Alignment { sentence: String, tokens: usize, glosses: usize },
    #[error("empty generation for {0}")]
    EmptyGeneration(String),
    #[error("induction needs at least 2 examples, got {0}")]
    InsufficientExamples(usize),
    #[error("rule {0} has empty text")]
    EmptyRuleText(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

/// Rule text summarised from examples, kept next to (never replacing) the
/// gold rule it was induced for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InducedRule {
    pub rule_id: String,
    pub text: String,
}

/// One text-to-code conversion shot.
#[derive(Clone, Debug, Deserialize)]
pub struct ConversionExemplar {
    pub rule: String,
    pub application: String,
    pub retrieval_check: String,
}

#[derive(Clone, Debug, Deserialize)]
pub struct IgtExemplar {
    pub surface: String,
    pub gloss: String,
}

#[derive(Clone, Debug, Deserialize)]
pub struct InductionShot {
    pub pairs: Vec<(String, String)>,
    pub rule: String,
}

/// The five bundled conversion shots.
pub fn conversion_exemplars() -> Vec<ConversionExemplar> {
    serde_json::from_str(include_str!("../../fixtures/exemplars/conversion.json")).expect("bundled conversion exemplars parse")
}

pub fn igt_exemplars() -> Vec<IgtExemplar> {
    serde_json::from_str(include_str!("../../fixtures/exemplars/igt.json")).expect("bundled IGT exemplars parse")
}

/// The two bundled induction shots.
pub fn induction_shots() -> Vec<InductionShot> {
    serde_json::from_str(include_str!("../../fixtures/exemplars/induction.json")).expect("bundled induction shots parse")
}

/// Sends `prompt`, and on problems once more with feedback appended.
/// `check` turns a reply into a value or a list of problems.
fn with_retry<T>(
    client: &LlmClient,
    lang: Lang,
    prompt: String,
    max_tokens: u32,
    tag: RequestTag,
    subject: &str,
    check: impl Fn(&str) -> Result<T, Vec<String>>,
) -> Result<T, RulecraftError> {
    let req = client.request(vec![Message::user(prompt.clone())], max_tokens, tag.clone());
    let reply = client.complete(&req)?;
    let problems = match check(&reply.text) {
        Ok(v) => return Ok(v),
        Err(p) => p,
    };
    log::info!("retrying generation for {subject}: {}", problems.join("; "));
    let messages = vec![
        Message::user(prompt),
        Message { role: "assistant".into(), content: reply.text },
        Message::user(prompts::retry_feedback(lang, &problems)),
    ];
    let retry = client.complete(&client.request(messages, max_tokens, tag))?;
    check(&retry.text).map_err(|problems| RulecraftError::GenerationInvalid { subject: subject.to_string(), problems })
}

/// Converts `rule` into a validated code rule of `style` using the given
/// conversion shots. Invalid output is retried once with the violations as
/// feedback.
pub fn convert_rule(
    rule: &GrammarRule,
    style: CodeStyle,
    client: &LlmClient,
    exemplars: &[ConversionExemplar],
    lang: Lang,
) -> Result<CodeRule, RulecraftError> {
    if rule.text.trim().is_empty() {
        return Err(RulecraftError::EmptyRuleText(rule.id.clone()));
    }
    let shots: Vec<(String, String)> = exemplars
        .iter()
        .map(|e| {
            let code = match style {
                CodeStyle::Application => &e.application,
                CodeStyle::RetrievalCheck => &e.retrieval_check,
            };
            (e.rule.clone(), code.clone())
        })
        .collect();
    let signature = format!("{}(source_sentence, dictionary)", style.default_function_name());
    let goal = prompts::style_goal(lang, style == CodeStyle::Application);
    let prompt = prompts::convert_prompt(lang, goal, &signature, &shots, &rule.text);
    let tag = RequestTag::ConvertRule { rule_id: rule.id.clone(), style };
    with_retry(client, lang, prompt, DEFAULT_MAX_TOKENS, tag, &rule.id, |reply| {
        let parsed = parse_code_rule(reply, style).map_err(|e| vec![e.to_string()])?;
        let violations = validate_for_rule(&parsed, rule);
        if violations.is_empty() {
            Ok(parsed)
        } else {
            Err(violations.iter().map(ToString::to_string).collect())
        }
    })
}

/// Converts every rule of the book into both code styles, in book order.
/// Rules that already carry a code form keep it.
pub fn convert_book(book: &Rulebook, client: &LlmClient, exemplars: &[ConversionExemplar]) -> Result<Rulebook, RulecraftError> {
    let lang = Lang::of(&book.manifest.prompt_language);
    let mut converted = Vec::with_capacity(book.rules().len());
    for rule in book.rules() {
        let app = match &rule.code_application {
            Some(c) => c.clone(),
            None => convert_rule(rule, CodeStyle::Application, client, exemplars, lang)?,
        };
        let check = match &rule.code_retrieval {
            Some(c) => c.clone(),
            None => convert_rule(rule, CodeStyle::RetrievalCheck, client, exemplars, lang)?,
        };
        converted.push((app, check));
    }
    let mut it = converted.into_iter();
    book.map_rules(|r| {
        let (a, c) = it.next().expect("one conversion per rule");
        r.code_application = Some(a);
        r.code_retrieval = Some(c);
    })
    .map_err(RulecraftError::from)
}

/// A generated IGT and the gloss symbols it used outside the inventory.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedIgt {
    pub igt: Igt,
    pub unknown_symbols: Vec<String>,
}

/// Gloss tokens of an IGT reply: the last line carrying an `IGT` label, or
/// failing that the last non-empty line.
pub fn parse_igt_reply(reply: &str) -> Vec<String> {
    let lines: Vec<&str> = reply.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let strip = |l: &str| -> Option<String> {
        let rest = l.strip_prefix("IGT").or_else(|| l.strip_prefix("igt"))?;
        Some(rest.trim_start_matches([':', '：', ' ']).to_string())
    };
    let line = lines.iter().rev().find_map(|l| strip(l)).or_else(|| lines.last().map(|l| l.to_string())).unwrap_or_default();
    line.split_whitespace().map(str::to_string).collect()
}

/// Surface-to-gloss memory from aligned exemplars; the first gloss wins.
pub fn exemplar_memory(exemplars: &[IgtExemplar]) -> IndexMap<String, String> {
    let mut memory = IndexMap::new();
    for e in exemplars {
        let surface = text::latin_tokens(&e.surface);
        let gloss: Vec<&str> = e.gloss.split_whitespace().collect();
        if surface.len() != gloss.len() {
            log::warn!("skipping misaligned IGT exemplar {:?}", e.surface);
            continue;
        }
        for (s, g) in surface.into_iter().zip(gloss) {
            memory.entry(s).or_insert_with(|| g.to_string());
        }
    }
    memory
}

/// Glosses a low-resource sentence. Misaligned replies are re-prompted once
/// and then rejected; symbols outside `inventory` are reported, not fatal.
pub fn generate_igt(
    sentence: &str,
    lexicon: &IndexMap<String, String>,
    client: &LlmClient,
    exemplars: &[IgtExemplar],
    inventory: &[String],
    lang: Lang,
    lo_name: &str,
) -> Result<GeneratedIgt, RulecraftError> {
    let tokens = text::latin_tokens(sentence);
    let shots: Vec<(String, String)> = exemplars.iter().map(|e| (e.surface.clone(), e.gloss.clone())).collect();
    let prompt = prompts::igt_prompt(lang, lo_name, inventory, &shots, &prompts::dictionary(lexicon), sentence);
    let tag = RequestTag::GenerateIgt { tokens: tokens.clone(), lexicon: lexicon.clone(), memory: exemplar_memory(exemplars) };
    let last_count = std::cell::Cell::new(0);
    let attempt = |reply: &str| -> Result<Igt, Vec<String>> {
        let gloss = parse_igt_reply(reply);
        last_count.set(gloss.len());
        Igt::new(tokens.clone(), gloss).map_err(|e| vec![e.to_string()])
    };
    let igt = match with_retry(client, lang, prompt, DEFAULT_MAX_TOKENS, tag, sentence, attempt) {
        Ok(igt) => igt,
        Err(RulecraftError::GenerationInvalid { .. }) => {
            return Err(RulecraftError::Alignment {
                sentence: sentence.to_string(),
                tokens: tokens.len(),
                glosses: last_count.get(),
            });
        }
        Err(e) => return Err(e),
    };
    let unknown_symbols = igt.unknown_symbols(inventory);
    if !unknown_symbols.is_empty() {
        log::warn!("IGT for {sentence:?} uses symbols outside the inventory: {unknown_symbols:?}");
    }
    Ok(GeneratedIgt { igt, unknown_symbols })
}

/// Summarises the rule shared by `examples` (at least two) as text.
pub fn induce_rule(
    rule_id: &str,
    examples: &[&ParallelExample],
    shots: &[InductionShot],
    client: &LlmClient,
    book: &Rulebook,
) -> Result<InducedRule, RulecraftError> {
    if examples.len() < 2 {
        return Err(RulecraftError::InsufficientExamples(examples.len()));
    }
    let lang = Lang::of(&book.manifest.prompt_language);
    let pairs: Vec<(String, String)> = examples.iter().map(|e| (e.source_text.clone(), e.target_text.clone())).collect();
    let shot_pairs: Vec<(Vec<(String, String)>, String)> = shots.iter().map(|s| (s.pairs.clone(), s.rule.clone())).collect();
    let prompt =
        prompts::induce_prompt(lang, &book.source_language_name(), &book.target_language_name(), &shot_pairs, &pairs);
    let tag = RequestTag::Induce { example_ids: examples.iter().map(|e| e.id.clone()).collect() };
    let reply = client.complete(&client.request(vec![Message::user(prompt)], DEFAULT_MAX_TOKENS, tag))?;
    let text = strip_rule_label(&reply.text);
    if text.is_empty() {
        return Err(RulecraftError::EmptyGeneration(rule_id.to_string()));
    }
    Ok(InducedRule { rule_id: rule_id.to_string(), text })
}

fn strip_rule_label(reply: &str) -> String {
    let t = reply.trim();
    for label in ["规则：", "规则:", "Rule:", "rule:"] {
        if let Some(rest) = t.strip_prefix(label) {
            return rest.trim().to_string();
        }
    }
    t.to_string()
}
