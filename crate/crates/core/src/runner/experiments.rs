use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::*;
use super::report::*;
use super::RunnerError;
use crate::corpus::{compute_stats, ParallelExample, RuleFormat, Rulebook};
use crate::derive_seed;
use crate::llm::LlmClient;
use crate::retrieval::{
    bm25_build, retrieve_bm25, retrieve_full_book, retrieve_rule_by_rule, Bm25Params, RetrievalError,
    RetrievalOptions, RetrievalResult, Strategy,
};
use crate::rulecraft::{conversion_exemplars, convert_book, induce_rule, induction_shots, InducedRule};
use crate::translator::{
    select_rules, selection_for, translate_many, ApplicationConfig, RuleMode, RuleSelection, TranslationRecord,
    TranslatorError,
};

/// Per-instance record tagged with the cell it belongs to.
#[derive(Clone, Debug, Serialize)]
pub struct CellRecord<T> {
    pub cell: String,
    #[serde(flatten)]
    pub record: T,
}

/// What an experiment produced: the aggregate report and its per-instance
/// records, keyed by JSONL file name.
#[derive(Debug, Default)]
pub struct ExperimentOutput {
    pub report: RunReport,
    pub records: IndexMap<String, Vec<serde_json::Value>>,
    /// Rulebook with generated code forms, when the experiment converted one.
    pub converted: Option<Rulebook>,
}

impl ExperimentOutput {
    fn new(experiment: &str) -> Self {
        ExperimentOutput { report: RunReport::new(experiment), ..Default::default() }
    }

    fn push<T: Serialize>(&mut self, file: &str, cell: &str, records: &[T]) {
        let sink = self.records.entry(file.to_string()).or_default();
        for r in records {
            let v = serde_json::to_value(CellRecord { cell: cell.to_string(), record: r }).expect("records serialize");
            sink.push(v);
        }
    }
}

/// Everything an experiment needs besides its spec.
pub struct Context<'a> {
    pub book: &'a Rulebook,
    pub client: &'a LlmClient,
    pub seed: u64,
    pub instances: InstanceFilter,
}

impl Context<'_> {
    fn instances(&self) -> Vec<&ParallelExample> {
        self.instances.select(self.book)
    }
}

/// Runs one experiment to completion.
pub fn run_experiment(exp: &Experiment, ctx: &Context<'_>) -> Result<ExperimentOutput, RunnerError> {
    match exp {
        Experiment::Pilot(s) => run_pilot(s, ctx),
        Experiment::Retrieval(s) => run_retrieval_table(s, ctx),
        Experiment::Application(s) => run_application_grid(s, ctx),
        Experiment::Multirule(s) => run_multirule(s, ctx),
        Experiment::Pipeline(s) => run_pipeline(s, ctx),
        Experiment::Induce(s) => run_induce(s, ctx),
        Experiment::Stats => run_stats(ctx),
    }
}

fn needs_code(book: &Rulebook) -> bool {
    book.rules().iter().any(|r| r.code_application.is_none() || r.code_retrieval.is_none())
}

/// The book with code forms for every rule, converting only when missing.
fn with_code(book: &Rulebook, client: &LlmClient, out: &mut ExperimentOutput) -> Result<Rulebook, RunnerError> {
    if let Some(b) = &out.converted {
        return Ok(b.clone());
    }
    if !needs_code(book) {
        return Ok(book.clone());
    }
    let converted = convert_book(book, client, &conversion_exemplars())?;
    out.converted = Some(converted.clone());
    Ok(converted)
}

/// Record for an instance whose prompt could not be built or whose rules
/// could not be combined. It scores as an empty translation.
fn failed_record(instance: &ParallelExample, cfg: &ApplicationConfig, err: &TranslatorError) -> TranslationRecord {
    TranslationRecord {
        instance_id: instance.id.clone(),
        direction: cfg.direction,
        condition: cfg.condition(),
        prompt_digest: String::new(),
        raw_output: String::new(),
        extracted_translation: String::new(),
        extracted_igt: None,
        reference: instance.reference(cfg.direction).to_string(),
        rule_ids_in_prompt: Vec::new(),
        flags: vec!["not_sent".into()],
        error: Some(err.to_string()),
    }
}

/// Translates instances with explicit rule ids per instance, combining code
/// rules when the config asks for it. Combination failures become failed
/// records; a context overflow or replay miss fails the whole cell.
fn translate_cell(
    items: Vec<(&ParallelExample, Vec<String>)>,
    book: &Rulebook,
    cfg: &ApplicationConfig,
    client: &LlmClient,
) -> Result<Vec<TranslationRecord>, TranslatorError> {
    let mut ready = Vec::new();
    let mut failed: IndexMap<String, TranslationRecord> = IndexMap::new();
    for (ex, ids) in items.iter().cloned() {
        match selection_for(ex, book, cfg, ids, client) {
            Ok(sel) => ready.push((ex, sel)),
            Err(TranslatorError::Llm(e)) if e.is_fatal() => return Err(e.into()),
            Err(e) => {
                log::warn!("{}: {e}", ex.id);
                failed.insert(ex.id.clone(), failed_record(ex, cfg, &e));
            }
        }
    }
    let mut done: IndexMap<String, TranslationRecord> =
        translate_many(&ready, book, cfg, client)?.into_iter().map(|r| (r.instance_id.clone(), r)).collect();
    Ok(items
        .iter()
        .map(|(ex, _)| done.shift_remove(&ex.id).or_else(|| failed.shift_remove(&ex.id)).expect("one record per instance"))
        .collect())
}

fn is_overflow(e: &TranslatorError) -> bool {
    matches!(e, TranslatorError::Llm(crate::llm::LlmError::ContextOverflow { .. }))
}

/// Gold rule plus `n` seeded irrelevant rules, in seeded shuffled order.
pub fn pilot_rules(book: &Rulebook, instance: &ParallelExample, n: usize, seed: u64) -> Result<Vec<String>, RunnerError> {
    let mut pool: Vec<String> =
        book.rules().iter().map(|r| r.id.clone()).filter(|id| !instance.rule_ids.contains(id)).collect();
    if n > pool.len() {
        return Err(RunnerError::NotEnoughRules { n, available: pool.len() });
    }
    let n_str = n.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["pilot", &instance.id, &n_str]));
    pool.shuffle(&mut rng);
    pool.truncate(n);
    pool.extend(instance.rule_ids.iter().cloned());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["pilot_order", &instance.id, &n_str]));
    pool.shuffle(&mut rng);
    Ok(pool)
}

/// Translation quality as irrelevant rules are added next to the gold rule.
pub fn run_pilot(spec: &PilotSpec, ctx: &Context<'_>) -> Result<ExperimentOutput, RunnerError> {
    if spec.n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(RunnerError::Config(format!("pilot n_values must be strictly ascending: {:?}", spec.n_values)));
    }
    let mut out = ExperimentOutput::new("pilot");
    let book = if spec.rule_format == RuleFormat::Code { with_code(ctx.book, ctx.client, &mut out)? } else { ctx.book.clone() };
    let instances = ctx.instances();
    let cfg = ApplicationConfig {
        rule_mode: RuleMode::Gold,
        rule_format: spec.rule_format,
        n_examples: spec.n_examples,
        direction: spec.direction,
        seed: ctx.seed,
        ..Default::default()
    };
    for &n in &spec.n_values {
        let items = instances
            .iter()
            .map(|ex| Ok((*ex, pilot_rules(&book, ex, n, ctx.seed)?)))
            .collect::<Result<Vec<_>, RunnerError>>()?;
        let records = translate_cell(items, &book, &cfg, ctx.client)?;
        let cell = format!("n={n}");
        let rows = translation_rows(&book, &cell, spec.direction, &records, &[]);
        let all = &rows[0];
        out.report.curve.push(CurvePoint { n, bleu: all.metrics[BLEU], chrf: all.metrics[CHRF] });
        out.report.rows.extend(rows);
        out.push("translations.jsonl", &cell, &records);
    }
    Ok(out)
}

fn retrieval_cell(strategy: Strategy, format: RuleFormat) -> String {
    match strategy {
        Strategy::Bm25 => "bm25".into(),
        s => format!("{}/{}", s.as_str(), format.as_str()),
    }
}

/// Retrieves for every instance with one LLM strategy. Returns `None` when
/// the prompt does not fit the context budget.
fn retrieve_all(
    strategy: Strategy,
    instances: &[&ParallelExample],
    book: &Rulebook,
    opts: &RetrievalOptions,
    client: &LlmClient,
) -> Result<Option<Vec<RetrievalResult>>, RunnerError> {
    let mut results = Vec::with_capacity(instances.len());
    for ex in instances {
        let r = match strategy {
            Strategy::FullBook => retrieve_full_book(ex, book, opts, client),
            Strategy::RuleByRule => retrieve_rule_by_rule(ex, book, opts, client),
            Strategy::Bm25 => unreachable!("BM25 is not an LLM strategy"),
        };
        match r {
            Ok(r) => results.push(r),
            Err(RetrievalError::ContextOverflow { .. }) => return Ok(None),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Some(results))
}

/// BM25 recall@k and LLM-based recall / #rules, per strategy and format.
pub fn run_retrieval_table(spec: &RetrievalSpec, ctx: &Context<'_>) -> Result<ExperimentOutput, RunnerError> {
    let mut out = ExperimentOutput::new("retrieval");
    let instances = ctx.instances();
    for &direction in &spec.directions {
        for &strategy in &spec.strategies {
            if strategy == Strategy::Bm25 {
                let index = bm25_build(ctx.book, spec.doc_scope, Bm25Params::default())?;
                let k = spec.ks.iter().copied().max().unwrap_or(1);
                let results: Vec<RetrievalResult> = instances.iter().map(|ex| retrieve_bm25(&index, ex, direction, k)).collect();
                out.report.rows.extend(retrieval_rows(ctx.book, "bm25", direction, &results, Some(&spec.ks)));
                out.push("retrieval.jsonl", &format!("bm25/{}", direction.label(ctx.book)), &results);
                continue;
            }
            for &format in &spec.formats {
                let book = if format == RuleFormat::Code { with_code(ctx.book, ctx.client, &mut out)? } else { ctx.book.clone() };
                let cell = retrieval_cell(strategy, format);
                let opts = RetrievalOptions { rule_format: format, include_lexicon: spec.include_lexicon, direction };
                match retrieve_all(strategy, &instances, &book, &opts, ctx.client)? {
                    Some(results) => {
                        out.report.rows.extend(retrieval_rows(&book, &cell, direction, &results, None));
                        out.push("retrieval.jsonl", &format!("{cell}/{}", direction.label(&book)), &results);
                    }
                    None => out.report.notes.push(format!(
                        "{cell} ({}) skipped: prompt exceeds the context budget",
                        direction.label(&book)
                    )),
                }
            }
        }
    }
    Ok(out)
}

/// Translation quality per application cell, sliced by difficulty.
pub fn run_application_grid(spec: &ApplicationSpec, ctx: &Context<'_>) -> Result<ExperimentOutput, RunnerError> {
    let mut out = ExperimentOutput::new("application");
    let instances = ctx.instances();
    for cell_cfg in &spec.cells {
        let cfg = ApplicationConfig { seed: ctx.seed, ..cell_cfg.clone() };
        let cell = cfg.condition();
        let label = cfg.direction.label(ctx.book);
        if let Err(e) = cfg.check() {
            out.report.notes.push(format!("{cell} ({label}) skipped: {e}"));
            continue;
        }
        let book = if cfg.rule_format == RuleFormat::Code && cfg.rule_mode != RuleMode::None {
            with_code(ctx.book, ctx.client, &mut out)?
        } else {
            ctx.book.clone()
        };
        let items: Vec<(&ParallelExample, Vec<String>)> =
            instances.iter().map(|ex| (*ex, select_rules(ex, &book, &cfg))).collect();
        match translate_cell(items, &book, &cfg, ctx.client) {
            Ok(records) => {
                out.report.rows.extend(translation_rows(&book, &cell, cfg.direction, &records, &[]));
                out.push("translations.jsonl", &format!("{cell}/{label}"), &records);
            }
            Err(e) if is_overflow(&e) => out.report.notes.push(format!("{cell} ({label}) skipped: {e}")),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// Multi-rule instances with one text rule, both text rules, both code
/// rules, and each combination strategy.
pub fn run_multirule(spec: &MultiruleSpec, ctx: &Context<'_>) -> Result<ExperimentOutput, RunnerError> {
    let mut out = ExperimentOutput::new("multirule");
    let book = with_code(ctx.book, ctx.client, &mut out)?;
    let instances = InstanceFilter::MultiRule.select(&book);
    if instances.is_empty() {
        out.report.notes.push("no multi-rule instances in the book".into());
        return Ok(out);
    }
    let base = ApplicationConfig {
        rule_mode: RuleMode::Gold,
        n_examples: spec.n_examples,
        direction: spec.direction,
        seed: ctx.seed,
        ..Default::default()
    };
    let text = ApplicationConfig { rule_format: RuleFormat::Text, ..base.clone() };
    let code = ApplicationConfig { rule_format: RuleFormat::Code, ..base };
    let mut cells: Vec<(String, ApplicationConfig, bool)> = vec![
        ("one_text_rule".into(), text.clone(), true),
        ("two_text_rules".into(), text, false),
        ("two_code_rules".into(), code.clone(), false),
    ];
    for &s in &spec.strategies {
        cells.push((format!("combined/{}", s.as_str()), ApplicationConfig { combine: Some(s), ..code.clone() }, false));
    }
    for (cell, cfg, first_only) in cells {
        let items = instances
            .iter()
            .map(|ex| {
                let ids = if first_only { ex.rule_ids[..1].to_vec() } else { ex.rule_ids.clone() };
                (*ex, ids)
            })
            .collect();
        let records = translate_cell(items, &book, &cfg, ctx.client)?;
        out.report.rows.extend(translation_rows(&book, &cell, cfg.direction, &records, &[]));
        out.push("translations.jsonl", &cell, &records);
    }
    Ok(out)
}

fn pipeline_cell(spec: &PipelineSpec) -> String {
    let mut s = format!(
        "{}/{}->{}",
        spec.retrieval.as_str(),
        spec.retrieval_format.as_str(),
        spec.application_format.as_str()
    );
    if let Some(c) = spec.combine {
        s.push('/');
        s.push_str(c.as_str());
    }
    s
}

/// Retrieval feeding application, plus the whole-book baseline.
pub fn run_pipeline(spec: &PipelineSpec, ctx: &Context<'_>) -> Result<ExperimentOutput, RunnerError> {
    let mut out = ExperimentOutput::new("pipeline");
    let uses_code = spec.retrieval_format == RuleFormat::Code || spec.application_format == RuleFormat::Code;
    let book = if uses_code { with_code(ctx.book, ctx.client, &mut out)? } else { ctx.book.clone() };
    let instances = ctx.instances();
    let direction = spec.direction;
    let label = direction.label(&book);
    let cfg = ApplicationConfig {
        rule_mode: RuleMode::Gold,
        rule_format: spec.application_format,
        n_examples: spec.n_examples,
        direction,
        seed: ctx.seed,
        combine: spec.combine,
        ..Default::default()
    };

    let cell = pipeline_cell(spec);
    let retrieved = match spec.retrieval {
        Strategy::Bm25 => {
            let index = bm25_build(&book, Default::default(), Bm25Params::default())?;
            Some(instances.iter().map(|ex| retrieve_bm25(&index, ex, direction, spec.bm25_k)).collect())
        }
        s => {
            let opts = RetrievalOptions { rule_format: spec.retrieval_format, include_lexicon: true, direction };
            retrieve_all(s, &instances, &book, &opts, ctx.client)?
        }
    };
    match retrieved {
        None => out.report.notes.push(format!("{cell} ({label}) skipped: retrieval prompt exceeds the context budget")),
        Some(results) => {
            let items = instances.iter().zip(&results).map(|(ex, r)| (*ex, r.retrieved.clone())).collect();
            let extras = retrieval_metrics(&book, &results.iter().collect::<Vec<_>>(), None);
            match translate_cell(items, &book, &cfg, ctx.client) {
                Ok(records) => {
                    let extra: Vec<(&str, f64)> = extras.iter().map(|(k, v)| (k.as_str(), *v)).collect();
                    out.report.rows.extend(translation_rows(&book, &cell, direction, &records, &extra));
                    out.push("translations.jsonl", &cell, &records);
                }
                Err(e) if is_overflow(&e) => out.report.notes.push(format!("{cell} ({label}) skipped: {e}")),
                Err(e) => return Err(e.into()),
            }
            out.push("retrieval.jsonl", &cell, &results);
        }
    }

    if spec.baseline {
        let cell = format!("no_retrieval/{}", spec.application_format.as_str());
        let all: Vec<String> = book.rules().iter().map(|r| r.id.clone()).collect();
        let base_cfg = ApplicationConfig { combine: None, ..cfg };
        let items = instances.iter().map(|ex| (*ex, all.clone())).collect();
        match translate_cell(items, &book, &base_cfg, ctx.client) {
            Ok(records) => {
                out.report.rows.extend(translation_rows(&book, &cell, direction, &records, &[]));
                out.push("translations.jsonl", &cell, &records);
            }
            Err(e) if is_overflow(&e) => out.report.notes.push(format!("{cell} ({label}) skipped: {e}")),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// Leave-one-out induction: for each instance, every gold rule is induced
/// from the other examples of that rule. Instances where some rule has fewer
/// than two other examples are skipped.
pub fn run_induce(spec: &InduceSpec, ctx: &Context<'_>) -> Result<ExperimentOutput, RunnerError> {
    let mut out = ExperimentOutput::new("induce");
    let shots = induction_shots();
    let mut eligible: Vec<(&ParallelExample, Vec<InducedRule>)> = Vec::new();
    let mut skipped = 0usize;
    'instances: for ex in ctx.instances() {
        let mut induced = Vec::new();
        for rid in &ex.rule_ids {
            let others: Vec<&ParallelExample> = ctx.book.examples_for_rule(rid).filter(|o| o.id != ex.id).collect();
            if others.len() < 2 {
                skipped += 1;
                continue 'instances;
            }
            induced.push(induce_rule(rid, &others, &shots, ctx.client, ctx.book)?);
        }
        eligible.push((ex, induced));
    }
    if skipped > 0 {
        out.report.notes.push(format!("{skipped} instances skipped: a rule has fewer than two other examples"));
    }
    let induced_records: Vec<_> = eligible
        .iter()
        .flat_map(|(ex, rules)| rules.iter().map(move |r| serde_json::json!({"instance_id": ex.id, "rule_id": r.rule_id, "text": r.text})))
        .collect();
    out.push("induced_rules.jsonl", "induced", &induced_records);

    let base = ApplicationConfig {
        rule_format: RuleFormat::Text,
        n_examples: spec.n_examples,
        direction: spec.direction,
        seed: ctx.seed,
        ..Default::default()
    };
    for mode in ["none", "induced", "gold"] {
        let cfg = ApplicationConfig {
            rule_mode: if mode == "none" { RuleMode::None } else { RuleMode::Gold },
            ..base.clone()
        };
        let items: Vec<(&ParallelExample, RuleSelection)> = eligible
            .iter()
            .map(|(ex, induced)| {
                let sel = match mode {
                    "none" => RuleSelection::default(),
                    "induced" => RuleSelection { induced: induced.clone(), ..Default::default() },
                    _ => RuleSelection { rule_ids: ex.rule_ids.clone(), ..Default::default() },
                };
                (*ex, sel)
            })
            .collect();
        let records = translate_many(&items, ctx.book, &cfg, ctx.client)?;
        out.report.rows.extend(translation_rows(ctx.book, mode, spec.direction, &records, &[]));
        out.push("translations.jsonl", mode, &records);
    }
    Ok(out)
}

/// Dataset counts as report rows plus `stats.json`.
pub fn run_stats(ctx: &Context<'_>) -> Result<ExperimentOutput, RunnerError> {
    let mut out = ExperimentOutput::new("stats");
    let s = compute_stats(ctx.book);
    let mut row = |cell: String, n: usize, metrics: IndexMap<String, f64>| {
        out.report.rows.push(ReportRow { cell, direction: "-".into(), slice: "all".into(), n, metrics });
    };
    let lengths: IndexMap<String, f64> = [
        ("avg_src_len".to_string(), s.avg_example_len_source),
        ("avg_tgt_len".to_string(), s.avg_example_len_target),
        ("avg_rule_len".to_string(), s.avg_rule_len),
    ]
    .into_iter()
    .collect();
    row("rules".into(), s.n_rules, IndexMap::new());
    row("examples".into(), s.n_examples, lengths);
    row("examples/single_rule".into(), s.n_single_rule, IndexMap::new());
    row("examples/multi_rule".into(), s.n_multi_rule, IndexMap::new());
    row("examples/phrase".into(), s.n_phrase, IndexMap::new());
    row("examples/sentence".into(), s.n_sentence, IndexMap::new());
    for (k, v) in &s.per_action {
        row(format!("action/{k}"), *v, IndexMap::new());
    }
    for (k, v) in &s.per_difficulty {
        row(format!("difficulty/{k}"), *v, IndexMap::new());
    }
    for (k, v) in &s.per_domain {
        row(format!("domain/{k}"), *v, IndexMap::new());
    }
    let stats = serde_json::to_value(&s).expect("stats serialize");
    out.records.insert("stats.json".into(), vec![stats]);
    Ok(out)
}
