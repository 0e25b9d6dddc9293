mod common;

use grammt::llm::{ClientConfig, LlmClient, MockBackend};
use grammt::retrieval::Strategy;
use grammt::runner::*;
use grammt::rulecraft::{conversion_exemplars, convert_book};
use grammt::translator::{build_prompt_with, ApplicationConfig, CombineStrategy, RuleMode, RuleSelection, TranslationRecord};
use grammt::corpus::RuleFormat;
use grammt::Direction;
use std::sync::Arc;

fn ctx<'a>(book: &'a grammt::Rulebook, client: &'a LlmClient, instances: InstanceFilter) -> Context<'a> {
    Context { book, client, seed: 0, instances }
}

#[test]
fn pilot_zero_irrelevant_is_perfect_and_overdraw_fails() {
    let book = common::sample_book();
    let client = common::mock_client(&book, "perfect", 0);
    let spec = PilotSpec { n_values: vec![0, 2], ..Default::default() };
    let out = run_pilot(&spec, &ctx(&book, &client, InstanceFilter::All)).unwrap();
    assert_eq!(out.report.curve[0].n, 0);
    assert_eq!(out.report.curve[0].bleu, 100.0);
    assert_eq!(out.report.curve[0].chrf, 100.0);

    let spec = PilotSpec { n_values: vec![book.rules().len()], ..Default::default() };
    let err = run_pilot(&spec, &ctx(&book, &client, InstanceFilter::All)).unwrap_err();
    assert!(matches!(err, RunnerError::NotEnoughRules { .. }), "{err}");
}

#[test]
fn pilot_prompts_hold_gold_plus_n_distinct_rules() {
    let book = common::planted_book(20, 7);
    let ex = &book.examples()[0];
    for n in [0, 3, 19] {
        let ids = pilot_rules(&book, ex, n, 5).unwrap();
        assert_eq!(ids.len(), n + 1);
        assert!(ids.contains(&ex.rule_ids[0]));
        let mut dedup = ids.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), ids.len());
    }
    assert_eq!(pilot_rules(&book, ex, 4, 5).unwrap(), pilot_rules(&book, ex, 4, 5).unwrap());
}

#[test]
fn application_grid_gold_beats_none_and_slices_sum() {
    let book = common::sample_book();
    let client = common::mock_client(&book, "perfect", 0);
    let spec = ApplicationSpec::default();
    let out = run_application_grid(&spec, &ctx(&book, &client, InstanceFilter::Programmed)).unwrap();
    let r = &out.report;
    for dir in ["za2zh", "zh2za"] {
        let gold = r.metric("gold/text/ex2", dir, "BLEU").unwrap();
        let none = r.metric("none/text/ex2", dir, "BLEU").unwrap();
        assert_eq!(gold, 100.0, "{dir}");
        assert!(none < gold, "{dir}: {none}");
        assert_eq!(r.metric("gold/code/ex0", dir, "chrF++").unwrap(), 100.0, "{dir}");
        let all = r.row("gold/text/ex2", dir, "all").unwrap().n;
        let sliced: usize =
            ["easy", "medium", "hard"].iter().filter_map(|s| r.row("gold/text/ex2", dir, s)).map(|row| row.n).sum();
        assert_eq!(sliced, all);
    }
    assert!(r.notes.iter().any(|n| n.contains("/igt") && n.contains("zh2za")), "{:?}", r.notes);
    assert!(r.row("gold/text/ex2/igt", "za2zh", "all").is_some());
}

#[test]
fn random_rules_are_never_gold() {
    let book = common::sample_book();
    let client = common::mock_client(&book, "perfect", 0);
    let cell = ApplicationConfig { rule_mode: RuleMode::Random, direction: Direction::HiToLo, ..Default::default() };
    let out = run_application_grid(&ApplicationSpec { cells: vec![cell] }, &ctx(&book, &client, InstanceFilter::All)).unwrap();
    for v in &out.records["translations.jsonl"] {
        let rec: TranslationRecord = serde_json::from_value(v.clone()).unwrap();
        let ex = book.example(&rec.instance_id).unwrap();
        assert_eq!(rec.rule_ids_in_prompt.len(), ex.rule_ids.len());
        assert!(rec.rule_ids_in_prompt.iter().all(|r| !ex.rule_ids.contains(r)));
    }
    assert!(out.report.metric("random/text/ex2", "zh2za", "BLEU").unwrap() < 100.0);
}

#[test]
fn aggregates_recompute_from_records() {
    let book = common::sample_book();
    let client = common::mock_client(&book, "distracted(0.5)", 3);
    let out = run_application_grid(&ApplicationSpec::default(), &ctx(&book, &client, InstanceFilter::All)).unwrap();
    let records: Vec<(String, TranslationRecord)> = out.records["translations.jsonl"]
        .iter()
        .map(|v| (v["cell"].as_str().unwrap().to_string(), serde_json::from_value(v.clone()).unwrap()))
        .collect();
    for row in out.report.rows.iter().filter(|r| r.slice == "all") {
        let key = format!("{}/{}", row.cell, row.direction);
        let recs: Vec<TranslationRecord> = records.iter().filter(|(c, _)| *c == key).map(|(_, r)| r.clone()).collect();
        let refs: Vec<&TranslationRecord> = recs.iter().collect();
        let (bleu, chrf) = translation_scores(&refs);
        assert_eq!(recs.len(), row.n, "{key}");
        assert_eq!(bleu, row.metrics[BLEU], "{key}");
        assert_eq!(chrf, row.metrics[CHRF], "{key}");
    }
}

#[test]
fn retrieval_table_with_perfect_mock_has_full_recall() {
    let book = common::sample_book();
    let client = common::mock_client(&book, "perfect", 0);
    let out = run_retrieval_table(&RetrievalSpec::default(), &ctx(&book, &client, InstanceFilter::All)).unwrap();
    let r = &out.report;
    for cell in ["full_book/text", "full_book/code", "rule_by_rule/text", "rule_by_rule/code"] {
        assert_eq!(r.metric(cell, "za2zh", REC), Some(100.0), "{cell}");
    }
    assert!(r.metric("bm25", "za2zh", "rec@5").is_some());
    assert!(out.converted.is_some());
}

#[test]
fn pipeline_composed_oracles_and_always_yes() {
    let book = common::sample_book();
    let perfect = common::mock_client(&book, "perfect", 0);
    let spec = PipelineSpec { direction: Direction::HiToLo, ..Default::default() };
    let out = run_pipeline(&spec, &ctx(&book, &perfect, InstanceFilter::Programmed)).unwrap();
    let cell = "rule_by_rule/code->code";
    assert_eq!(out.report.metric(cell, "zh2za", REC), Some(100.0));
    assert_eq!(out.report.metric(cell, "zh2za", BLEU), Some(100.0));
    assert_eq!(out.report.metric(cell, "zh2za", CHRF), Some(100.0));

    let yes = common::mock_client(&book, "always_yes,distracted_translator(0.9)", 0);
    let worse = run_pipeline(&spec, &ctx(&book, &yes, InstanceFilter::Programmed)).unwrap();
    assert_eq!(worse.report.metric(cell, "zh2za", N_RULES), Some(book.rules().len() as f64));
    let focused = common::mock_client(&book, "perfect_classifier,distracted_translator(0.9)", 0);
    let better = run_pipeline(&spec, &ctx(&book, &focused, InstanceFilter::Programmed)).unwrap();
    assert!(
        worse.report.metric(cell, "zh2za", BLEU).unwrap() < better.report.metric(cell, "zh2za", BLEU).unwrap(),
        "always_yes should hurt a distractible translator"
    );
}

#[test]
fn pipeline_baseline_over_budget_is_skipped() {
    let book = common::sample_book();
    let converted = convert_book(&book, &common::mock_client(&book, "perfect", 0), &conversion_exemplars()).unwrap();
    let cfg = ApplicationConfig { rule_format: RuleFormat::Code, n_examples: 0, direction: Direction::HiToLo, ..Default::default() };
    let ex = converted.example("m1").unwrap();
    let size = |ids: Vec<String>| {
        let sel = RuleSelection { rule_ids: ids, ..Default::default() };
        build_prompt_with(ex, &converted, &cfg, &sel, "mock").unwrap().request.estimated_tokens()
    };
    let all: Vec<String> = converted.rules().iter().map(|r| r.id.clone()).collect();
    let (two, whole) = (size(ex.rule_ids.clone()), size(all));
    assert!(two < whole);

    let backend = MockBackend::new(Arc::new(book.clone()), "perfect".parse().unwrap(), 0);
    let budget = (two + whole) / 2;
    let client = LlmClient::new(Arc::new(backend), None, ClientConfig { context_budget: budget, ..Default::default() });
    let spec = PipelineSpec { direction: Direction::HiToLo, ..Default::default() };
    let out = run_pipeline(&spec, &ctx(&converted, &client, InstanceFilter::Programmed)).unwrap();
    assert!(out.report.notes.iter().any(|n| n.starts_with("no_retrieval/code") && n.contains("skipped")), "{:?}", out.report.notes);
    assert!(out.report.row("no_retrieval/code", "zh2za", "all").is_none());
    assert_eq!(out.report.metric("rule_by_rule/code->code", "zh2za", BLEU), Some(100.0));
}

#[test]
fn multirule_cells() {
    let book = common::sample_book();
    let client = common::mock_client(&book, "perfect", 0);
    let out = run_multirule(&MultiruleSpec::default(), &ctx(&book, &client, InstanceFilter::All)).unwrap();
    let r = &out.report;
    assert!(r.metric("one_text_rule", "zh2za", BLEU).unwrap() < 100.0);
    assert_eq!(r.metric("two_text_rules", "zh2za", BLEU), Some(100.0));
    for s in [CombineStrategy::FuncCall, CombineStrategy::InlineTemplate, CombineStrategy::InlineLlm] {
        let cell = format!("combined/{}", s.as_str());
        assert_eq!(r.row(&cell, "zh2za", "all").map(|r| r.n), Some(3), "{cell}");
    }
}

#[test]
fn induce_rows() {
    let book = common::sample_book();
    let client = common::mock_client(&book, "perfect", 0);
    let out = run_induce(&InduceSpec::default(), &ctx(&book, &client, InstanceFilter::Programmed)).unwrap();
    let r = &out.report;
    let none = r.metric("none", "zh2za", BLEU).unwrap();
    let induced = r.metric("induced", "zh2za", BLEU).unwrap();
    let gold = r.metric("gold", "zh2za", BLEU).unwrap();
    assert!(none < induced && induced <= gold, "{none} {induced} {gold}");
    assert!(!out.records["induced_rules.jsonl"].is_empty());
}

#[test]
fn stats_rows() {
    let book = common::sample_book();
    let client = common::mock_client(&book, "perfect", 0);
    let out = run_stats(&ctx(&book, &client, InstanceFilter::All)).unwrap();
    assert_eq!(out.report.row("rules", "-", "all").unwrap().n, 9);
    assert_eq!(out.report.row("examples/multi_rule", "-", "all").unwrap().n, 3);
}

#[test]
fn code_format_pilot_converts_first() {
    let book = common::mini_book();
    let client = common::mock_client(&book, "perfect", 0);
    let spec = PilotSpec { n_values: vec![0, 1], rule_format: RuleFormat::Code, direction: Direction::HiToLo, ..Default::default() };
    let out = run_pilot(&spec, &ctx(&book, &client, InstanceFilter::All)).unwrap();
    assert_eq!(out.report.curve[0].bleu, 100.0);
    assert!(out.converted.is_some());
    let _ = Strategy::Bm25;
}
