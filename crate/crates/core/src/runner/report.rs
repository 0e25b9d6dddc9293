use std::fs;
use std::io;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::{Difficulty, Direction, ParallelExample, Rulebook};
use crate::metrics::{self, MetricConfig, RetrievalJudgment, Tokenization};
use crate::retrieval::RetrievalResult;
use crate::translator::TranslationRecord;

/// One aggregate line: a condition cell restricted to a difficulty slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub cell: String,
    pub direction: String,
    pub slice: String,
    pub n: usize,
    pub metrics: IndexMap<String, f64>,
}

/// Pilot curve point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub bleu: f64,
    pub chrf: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment: String,
    pub rows: Vec<ReportRow>,
    pub notes: Vec<String>,
    pub curve: Vec<CurvePoint>,
}

impl RunReport {
    pub fn new(experiment: &str) -> Self {
        RunReport { experiment: experiment.to_string(), ..Default::default() }
    }

    /// Metric columns in first-seen order.
    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = Vec::new();
        for r in &self.rows {
            for k in r.metrics.keys() {
                if !cols.contains(k) {
                    cols.push(k.clone());
                }
            }
        }
        cols
    }

    pub fn row(&self, cell: &str, direction: &str, slice: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.cell == cell && r.direction == direction && r.slice == slice)
    }

    pub fn metric(&self, cell: &str, direction: &str, metric: &str) -> Option<f64> {
        self.row(cell, direction, "all").and_then(|r| r.metrics.get(metric).copied())
    }
}

pub const BLEU: &str = "BLEU";
pub const CHRF: &str = "chrF++";
pub const REC: &str = "rec";
pub const N_RULES: &str = "#rules";

/// Difficulty of an instance: the hardest of its rules.
pub fn instance_difficulty(book: &Rulebook, ex: &ParallelExample) -> Difficulty {
    ex.rule_ids.iter().filter_map(|r| book.rule(r)).map(|r| r.difficulty).max().unwrap_or(Difficulty::Easy)
}

fn metric_config(refs: &[&str]) -> MetricConfig {
    let sample = refs.first().copied().unwrap_or("");
    MetricConfig::default().with_tokenization(Tokenization::for_text(sample))
}

/// Corpus BLEU and chrF++ of records.
pub fn translation_scores(records: &[&TranslationRecord]) -> (f64, f64) {
    if records.is_empty() {
        return (0.0, 0.0);
    }
    let hyps: Vec<&str> = records.iter().map(|r| r.extracted_translation.as_str()).collect();
    let refs: Vec<&str> = records.iter().map(|r| r.reference.as_str()).collect();
    let cfg = metric_config(&refs);
    let bleu = metrics::bleu(&hyps, &refs, &cfg).unwrap_or(0.0);
    let chrf = metrics::chrf_pp(&hyps, &refs, &cfg).unwrap_or(0.0);
    (bleu, chrf)
}

fn slices(book: &Rulebook) -> Vec<(String, Option<Difficulty>)> {
    let _ = book;
    std::iter::once(("all".to_string(), None))
        .chain(Difficulty::ALL.iter().map(|d| (d.as_str().to_string(), Some(*d))))
        .collect()
}

/// Rows for one translation cell: overall plus one per difficulty with
/// instances. Extra metrics are added to the `all` row.
pub fn translation_rows(
    book: &Rulebook,
    cell: &str,
    direction: Direction,
    records: &[TranslationRecord],
    extra: &[(&str, f64)],
) -> Vec<ReportRow> {
    let mut out = Vec::new();
    for (name, diff) in slices(book) {
        let subset: Vec<&TranslationRecord> = records
            .iter()
            .filter(|r| match diff {
                None => true,
                Some(d) => book.example(&r.instance_id).is_some_and(|e| instance_difficulty(book, e) == d),
            })
            .collect();
        if diff.is_some() && subset.is_empty() {
            continue;
        }
        let (bleu, chrf) = translation_scores(&subset);
        let mut m = IndexMap::new();
        if diff.is_none() {
            for (k, v) in extra {
                m.insert(k.to_string(), *v);
            }
        }
        m.insert(BLEU.to_string(), bleu);
        m.insert(CHRF.to_string(), chrf);
        out.push(ReportRow { cell: cell.to_string(), direction: direction.label(book), slice: name, n: subset.len(), metrics: m });
    }
    out
}

pub fn judgments(book: &Rulebook, results: &[&RetrievalResult]) -> Vec<RetrievalJudgment> {
    results
        .iter()
        .map(|r| {
            let gold = book.example(&r.instance_id).map(|e| e.rule_ids.clone()).unwrap_or_default();
            RetrievalJudgment::new(gold, r.retrieved.clone())
        })
        .collect()
}

/// Retrieval metrics for one results set: recall@k for each `ks` when set,
/// otherwise full-set recall and the mean number of retrieved rules.
pub fn retrieval_metrics(book: &Rulebook, results: &[&RetrievalResult], ks: Option<&[usize]>) -> IndexMap<String, f64> {
    let js = judgments(book, results);
    let mut m = IndexMap::new();
    match ks {
        Some(ks) => {
            for k in ks {
                m.insert(format!("rec@{k}"), 100.0 * metrics::mean_recall_at_k(&js, *k));
            }
        }
        None => {
            let (rec, count) = metrics::retrieval_recall_and_count(&js);
            m.insert(REC.to_string(), 100.0 * rec);
            m.insert(N_RULES.to_string(), count);
        }
    }
    m
}

pub fn retrieval_rows(
    book: &Rulebook,
    cell: &str,
    direction: Direction,
    results: &[RetrievalResult],
    ks: Option<&[usize]>,
) -> Vec<ReportRow> {
    let mut out = Vec::new();
    for (name, diff) in slices(book) {
        let subset: Vec<&RetrievalResult> = results
            .iter()
            .filter(|r| match diff {
                None => true,
                Some(d) => book.example(&r.instance_id).is_some_and(|e| instance_difficulty(book, e) == d),
            })
            .collect();
        if diff.is_some() && subset.is_empty() {
            continue;
        }
        out.push(ReportRow {
            cell: cell.to_string(),
            direction: direction.label(book),
            slice: name,
            n: subset.len(),
            metrics: retrieval_metrics(book, &subset, ks),
        });
    }
    out
}

fn fmt1(v: f64) -> String {
    format!("{v:.1}")
}

/// Markdown table plus notes. Scores have one decimal; nothing run-specific
/// is included, so identical results give identical bytes.
pub fn render_markdown(report: &RunReport) -> String {
    let cols = report.columns();
    let mut s = format!("# {} report\n\n", report.experiment);
    let mut header = vec!["cell", "direction", "slice", "n"];
    header.extend(cols.iter().map(String::as_str));
    s.push_str(&format!("| {} |\n", header.join(" | ")));
    s.push_str(&format!("|{}\n", header.iter().map(|_| "---|").collect::<String>()));
    for r in &report.rows {
        let mut cells = vec![r.cell.clone(), r.direction.clone(), r.slice.clone(), r.n.to_string()];
        cells.extend(cols.iter().map(|c| r.metrics.get(c).map_or("-".to_string(), |v| fmt1(*v))));
        s.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    if !report.notes.is_empty() {
        s.push_str("\nNotes:\n\n");
        for n in &report.notes {
            s.push_str(&format!("- {n}\n"));
        }
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One CSV row per report row, same columns as the markdown table.
pub fn render_csv(report: &RunReport) -> String {
    let cols = report.columns();
    let mut header = vec!["cell".to_string(), "direction".into(), "slice".into(), "n".into()];
    header.extend(cols.iter().cloned());
    let mut s = header.iter().map(|h| csv_field(h)).collect::<Vec<_>>().join(",") + "\n";
    for r in &report.rows {
        let mut cells = vec![csv_field(&r.cell), csv_field(&r.direction), csv_field(&r.slice), r.n.to_string()];
        cells.extend(cols.iter().map(|c| r.metrics.get(c).map_or(String::new(), |v| fmt1(*v))));
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn render_curve(curve: &[CurvePoint]) -> String {
    let mut s = String::from("n,bleu,chrf\n");
    for p in curve {
        s.push_str(&format!("{},{},{}\n", p.n, fmt1(p.bleu), fmt1(p.chrf)));
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

/// Writes `report.md` and/or `report.csv` (and `curves.csv` when the report
/// has a curve) into `dir`.
pub fn emit_report(report: &RunReport, dir: &Path, formats: &[ReportFormat]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for f in formats {
        match f {
            ReportFormat::Markdown => fs::write(dir.join("report.md"), render_markdown(report))?,
            ReportFormat::Csv => fs::write(dir.join("report.csv"), render_csv(report))?,
        }
    }
    if !report.curve.is_empty() {
        fs::write(dir.join("curves.csv"), render_curve(&report.curve))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunReport {
        let mut r = RunReport::new("application");
        let m: IndexMap<String, f64> = [(BLEU.to_string(), 100.0), (CHRF.to_string(), 87.654)].into_iter().collect();
        r.rows.push(ReportRow { cell: "gold/text/ex2".into(), direction: "za2zh".into(), slice: "all".into(), n: 3, metrics: m });
        r.notes.push("gold/text/ex2/igt (zh2za) skipped: IGT needs low-resource input".into());
        r
    }

    #[test]
    fn markdown_golden() {
        let expected = "# application report\n\n\
| cell | direction | slice | n | BLEU | chrF++ |\n\
|---|---|---|---|---|---|\n\
| gold/text/ex2 | za2zh | all | 3 | 100.0 | 87.7 |\n\
\nNotes:\n\n\
- gold/text/ex2/igt (zh2za) skipped: IGT needs low-resource input\n";
        assert_eq!(render_markdown(&sample()), expected);
    }

    #[test]
    fn empty_report_is_headers_only() {
        let r = RunReport::new("retrieval");
        assert_eq!(render_markdown(&r), "# retrieval report\n\n| cell | direction | slice | n |\n|---|---|---|---|\n");
        assert_eq!(render_csv(&r), "cell,direction,slice,n\n");
    }

    #[test]
    fn csv_rows_match_cells() {
        let csv = render_csv(&sample());
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().nth(1).unwrap(), "gold/text/ex2,za2zh,all,3,100.0,87.7");
    }
}
