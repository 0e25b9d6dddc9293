//! Corpus BLEU, chrF++ and retrieval metrics.
//!
//! BLEU and chrF++ follow the sacreBLEU formulations: corpus-level sums of
//! clipped n-gram statistics, exponential smoothing for BLEU, and chrF++
//! precision/recall averaged over the orders that have statistics.

use std::collections::{BTreeSet, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("{hypotheses} hypotheses but {references} references")]
    LengthMismatch { hypotheses: usize, references: usize },
    #[error("reference {0} is empty")]
    EmptyReference(usize),
    #[error("invalid metric config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    None,
    /// Halve the floor for each successive order without matches.
    ExpFloor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenization {
    /// Whitespace split with punctuation separated from words.
    Whitespace,
    /// Every non-space character is a token.
    CjkChar,
    /// CJK characters are single tokens; other text as `Whitespace`.
    Mixed,
}

impl Tokenization {
    /// `Mixed` when `sample` contains CJK ideographs, else `Whitespace`.
    pub fn for_text(sample: &str) -> Self {
        if text::contains_cjk(sample) {
            Tokenization::Mixed
        } else {
            Tokenization::Whitespace
        }
    }

    pub fn tokenize(self, s: &str) -> Vec<String> {
        match self {
            Tokenization::CjkChar => s.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
            Tokenization::Whitespace => s.split_whitespace().flat_map(split_punct).collect(),
            Tokenization::Mixed => {
                let mut out = Vec::new();
                for word in s.split_whitespace() {
                    let mut run = String::new();
                    for c in word.chars() {
                        if text::is_cjk(c) {
                            if !run.is_empty() {
                                out.extend(split_punct(&std::mem::take(&mut run)));
                            }
                            out.push(c.to_string());
                        } else {
                            run.push(c);
                        }
                    }
                    if !run.is_empty() {
                        out.extend(split_punct(&run));
                    }
                }
                out
            }
        }
    }
}

/// Separates leading and trailing punctuation characters from a word.
fn split_punct(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let start = chars.iter().position(|c| !text::is_punct(*c));
    let Some(start) = start else {
        return chars.iter().map(|c| c.to_string()).collect();
    };
    let end = chars.iter().rposition(|c| !text::is_punct(*c)).expect("non-punct exists") + 1;
    let mut out: Vec<String> = chars[..start].iter().map(|c| c.to_string()).collect();
    out.push(chars[start..end].iter().collect());
    out.extend(chars[end..].iter().map(|c| c.to_string()));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub bleu_max_order: usize,
    pub bleu_smoothing: Smoothing,
    pub brevity_penalty: bool,
    pub chrf_char_order: usize,
    pub chrf_word_order: usize,
    pub chrf_beta: f64,
    pub tokenization: Tokenization,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            bleu_max_order: 4,
            bleu_smoothing: Smoothing::ExpFloor,
            brevity_penalty: true,
            chrf_char_order: 6,
            chrf_word_order: 2,
            chrf_beta: 2.0,
            tokenization: Tokenization::Mixed,
        }
    }
}

impl MetricConfig {
    pub fn with_tokenization(self, tokenization: Tokenization) -> Self {
        MetricConfig { tokenization, ..self }
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if self.bleu_max_order < 1 {
            return Err(MetricError::InvalidConfig("bleu_max_order must be at least 1".into()));
        }
        if self.chrf_char_order + self.chrf_word_order < 1 {
            return Err(MetricError::InvalidConfig("chrF needs at least one n-gram order".into()));
        }
        if self.chrf_beta.is_nan() || self.chrf_beta <= 0.0 {
            return Err(MetricError::InvalidConfig("chrf_beta must be positive".into()));
        }
        Ok(())
    }
}

fn check_inputs<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R], cfg: &MetricConfig) -> Result<(), MetricError> {
    cfg.validate()?;
    if hyps.len() != refs.len() {
        return Err(MetricError::LengthMismatch { hypotheses: hyps.len(), references: refs.len() });
    }
    if let Some(i) = refs.iter().position(|r| r.as_ref().trim().is_empty()) {
        return Err(MetricError::EmptyReference(i));
    }
    Ok(())
}

fn ngram_counts<T: Eq + Hash + Clone>(items: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if n == 0 || items.len() < n {
        return m;
    }
    for w in items.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// (clipped matches, hypothesis n-grams, reference n-grams) for one order.
fn overlap<T: Eq + Hash + Clone>(hyp: &[T], reference: &[T], n: usize) -> (usize, usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matches = h.iter().map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0))).sum();
    (matches, h.values().sum(), r.values().sum())
}

/// Corpus-level BLEU sufficient statistics.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub correct: Vec<usize>,
    pub total: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

pub fn bleu_stats<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R], cfg: &MetricConfig) -> BleuStats {
    let n = cfg.bleu_max_order;
    let mut s = BleuStats { correct: vec![0; n], total: vec![0; n], ..Default::default() };
    for (h, r) in hyps.iter().zip(refs) {
        let ht = cfg.tokenization.tokenize(h.as_ref());
        let rt = cfg.tokenization.tokenize(r.as_ref());
        s.hyp_len += ht.len();
        s.ref_len += rt.len();
        for order in 1..=n {
            let (m, t, _) = overlap(&ht, &rt, order);
            s.correct[order - 1] += m;
            s.total[order - 1] += t;
        }
    }
    s
}

/// Score from sufficient statistics. Orders without any hypothesis n-grams
/// are left out of the geometric mean.
pub fn bleu_from_stats(s: &BleuStats, cfg: &MetricConfig) -> f64 {
    if s.correct.iter().all(|&c| c == 0) {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    let mut floor = 1.0;
    for (&c, &t) in s.correct.iter().zip(&s.total) {
        if t == 0 {
            break;
        }
        orders += 1;
        if c == 0 {
            match cfg.bleu_smoothing {
                Smoothing::None => return 0.0,
                Smoothing::ExpFloor => {
                    floor *= 2.0;
                    log_sum += (1.0 / (floor * t as f64)).ln();
                }
            }
        } else {
            log_sum += (c as f64 / t as f64).ln();
        }
    }
    let bp = if !cfg.brevity_penalty || s.hyp_len > s.ref_len {
        1.0
    } else if s.hyp_len == 0 {
        0.0
    } else {
        (1.0 - s.ref_len as f64 / s.hyp_len as f64).exp()
    };
    (100.0 * bp * (log_sum / orders as f64).exp()).clamp(0.0, 100.0)
}

/// Corpus BLEU in `[0, 100]`.
pub fn bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R], cfg: &MetricConfig) -> Result<f64, MetricError> {
    check_inputs(hyps, refs, cfg)?;
    Ok(bleu_from_stats(&bleu_stats(hyps, refs, cfg), cfg))
}

/// Words for chrF++ word n-grams.
fn chrf_words(s: &str, tok: Tokenization) -> Vec<String> {
    tok.tokenize(s)
}

/// Corpus chrF++ in `[0, 100]`.
pub fn chrf_pp<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R], cfg: &MetricConfig) -> Result<f64, MetricError> {
    check_inputs(hyps, refs, cfg)?;
    let orders = cfg.chrf_char_order + cfg.chrf_word_order;
    // Per order: (hyp n-grams, ref n-grams, matches).
    let mut stats = vec![(0usize, 0usize, 0usize); orders];
    for (h, r) in hyps.iter().zip(refs) {
        let hc: Vec<char> = h.as_ref().chars().filter(|c| !c.is_whitespace()).collect();
        let rc: Vec<char> = r.as_ref().chars().filter(|c| !c.is_whitespace()).collect();
        for n in 1..=cfg.chrf_char_order {
            let (m, th, tr) = overlap(&hc, &rc, n);
            let st = &mut stats[n - 1];
            *st = (st.0 + th, st.1 + tr, st.2 + m);
        }
        let hw = chrf_words(h.as_ref(), cfg.tokenization);
        let rw = chrf_words(r.as_ref(), cfg.tokenization);
        for n in 1..=cfg.chrf_word_order {
            let (m, th, tr) = overlap(&hw, &rw, n);
            let st = &mut stats[cfg.chrf_char_order + n - 1];
            *st = (st.0 + th, st.1 + tr, st.2 + m);
        }
    }
    let factor = cfg.chrf_beta * cfg.chrf_beta;
    let (mut p, mut r, mut effective) = (0.0, 0.0, 0usize);
    for &(nh, nr, m) in &stats {
        if nh > 0 && nr > 0 {
            p += m as f64 / nh as f64;
            r += m as f64 / nr as f64;
            effective += 1;
        }
    }
    if effective == 0 {
        return Ok(0.0);
    }
    p /= effective as f64;
    r /= effective as f64;
    if p + r == 0.0 {
        return Ok(0.0);
    }
    Ok((100.0 * (1.0 + factor) * p * r / (factor * p + r)).clamp(0.0, 100.0))
}

/// Gold rules of one instance against what a retriever returned.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalJudgment {
    pub gold: BTreeSet<String>,
    pub retrieved: Vec<String>,
}

impl RetrievalJudgment {
    pub fn new<G: Into<String>, R: Into<String>>(
        gold: impl IntoIterator<Item = G>,
        retrieved: impl IntoIterator<Item = R>,
    ) -> Self {
        let mut seen = BTreeSet::new();
        let retrieved = retrieved.into_iter().map(Into::into).filter(|r: &String| seen.insert(r.clone())).collect();
        RetrievalJudgment { gold: gold.into_iter().map(Into::into).collect(), retrieved }
    }
}

/// 1 when any gold rule is among the first `k` retrieved.
pub fn recall_at_k(j: &RetrievalJudgment, k: usize) -> u8 {
    u8::from(j.retrieved.iter().take(k).any(|r| j.gold.contains(r)))
}

/// Mean of [`recall_at_k`] over `judgments`; 0 for an empty set.
pub fn mean_recall_at_k(judgments: &[RetrievalJudgment], k: usize) -> f64 {
    if judgments.is_empty() {
        return 0.0;
    }
    judgments.iter().map(|j| f64::from(recall_at_k(j, k))).sum::<f64>() / judgments.len() as f64
}

/// Fraction of instances whose gold set is fully retrieved, and the mean
/// number of retrieved rules.
pub fn retrieval_recall_and_count(judgments: &[RetrievalJudgment]) -> (f64, f64) {
    if judgments.is_empty() {
        return (0.0, 0.0);
    }
    let n = judgments.len() as f64;
    let full = judgments.iter().filter(|j| j.gold.iter().all(|g| j.retrieved.contains(g))).count();
    let count: usize = judgments.iter().map(|j| j.retrieved.len()).sum();
    (full as f64 / n, count as f64 / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> MetricConfig {
        MetricConfig::default()
    }

    #[test]
    fn identity_scores_exactly_100() {
        let c = ["Gou yawj bonj saw neix yaep ndeu.", "黄头发", "doxndaq"];
        assert_eq!(bleu(&c, &c, &cfg()).unwrap(), 100.0);
        assert_eq!(chrf_pp(&c, &c, &cfg()).unwrap(), 100.0);
    }

    #[test]
    fn clipped_unigram_precision() {
        // "the" occurs at most once in the reference, so 2 of 4 unigrams count.
        let c = MetricConfig { bleu_max_order: 1, brevity_penalty: false, ..cfg() };
        let s = bleu_stats(&["the the the the"], &["the cat"], &c);
        assert_eq!((s.correct[0], s.total[0]), (1, 4));
        let s = bleu_stats(&["the the the the"], &["the the cat"], &c);
        assert_eq!((s.correct[0], s.total[0]), (2, 4));
        assert!((bleu(&["the the the the"], &["the the cat"], &c).unwrap() - 50.0).abs() < 1e-9);
    }

    #[test]
    fn hand_computed_three_sentence_corpus() {
        // Oracle worked by hand:
        //   "a b c d" vs "a b c d e": 1g 4/4, 2g 3/3, 3g 2/2, 4g 1/1
        //   "a x"     vs "a y":       1g 1/2, 2g 0/1
        //   "p q r"   vs "p q s":     1g 2/3, 2g 1/2, 3g 0/1
        // totals: 1g 7/9, 2g 4/6, 3g 2/3, 4g 1/1; c=9, r=10.
        let hyps = ["a b c d", "a x", "p q r"];
        let refs = ["a b c d e", "a y", "p q s"];
        let expected = 100.0
            * (1.0f64 - 10.0 / 9.0).exp()
            * (((7.0f64 / 9.0).ln() + (4.0f64 / 6.0).ln() + (2.0f64 / 3.0).ln() + 1.0f64.ln()) / 4.0).exp();
        let got = bleu(&hyps, &refs, &cfg()).unwrap();
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
    }

    #[test]
    fn exp_smoothing_floor() {
        // "a b" vs "a c": 1g 1/2, 2g 0/1 -> floor 1/(2*1); orders 3 and 4 empty.
        let got = bleu(&["a b"], &["a c"], &cfg()).unwrap();
        let expected = 100.0 * ((0.5f64).ln() / 2.0 + (0.5f64).ln() / 2.0).exp();
        assert!((got - expected).abs() < 1e-9);
        let none = MetricConfig { bleu_smoothing: Smoothing::None, ..cfg() };
        assert_eq!(bleu(&["a b"], &["a c"], &none).unwrap(), 0.0);
    }

    #[test]
    fn chrf_hand_enumeration() {
        let c = MetricConfig { chrf_char_order: 2, chrf_word_order: 0, ..cfg() };
        // unigrams: P 2/2, R 2/3; bigrams: P 1/1, R 1/2 -> P 1, R 7/12.
        let got = chrf_pp(&["ab"], &["abc"], &c).unwrap();
        assert!((got - 100.0 * 7.0 / 11.0).abs() < 1e-9, "{got}");
    }

    #[test]
    fn chrf_disjoint_is_zero() {
        assert_eq!(chrf_pp(&["abc"], &["xyz"], &cfg()).unwrap(), 0.0);
        assert_eq!(bleu(&["abc"], &["xyz"], &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn input_errors() {
        assert_eq!(
            bleu(&["a"], &["a", "b"], &cfg()).unwrap_err(),
            MetricError::LengthMismatch { hypotheses: 1, references: 2 }
        );
        assert_eq!(chrf_pp(&["a"], &[" "], &cfg()).unwrap_err(), MetricError::EmptyReference(0));
        let bad = MetricConfig { chrf_beta: 0.0, ..cfg() };
        assert!(matches!(chrf_pp(&["a"], &["a"], &bad), Err(MetricError::InvalidConfig(_))));
    }

    #[test]
    fn tokenizers() {
        assert_eq!(Tokenization::Mixed.tokenize("他不是 gou."), vec!["他", "不", "是", "gou", "."]);
        assert_eq!(Tokenization::Whitespace.tokenize("(De) mbouj."), vec!["(", "De", ")", "mbouj", "."]);
        assert_eq!(Tokenization::CjkChar.tokenize("a b"), vec!["a", "b"]);
        assert_eq!(Tokenization::for_text("黄头发"), Tokenization::Mixed);
    }

    #[test]
    fn retrieval_metrics() {
        let j = RetrievalJudgment::new(["r3"], ["r1", "r3"]);
        assert_eq!(recall_at_k(&j, 1), 0);
        assert_eq!(recall_at_k(&j, 2), 1);
        let empty = RetrievalJudgment::new(["r3"], Vec::<String>::new());
        assert_eq!(recall_at_k(&empty, 5), 0);
        assert_eq!(retrieval_recall_and_count(&[]), (0.0, 0.0));
        let all = RetrievalJudgment::new(["r1", "r2"], ["r1", "r2", "r3"]);
        assert_eq!(retrieval_recall_and_count(&[all]), (1.0, 3.0));
        let none = RetrievalJudgment::new(["r1"], Vec::<String>::new());
        assert_eq!(retrieval_recall_and_count(&[none]), (0.0, 0.0));
    }

    #[test]
    fn planted_recall_fraction() {
        // Gold planted at position 1 for 30 of 100 judgments, position 3 for 20.
        let mut js = Vec::new();
        for i in 0..100 {
            let retrieved: Vec<String> = match i {
                0..=29 => vec!["g".into(), "x".into(), "y".into()],
                30..=49 => vec!["x".into(), "y".into(), "g".into()],
                _ => vec!["x".into(), "y".into(), "z".into()],
            };
            js.push(RetrievalJudgment::new(["g"], retrieved));
        }
        assert!((mean_recall_at_k(&js, 1) - 0.30).abs() < 1e-12);
        assert!((mean_recall_at_k(&js, 3) - 0.50).abs() < 1e-12);
        assert_eq!(retrieval_recall_and_count(&js), (0.5, 3.0));
    }
}
