use std::collections::BTreeMap;

use serde::Serialize;

use super::{ActionKind, Difficulty, Granularity, Rulebook, WalsDomain};
use crate::text;

/// Counts and lengths over a rulebook.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetStats {
    pub n_rules: usize,
    pub n_examples: usize,
    pub n_single_rule: usize,
    pub n_multi_rule: usize,
    pub n_phrase: usize,
    pub n_sentence: usize,
    /// A rule with k actions increments k buckets.
    pub per_action: BTreeMap<ActionKind, usize>,
    pub per_difficulty: BTreeMap<Difficulty, usize>,
    pub per_domain: BTreeMap<WalsDomain, usize>,
    /// Mean length of sentence-granularity examples, low-resource side (words).
    pub avg_example_len_source: f64,
    /// Mean length of sentence-granularity examples, high-resource side
    /// (characters for CJK text, words otherwise).
    pub avg_example_len_target: f64,
    pub avg_rule_len: f64,
}

/// Length in CJK characters when the text contains any, else in words.
pub fn text_length(s: &str) -> usize {
    if text::contains_cjk(s) {
        s.chars().filter(|c| !c.is_whitespace() && !text::is_punct(*c)).count()
    } else {
        text::latin_tokens(s).len()
    }
}

fn mean(xs: impl Iterator<Item = usize>) -> f64 {
    let (sum, n) = xs.fold((0usize, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}

pub fn compute_stats(book: &Rulebook) -> DatasetStats {
    let mut per_action: BTreeMap<ActionKind, usize> = ActionKind::ALL.iter().map(|a| (*a, 0)).collect();
    let mut per_difficulty: BTreeMap<Difficulty, usize> = Difficulty::ALL.iter().map(|d| (*d, 0)).collect();
    let mut per_domain: BTreeMap<WalsDomain, usize> = WalsDomain::ALL.iter().map(|d| (*d, 0)).collect();
    for r in book.rules() {
        for a in &r.actions {
            *per_action.get_mut(a).unwrap() += 1;
        }
        *per_difficulty.get_mut(&r.difficulty).unwrap() += 1;
        *per_domain.get_mut(&r.wals_domain).unwrap() += 1;
    }
    let ex = book.examples();
    let sentences = || ex.iter().filter(|e| e.granularity == Granularity::Sentence);
    DatasetStats {
        n_rules: book.rules().len(),
        n_examples: ex.len(),
        n_single_rule: ex.iter().filter(|e| !e.is_multi_rule()).count(),
        n_multi_rule: ex.iter().filter(|e| e.is_multi_rule()).count(),
        n_phrase: ex.iter().filter(|e| e.granularity == Granularity::Phrase).count(),
        n_sentence: sentences().count(),
        per_action,
        per_difficulty,
        per_domain,
        avg_example_len_source: mean(sentences().map(|e| text_length(&e.source_text))),
        avg_example_len_target: mean(sentences().map(|e| text_length(&e.target_text))),
        avg_rule_len: mean(book.rules().iter().map(|r| text_length(&r.text))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BookManifest;

    #[test]
    fn empty_book_has_zero_counts() {
        let s = compute_stats(&Rulebook::empty(BookManifest::new("e", "za", "zh")));
        assert_eq!(s.n_rules, 0);
        assert_eq!(s.n_examples, 0);
        assert!(s.per_action.values().all(|&v| v == 0));
        assert!(s.per_difficulty.values().all(|&v| v == 0));
        assert_eq!(s.avg_example_len_source, 0.0);
    }

    #[test]
    fn lengths() {
        assert_eq!(text_length("他不是我的父亲。"), 7);
        assert_eq!(text_length("De mbouj dwg daxboh gou."), 5);
    }
}
