//! Rule and example extraction from prose grammar books.
//!
//! Examples are three-line blocks (sentence, gloss line, quoted translation);
//! each is attached to the nearest prose paragraph before it.

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Patterns are data so they can be tuned per book in `book.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractPatterns {
    /// Stripped from the start of the sentence line, e.g. `(12)` or `3.`.
    pub number_prefix: String,
    /// Matches a translation line; capture group 1 is the translation.
    pub translation: String,
}

impl Default for ExtractPatterns {
    fn default() -> Self {
        ExtractPatterns {
            number_prefix: r"^\s*(?:\(\d+[a-z]?\)|\d+[a-z]?[.)])\s*".into(),
            translation: r#"^\s*[‘'"“](.+?)[’'"”]\s*$"#.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RawExample {
    pub source: String,
    pub gloss: String,
    pub translation: String,
    /// Byte offset of the sentence line.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExtractedRule {
    pub rule_text: String,
    /// Byte offset of the rule paragraph.
    pub offset: usize,
    pub examples: Vec<RawExample>,
}

/// One line of `extract.log.jsonl`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub offset: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ExtractOutput {
    pub rules: Vec<ExtractedRule>,
    pub skipped: Vec<SkipEntry>,
}

struct Line<'a> {
    text: &'a str,
    offset: usize,
}

fn blocks(text: &str) -> Vec<Vec<Line<'_>>> {
    let mut out = Vec::new();
    let mut cur: Vec<Line<'_>> = Vec::new();
    let mut offset = 0;
    for raw in text.split_inclusive('\n') {
        let line = raw.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(Line { text: line, offset });
        }
        offset += raw.len();
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn has_content(s: &str) -> bool {
    s.chars().any(|c| c.is_alphanumeric())
}

/// Extracts (rule paragraph, example triples) pairs from `book_text`.
///
/// Triples whose sentence and gloss lines have different token counts are
/// skipped, so every extracted example satisfies the IGT alignment invariant.
pub fn extract_from_prose(book_text: &str, patterns: &ExtractPatterns) -> Result<ExtractOutput, regex::Error> {
    let number = Regex::new(&patterns.number_prefix)?;
    let translation = Regex::new(&patterns.translation)?;
    let mut out = ExtractOutput::default();

    // Most recent prose paragraph, and whether examples have been attached to it.
    let mut prose: Option<(String, usize)> = None;
    let mut attached = false;

    for block in blocks(book_text) {
        if !block.iter().any(|l| translation.is_match(l.text)) {
            if let Some((_, off)) = &prose {
                if !attached {
                    out.skipped.push(SkipEntry { offset: *off, reason: "paragraph without examples".into() });
                }
            }
            let joined = block.iter().map(|l| l.text.trim()).collect::<Vec<_>>().join(" ");
            prose = Some((joined, block[0].offset));
            attached = false;
            continue;
        }

        let mut i = 0;
        while i < block.len() {
            let is_triple_end = i + 2 < block.len() && translation.is_match(block[i + 2].text);
            if !is_triple_end {
                out.skipped.push(SkipEntry { offset: block[i].offset, reason: "pattern mismatch".into() });
                i += 1;
                continue;
            }
            let source = number.replace(block[i].text, "").trim().to_string();
            let gloss = block[i + 1].text.trim().to_string();
            let caps = translation.captures(block[i + 2].text).expect("matched above");
            let trans = caps.get(1).map_or("", |m| m.as_str()).trim().to_string();
            let offset = block[i].offset;
            i += 3;

            let (n_src, n_gloss) = (source.split_whitespace().count(), gloss.split_whitespace().count());
            if n_src == 0 || n_src != n_gloss {
                out.skipped.push(SkipEntry {
                    offset,
                    reason: format!("token count mismatch ({n_src} tokens, {n_gloss} glosses)"),
                });
                continue;
            }
            let rule = match &prose {
                Some((text, off)) if has_content(text) => (text.clone(), *off),
                _ => {
                    out.skipped.push(SkipEntry { offset, reason: "empty paragraph".into() });
                    continue;
                }
            };
            let ex = RawExample { source, gloss, translation: trans, offset };
            match out.rules.last_mut() {
                Some(last) if attached && last.offset == rule.1 => last.examples.push(ex),
                _ => out.rules.push(ExtractedRule { rule_text: rule.0, offset: rule.1, examples: vec![ex] }),
            }
            attached = true;
        }
    }
    if let Some((_, off)) = prose {
        if !attached {
            out.skipped.push(SkipEntry { offset: off, reason: "paragraph without examples".into() });
        }
    }
    Ok(out)
}
