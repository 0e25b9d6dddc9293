//! Script-aware text helpers shared by the oracle, metrics and prompt code.

use std::cmp::Ordering;

/// True for CJK ideographs, CJK punctuation and full-width forms.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x2E80..=0x2FDF
        | 0x3000..=0x303F
        | 0x3040..=0x30FF
        | 0x3100..=0x31BF
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xF900..=0xFAFF
        | 0xFE30..=0xFE4F
        | 0xFF00..=0xFFEF
        | 0x20000..=0x2FA1F)
}

/// CJK ideograph (excludes CJK punctuation and full-width symbols).
pub fn is_cjk_ideograph(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x2FA1F)
}

pub fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '。' | '，' | '、' | '；' | '：' | '？' | '！' | '“' | '”' | '‘' | '’' | '（' | '）'
                | '《' | '》' | '「' | '」' | '…' | '—' | '·' | '【' | '】'
        )
}

pub fn contains_cjk(s: &str) -> bool {
    s.chars().any(is_cjk_ideograph)
}

/// Sentence-final punctuation of `text`, if any.
pub fn terminal_punct(text: &str) -> Option<char> {
    text.trim_end()
        .chars()
        .last()
        .filter(|c| matches!(c, '.' | '!' | '?' | '。' | '！' | '？'))
}

fn punct_for_script(p: char, cjk: bool) -> char {
    match (p, cjk) {
        ('.' | '。', true) => '。',
        ('!' | '！', true) => '！',
        ('?' | '？', true) => '？',
        ('.' | '。', false) => '.',
        ('!' | '！', false) => '!',
        ('?' | '？', false) => '?',
        (c, _) => c,
    }
}

/// Whitespace tokens of low-resource (Latin-script) text, lowercased with
/// surrounding punctuation removed.
pub fn latin_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(is_punct).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Greedy longest-match segmentation of unsegmented text against `keys`.
///
/// Whitespace and punctuation are dropped; characters not covered by any key
/// become single-character tokens. Non-CJK runs are kept whole.
pub fn segment_longest<'a, I>(text: &str, keys: I) -> Vec<String>
where
    I: IntoIterator<Item = &'a str>,
{
    let keys: Vec<Vec<char>> = keys
        .into_iter()
        .filter(|k| !k.is_empty())
        .map(|k| k.chars().collect())
        .collect();
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() || is_punct(c) {
            i += 1;
            continue;
        }
        let best = keys
            .iter()
            .filter(|k| chars[i..].starts_with(k))
            .map(|k| k.len())
            .max();
        if let Some(len) = best {
            out.push(chars[i..i + len].iter().collect());
            i += len;
        } else if is_cjk(c) {
            out.push(c.to_string());
            i += 1;
        } else {
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() && !is_punct(chars[i]) && !is_cjk(chars[i]) {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        }
    }
    out
}

/// Renders output tokens as a surface string.
///
/// CJK output is concatenated; Latin output is space-joined. When the source
/// is a full sentence (ends in sentence punctuation) the output is capitalised
/// and given the matching punctuation of the target script.
pub fn realize(tokens: &[String], source_text: &str) -> String {
    let cjk = tokens.iter().any(|t| contains_cjk(t));
    let mut s = if cjk { tokens.concat() } else { tokens.join(" ") };
    if let Some(p) = terminal_punct(source_text) {
        if !cjk {
            let mut cs = s.chars();
            if let Some(first) = cs.next() {
                s = first.to_uppercase().chain(cs).collect();
            }
        }
        s.push(punct_for_script(p, cjk));
    }
    s
}

/// Context-length estimate: one unit per CJK character, 1.3 per other word.
pub fn estimate_tokens(text: &str) -> usize {
    let mut cjk = 0usize;
    let mut words = 0usize;
    let mut in_word = false;
    for c in text.chars() {
        if is_cjk(c) {
            cjk += 1;
            in_word = false;
        } else if c.is_whitespace() {
            in_word = false;
        } else if !in_word {
            words += 1;
            in_word = true;
        }
    }
    cjk + (words as f64 * 1.3).ceil() as usize
}

/// Natural ordering for ids: digit runs compare numerically, so `r2 < r10`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (mut ai, mut bi) = (a.chars().peekable(), b.chars().peekable());
    loop {
        match (ai.peek().copied(), bi.peek().copied()) {
            (None, None) => return a.cmp(b),
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) if x.is_ascii_digit() && y.is_ascii_digit() => {
                let mut na = String::new();
                while let Some(c) = ai.peek().copied().filter(char::is_ascii_digit) {
                    na.push(c);
                    ai.next();
                }
                let mut nb = String::new();
                while let Some(c) = bi.peek().copied().filter(char::is_ascii_digit) {
                    nb.push(c);
                    bi.next();
                }
                let ta = na.trim_start_matches('0');
                let tb = nb.trim_start_matches('0');
                let ord = ta.len().cmp(&tb.len()).then_with(|| ta.cmp(tb));
                if ord != Ordering::Equal {
                    return ord;
                }
            }
            (Some(x), Some(y)) => {
                if x != y {
                    return x.cmp(&y);
                }
                ai.next();
                bi.next();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn longest_match_prefers_longer_keys() {
        let toks = segment_longest("我妈是乡下人。", ["我", "妈", "乡下", "乡", "人"]);
        assert_eq!(toks, vec!["我", "妈", "是", "乡下", "人"]);
    }

    #[test]
    fn segmentation_keeps_latin_runs() {
        let toks = segment_longest("他去Bwzgingh了", ["他"]);
        assert_eq!(toks, vec!["他", "去", "Bwzgingh", "了"]);
    }

    #[test]
    fn realize_sentence_and_phrase() {
        let t: Vec<String> = ["de", "mbouj", "dwg"].iter().map(|s| s.to_string()).collect();
        assert_eq!(realize(&t, "他不是。"), "De mbouj dwg.");
        assert_eq!(realize(&t, "他不是"), "de mbouj dwg");
        let z: Vec<String> = ["黄", "头发"].iter().map(|s| s.to_string()).collect();
        assert_eq!(realize(&z, "byoem henj"), "黄头发");
        assert_eq!(realize(&z, "Byoem henj."), "黄头发。");
    }

    #[test]
    fn natural_order() {
        let mut ids = vec!["r10", "r2", "r1", "r1-2", "r1-10", "m1"];
        ids.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(ids, vec!["m1", "r1", "r1-2", "r1-10", "r2", "r10"]);
    }

    #[test]
    fn token_estimate() {
        assert_eq!(estimate_tokens("黄头发"), 3);
        assert_eq!(estimate_tokens("byoem henj"), 3);
        assert_eq!(estimate_tokens(""), 0);
    }

    #[test]
    fn latin_tokens_strip_punctuation() {
        assert_eq!(latin_tokens("De mbouj dwg daxboh gou."), vec!["de", "mbouj", "dwg", "daxboh", "gou"]);
    }
}
