//! Bundle directory IO: `book.json`, `rules.jsonl`, `examples.jsonl`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::Value;

use super::{
    valid_id, ActionKind, BookManifest, CorpusError, Difficulty, Direction, Granularity, GrammarRule, IgtSource,
    ParallelExample, Rulebook, WalsDomain,
};

pub const MANIFEST_FILE: &str = "book.json";
pub const RULES_FILE: &str = "rules.jsonl";
pub const EXAMPLES_FILE: &str = "examples.jsonl";

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })
}

fn check_enum<T: std::str::FromStr<Err = String>>(
    rec: &Value,
    field: &str,
    file: &str,
    line: usize,
) -> Result<(), CorpusError> {
    match rec.get(field) {
        None | Some(Value::Null) => Ok(()),
        Some(Value::String(s)) => s
            .parse::<T>()
            .map(|_| ())
            .map_err(|m| CorpusError::Schema(format!("{file} line {line}: field {field}: {m}"))),
        Some(Value::Array(items)) => {
            for it in items {
                match it {
                    Value::String(s) => {
                        s.parse::<T>()
                            .map_err(|m| CorpusError::Schema(format!("{file} line {line}: field {field}: {m}")))?;
                    }
                    other => {
                        return Err(CorpusError::Schema(format!(
                            "{file} line {line}: field {field}: expected string, got {other}"
                        )))
                    }
                }
            }
            Ok(())
        }
        Some(other) => Err(CorpusError::Schema(format!("{file} line {line}: field {field}: unexpected value {other}"))),
    }
}

fn check_id(rec: &Value, field: &str, file: &str, line: usize) -> Result<(), CorpusError> {
    let ids: Vec<&str> = match rec.get(field) {
        Some(Value::String(s)) => vec![s.as_str()],
        Some(Value::Array(a)) => a.iter().filter_map(Value::as_str).collect(),
        _ => return Ok(()),
    };
    for id in ids {
        if !valid_id(id) {
            return Err(CorpusError::Schema(format!("{file} line {line}: id {id:?} must match [A-Za-z0-9_.-]+")));
        }
    }
    Ok(())
}

fn parse_lines<T: DeserializeOwned>(
    content: &str,
    file: &str,
    schema: impl Fn(&Value, usize) -> Result<(), CorpusError>,
) -> Result<Vec<T>, CorpusError> {
    let mut out = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw)
            .map_err(|e| CorpusError::Parse { file: file.into(), line, message: e.to_string() })?;
        if !value.is_object() {
            return Err(CorpusError::Parse { file: file.into(), line, message: "record is not an object".into() });
        }
        schema(&value, line)?;
        let rec = serde_json::from_value(value)
            .map_err(|e| CorpusError::Parse { file: file.into(), line, message: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

/// Loads and validates a rulebook bundle directory.
pub fn load_rulebook(dir: impl AsRef<Path>) -> Result<Rulebook, CorpusError> {
    let dir = dir.as_ref();
    let manifest_text = read(&dir.join(MANIFEST_FILE))?;
    let manifest: BookManifest = serde_json::from_str(&manifest_text)
        .map_err(|e| CorpusError::Parse { file: MANIFEST_FILE.into(), line: e.line(), message: e.to_string() })?;

    let rules: Vec<GrammarRule> = parse_lines(&read(&dir.join(RULES_FILE))?, RULES_FILE, |v, line| {
        check_id(v, "id", RULES_FILE, line)?;
        check_enum::<ActionKind>(v, "actions", RULES_FILE, line)?;
        check_enum::<Difficulty>(v, "difficulty", RULES_FILE, line)?;
        check_enum::<WalsDomain>(v, "wals_domain", RULES_FILE, line)
    })?;

    let examples_path = dir.join(EXAMPLES_FILE);
    let examples: Vec<ParallelExample> = if examples_path.exists() {
        parse_lines(&read(&examples_path)?, EXAMPLES_FILE, |v, line| {
            check_id(v, "id", EXAMPLES_FILE, line)?;
            check_id(v, "rule_ids", EXAMPLES_FILE, line)?;
            check_enum::<Granularity>(v, "granularity", EXAMPLES_FILE, line)?;
            check_enum::<IgtSource>(v, "igt_source", EXAMPLES_FILE, line)?;
            check_enum::<Direction>(v, "lexicon_direction", EXAMPLES_FILE, line)
        })?
    } else {
        Vec::new()
    };

    Rulebook::new(manifest, rules, examples)
}

fn write_file(path: &Path, content: &[u8]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io { path: path.display().to_string(), source };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(content).map_err(io_err)
}

/// Writes a bundle directory; records appear in book order, one per line.
pub fn save_rulebook(book: &Rulebook, dir: impl AsRef<Path>) -> Result<(), CorpusError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| CorpusError::Io { path: dir.display().to_string(), source })?;
    let mut manifest = serde_json::to_vec_pretty(&book.manifest).expect("manifest serializes");
    manifest.push(b'\n');
    write_file(&dir.join(MANIFEST_FILE), &manifest)?;
    write_file(&dir.join(RULES_FILE), &to_jsonl(book.rules()))?;
    write_file(&dir.join(EXAMPLES_FILE), &to_jsonl(book.examples()))
}

pub(crate) fn to_jsonl<T: serde::Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it).expect("record serializes");
        out.push(b'\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(rules: &str, examples: &str) -> tempfile::TempDir {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join(MANIFEST_FILE), r#"{"name":"t","source_language":"za","target_language":"zh"}"#)
            .unwrap();
        fs::write(d.path().join(RULES_FILE), rules).unwrap();
        fs::write(d.path().join(EXAMPLES_FILE), examples).unwrap();
        d
    }

    const RULE: &str = r#"{"id":"r1","text":"t","rule_language":"zh","actions":["add"],"difficulty":"easy","wals_domain":"morphology"}"#;

    #[test]
    fn unknown_action_is_schema_error() {
        let d = bundle(&RULE.replace("\"add\"", "\"shuffle\""), "");
        let err = load_rulebook(d.path()).unwrap_err();
        assert!(matches!(err, CorpusError::Schema(ref m) if m.contains("shuffle") && m.contains("line 1")), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let d = bundle(&format!("{RULE}\n\n{{not json"), "");
        match load_rulebook(d.path()).unwrap_err() {
            CorpusError::Parse { file, line, .. } => {
                assert_eq!(file, RULES_FILE);
                assert_eq!(line, 3);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_id_is_schema_error() {
        let d = bundle(&RULE.replace("\"r1\"", "\"r 1\""), "");
        assert!(matches!(load_rulebook(d.path()).unwrap_err(), CorpusError::Schema(_)));
    }

    #[test]
    fn dangling_rule_reference() {
        let ex = r#"{"id":"e1","rule_ids":["r2"],"source_text":"a","target_text":"b","lexicon":{},"granularity":"phrase"}"#;
        let d = bundle(RULE, ex);
        assert!(matches!(load_rulebook(d.path()).unwrap_err(), CorpusError::Integrity(_)));
    }

    #[test]
    fn misaligned_igt_is_parse_error() {
        let ex = r#"{"id":"e1","rule_ids":["r1"],"source_text":"a b","target_text":"c","lexicon":{},"igt":{"surface":["a","b"],"gloss":["X"]},"granularity":"phrase"}"#;
        let d = bundle(RULE, ex);
        assert!(matches!(load_rulebook(d.path()).unwrap_err(), CorpusError::Parse { line: 1, .. }));
    }
}
