use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn grammt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grammt")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn only_run_dir(out: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

#[test]
fn ingest_reports_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let to = tmp.path().join("copy");
    let o = grammt(&["ingest", fixture("mini").to_str().unwrap(), "--to", to.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!((v["rules"].as_u64(), v["examples"].as_u64()), (Some(3), Some(6)));
    assert!(to.join("rules.jsonl").exists());
}

#[test]
fn schema_violation_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    for f in ["book.json", "rules.jsonl", "examples.jsonl"] {
        fs::copy(fixture("mini").join(f), tmp.path().join(f)).unwrap();
    }
    let rules = fs::read_to_string(tmp.path().join("rules.jsonl")).unwrap();
    fs::write(tmp.path().join("rules.jsonl"), rules.replacen("\"reorder\"", "\"shuffle\"", 1)).unwrap();
    assert_eq!(code(&grammt(&["ingest", tmp.path().to_str().unwrap()])), 4);
}

#[test]
fn config_errors_exit_2() {
    let book = fixture("mini");
    let book = book.to_str().unwrap();
    assert_eq!(code(&grammt(&["stats"])), 2);
    assert_eq!(code(&grammt(&["stats", "--book", book, "--backend", "ftp"])), 2);
    assert_eq!(code(&grammt(&["stats", "--book", "/nonexistent/bundle"])), 2);
    assert_eq!(code(&grammt(&["pilot", "--book", book, "--n-values", "4,2"])), 2);
}

#[test]
fn replay_without_cache_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let o = grammt(&[
        "pilot",
        "--book",
        fixture("mini").to_str().unwrap(),
        "--backend",
        "replay",
        "--n-values",
        "0",
        "--cache",
        tmp.path().join("cache").to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn replay_from_manifest_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (cache, out1, out2) = (tmp.path().join("cache"), tmp.path().join("o1"), tmp.path().join("o2"));
    let first = grammt(&[
        "pipeline",
        "--book",
        fixture("zhuang_sample").to_str().unwrap(),
        "--backend",
        "mock:distracted(0.8)",
        "--seed",
        "3",
        "--direction",
        "hi_to_lo",
        "--set",
        "instances=programmed",
        "--cache",
        cache.to_str().unwrap(),
        "--out",
        out1.to_str().unwrap(),
    ]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let run1 = only_run_dir(&out1);
    let manifest = run1.join("manifest.json");
    let second = grammt(&[
        "pipeline",
        "--config",
        manifest.to_str().unwrap(),
        "--backend",
        "replay",
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert_eq!(code(&second), 0, "{}", String::from_utf8_lossy(&second.stderr));
    let run2 = only_run_dir(&out2);
    for f in ["report.md", "report.csv", "translations.jsonl", "retrieval.jsonl"] {
        assert_eq!(fs::read(run1.join(f)).unwrap(), fs::read(run2.join(f)).unwrap(), "{f}");
    }
    let m: serde_json::Value = serde_json::from_slice(&fs::read(run2.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["backend_calls"], 0);
    assert_eq!(stdout(&first), stdout(&second));

    let csv = grammt(&["report", run2.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(stdout(&csv), fs::read_to_string(run2.join("report.csv")).unwrap());
}

#[test]
fn pilot_writes_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = grammt(&[
        "pilot",
        "--book",
        fixture("zhuang_sample").to_str().unwrap(),
        "--n-values",
        "0,2,4",
        "--direction",
        "hi_to_lo",
        "--cache",
        tmp.path().join("cache").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--set",
        "instances=programmed",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let curve = fs::read_to_string(only_run_dir(&out).join("curves.csv")).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines[0], "n,bleu,chrf");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,100.0,"));
}

#[test]
fn convert_and_gloss_produce_loadable_bundles() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let (converted, glossed) = (tmp.path().join("conv"), tmp.path().join("igt"));
    let book = fixture("mini");
    let common = ["--book", book.to_str().unwrap(), "--cache", cache.to_str().unwrap()];
    let o = grammt(&[&["convert-rules", "--to", converted.to_str().unwrap()], &common[..]].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rules = fs::read_to_string(converted.join("rules.jsonl")).unwrap();
    assert_eq!(rules.matches("code_application").count(), 3);

    let o = grammt(&[&["igt-gen", "--to", glossed.to_str().unwrap()], &common[..]].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let examples = fs::read_to_string(glossed.join("examples.jsonl")).unwrap();
    assert_eq!(examples.lines().filter(|l| l.contains("\"igt\"")).count(), 6);
    assert_eq!(code(&grammt(&["ingest", glossed.to_str().unwrap()])), 0);
}

#[test]
fn extract_writes_rules_and_skip_log() {
    let tmp = tempfile::tempdir().unwrap();
    let text = tmp.path().join("grammar.txt");
    fs::write(
        &text,
        "Adjectives follow the noun they modify.\n\n(1) byoem henj\nhair yellow\n'yellow hair'\n\n\n(2) stray line\n",
    )
    .unwrap();
    let to = tmp.path().join("extracted");
    let o = grammt(&["extract", text.to_str().unwrap(), "--to", to.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("1 rules, 1 examples"), "{}", stdout(&o));
    assert_eq!(fs::read_to_string(to.join("extracted.jsonl")).unwrap().lines().count(), 1);
    assert!(to.join("extract.log.jsonl").exists());
}

#[test]
fn stats_prints_table() {
    let tmp = tempfile::tempdir().unwrap();
    let o = grammt(&[
        "stats",
        "--book",
        fixture("mini").to_str().unwrap(),
        "--out",
        tmp.path().join("out").to_str().unwrap(),
        "--cache",
        tmp.path().join("cache").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    assert!(s.starts_with("# stats report"));
    assert!(s.contains("| rules | - | all | 3 |"), "{s}");
}
