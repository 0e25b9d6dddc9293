use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use grammt::corpus::{compute_stats, extract_from_prose, load_rulebook, save_rulebook, CorpusError, ExtractPatterns, IgtSource};
use grammt::prompts::Lang;
use grammt::rulecraft::{conversion_exemplars, convert_book, generate_igt, igt_exemplars};
use grammt::runner::{self, build_client, render_csv, render_markdown, RunConfig, RunnerError, EXIT_CONFIG};
use grammt::Direction;

#[derive(Parser)]
#[command(name = "grammt", version, about = "Grammar-rule retrieval and application for low-resource translation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run config (JSON), or a previous run's manifest.json to rerun it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// http, replay or mock:<profile>.
    #[arg(long, global = true)]
    backend: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Rulebook bundle directory.
    #[arg(long, global = true)]
    book: Option<PathBuf>,
    /// Extra config field, `key=value`; the value is parsed as JSON when possible.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a bundle and optionally write a normalised copy.
    Ingest {
        dir: PathBuf,
        #[arg(long)]
        to: Option<PathBuf>,
    },
    /// Dataset statistics.
    Stats,
    /// Pull rule paragraphs and three-line examples out of a prose grammar.
    Extract {
        text: PathBuf,
        #[arg(long)]
        to: PathBuf,
    },
    /// Add code forms to every rule and save the converted bundle.
    ConvertRules {
        #[arg(long)]
        to: PathBuf,
    },
    /// Gloss examples that have no IGT and save the bundle.
    IgtGen {
        #[arg(long)]
        to: PathBuf,
    },
    /// Leave-one-out rule induction.
    Induce {
        #[arg(long)]
        direction: Option<String>,
    },
    /// Retrieval table.
    Retrieve {
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        formats: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        directions: Vec<String>,
    },
    /// Rule application grid, or the multi-rule table with --multirule.
    Translate {
        #[arg(long)]
        multirule: bool,
    },
    /// Accuracy against the number of irrelevant rules in the prompt.
    Pilot {
        #[arg(long, value_delimiter = ',')]
        n_values: Vec<usize>,
        #[arg(long)]
        direction: Option<String>,
        #[arg(long)]
        rule_format: Option<String>,
    },
    /// Retrieval followed by application.
    Pipeline {
        #[arg(long)]
        retrieval: Option<String>,
        #[arg(long)]
        retrieval_format: Option<String>,
        #[arg(long)]
        application_format: Option<String>,
        #[arg(long)]
        combine: Option<String>,
        #[arg(long)]
        direction: Option<String>,
        #[arg(long)]
        no_baseline: bool,
    },
    /// Print a finished run's report.
    Report {
        run_dir: PathBuf,
        #[arg(long, default_value = "markdown", value_parser = ["markdown", "csv"])]
        format: String,
    },
}

#[derive(Debug)]
struct Failure {
    code: i32,
    error: anyhow::Error,
}

impl From<RunnerError> for Failure {
    fn from(e: RunnerError) -> Self {
        Failure { code: e.exit_code(), error: e.into() }
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        RunnerError::from(e).into()
    }
}

fn config_error(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_CONFIG, error: e.into() }
}

/// Reads `--config`. A run manifest contributes its recorded config.
fn load_config(path: &Path) -> Result<Map<String, Value>, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(config_error)?;
    let value: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).map_err(config_error)?;
    let value = match value {
        Value::Object(mut m) if m.contains_key("run_id") && m.get("config").is_some_and(Value::is_object) => {
            m.remove("config").unwrap_or_default()
        }
        v => v,
    };
    match value {
        Value::Object(mut m) => {
            // A rerun gets a fresh id.
            m.remove("run_id");
            Ok(m)
        }
        _ => Err(config_error(anyhow::anyhow!("{}: config must be a JSON object", path.display()))),
    }
}

fn parse_set(s: &str) -> Result<(String, Value), Failure> {
    let (k, v) = s.split_once('=').ok_or_else(|| config_error(anyhow::anyhow!("--set expects KEY=VALUE, got {s:?}")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

/// Config file, then subcommand flags, then global flags.
fn resolve_config(global: &Global, experiment: Option<&str>, overrides: Map<String, Value>) -> Result<RunConfig, Failure> {
    let mut m = match &global.config {
        Some(p) => load_config(p)?,
        None => Map::new(),
    };
    if let Some(exp) = experiment {
        match m.get("experiment").and_then(Value::as_str) {
            Some(have) if have != exp => {
                return Err(config_error(anyhow::anyhow!("config is for experiment {have:?}, not {exp:?}")));
            }
            _ => {
                m.insert("experiment".into(), json!(exp));
            }
        }
    } else {
        m.entry("experiment").or_insert(json!("stats"));
    }
    m.extend(overrides);
    let replay = global.backend.as_deref() == Some("replay");
    match &global.backend {
        // Keep the recorded backend: its identity keys the cache.
        Some(b) if b == "replay" => {
            m.entry("backend").or_insert(json!("replay"));
        }
        Some(b) => {
            m.insert("backend".into(), json!(b));
        }
        None => {}
    }
    for (key, value) in [
        ("seed", global.seed.map(|s| json!(s))),
        ("cache_dir", global.cache.as_ref().map(|p| json!(p))),
        ("out_dir", global.out.as_ref().map(|p| json!(p))),
        ("book", global.book.as_ref().map(|p| json!(p))),
    ] {
        if let Some(v) = value {
            m.insert(key.into(), v);
        }
    }
    for s in &global.sets {
        let (k, v) = parse_set(s)?;
        m.insert(k, v);
    }
    if !m.contains_key("book") {
        return Err(config_error(anyhow::anyhow!("no rulebook given (use --book or a config with \"book\")")));
    }
    let mut cfg: RunConfig = serde_json::from_value(Value::Object(m)).context("invalid run config").map_err(config_error)?;
    cfg.replay = replay;
    cfg.backend_spec().map_err(|e| config_error(anyhow::anyhow!(e)))?;
    Ok(cfg)
}

fn put(m: &mut Map<String, Value>, key: &str, v: Option<&String>) {
    if let Some(v) = v {
        m.insert(key.into(), json!(v));
    }
}

fn put_list<T: Clone + Into<Value>>(m: &mut Map<String, Value>, key: &str, v: &[T]) {
    if !v.is_empty() {
        m.insert(key.into(), Value::from(v.to_vec()));
    }
}

fn run_experiment(global: &Global, experiment: &str, overrides: Map<String, Value>) -> Result<(), Failure> {
    let cfg = resolve_config(global, Some(experiment), overrides)?;
    let outcome = runner::run(&cfg)?;
    print!("{}", render_markdown(&outcome.report));
    eprintln!("run {} written to {}", outcome.run_id, outcome.dir.display());
    Ok(())
}

fn ingest(dir: &Path, to: Option<&Path>) -> Result<(), Failure> {
    let book = load_rulebook(dir)?;
    let stats = compute_stats(&book);
    println!(
        "{}",
        json!({"name": book.manifest.name, "rules": stats.n_rules, "examples": stats.n_examples, "digest": book.digest()})
    );
    if let Some(to) = to {
        save_rulebook(&book, to)?;
        eprintln!("saved normalised bundle to {}", to.display());
    }
    Ok(())
}

fn extract(global: &Global, text: &Path, to: &Path) -> Result<(), Failure> {
    let prose = fs::read_to_string(text).map_err(|e| RunnerError::io(text, e))?;
    let patterns = match &global.book {
        Some(b) => load_rulebook(b)?.manifest.extract_patterns.unwrap_or_default(),
        None => ExtractPatterns::default(),
    };
    let out = extract_from_prose(&prose, &patterns).context("bad extraction pattern").map_err(config_error)?;
    fs::create_dir_all(to).map_err(|e| RunnerError::io(to, e))?;
    let lines = |items: Vec<String>| items.into_iter().map(|l| l + "\n").collect::<String>();
    let rules = lines(out.rules.iter().map(|r| serde_json::to_string(r).expect("serializes")).collect());
    let skips = lines(out.skipped.iter().map(|s| serde_json::to_string(s).expect("serializes")).collect());
    for (name, body) in [("extracted.jsonl", rules), ("extract.log.jsonl", skips)] {
        let path = to.join(name);
        fs::write(&path, body).map_err(|e| RunnerError::io(&path, e))?;
    }
    let n_examples: usize = out.rules.iter().map(|r| r.examples.len()).sum();
    println!("{} rules, {} examples, {} skipped", out.rules.len(), n_examples, out.skipped.len());
    Ok(())
}

fn convert_rules(global: &Global, to: &Path) -> Result<(), Failure> {
    let cfg = resolve_config(global, None, Map::new())?;
    let book = Arc::new(load_rulebook(&cfg.book)?);
    let client = build_client(&cfg, book.clone())?;
    let converted = convert_book(&book, &client, &conversion_exemplars()).map_err(RunnerError::from)?;
    save_rulebook(&converted, to)?;
    println!("converted {} rules into {}", converted.rules().len(), to.display());
    Ok(())
}

fn igt_gen(global: &Global, to: &Path) -> Result<(), Failure> {
    let cfg = resolve_config(global, None, Map::new())?;
    let book = Arc::new(load_rulebook(&cfg.book)?);
    let client = build_client(&cfg, book.clone())?;
    let lang = Lang::of(&book.manifest.prompt_language);
    let lo_name = book.manifest.source_language_name.clone().unwrap_or_else(|| book.manifest.source_language.clone());
    let mut generated = Vec::new();
    for ex in book.examples().iter().filter(|e| e.igt.is_none()) {
        let lex = ex.lexicon_for(Direction::LoToHi);
        let g = generate_igt(&ex.source_text, &lex, &client, &igt_exemplars(), &book.manifest.gloss_inventory, lang, &lo_name)
            .map_err(RunnerError::from)?;
        generated.push(g.igt);
    }
    let n = generated.len();
    let mut it = generated.into_iter();
    let glossed = book.map_examples(|e| {
        if e.igt.is_none() {
            e.igt = it.next();
            e.igt_source = Some(IgtSource::Generated);
        }
    })?;
    save_rulebook(&glossed, to)?;
    println!("glossed {n} examples into {}", to.display());
    Ok(())
}

fn report(run_dir: &Path, format: &str) -> Result<(), Failure> {
    let report = runner::load_report(run_dir)?;
    match format {
        "csv" => print!("{}", render_csv(&report)),
        _ => print!("{}", render_markdown(&report)),
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match cli.command {
        Command::Ingest { dir, to } => ingest(&dir, to.as_deref()),
        Command::Stats => run_experiment(g, "stats", Map::new()),
        Command::Extract { text, to } => extract(g, &text, &to),
        Command::ConvertRules { to } => convert_rules(g, &to),
        Command::IgtGen { to } => igt_gen(g, &to),
        Command::Induce { direction } => {
            let mut m = Map::new();
            put(&mut m, "direction", direction.as_ref());
            run_experiment(g, "induce", m)
        }
        Command::Retrieve { strategies, formats, directions } => {
            let mut m = Map::new();
            put_list(&mut m, "strategies", &strategies);
            put_list(&mut m, "formats", &formats);
            put_list(&mut m, "directions", &directions);
            run_experiment(g, "retrieval", m)
        }
        Command::Translate { multirule } => {
            let configured = match &g.config {
                Some(p) => load_config(p)?.get("experiment").and_then(Value::as_str).map(str::to_string),
                None => None,
            };
            let exp = match (multirule, configured.as_deref()) {
                (true, _) | (false, Some("multirule")) => "multirule",
                _ => "application",
            };
            run_experiment(g, exp, Map::new())
        }
        Command::Pilot { n_values, direction, rule_format } => {
            let mut m = Map::new();
            put_list(&mut m, "n_values", &n_values);
            put(&mut m, "direction", direction.as_ref());
            put(&mut m, "rule_format", rule_format.as_ref());
            run_experiment(g, "pilot", m)
        }
        Command::Pipeline { retrieval, retrieval_format, application_format, combine, direction, no_baseline } => {
            let mut m = Map::new();
            put(&mut m, "retrieval", retrieval.as_ref());
            put(&mut m, "retrieval_format", retrieval_format.as_ref());
            put(&mut m, "application_format", application_format.as_ref());
            put(&mut m, "combine", combine.as_ref());
            put(&mut m, "direction", direction.as_ref());
            if no_baseline {
                m.insert("baseline".into(), json!(false));
            }
            run_experiment(g, "pipeline", m)
        }
        Command::Report { run_dir, format } => report(&run_dir, &format),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code as u8)
        }
    }
}
