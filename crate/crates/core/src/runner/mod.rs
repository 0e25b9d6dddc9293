//! Experiment orchestration: run configs, manifests, per-instance records and
//! reports under `{out_dir}/{run_id}/`.

mod config;
mod experiments;
mod report;

pub use config::*;
pub use experiments::*;
pub use report::*;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{load_rulebook, save_rulebook, CorpusError, Rulebook};
use crate::llm::{ChatBackend, HttpBackend, LlmClient, LlmError, MockBackend, ReplayBackend, ResponseCache};
use crate::retrieval::RetrievalError;
use crate::rulecraft::RulecraftError;
use crate::translator::TranslatorError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config error: {0}")]
    Config(String),
    #[error("asked for {n} irrelevant rules but only {available} are available")]
    NotEnoughRules { n: usize, available: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Rulecraft(#[from] RulecraftError),
    #[error(transparent)]
    Translator(#[from] TranslatorError),
}

fn llm_exit(e: &LlmError) -> i32 {
    match e {
        LlmError::InvalidRequest(_) | LlmError::Profile(_) => EXIT_CONFIG,
        _ => EXIT_BACKEND,
    }
}

impl RunnerError {
    /// Process exit code: 2 for config problems, 3 for backend failures,
    /// 4 for data or generation that failed validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) | RunnerError::NotEnoughRules { .. } | RunnerError::Io { .. } => EXIT_CONFIG,
            RunnerError::Corpus(CorpusError::Io { .. }) => EXIT_CONFIG,
            RunnerError::Corpus(_) => EXIT_VALIDATION,
            RunnerError::Llm(e) => llm_exit(e),
            RunnerError::Retrieval(RetrievalError::Llm(e)) => llm_exit(e),
            RunnerError::Retrieval(RetrievalError::ContextOverflow { .. }) => EXIT_BACKEND,
            RunnerError::Retrieval(_) => EXIT_VALIDATION,
            RunnerError::Rulecraft(RulecraftError::Llm(e)) => llm_exit(e),
            RunnerError::Rulecraft(_) => EXIT_VALIDATION,
            RunnerError::Translator(TranslatorError::Llm(e)) => llm_exit(e),
            RunnerError::Translator(TranslatorError::IgtUnavailable) => EXIT_CONFIG,
            RunnerError::Translator(_) => EXIT_VALIDATION,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        RunnerError::Io { path: path.display().to_string(), source }
    }
}

/// Identity of a run, written before the first backend call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub experiment: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub backend: String,
    pub model_id: String,
    pub dataset_digest: String,
    pub started_unix: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_unix: Option<u64>,
    #[serde(default)]
    pub backend_calls: usize,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_JSON: &str = "report.json";

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// `{experiment}-{8 hex of the config digest}`, suffixed `-2`, `-3`, ... when
/// that directory already exists under `out_dir`.
pub fn allocate_run_id(cfg: &RunConfig) -> String {
    let base = match &cfg.run_id {
        Some(id) => id.clone(),
        None => {
            let mut c = cfg.clone();
            c.run_id = None;
            let json = serde_json::to_string(&c).expect("config serializes");
            let digest = hex::encode(Sha256::digest(json.as_bytes()));
            format!("{}-{}", cfg.experiment.name(), &digest[..8])
        }
    };
    let mut id = base.clone();
    let mut n = 2;
    while cfg.out_dir.join(&id).exists() {
        id = format!("{base}-{n}");
        n += 1;
    }
    id
}

/// Client for `cfg`: the response cache under `cache_dir` in front of the
/// configured backend, or of a strict replay backend when `cfg.replay`.
pub fn build_client(cfg: &RunConfig, book: Arc<Rulebook>) -> Result<LlmClient, RunnerError> {
    let spec = cfg.backend_spec().map_err(RunnerError::Config)?;
    let model_id = cfg.effective_model_id().map_err(RunnerError::Config)?;
    let cache = ResponseCache::open(&cfg.cache_dir).map_err(|e| RunnerError::io(&cfg.cache_dir, e))?;
    let backend: Arc<dyn ChatBackend> = if cfg.replay {
        Arc::new(ReplayBackend { strict: true })
    } else {
        match spec {
            BackendSpec::Http => Arc::new(HttpBackend::new(&cfg.model)),
            BackendSpec::Replay => Arc::new(ReplayBackend { strict: true }),
            BackendSpec::Mock(profile) => Arc::new(MockBackend::new(book, profile, cfg.seed)),
        }
    };
    let client_cfg = crate::llm::ClientConfig { model_id, ..cfg.model.clone() };
    Ok(LlmClient::new(backend, Some(Arc::new(cache)), client_cfg))
}

/// A finished run.
#[derive(Debug)]
pub struct RunOutcome {
    pub run_id: String,
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub report: RunReport,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), RunnerError> {
    let s = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, s + "\n").map_err(|e| RunnerError::io(path, e))
}

fn write_jsonl(path: &Path, values: &[serde_json::Value]) -> Result<(), RunnerError> {
    let mut f = fs::File::create(path).map_err(|e| RunnerError::io(path, e))?;
    for v in values {
        writeln!(f, "{v}").map_err(|e| RunnerError::io(path, e))?;
    }
    Ok(())
}

/// Loads the book, writes the manifest, runs the experiment and writes
/// records and reports.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, RunnerError> {
    let book = Arc::new(load_rulebook(&cfg.book)?);
    let client = build_client(cfg, book.clone())?;
    run_with(cfg, &book, &client)
}

/// Like [`run`] with a preloaded book and client.
pub fn run_with(cfg: &RunConfig, book: &Rulebook, client: &LlmClient) -> Result<RunOutcome, RunnerError> {
    let run_id = allocate_run_id(cfg);
    let dir = cfg.out_dir.join(&run_id);
    fs::create_dir_all(&dir).map_err(|e| RunnerError::io(&dir, e))?;
    let mut manifest = RunManifest {
        run_id: run_id.clone(),
        experiment: cfg.experiment.name().to_string(),
        config: serde_json::to_value(cfg).expect("config serializes"),
        seed: cfg.seed,
        backend: client.describe(),
        model_id: client.model_id().to_string(),
        dataset_digest: book.digest(),
        started_unix: now_unix(),
        finished_unix: None,
        backend_calls: 0,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    log::info!("run {run_id}: {} on {} with {}", manifest.experiment, book.manifest.name, manifest.backend);

    let ctx = Context { book, client, seed: cfg.seed, instances: cfg.instances };
    let output = run_experiment(&cfg.experiment, &ctx)?;
    for (file, values) in &output.records {
        let path = dir.join(file);
        if file.ends_with(".json") {
            write_json(&path, &values.first())?;
        } else {
            write_jsonl(&path, values)?;
        }
    }
    if let Some(converted) = &output.converted {
        save_rulebook(converted, dir.join("converted_book"))?;
    }
    write_json(&dir.join(REPORT_JSON), &output.report)?;
    emit_report(&output.report, &dir, &[ReportFormat::Markdown, ReportFormat::Csv]).map_err(|e| RunnerError::io(&dir, e))?;

    manifest.finished_unix = Some(now_unix());
    manifest.backend_calls = client.backend_calls();
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(RunOutcome { run_id, dir, manifest, report: output.report })
}

/// Reads `report.json` from a run directory.
pub fn load_report(dir: &Path) -> Result<RunReport, RunnerError> {
    let path = dir.join(REPORT_JSON);
    let s = fs::read_to_string(&path).map_err(|e| RunnerError::io(&path, e))?;
    serde_json::from_str(&s).map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))
}

pub fn load_manifest(dir: &Path) -> Result<RunManifest, RunnerError> {
    let path = dir.join(MANIFEST_FILE);
    let s = fs::read_to_string(&path).map_err(|e| RunnerError::io(&path, e))?;
    serde_json::from_str(&s).map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))
}
