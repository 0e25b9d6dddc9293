use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Direction, ParallelExample, RuleFormat, Rulebook};
use crate::llm::{ClientConfig, MockProfile};
use crate::retrieval::{DocScope, Strategy};
use crate::translator::{ApplicationConfig, CombineStrategy, RuleMode};

/// Which backend serves requests.
#[derive(Clone, Debug, PartialEq)]
pub enum BackendSpec {
    Http,
    /// Cache only; any miss is an error.
    Replay,
    Mock(MockProfile),
}

impl FromStr for BackendSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "http" => Ok(BackendSpec::Http),
            "replay" => Ok(BackendSpec::Replay),
            "mock" => Ok(BackendSpec::Mock(MockProfile::default())),
            _ => match s.strip_prefix("mock:") {
                Some(p) => Ok(BackendSpec::Mock(p.parse()?)),
                None => Err(format!("unknown backend {s:?} (expected http, replay or mock:<profile>)")),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceFilter {
    #[default]
    All,
    /// Instances whose rules all carry oracle programs.
    Programmed,
    SingleRule,
    MultiRule,
}

impl InstanceFilter {
    pub fn select(self, book: &Rulebook) -> Vec<&ParallelExample> {
        book.examples()
            .iter()
            .filter(|e| match self {
                InstanceFilter::All => true,
                InstanceFilter::Programmed => book.is_programmed(e),
                InstanceFilter::SingleRule => !e.is_multi_rule(),
                InstanceFilter::MultiRule => e.is_multi_rule(),
            })
            .collect()
    }
}

fn default_backend() -> String {
    "mock:perfect".into()
}

fn default_cache() -> PathBuf {
    PathBuf::from(".cache")
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// One run, as a single JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub book: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Backend that produced (or produces) the responses. Its identity keys
    /// the cache, so a replay of a mock run finds the mock's responses.
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default)]
    pub model: ClientConfig,
    #[serde(default = "default_cache")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub instances: InstanceFilter,
    /// Serve every request from the cache instead of `backend`.
    #[serde(skip)]
    pub replay: bool,
    #[serde(flatten)]
    pub experiment: Experiment,
}

impl RunConfig {
    pub fn backend_spec(&self) -> Result<BackendSpec, String> {
        self.backend.parse()
    }

    /// Model id used for requests and cache keys. Mock backends get the
    /// profile and seed folded in so different profiles never share entries.
    pub fn effective_model_id(&self) -> Result<String, String> {
        Ok(match self.backend_spec()? {
            BackendSpec::Mock(p) => format!("{}[{p};seed={}]", self.model.model_id, self.seed),
            _ => self.model.model_id.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum Experiment {
    Pilot(PilotSpec),
    Retrieval(RetrievalSpec),
    Application(ApplicationSpec),
    Multirule(MultiruleSpec),
    Pipeline(PipelineSpec),
    Induce(InduceSpec),
    Stats,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Pilot(_) => "pilot",
            Experiment::Retrieval(_) => "retrieval",
            Experiment::Application(_) => "application",
            Experiment::Multirule(_) => "multirule",
            Experiment::Pipeline(_) => "pipeline",
            Experiment::Induce(_) => "induce",
            Experiment::Stats => "stats",
        }
    }
}

pub const DEFAULT_PILOT_NS: [usize; 9] = [0, 1, 2, 4, 8, 16, 32, 64, 108];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PilotSpec {
    pub n_values: Vec<usize>,
    pub direction: Direction,
    pub rule_format: RuleFormat,
    pub n_examples: usize,
}

impl Default for PilotSpec {
    fn default() -> Self {
        PilotSpec {
            n_values: DEFAULT_PILOT_NS.to_vec(),
            direction: Direction::LoToHi,
            rule_format: RuleFormat::Text,
            n_examples: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalSpec {
    pub strategies: Vec<Strategy>,
    pub formats: Vec<RuleFormat>,
    pub directions: Vec<Direction>,
    /// Cut-offs reported for BM25.
    pub ks: Vec<usize>,
    pub doc_scope: DocScope,
    pub include_lexicon: bool,
}

impl Default for RetrievalSpec {
    fn default() -> Self {
        RetrievalSpec {
            strategies: vec![Strategy::Bm25, Strategy::FullBook, Strategy::RuleByRule],
            formats: vec![RuleFormat::Text, RuleFormat::Code],
            directions: vec![Direction::LoToHi],
            ks: vec![1, 5],
            doc_scope: DocScope::RuleText,
            include_lexicon: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApplicationSpec {
    pub cells: Vec<ApplicationConfig>,
}

impl Default for ApplicationSpec {
    /// No rule, random rule and gold rule in both formats, with and without
    /// examples, plus IGT-first cells, in both directions.
    fn default() -> Self {
        let mut cells = Vec::new();
        for direction in [Direction::LoToHi, Direction::HiToLo] {
            let base = ApplicationConfig { direction, ..Default::default() };
            cells.push(ApplicationConfig { rule_mode: RuleMode::None, n_examples: 0, ..base.clone() });
            cells.push(ApplicationConfig { rule_mode: RuleMode::None, ..base.clone() });
            cells.push(ApplicationConfig { rule_mode: RuleMode::Random, ..base.clone() });
            for rule_format in [RuleFormat::Text, RuleFormat::Code] {
                cells.push(ApplicationConfig { rule_format, n_examples: 0, ..base.clone() });
                cells.push(ApplicationConfig { rule_format, ..base.clone() });
            }
            cells.push(ApplicationConfig { rule_mode: RuleMode::None, use_igt: true, ..base.clone() });
            cells.push(ApplicationConfig { use_igt: true, ..base.clone() });
        }
        ApplicationSpec { cells }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiruleSpec {
    pub direction: Direction,
    pub n_examples: usize,
    pub strategies: Vec<CombineStrategy>,
}

impl Default for MultiruleSpec {
    fn default() -> Self {
        MultiruleSpec {
            direction: Direction::HiToLo,
            n_examples: 0,
            strategies: vec![CombineStrategy::FuncCall, CombineStrategy::InlineTemplate, CombineStrategy::InlineLlm],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSpec {
    pub retrieval: Strategy,
    pub retrieval_format: RuleFormat,
    pub application_format: RuleFormat,
    pub combine: Option<CombineStrategy>,
    pub direction: Direction,
    pub n_examples: usize,
    /// Rules kept from a BM25 ranking.
    pub bm25_k: usize,
    /// Also run the no-retrieval baseline with the whole book in the prompt.
    pub baseline: bool,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        PipelineSpec {
            retrieval: Strategy::RuleByRule,
            retrieval_format: RuleFormat::Code,
            application_format: RuleFormat::Code,
            combine: None,
            direction: Direction::LoToHi,
            n_examples: 0,
            bm25_k: 1,
            baseline: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InduceSpec {
    pub direction: Direction,
    pub n_examples: usize,
}

impl Default for InduceSpec {
    fn default() -> Self {
        InduceSpec { direction: Direction::HiToLo, n_examples: 0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_tag_and_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"book": "b", "experiment": "pilot", "n_values": [0, 4]}"#).unwrap();
        match &c.experiment {
            Experiment::Pilot(p) => assert_eq!(p.n_values, [0, 4]),
            other => panic!("{other:?}"),
        }
        assert_eq!(c.backend, "mock:perfect");
        let s: RunConfig = serde_json::from_str(r#"{"book": "b", "experiment": "stats"}"#).unwrap();
        assert_eq!(s.experiment, Experiment::Stats);
        assert!(serde_json::from_str::<RunConfig>(r#"{"book": "b", "experiment": "dance"}"#).is_err());
    }

    #[test]
    fn backend_specs() {
        assert_eq!("replay".parse::<BackendSpec>(), Ok(BackendSpec::Replay));
        assert!(matches!("mock:always_yes".parse::<BackendSpec>(), Ok(BackendSpec::Mock(_))));
        assert!("ftp".parse::<BackendSpec>().is_err());
    }
}
