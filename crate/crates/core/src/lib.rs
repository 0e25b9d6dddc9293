//! Grammar-book based translation toolkit for extremely low-resource languages.
//!
//! The crate decomposes grammar-book translation into rule retrieval and rule
//! application, and ships everything needed to run those experiments offline:
//!
//! - [`corpus`]: rulebook data model, bundle IO, statistics and prose extraction.
//! - [`ruleengine`]: deterministic rule programs used as a ground-truth oracle.
//! - [`metrics`]: BLEU, chrF++ and retrieval metrics.
//! - [`llm`]: chat-completion client with caching, replay and an oracle-backed mock.
//! - [`retrieval`]: BM25, Full-Book and Rule-by-Rule retrieval.
//! - [`rulecraft`]: code-rule conversion and validation, IGT generation, rule induction.
//! - [`translator`]: prompt construction, multi-rule combination, answer extraction.
//! - [`runner`]: experiment grids, run manifests and reports.

pub mod corpus;
pub mod llm;
pub mod metrics;
pub mod prompts;
pub mod retrieval;
pub mod rulecraft;
pub mod ruleengine;
pub mod runner;
pub mod text;
pub mod translator;

pub use corpus::{
    ActionKind, Difficulty, Direction, GrammarRule, Granularity, Igt, Lexicon, ParallelExample,
    Rulebook, WalsDomain,
};
pub use ruleengine::RuleProgram;

/// Derives a stable 64-bit seed from a base seed and a list of string parts.
///
/// Uses SHA-256 so that derived seeds are identical across platforms and
/// toolchains (unlike `std::hash`).
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let out = h.finalize();
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&out[..8]);
    u64::from_le_bytes(buf)
}

/// Uniform draw in `[0, 1)` keyed by `(seed, parts)`.
pub fn seeded_unit(seed: u64, parts: &[&str]) -> f64 {
    (derive_seed(seed, parts) >> 11) as f64 / (1u64 << 53) as f64
}
