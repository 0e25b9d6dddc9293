#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use grammt::corpus::{load_rulebook, BookManifest, Granularity, Lexicon};
use grammt::llm::{ClientConfig, LlmClient, MockBackend, MockProfile};
use grammt::ruleengine::{PositionSpec, RuleProgram, Step};
use grammt::{ActionKind, Difficulty, Direction, GrammarRule, ParallelExample, Rulebook, WalsDomain};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn sample_book() -> Rulebook {
    load_rulebook(fixture("zhuang_sample")).expect("sample bundle loads")
}

pub fn mini_book() -> Rulebook {
    load_rulebook(fixture("mini")).expect("mini bundle loads")
}

/// Uncached client over the oracle mock.
pub fn mock_client(book: &Rulebook, profile: &str, seed: u64) -> LlmClient {
    let profile: MockProfile = profile.parse().expect("profile parses");
    let backend = MockBackend::new(Arc::new(book.clone()), profile, seed);
    LlmClient::new(Arc::new(backend), None, ClientConfig::default())
}

const PRONOUNS: [(&str, &str); 3] = [("我", "gou"), ("你", "mwngz"), ("他", "de")];
const VERBS: [(&str, &str); 4] = [("吃", "gwn"), ("看", "yawj"), ("买", "cawx"), ("要", "aeu")];
const NOUNS: [(&str, &str); 5] = [("饭", "haeux"), ("书", "saw"), ("肉", "noh"), ("水", "raemx"), ("鱼", "bya")];

/// Synthetic book of `n_rules` rules, each planting its own pair of marker
/// words around a pronoun-verb-noun sentence. Rule `pK` has two examples.
pub fn planted_book(n_rules: usize, seed: u64) -> Rulebook {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rules = Vec::new();
    let mut examples = Vec::new();
    for k in 1..=n_rules {
        let (head, tail) = (format!("ka{k}"), format!("kz{k}"));
        let mut program = RuleProgram::new(
            Direction::HiToLo,
            vec![
                Step::MapTokens,
                Step::Insert { token: head.clone(), position: PositionSpec::Start },
                Step::Insert { token: tail.clone(), position: PositionSpec::End },
            ],
        );
        program.segments = Vec::new();
        rules.push(GrammarRule {
            id: format!("p{k}"),
            text: format!("第{k}类句子在壮语中句首加“{head}”，句末加“{tail}”。"),
            rule_language: "zh".into(),
            actions: [ActionKind::Add].into_iter().collect(),
            difficulty: Difficulty::ALL[k % 3],
            wals_domain: WalsDomain::SimpleClauses,
            code_application: None,
            code_retrieval: None,
            program: Some(program),
        });
        for j in 1..=2 {
            let p = PRONOUNS.choose(&mut rng).unwrap();
            let v = VERBS.choose(&mut rng).unwrap();
            let n = NOUNS.choose(&mut rng).unwrap();
            let zh = format!("{}{}{}。", p.0, v.0, n.0);
            let za = format!("{} {} {} {} {}.", head, p.1, v.1, n.1, tail);
            let za = capitalize(&za);
            let lexicon: Lexicon = [p, v, n].iter().map(|(h, l)| (l.to_string(), h.to_string())).collect();
            examples.push(ParallelExample {
                id: format!("x{k}-{j}"),
                rule_ids: vec![format!("p{k}")],
                source_text: za,
                target_text: zh,
                lexicon,
                lexicon_direction: Direction::LoToHi,
                tags: Default::default(),
                igt: None,
                igt_source: None,
                granularity: Granularity::Sentence,
            });
        }
    }
    let mut manifest = BookManifest::new("planted", "za", "zh");
    manifest.source_language_name = Some("壮语".into());
    manifest.target_language_name = Some("汉语".into());
    Rulebook::new(manifest, rules, examples).expect("planted book is valid")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}
