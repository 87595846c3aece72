//! Settings from an optional TOML file, overridden by command-line flags.
//!
//! ```toml
//! [similarity]
//! provider = "trigram"      # trigram | exact | remote
//! threshold = 0.85
//! endpoint = "http://127.0.0.1:8089"
//! cache = "embeddings.jsonl"
//!
//! [matching]
//! solver = "blossom"        # blossom | greedy | brute
//! seed = 0
//!
//! [eval]
//! modes = ["full", "choices_only"]
//! shots = [5]
//! prompt_seed = 0
//! max_tokens = 8
//! temperature = 0.0
//! attempts = 3
//! parallelism = 4
//!
//! [report]
//! max_drop = 1
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use contrast_core::eval::{EvalOptions, PromptMode};
use contrast_core::matching::Solver;
use contrast_core::similarity::DEFAULT_THRESHOLD;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    Trigram,
    Exact,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimilaritySection {
    pub provider: Provider,
    pub threshold: f64,
    pub endpoint: Option<String>,
    pub cache: Option<PathBuf>,
    pub normalize: bool,
    pub batch_size: usize,
}

impl Default for SimilaritySection {
    fn default() -> Self {
        SimilaritySection {
            provider: Provider::Trigram,
            threshold: DEFAULT_THRESHOLD,
            endpoint: None,
            cache: None,
            normalize: true,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchingSection {
    pub solver: Solver,
    pub seed: u64,
}

impl Default for MatchingSection {
    fn default() -> Self {
        MatchingSection {
            solver: Solver::BlossomExact,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub modes: Vec<PromptMode>,
    pub shots: Vec<usize>,
    pub prompt_seed: u64,
    pub max_tokens: usize,
    pub temperature: f64,
    pub attempts: usize,
    pub parallelism: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let o = EvalOptions::default();
        EvalSection {
            modes: vec![PromptMode::Full, PromptMode::ChoicesOnly],
            shots: vec![5],
            prompt_seed: 0,
            max_tokens: o.max_tokens,
            temperature: o.temperature,
            attempts: o.attempts,
            parallelism: o.parallelism,
        }
    }
}

impl EvalSection {
    pub fn options(&self) -> EvalOptions {
        EvalOptions {
            max_tokens: self.max_tokens,
            temperature: self.temperature,
            attempts: self.attempts,
            parallelism: self.parallelism,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    pub max_drop: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection { max_drop: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub similarity: SimilaritySection,
    pub matching: MatchingSection,
    pub eval: EvalSection,
    pub report: ReportSection,
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| contrast_core::Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| contrast_core::Error::Config(format!("{}: {e}", path.display())))
            .context("reading configuration")
    }
}
