//! Scoring responders on flattened entry lists and comparing rankings.

pub mod kendall;
pub mod prompt;
pub mod responder;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint;
use crate::model::McqEntry;

pub use kendall::{kendall_tau, tau_b};
pub use prompt::{
    letter, parse_answer, render_prompt, ExemplarBank, ParsedAnswer, PromptConfig, PromptMode,
    ALLOWED_SHOTS,
};
pub use responder::{HttpResponder, Query, Responder};

/// Decoding and transport knobs recorded in every slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub max_tokens: usize,
    pub temperature: f64,
    /// Calls per item before it is marked unanswered.
    pub attempts: usize,
    /// Concurrent responder calls.
    pub parallelism: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            max_tokens: 8,
            temperature: 0.0,
            attempts: 3,
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Correct,
    Incorrect,
    /// Output had no usable letter; counted as incorrect.
    Invalid,
    /// Transport kept failing; excluded from accuracy.
    Unanswered,
}

impl ItemStatus {
    pub fn id(self) -> &'static str {
        match self {
            ItemStatus::Correct => "correct",
            ItemStatus::Incorrect => "incorrect",
            ItemStatus::Invalid => "invalid",
            ItemStatus::Unanswered => "unanswered",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub entry_id: String,
    pub dataset: String,
    pub prompt_fingerprint: String,
    pub raw: Option<String>,
    pub parsed: Option<char>,
    pub status: ItemStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Exact counts. `accuracy` is `correct / (total - unanswered)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub total: usize,
    pub correct: usize,
    pub incorrect: usize,
    pub invalid: usize,
    pub unanswered: usize,
    pub accuracy: Option<f64>,
}

impl Tally {
    fn add(&mut self, status: ItemStatus) {
        self.total += 1;
        match status {
            ItemStatus::Correct => self.correct += 1,
            ItemStatus::Incorrect => self.incorrect += 1,
            ItemStatus::Invalid => self.invalid += 1,
            ItemStatus::Unanswered => self.unanswered += 1,
        }
        let answered = self.answered();
        self.accuracy = (answered > 0).then(|| self.correct as f64 / answered as f64);
    }

    pub fn answered(&self) -> usize {
        self.total - self.unanswered
    }
}

/// One responder on one evaluation set under one prompt configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSlice {
    pub responder: String,
    pub mode: PromptMode,
    pub k_shots: usize,
    pub prompt_seed: u64,
    pub options: EvalOptions,
    pub exemplar_fingerprint: String,
    pub overall: Tally,
    pub per_source: BTreeMap<String, Tally>,
    pub items: Vec<ItemRecord>,
}

/// All slices for one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub eval_set: String,
    /// Fingerprint of the dataset the set was drawn from; original and
    /// contrast reports are only comparable when these agree.
    pub source_fingerprint: String,
    pub set_fingerprint: String,
    #[serde(default)]
    pub config_fingerprint: Option<String>,
    pub slices: Vec<EvalSlice>,
}

impl EvalReport {
    pub fn new(
        eval_set: impl Into<String>,
        source_fingerprint: impl Into<String>,
        entries: &[McqEntry],
    ) -> Self {
        EvalReport {
            eval_set: eval_set.into(),
            source_fingerprint: source_fingerprint.into(),
            set_fingerprint: fingerprint::of(entries),
            config_fingerprint: None,
            slices: Vec::new(),
        }
    }

    /// Adds a slice, replacing any earlier one for the same
    /// (responder, mode, k).
    pub fn push(&mut self, slice: EvalSlice) {
        self.slices.retain(|s| {
            (s.responder.as_str(), s.mode, s.k_shots)
                != (slice.responder.as_str(), slice.mode, slice.k_shots)
        });
        self.slices.push(slice);
        self.slices.sort_by(|a, b| {
            (a.mode, a.k_shots, &a.responder).cmp(&(b.mode, b.k_shots, &b.responder))
        });
    }

    /// Distinct (mode, k) configurations present.
    pub fn configurations(&self) -> BTreeSet<(PromptMode, usize)> {
        self.slices.iter().map(|s| (s.mode, s.k_shots)).collect()
    }

    /// Accuracy by responder for one configuration; slices with nothing
    /// answered are left out.
    pub fn accuracies(&self, mode: PromptMode, k_shots: usize) -> BTreeMap<String, f64> {
        self.slices
            .iter()
            .filter(|s| s.mode == mode && s.k_shots == k_shots)
            .filter_map(|s| s.overall.accuracy.map(|a| (s.responder.clone(), a)))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Per-item CSV: entry id, responder, mode, k, raw, parsed, correct.
    /// `correct` is empty for unanswered items.
    pub fn write_items_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |e: csv::Error| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::InvalidDataset(format!("{other:?}")),
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["entry_id", "responder", "mode", "k", "raw", "parsed", "correct"])
            .map_err(csv_err)?;
        for s in &self.slices {
            for item in &s.items {
                let parsed = item.parsed.map(String::from).unwrap_or_default();
                let correct = match item.status {
                    ItemStatus::Unanswered => "",
                    ItemStatus::Correct => "true",
                    _ => "false",
                };
                w.write_record([
                    item.entry_id.as_str(),
                    s.responder.as_str(),
                    s.mode.id(),
                    &s.k_shots.to_string(),
                    item.raw.as_deref().unwrap_or(""),
                    &parsed,
                    correct,
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn ask(responder: &dyn Responder, query: &Query<'_>, attempts: usize) -> Result<String> {
    let mut last = None;
    for attempt in 0..attempts.max(1) {
        match responder.respond(query) {
            Ok(text) => return Ok(text),
            Err(e) => {
                log::warn!(
                    "{} on {} (attempt {}): {e}",
                    responder.id(),
                    query.entry.id,
                    attempt + 1
                );
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Scores `responder` on `entries` with exemplars from `bank`.
///
/// Prompts are rendered up front so configuration errors surface before
/// any call is made. Calls run on a bounded pool; items come back in entry
/// order regardless of completion order.
pub fn evaluate(
    entries: &[McqEntry],
    responder: &dyn Responder,
    config: &PromptConfig,
    bank: &ExemplarBank,
    options: &EvalOptions,
) -> Result<EvalSlice> {
    if bank.k_shots != config.k_shots {
        return Err(Error::Config(format!(
            "exemplar bank holds {}-shot prompts but {}-shot was requested",
            bank.k_shots, config.k_shots
        )));
    }
    let prompts = entries
        .iter()
        .map(|e| render_prompt(e, config.mode, bank.for_entry(e)?))
        .collect::<Result<Vec<_>>>()?;

    let score = |(entry, prompt): (&McqEntry, &String)| {
        let query = Query {
            prompt,
            entry,
            max_tokens: options.max_tokens,
            temperature: options.temperature,
        };
        let prompt_fingerprint = fingerprint::digest(prompt.as_bytes());
        match ask(responder, &query, options.attempts) {
            Ok(raw) => {
                let parsed = parse_answer(&raw, entry.choices.len());
                let status = match parsed.index() {
                    Some(i) if i == entry.answer_index => ItemStatus::Correct,
                    Some(_) => ItemStatus::Incorrect,
                    None => ItemStatus::Invalid,
                };
                ItemRecord {
                    entry_id: entry.id.clone(),
                    dataset: entry.dataset.clone(),
                    prompt_fingerprint,
                    raw: Some(raw),
                    parsed: parsed.index().map(|i| (b'A' + i as u8) as char),
                    status,
                    error: None,
                }
            }
            Err(e) => ItemRecord {
                entry_id: entry.id.clone(),
                dataset: entry.dataset.clone(),
                prompt_fingerprint,
                raw: None,
                parsed: None,
                status: ItemStatus::Unanswered,
                error: Some(e.to_string()),
            },
        }
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let items: Vec<ItemRecord> = pool.install(|| {
        entries
            .par_iter()
            .zip(prompts.par_iter())
            .map(score)
            .collect()
    });

    let mut overall = Tally::default();
    let mut per_source: BTreeMap<String, Tally> = BTreeMap::new();
    for item in &items {
        overall.add(item.status);
        per_source.entry(item.dataset.clone()).or_default().add(item.status);
    }
    if overall.unanswered > 0 {
        log::warn!(
            "{}: {} of {} items unanswered",
            responder.id(),
            overall.unanswered,
            overall.total
        );
    }
    Ok(EvalSlice {
        responder: responder.id().to_string(),
        mode: config.mode,
        k_shots: config.k_shots,
        prompt_seed: config.seed,
        options: *options,
        exemplar_fingerprint: fingerprint::of(bank),
        overall,
        per_source,
        items,
    })
}

/// Published full-prompt tau values between the original and mined sets,
/// printed next to ours for context only.
pub fn reference_tau(mode: PromptMode, k_shots: usize) -> Option<f64> {
    match (mode, k_shots) {
        (PromptMode::Full, 3) => Some(0.88),
        (PromptMode::Full, 5) => Some(0.88),
        (PromptMode::Full, 10) => Some(0.91),
        _ => None,
    }
}

/// Competition ranks: 1 + number of strictly higher scores.
pub fn competition_ranks(scores: &BTreeMap<String, f64>) -> BTreeMap<String, usize> {
    scores
        .iter()
        .map(|(k, v)| (k.clone(), 1 + scores.values().filter(|o| *o > v).count()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyOptions {
    /// A responder is flagged when its rank worsens by more than this.
    pub max_drop: usize,
    /// Compare reports even when their source fingerprints differ.
    pub force: bool,
}

impl Default for ConsistencyOptions {
    fn default() -> Self {
        ConsistencyOptions {
            max_drop: 1,
            force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDelta {
    pub responder: String,
    pub original_accuracy: f64,
    pub contrast_accuracy: f64,
    pub original_rank: usize,
    pub contrast_rank: usize,
    /// Positive when the contrast rank is worse.
    pub drop: i64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyGroup {
    pub mode: PromptMode,
    pub k_shots: usize,
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_note: Option<String>,
    pub reference_tau: Option<f64>,
    pub deltas: Vec<RankDelta>,
}

impl ConsistencyGroup {
    pub fn flagged(&self) -> impl Iterator<Item = &RankDelta> {
        self.deltas.iter().filter(|d| d.flagged)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub original_set: String,
    pub contrast_set: String,
    pub max_drop: usize,
    pub groups: Vec<ConsistencyGroup>,
}

impl ConsistencyReport {
    pub fn group(&self, mode: PromptMode, k_shots: usize) -> Option<&ConsistencyGroup> {
        self.groups
            .iter()
            .find(|g| g.mode == mode && g.k_shots == k_shots)
    }
}

/// Compares responder rankings between an original and a contrast report
/// for every (mode, k) both contain, over the responders both contain.
pub fn rank_consistency_report(
    original: &EvalReport,
    contrast: &EvalReport,
    options: &ConsistencyOptions,
) -> Result<ConsistencyReport> {
    if original.source_fingerprint != contrast.source_fingerprint {
        let msg = format!(
            "`{}` comes from {} but `{}` from {}",
            original.eval_set,
            original.source_fingerprint,
            contrast.eval_set,
            contrast.source_fingerprint
        );
        if !options.force {
            return Err(Error::FingerprintMismatch(msg));
        }
        log::warn!("{msg}; comparing anyway");
    }
    let mut groups = Vec::new();
    for (mode, k) in original.configurations() {
        if !contrast.configurations().contains(&(mode, k)) {
            continue;
        }
        let mut a = original.accuracies(mode, k);
        let mut b = contrast.accuracies(mode, k);
        a.retain(|r, _| b.contains_key(r));
        b.retain(|r, _| a.contains_key(r));
        if a.is_empty() {
            continue;
        }
        let (tau, tau_note) = match kendall_tau(&a, &b) {
            Ok(t) => (Some(t), None),
            Err(Error::UndefinedTau(why)) => (None, Some(why)),
            Err(e) => return Err(e),
        };
        let ra = competition_ranks(&a);
        let rb = competition_ranks(&b);
        let deltas = a
            .keys()
            .map(|r| {
                let drop = rb[r] as i64 - ra[r] as i64;
                RankDelta {
                    responder: r.clone(),
                    original_accuracy: a[r],
                    contrast_accuracy: b[r],
                    original_rank: ra[r],
                    contrast_rank: rb[r],
                    drop,
                    flagged: drop > options.max_drop as i64,
                }
            })
            .collect();
        groups.push(ConsistencyGroup {
            mode,
            k_shots: k,
            tau,
            tau_note,
            reference_tau: reference_tau(mode, k),
            deltas,
        });
    }
    if groups.is_empty() {
        return Err(Error::MismatchedKeys(
            "no responder and prompt configuration appears in both reports".into(),
        ));
    }
    Ok(ConsistencyReport {
        original_set: original.eval_set.clone(),
        contrast_set: contrast.eval_set.clone(),
        max_drop: options.max_drop,
        groups,
    })
}
