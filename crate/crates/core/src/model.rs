//! Domain types shared by every pipeline stage.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint;
use crate::similarity::normalize;

pub const MIN_CHOICES: usize = 2;
pub const MAX_CHOICES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// One multiple-choice item with exactly one gold answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqEntry {
    pub id: String,
    /// Source dataset tag, e.g. `commonsenseqa`.
    pub dataset: String,
    pub question: String,
    pub choices: Vec<String>,
    pub answer_index: usize,
    pub split: Split,
}

impl McqEntry {
    /// The gold answer text. Panics if `answer_index` is out of range; call
    /// [`validate_entry`] first on untrusted input.
    pub fn gold(&self) -> &str {
        &self.choices[self.answer_index]
    }

    /// Every choice except the gold answer, with its position.
    pub fn distractors(&self) -> impl Iterator<Item = (usize, &str)> {
        let gold = self.answer_index;
        self.choices
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != gold)
            .map(|(i, c)| (i, c.as_str()))
    }
}

/// A broken [`McqEntry`] invariant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Violation {
    EmptyId,
    EmptyDataset,
    EmptyQuestion,
    TooFewChoices(usize),
    TooManyChoices(usize),
    EmptyChoice(usize),
    AnswerOutOfRange,
    DuplicateChoice(usize, usize),
}

impl Violation {
    pub fn field(&self) -> &'static str {
        match self {
            Violation::EmptyId => "id",
            Violation::EmptyDataset => "dataset",
            Violation::EmptyQuestion => "question",
            Violation::TooFewChoices(_)
            | Violation::TooManyChoices(_)
            | Violation::EmptyChoice(_)
            | Violation::DuplicateChoice(..) => "choices",
            Violation::AnswerOutOfRange => "answer_index",
        }
    }

    /// Stable short label used as a key in drop reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Violation::EmptyId => "empty id",
            Violation::EmptyDataset => "empty dataset tag",
            Violation::EmptyQuestion => "empty question",
            Violation::TooFewChoices(_) => "too few choices",
            Violation::TooManyChoices(_) => "too many choices",
            Violation::EmptyChoice(_) => "empty choice",
            Violation::AnswerOutOfRange => "answer_index out of range",
            Violation::DuplicateChoice(..) => "duplicate choice",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind())
    }
}

/// Checks every [`McqEntry`] invariant and reports all that fail. An empty
/// list means the entry is well formed.
pub fn validate_entry(entry: &McqEntry) -> Vec<Violation> {
    let mut out = Vec::new();
    if entry.id.trim().is_empty() {
        out.push(Violation::EmptyId);
    }
    if entry.dataset.trim().is_empty() {
        out.push(Violation::EmptyDataset);
    }
    if entry.question.trim().is_empty() {
        out.push(Violation::EmptyQuestion);
    }
    let n = entry.choices.len();
    if n < MIN_CHOICES {
        out.push(Violation::TooFewChoices(n));
    }
    if n > MAX_CHOICES {
        out.push(Violation::TooManyChoices(n));
    }
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (i, choice) in entry.choices.iter().enumerate() {
        if choice.trim().is_empty() {
            out.push(Violation::EmptyChoice(i));
            continue;
        }
        if let Some(&first) = seen.get(&normalize(choice)) {
            out.push(Violation::DuplicateChoice(first, i));
        } else {
            seen.insert(normalize(choice), i);
        }
    }
    if entry.answer_index >= n {
        out.push(Violation::AnswerOutOfRange);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub entries: Vec<McqEntry>,
}

impl Dataset {
    /// Builds a dataset, rejecting empty input, duplicate ids and invalid entries.
    pub fn new(name: impl Into<String>, entries: Vec<McqEntry>) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            entries,
        };
        ds.check()?;
        Ok(ds)
    }

    pub fn check(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::EmptyDataset(self.name.clone()));
        }
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate id `{}`", e.id)));
            }
            let violations = validate_entry(e);
            if !violations.is_empty() {
                let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
                return Err(Error::InvalidDataset(format!(
                    "entry `{}`: {}",
                    e.id,
                    list.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&McqEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn index(&self) -> BTreeMap<&str, &McqEntry> {
        self.entries.iter().map(|e| (e.id.as_str(), e)).collect()
    }

    /// Content hash over the dataset name and its entries in stored order.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("dataset serializes");
        fingerprint::digest(&bytes)
    }
}

/// How one gold answer matched a distractor of the other entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessMatch {
    pub gold: String,
    pub distractor: String,
    pub cosine: f64,
}

/// Two derived two-choice entries sharing one ordered choice list, each
/// choice gold in exactly one of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryPair {
    pub pair_id: String,
    pub first: McqEntry,
    pub second: McqEntry,
    pub source_ids: (String, String),
    /// Present for mined pairs: (first's gold ~ second's distractor,
    /// second's gold ~ first's distractor).
    pub witnesses: Option<(WitnessMatch, WitnessMatch)>,
}

impl EntryPair {
    pub fn edge_similarity(&self) -> Option<(f64, f64)> {
        self.witnesses
            .as_ref()
            .map(|(a, b)| (a.cosine, b.cosine))
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let id = &self.pair_id;
        if self.first.choices != self.second.choices {
            out.push(format!("pair {id}: choice lists differ"));
        }
        if self.first.choices.len() != 2 || self.second.choices.len() != 2 {
            out.push(format!("pair {id}: entries must have exactly 2 choices"));
        }
        if self.first.answer_index == self.second.answer_index {
            out.push(format!("pair {id}: both entries share the same gold position"));
        }
        if self.first.question == self.second.question {
            out.push(format!("pair {id}: both entries share the same question"));
        }
        if self.first.id != format!("{id}#0") || self.second.id != format!("{id}#1") {
            out.push(format!("pair {id}: derived ids must be `{id}#0` and `{id}#1`"));
        }
        for e in [&self.first, &self.second] {
            for v in validate_entry(e) {
                out.push(format!("pair {id}: entry {}: {v}", e.id));
            }
        }
        if let Some((a, b)) = &self.witnesses {
            for c in [a.cosine, b.cosine] {
                if !(-1.0..=1.0).contains(&c) {
                    out.push(format!("pair {id}: witness cosine {c} outside [-1, 1]"));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_dataset: String,
    pub source_fingerprint: String,
    /// Similarity backend id, or `none` for the random baseline.
    pub similarity_backend: String,
    pub threshold: Option<f64>,
    /// Matching solver id, or `random_baseline`.
    pub solver: String,
    pub seed: u64,
    #[serde(default)]
    pub config_fingerprint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSet {
    pub pairs: Vec<EntryPair>,
    pub provenance: Provenance,
}

impl ContrastSet {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut questions = HashSet::new();
        let mut pair_ids = HashSet::new();
        for pair in &self.pairs {
            out.extend(pair.violations());
            if !pair_ids.insert(pair.pair_id.as_str()) {
                out.push(format!("duplicate pair id `{}`", pair.pair_id));
            }
            for e in [&pair.first, &pair.second] {
                if !questions.insert(e.question.as_str()) {
                    out.push(format!("question of `{}` appears more than once", e.id));
                }
            }
        }
        out
    }

    pub fn question_count(&self) -> usize {
        2 * self.pairs.len()
    }
}

/// Lays the pairs out as plain entries: pairs in stored order, first then second.
pub fn flatten(contrast: &ContrastSet) -> Result<Vec<McqEntry>> {
    let violations = contrast.violations();
    if !violations.is_empty() {
        return Err(Error::InvalidContrastSet(violations));
    }
    Ok(contrast
        .pairs
        .iter()
        .flat_map(|p| [p.first.clone(), p.second.clone()])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(choices: &[&str], answer: usize) -> McqEntry {
        McqEntry {
            id: "t:1".into(),
            dataset: "t".into(),
            question: "What helps flowers grow?".into(),
            choices: choices.iter().map(|s| s.to_string()).collect(),
            answer_index: answer,
            split: Split::Eval,
        }
    }

    #[test]
    fn answer_index_at_len_is_out_of_range() {
        let e = entry(&["the sun", "rain"], 2);
        let v: Vec<String> = validate_entry(&e).iter().map(|v| v.to_string()).collect();
        assert_eq!(v, vec!["answer_index out of range"]);
        assert_eq!(validate_entry(&e)[0].field(), "answer_index");
    }

    #[test]
    fn well_formed_entry_has_no_violations() {
        let e = entry(&["sun", "rain", "wind", "snow"], 1);
        assert!(validate_entry(&e).is_empty());
    }

    #[test]
    fn identical_choices_are_duplicates() {
        let e = entry(&["rain", "rain"], 0);
        let v: Vec<String> = validate_entry(&e).iter().map(|v| v.to_string()).collect();
        assert_eq!(v, vec!["duplicate choice"]);
        // normalization makes these collide too
        let e = entry(&["Rain.", "  rain"], 0);
        assert_eq!(validate_entry(&e), vec![Violation::DuplicateChoice(0, 1)]);
    }

    #[test]
    fn choice_count_bounds() {
        let e = entry(&["rain"], 0);
        assert_eq!(validate_entry(&e), vec![Violation::TooFewChoices(1)]);
        let many: Vec<String> = (0..9).map(|i| format!("c{i}")).collect();
        let refs: Vec<&str> = many.iter().map(|s| s.as_str()).collect();
        assert_eq!(validate_entry(&entry(&refs, 0)), vec![Violation::TooManyChoices(9)]);
    }

    #[test]
    fn empty_question_reported() {
        let mut e = entry(&["a", "b"], 0);
        e.question = "   ".into();
        assert_eq!(validate_entry(&e), vec![Violation::EmptyQuestion]);
    }

    #[test]
    fn dataset_rejects_duplicate_ids_and_empty() {
        let e = entry(&["a", "b"], 0);
        assert!(Dataset::new("d", vec![e.clone(), e.clone()]).is_err());
        assert!(matches!(Dataset::new("d", vec![]), Err(Error::EmptyDataset(_))));
        assert!(Dataset::new("d", vec![e]).is_ok());
    }

    fn pair(id: &str, q1: &str, q2: &str) -> EntryPair {
        let choices = vec!["the sun".to_string(), "the rain".to_string()];
        let mk = |suffix: &str, q: &str, a: usize| McqEntry {
            id: format!("{id}#{suffix}"),
            dataset: "t".into(),
            question: q.into(),
            choices: choices.clone(),
            answer_index: a,
            split: Split::Eval,
        };
        EntryPair {
            pair_id: id.into(),
            first: mk("0", q1, 0),
            second: mk("1", q2, 1),
            source_ids: ("t:1".into(), "t:2".into()),
            witnesses: None,
        }
    }

    fn provenance() -> Provenance {
        Provenance {
            source_dataset: "t".into(),
            source_fingerprint: "f".into(),
            similarity_backend: "exact".into(),
            threshold: Some(0.85),
            solver: "blossom_exact".into(),
            seed: 0,
            config_fingerprint: None,
        }
    }

    #[test]
    fn flatten_empty_set() {
        let cs = ContrastSet {
            pairs: vec![],
            provenance: provenance(),
        };
        assert!(flatten(&cs).unwrap().is_empty());
    }

    #[test]
    fn flatten_one_pair_shares_choices() {
        let cs = ContrastSet {
            pairs: vec![pair("p0", "What can you see in the sky?", "What helps flowers grow?")],
            provenance: provenance(),
        };
        let flat = flatten(&cs).unwrap();
        assert_eq!(flat.len(), 2);
        assert_eq!(flat[0].choices, flat[1].choices);
        assert_eq!(flat[0].id, "p0#0");
        assert_eq!(flat[1].id, "p0#1");
    }

    #[test]
    fn flatten_410_pairs_gives_820_entries() {
        let pairs = (0..410)
            .map(|i| pair(&format!("p{i}"), &format!("q{i}a"), &format!("q{i}b")))
            .collect();
        let cs = ContrastSet {
            pairs,
            provenance: provenance(),
        };
        assert_eq!(flatten(&cs).unwrap().len(), 820);
        assert_eq!(cs.question_count(), 820);
    }

    #[test]
    fn flatten_aborts_on_repeated_question() {
        let cs = ContrastSet {
            pairs: vec![pair("p0", "same?", "other?"), pair("p1", "same?", "third?")],
            provenance: provenance(),
        };
        match flatten(&cs) {
            Err(Error::InvalidContrastSet(v)) => assert_eq!(v.len(), 1),
            other => panic!("expected violation, got {other:?}"),
        }
    }

    #[test]
    fn pair_with_same_gold_position_is_invalid() {
        let mut p = pair("p0", "a?", "b?");
        p.second.answer_index = 0;
        assert_eq!(p.violations().len(), 1);
    }
}
