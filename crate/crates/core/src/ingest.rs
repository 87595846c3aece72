//! Reading and writing datasets.
//!
//! Two input formats are understood:
//!
//! * `canonical_jsonl`: one JSON object per line with exactly the fields
//!   `id` (optional string), `dataset`, `question`, `choices`, `answer_index`.
//! * `unified_text`: one record per line, `INPUT<TAB>ANSWER`. `INPUT` is the
//!   question, the two-character sequence `\n` (backslash, n), then the
//!   choices written as `(A) first (B) second ...` with consecutive capital
//!   letters from `A`. Further `\n` segments after the choices (passages,
//!   context) are ignored. `ANSWER` is the gold answer text; it must equal
//!   one choice after normalization or the record is dropped.
//!
//! Records without an id get `<dataset>:<line number>`. Entries repeating an
//! earlier question text are dropped, first occurrence wins.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_entry, Dataset, McqEntry, Split};
use crate::similarity::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    CanonicalJsonl,
    UnifiedText,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical_jsonl" | "jsonl" => Ok(Format::CanonicalJsonl),
            "unified_text" | "unified" => Ok(Format::UnifiedText),
            other => Err(Error::Config(format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub path: PathBuf,
    pub format: Format,
    pub dataset_name: String,
    pub split: Split,
}

/// Why records were dropped, and what was kept per source tag.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReport {
    pub total_records: usize,
    pub kept: usize,
    /// Dropped record count by first failing rule.
    pub dropped: BTreeMap<String, usize>,
    /// Kept entries per source dataset tag.
    pub per_dataset: BTreeMap<String, usize>,
}

impl DropReport {
    pub fn dropped_total(&self) -> usize {
        self.dropped.values().sum()
    }

    fn drop(&mut self, reason: &str) {
        *self.dropped.entry(reason.to_string()).or_default() += 1;
    }

    pub fn merge(&mut self, other: &DropReport) {
        self.total_records += other.total_records;
        self.kept += other.kept;
        for (k, v) in &other.dropped {
            *self.dropped.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.per_dataset {
            *self.per_dataset.entry(k.clone()).or_default() += v;
        }
    }
}

/// On-disk record of the canonical format.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub dataset: String,
    pub question: String,
    pub choices: Vec<String>,
    pub answer_index: i64,
}

impl From<&McqEntry> for CanonicalRecord {
    fn from(e: &McqEntry) -> Self {
        CanonicalRecord {
            id: Some(e.id.clone()),
            dataset: e.dataset.clone(),
            question: e.question.clone(),
            choices: e.choices.clone(),
            answer_index: e.answer_index as i64,
        }
    }
}

/// A parsed record that still has to pass validation.
enum Parsed {
    Entry(McqEntry),
    Dropped(&'static str),
}

fn parse_canonical(
    line: &str,
    lineno: usize,
    config: &IngestConfig,
) -> std::result::Result<Parsed, String> {
    let rec: CanonicalRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if rec.answer_index < 0 {
        return Ok(Parsed::Dropped("answer_index out of range"));
    }
    let id = rec
        .id
        .unwrap_or_else(|| format!("{}:{lineno}", config.dataset_name));
    Ok(Parsed::Entry(McqEntry {
        id,
        dataset: rec.dataset,
        question: rec.question,
        choices: rec.choices,
        answer_index: rec.answer_index as usize,
        split: config.split,
    }))
}

const UNIFIED_SEPARATOR: &str = "\\n";

/// Splits `(A) x (B) y ...` into choice texts.
pub fn split_lettered_choices(text: &str) -> Option<Vec<String>> {
    let text = text.trim();
    let mut rest = text.strip_prefix("(A)")?;
    let mut out = Vec::new();
    for letter in 'B'..='Z' {
        let marker = format!("({letter})");
        // the next marker must be preceded by whitespace
        let next = rest
            .match_indices(&marker)
            .find(|(i, _)| *i > 0 && rest[..*i].ends_with(char::is_whitespace))
            .map(|(i, _)| i);
        match next {
            Some(i) => {
                out.push(rest[..i].trim().to_string());
                rest = &rest[i + marker.len()..];
            }
            None => break,
        }
    }
    out.push(rest.trim().to_string());
    Some(out)
}

fn parse_unified(
    line: &str,
    lineno: usize,
    config: &IngestConfig,
) -> std::result::Result<Parsed, String> {
    let (input, answer) = line
        .split_once('\t')
        .ok_or_else(|| "expected INPUT<TAB>ANSWER".to_string())?;
    let mut segments = input.split(UNIFIED_SEPARATOR);
    let question = segments.next().unwrap_or_default().trim().to_string();
    let choice_text = segments
        .next()
        .ok_or_else(|| "missing `\\n` between question and choices".to_string())?;
    let choices = split_lettered_choices(choice_text)
        .ok_or_else(|| "choices must start with `(A)`".to_string())?;
    let wanted = normalize(answer);
    let Some(answer_index) = choices.iter().position(|c| normalize(c) == wanted) else {
        return Ok(Parsed::Dropped("answer not among choices"));
    };
    Ok(Parsed::Entry(McqEntry {
        id: format!("{}:{lineno}", config.dataset_name),
        dataset: config.dataset_name.clone(),
        question,
        choices,
        answer_index,
        split: config.split,
    }))
}

/// Keeps valid entries with fresh ids and unseen question texts.
struct Collector {
    entries: Vec<McqEntry>,
    ids: HashSet<String>,
    questions: HashSet<String>,
    report: DropReport,
}

impl Collector {
    fn new() -> Self {
        Collector {
            entries: Vec::new(),
            ids: HashSet::new(),
            questions: HashSet::new(),
            report: DropReport::default(),
        }
    }

    fn offer(&mut self, entry: McqEntry) {
        self.report.total_records += 1;
        if let Some(v) = validate_entry(&entry).first() {
            self.report.drop(v.kind());
            return;
        }
        if self.ids.contains(&entry.id) {
            self.report.drop("duplicate id");
            return;
        }
        if self.questions.contains(&entry.question) {
            log::debug!("dropping {}: question already seen", entry.id);
            self.report.drop("duplicate question");
            return;
        }
        self.ids.insert(entry.id.clone());
        self.questions.insert(entry.question.clone());
        self.report.kept += 1;
        *self.report.per_dataset.entry(entry.dataset.clone()).or_default() += 1;
        self.entries.push(entry);
    }

    fn finish(self, name: String) -> Result<(Dataset, DropReport)> {
        if self.entries.is_empty() {
            return Err(Error::EmptyDataset(name));
        }
        if self.report.dropped_total() > 0 {
            log::info!("{name}: dropped {:?}", self.report.dropped);
        }
        Ok((
            Dataset {
                name,
                entries: self.entries,
            },
            self.report,
        ))
    }
}

pub fn load_dataset(config: &IngestConfig) -> Result<(Dataset, DropReport)> {
    let path = &config.path;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut collector = Collector::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match config.format {
            Format::CanonicalJsonl => parse_canonical(&line, lineno, config),
            Format::UnifiedText => parse_unified(&line, lineno, config),
        }
        .map_err(|reason| Error::Malformed {
            path: path.clone(),
            line: lineno,
            reason,
        })?;
        match parsed {
            Parsed::Entry(e) => collector.offer(e),
            Parsed::Dropped(reason) => {
                collector.report.total_records += 1;
                collector.report.drop(reason);
            }
        }
    }
    collector.finish(config.dataset_name.clone())
}

/// Pools several datasets under one name, dropping repeated ids and
/// repeated question texts across sources.
pub fn combine(name: &str, parts: Vec<Dataset>) -> Result<(Dataset, DropReport)> {
    let mut collector = Collector::new();
    for part in parts {
        for e in part.entries {
            collector.offer(e);
        }
    }
    collector.finish(name.to_string())
}

pub fn write_entries(entries: &[McqEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        serde_json::to_writer(&mut w, &CanonicalRecord::from(e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the canonical format, one record per line, ids always present.
pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    dataset.check()?;
    write_entries(&dataset.entries, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(path: &Path, format: Format) -> IngestConfig {
        IngestConfig {
            path: path.to_path_buf(),
            format,
            dataset_name: "fig".into(),
            split: Split::Eval,
        }
    }

    #[test]
    fn canonical_line_gives_one_entry() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(
            &p,
            r#"{"id":"x1","dataset":"arc","question":"What helps flowers grow?","choices":["the sun","rain"],"answer_index":1}"#,
        )
        .unwrap();
        let (ds, report) = load_dataset(&config(&p, Format::CanonicalJsonl)).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.entries[0].id, "x1");
        assert_eq!(ds.entries[0].dataset, "arc");
        assert_eq!(ds.entries[0].gold(), "rain");
        assert_eq!(report.kept, 1);
        assert_eq!(report.per_dataset["arc"], 1);
    }

    #[test]
    fn missing_id_is_derived_from_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(
            &p,
            "\n{\"dataset\":\"arc\",\"question\":\"q?\",\"choices\":[\"a\",\"b\"],\"answer_index\":0}\n",
        )
        .unwrap();
        let (ds, _) = load_dataset(&config(&p, Format::CanonicalJsonl)).unwrap();
        assert_eq!(ds.entries[0].id, "fig:2");
    }

    #[test]
    fn unknown_field_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(
            &p,
            "{\"dataset\":\"a\",\"question\":\"q\",\"choices\":[\"a\",\"b\"],\"answer_index\":0,\"extra\":1}\n",
        )
        .unwrap();
        assert!(matches!(
            load_dataset(&config(&p, Format::CanonicalJsonl)),
            Err(Error::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn unified_record_matches_answer_text() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.tsv");
        std::fs::write(&p, "What helps flowers grow? \\n (A) the sun (B) rain\train\n").unwrap();
        let (ds, _) = load_dataset(&config(&p, Format::UnifiedText)).unwrap();
        let e = &ds.entries[0];
        assert_eq!(e.question, "What helps flowers grow?");
        assert_eq!(e.choices, vec!["the sun", "rain"]);
        assert_eq!(e.answer_index, 1);
        assert_eq!(e.id, "fig:1");
    }

    #[test]
    fn unified_answer_matched_after_normalization_and_context_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.tsv");
        std::fs::write(
            &p,
            "Pick one \\n (A) Red Apple (B) pear (C) a (b) thing \\n some context\tred apple.\n",
        )
        .unwrap();
        let (ds, _) = load_dataset(&config(&p, Format::UnifiedText)).unwrap();
        assert_eq!(ds.entries[0].choices, vec!["Red Apple", "pear", "a (b) thing"]);
        assert_eq!(ds.entries[0].answer_index, 0);
    }

    #[test]
    fn unified_unknown_answer_is_dropped_not_guessed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.tsv");
        std::fs::write(
            &p,
            "q1 \\n (A) x (B) y\tz\nq2 \\n (A) x (B) y\ty\n",
        )
        .unwrap();
        let (ds, report) = load_dataset(&config(&p, Format::UnifiedText)).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(report.dropped["answer not among choices"], 1);
        assert_eq!(report.kept + report.dropped_total(), report.total_records);
    }

    #[test]
    fn unified_structure_errors_carry_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.tsv");
        std::fs::write(&p, "q \\n (A) x (B) y\tx\nno tab here\n").unwrap();
        match load_dataset(&config(&p, Format::UnifiedText)) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "q (A) x (B) y\tx\n").unwrap();
        assert!(matches!(
            load_dataset(&config(&p, Format::UnifiedText)),
            Err(Error::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_questions_first_wins() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.tsv");
        std::fs::write(&p, "q \\n (A) x (B) y\tx\nq \\n (A) z (B) w\tw\n").unwrap();
        let (ds, report) = load_dataset(&config(&p, Format::UnifiedText)).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.entries[0].choices, vec!["x", "y"]);
        assert_eq!(report.dropped["duplicate question"], 1);
    }

    #[test]
    fn invalid_records_are_counted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let lines = [
            r#"{"dataset":"a","question":"q1","choices":["x","y"],"answer_index":2}"#,
            r#"{"dataset":"a","question":"q2","choices":["x","X."],"answer_index":0}"#,
            r#"{"dataset":"a","question":"q3","choices":["x","y"],"answer_index":-1}"#,
            r#"{"dataset":"a","question":"q4","choices":["x","y"],"answer_index":1}"#,
        ];
        std::fs::write(&p, lines.join("\n")).unwrap();
        let (ds, report) = load_dataset(&config(&p, Format::CanonicalJsonl)).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(report.total_records, 4);
        assert_eq!(report.dropped["answer_index out of range"], 2);
        assert_eq!(report.dropped["duplicate choice"], 1);
    }

    #[test]
    fn zero_valid_entries_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(
            &p,
            r#"{"dataset":"a","question":"q1","choices":["x"],"answer_index":0}"#,
        )
        .unwrap();
        assert!(matches!(
            load_dataset(&config(&p, Format::CanonicalJsonl)),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn unreadable_file() {
        let cfg = config(Path::new("/nonexistent/x.jsonl"), Format::CanonicalJsonl);
        assert!(matches!(load_dataset(&cfg), Err(Error::Io { .. })));
    }

    #[test]
    fn write_one_entry_one_line_and_reject_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.jsonl");
        let e = McqEntry {
            id: "a:1".into(),
            dataset: "a".into(),
            question: "q".into(),
            choices: vec!["x".into(), "y".into()],
            answer_index: 0,
            split: Split::Train,
        };
        let ds = Dataset::new("a", vec![e]).unwrap();
        write_dataset(&ds, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 1);
        let empty = Dataset {
            name: "a".into(),
            entries: vec![],
        };
        assert!(write_dataset(&empty, &p).is_err());
    }

    #[test]
    fn combine_dedups_across_sources() {
        let mk = |id: &str, tag: &str, q: &str| McqEntry {
            id: id.into(),
            dataset: tag.into(),
            question: q.into(),
            choices: vec!["x".into(), "y".into()],
            answer_index: 0,
            split: Split::Eval,
        };
        let a = Dataset::new("a", vec![mk("a:1", "a", "shared"), mk("a:2", "a", "only a")]).unwrap();
        let b = Dataset::new("b", vec![mk("b:1", "b", "shared"), mk("b:2", "b", "only b")]).unwrap();
        let (pool, report) = combine("pool", vec![a, b]).unwrap();
        assert_eq!(pool.len(), 3);
        assert_eq!(report.per_dataset["a"], 2);
        assert_eq!(report.per_dataset["b"], 1);
    }
}
