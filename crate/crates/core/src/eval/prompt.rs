//! Few-shot prompt rendering and answer parsing.
//!
//! A block in full mode reads
//!
//! ```text
//! Question: <question>
//! Choices:
//! (A) <choice>
//! (B) <choice>
//! Answer: (B)
//! ```
//!
//! Choices-only mode drops the `Question:` line. Exemplar blocks carry their
//! gold letter after `Answer:`; the target block ends at `Answer:`. Blocks
//! are separated by one blank line.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, McqEntry, Split};

pub const ALLOWED_SHOTS: [usize; 3] = [3, 5, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Full,
    ChoicesOnly,
}

impl PromptMode {
    pub fn id(self) -> &'static str {
        match self {
            PromptMode::Full => "full",
            PromptMode::ChoicesOnly => "choices_only",
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl std::str::FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(PromptMode::Full),
            "choices_only" | "choices-only" => Ok(PromptMode::ChoicesOnly),
            other => Err(Error::Config(format!("unknown prompt mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub mode: PromptMode,
    pub k_shots: usize,
    pub seed: u64,
}

impl PromptConfig {
    pub fn new(mode: PromptMode, k_shots: usize, seed: u64) -> Result<Self> {
        if !ALLOWED_SHOTS.contains(&k_shots) {
            return Err(Error::Config(format!(
                "{k_shots}-shot prompts are not supported; use one of {ALLOWED_SHOTS:?}"
            )));
        }
        Ok(PromptConfig { mode, k_shots, seed })
    }
}

pub fn letter(index: usize) -> Result<char> {
    if index >= 26 {
        return Err(Error::TooManyChoices(index + 1));
    }
    Ok((b'A' + index as u8) as char)
}

fn render_block(out: &mut String, entry: &McqEntry, mode: PromptMode, gold: bool) -> Result<()> {
    if entry.choices.len() > 26 {
        return Err(Error::TooManyChoices(entry.choices.len()));
    }
    if mode == PromptMode::Full {
        out.push_str("Question: ");
        out.push_str(&entry.question);
        out.push('\n');
    }
    out.push_str("Choices:");
    for (i, c) in entry.choices.iter().enumerate() {
        out.push_str("\n(");
        out.push(letter(i)?);
        out.push_str(") ");
        out.push_str(c);
    }
    out.push_str("\nAnswer:");
    if gold {
        out.push_str(" (");
        out.push(letter(entry.answer_index)?);
        out.push(')');
    }
    Ok(())
}

/// Exemplar blocks with their gold letters, then the open target block.
pub fn render_prompt(entry: &McqEntry, mode: PromptMode, exemplars: &[McqEntry]) -> Result<String> {
    let mut out = String::new();
    for ex in exemplars {
        render_block(&mut out, ex, mode, true)?;
        out.push_str("\n\n");
    }
    render_block(&mut out, entry, mode, false)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParsedAnswer {
    Choice(usize),
    Invalid,
}

impl ParsedAnswer {
    pub fn index(self) -> Option<usize> {
        match self {
            ParsedAnswer::Choice(i) => Some(i),
            ParsedAnswer::Invalid => None,
        }
    }
}

/// Reads the answer letter at the start of a completion.
///
/// Leading whitespace is skipped, then one of `(X)`, `X)` or a bare `X`
/// followed by end of text, whitespace or punctuation, where `X` is a
/// capital letter. Anything else, or a letter past the last choice, is
/// [`ParsedAnswer::Invalid`].
pub fn parse_answer(raw: &str, n_choices: usize) -> ParsedAnswer {
    let s = raw.trim_start();
    let mut chars = s.chars();
    let letter = match chars.next() {
        Some('(') => match (chars.next(), chars.next()) {
            (Some(c @ 'A'..='Z'), Some(')')) => Some(c),
            _ => None,
        },
        Some(c @ 'A'..='Z') => match chars.next() {
            None => Some(c),
            Some(next) if next == ')' || next.is_whitespace() || next.is_ascii_punctuation() => {
                Some(c)
            }
            _ => None,
        },
        _ => None,
    };
    match letter {
        Some(c) if ((c as u8 - b'A') as usize) < n_choices => {
            ParsedAnswer::Choice((c as u8 - b'A') as usize)
        }
        _ => ParsedAnswer::Invalid,
    }
}

fn tag_seed(seed: u64, tag: &str) -> u64 {
    tag.bytes().fold(seed ^ 0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Fixed exemplars per source dataset, reused for every evaluated set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarBank {
    pub k_shots: usize,
    pub seed: u64,
    pub by_source: BTreeMap<String, Vec<McqEntry>>,
}

impl ExemplarBank {
    /// Picks `k` train-split exemplars for each source tag. Labels are
    /// dealt round-robin over gold positions so they are as balanced as the
    /// pool allows, then the picks are shuffled.
    pub fn select<'a>(
        pool: &Dataset,
        sources: impl IntoIterator<Item = &'a str>,
        k: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut by_source = BTreeMap::new();
        for tag in sources {
            if by_source.contains_key(tag) {
                continue;
            }
            let mut candidates: Vec<&McqEntry> = pool
                .entries
                .iter()
                .filter(|e| e.split == Split::Train && e.dataset == tag)
                .collect();
            if candidates.len() < k {
                return Err(Error::InsufficientEntries(format!(
                    "source `{tag}` has {} train exemplars, {k} needed",
                    candidates.len()
                )));
            }
            candidates.sort_by(|a, b| a.id.cmp(&b.id));
            let mut rng = ChaCha8Rng::seed_from_u64(tag_seed(seed, tag));
            let mut by_label: BTreeMap<usize, Vec<&McqEntry>> = BTreeMap::new();
            for e in candidates {
                by_label.entry(e.answer_index).or_default().push(e);
            }
            for group in by_label.values_mut() {
                group.shuffle(&mut rng);
                group.reverse(); // pop from the back
            }
            let mut picked = Vec::with_capacity(k);
            while picked.len() < k {
                for group in by_label.values_mut() {
                    if picked.len() == k {
                        break;
                    }
                    if let Some(e) = group.pop() {
                        picked.push((*e).clone());
                    }
                }
            }
            picked.shuffle(&mut rng);
            by_source.insert(tag.to_string(), picked);
        }
        Ok(ExemplarBank {
            k_shots: k,
            seed,
            by_source,
        })
    }

    pub fn for_entry(&self, entry: &McqEntry) -> Result<&[McqEntry]> {
        self.by_source
            .get(&entry.dataset)
            .map(|v| v.as_slice())
            .ok_or_else(|| {
                Error::InsufficientEntries(format!("no exemplars for source `{}`", entry.dataset))
            })
    }
}
