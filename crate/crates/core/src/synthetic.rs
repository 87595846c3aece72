//! Deterministic synthetic datasets with known answers.
//!
//! Texts are made of pseudo-words built from consonant-vowel syllables, so
//! unrelated texts share almost no character trigrams and exact-match and
//! lexical backends agree on what is equivalent.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Dataset, McqEntry, Split};

pub const PLANTED_ENTRIES: usize = 200;
pub const PLANTED_PAIRS: usize = 40;
pub const PLANTED_SEED: u64 = 20_240_611;
pub const PLANTED_NAME: &str = "planted";

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const SOURCES: [&str; 2] = ["synth-a", "synth-b"];

/// Draws pseudo-words of a fixed length, never repeating one.
struct Words {
    rng: ChaCha8Rng,
    seen: HashSet<String>,
}

impl Words {
    fn new(seed: u64) -> Self {
        Words {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seen: HashSet::new(),
        }
    }

    fn word(&mut self, syllables: usize) -> String {
        loop {
            let mut w = String::with_capacity(2 * syllables);
            for _ in 0..syllables {
                w.push(CONSONANTS[self.rng.random_range(0..CONSONANTS.len())] as char);
                w.push(VOWELS[self.rng.random_range(0..VOWELS.len())] as char);
            }
            if self.seen.insert(w.clone()) {
                return w;
            }
        }
    }

    fn phrase(&mut self, words: usize) -> String {
        (0..words).map(|_| self.word(3)).collect::<Vec<_>>().join(" ")
    }
}

/// Places `gold` among `others` at a random position.
fn shuffled(gold: String, others: Vec<String>, rng: &mut ChaCha8Rng) -> (Vec<String>, usize) {
    let mut choices = others;
    let at = rng.random_range(0..=choices.len());
    choices.insert(at, gold);
    (choices, at)
}

fn entry(
    dataset: &str,
    question: String,
    choices: Vec<String>,
    answer_index: usize,
    split: Split,
) -> McqEntry {
    McqEntry {
        id: String::new(),
        dataset: dataset.to_string(),
        question,
        choices,
        answer_index,
        split,
    }
}

/// Shuffles, assigns ids `<prefix>-NNN`, and returns the id pairs of the
/// entries at the given pre-shuffle positions.
fn finalize(
    name: &str,
    prefix: &str,
    mut entries: Vec<McqEntry>,
    planted: &[(usize, usize)],
    rng: &mut ChaCha8Rng,
) -> Result<(Dataset, Vec<(String, String)>)> {
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.shuffle(rng);
    let mut id_of = vec![String::new(); entries.len()];
    for (slot, &orig) in order.iter().enumerate() {
        id_of[orig] = format!("{prefix}-{slot:03}");
    }
    for (e, id) in entries.iter_mut().zip(&id_of) {
        e.id = id.clone();
    }
    let mut pairs: Vec<(String, String)> = planted
        .iter()
        .map(|&(a, b)| {
            let (x, y) = (id_of[a].clone(), id_of[b].clone());
            if x < y {
                (x, y)
            } else {
                (y, x)
            }
        })
        .collect();
    pairs.sort();
    let mut slots: Vec<Option<McqEntry>> = entries.into_iter().map(Some).collect();
    let entries = order
        .iter()
        .map(|&i| slots[i].take().expect("each slot taken once"))
        .collect();
    Ok((Dataset::new(name, entries)?, pairs))
}

/// A four-choice dataset in which exactly `pairs` disjoint entry pairs are
/// mutually equivalent under exact matching: each one's gold appears
/// verbatim as a distractor of the other. A further `pairs` entries carry a
/// one-way link (a distractor equal to some other entry's gold) that must
/// not produce an edge. Everything else is unique.
///
/// Returns the dataset and the planted id pairs, each ordered and sorted.
pub fn planted_dataset(
    n_entries: usize,
    pairs: usize,
    seed: u64,
) -> Result<(Dataset, Vec<(String, String)>)> {
    if n_entries < 4 * pairs || pairs == 0 {
        return Err(Error::Config(format!(
            "{n_entries} entries cannot hold {pairs} planted pairs and their decoys"
        )));
    }
    let mut words = Words::new(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut entries = Vec::with_capacity(n_entries);
    let mut planted = Vec::with_capacity(pairs);
    let question = |i: usize, words: &mut Words| {
        format!("Which phrase answers riddle {i:03} about the {}?", words.word(2))
    };

    for p in 0..pairs {
        let source = SOURCES[p % SOURCES.len()];
        let (ga, gb) = (words.phrase(3), words.phrase(3));
        let a = vec![gb.clone(), words.phrase(3), words.phrase(3)];
        let b = vec![ga.clone(), words.phrase(3), words.phrase(3)];
        let (ca, ia) = shuffled(ga, a, &mut rng);
        let (cb, ib) = shuffled(gb, b, &mut rng);
        planted.push((entries.len(), entries.len() + 1));
        entries.push(entry(source, question(entries.len(), &mut words), ca, ia, Split::Eval));
        entries.push(entry(source, question(entries.len(), &mut words), cb, ib, Split::Eval));
    }
    // the first `pairs` fillers are the one-way decoys
    let rest = n_entries - entries.len();
    let mut filler_golds = Vec::with_capacity(rest);
    for _ in 0..rest {
        filler_golds.push(words.phrase(3));
    }
    for (i, gold) in filler_golds.iter().enumerate() {
        let source = SOURCES[i % SOURCES.len()];
        let mut others = vec![words.phrase(3), words.phrase(3), words.phrase(3)];
        if i < pairs {
            // one-way: borrow the gold of a filler entry further on, whose
            // own distractors are all fresh
            others[0] = filler_golds[rest - 1 - i].clone();
        }
        let (c, g) = shuffled(gold.clone(), others, &mut rng);
        entries.push(entry(source, question(entries.len(), &mut words), c, g, Split::Eval));
    }
    finalize(PLANTED_NAME, "syn", entries, &planted, &mut rng)
}

/// The dataset shipped as `data/planted_200.jsonl`.
pub fn shipped_planted() -> (Dataset, Vec<(String, String)>) {
    planted_dataset(PLANTED_ENTRIES, PLANTED_PAIRS, PLANTED_SEED).expect("fixed parameters are valid")
}

/// Evaluation data on which the longest choice is always gold, plus a train
/// pool for exemplars.
#[derive(Debug, Clone)]
pub struct CheaterFixture {
    pub dataset: Dataset,
    pub exemplars: Dataset,
    pub planted: Vec<(String, String)>,
}

/// Golds are four pseudo-words of six letters (27 characters). Planted
/// pairs borrow each other's gold minus its last letter as a distractor,
/// which the lexical provider scores well above the default threshold.
/// All other distractors are three words (20 characters). A planted pair
/// becomes two questions over two equally long golds, so the
/// longest-choice heuristic gets exactly one of them right.
pub fn cheater_fixture(pairs: usize, fillers: usize, seed: u64) -> Result<CheaterFixture> {
    let mut words = Words::new(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51_7cc1_b727_220a);
    let mut entries = Vec::new();
    let mut planted = Vec::new();
    let question = |i: usize, words: &mut Words| {
        format!("Which phrase completes pattern {i:03} for the {}?", words.word(2))
    };
    let clip = |s: &str| s[..s.len() - 1].to_string();

    for p in 0..pairs {
        let source = SOURCES[p % SOURCES.len()];
        let (ga, gb) = (words.phrase(4), words.phrase(4));
        let a = vec![clip(&gb), words.phrase(3), words.phrase(3)];
        let b = vec![clip(&ga), words.phrase(3), words.phrase(3)];
        let (ca, ia) = shuffled(ga, a, &mut rng);
        let (cb, ib) = shuffled(gb, b, &mut rng);
        planted.push((entries.len(), entries.len() + 1));
        entries.push(entry(source, question(entries.len(), &mut words), ca, ia, Split::Eval));
        entries.push(entry(source, question(entries.len(), &mut words), cb, ib, Split::Eval));
    }
    for i in 0..fillers {
        let source = SOURCES[i % SOURCES.len()];
        let others = vec![words.phrase(3), words.phrase(3), words.phrase(3)];
        let (c, g) = shuffled(words.phrase(4), others, &mut rng);
        entries.push(entry(source, question(entries.len(), &mut words), c, g, Split::Eval));
    }
    let (dataset, planted) = finalize("cheater", "ch", entries, &planted, &mut rng)?;

    let mut train = Vec::new();
    for (s, source) in SOURCES.iter().enumerate() {
        for i in 0..12 {
            let others = vec![words.phrase(3), words.phrase(3), words.phrase(3)];
            let (c, g) = shuffled(words.phrase(4), others, &mut rng);
            let mut e = entry(
                source,
                format!("Which phrase completes warm-up {s}{i:02}?"),
                c,
                g,
                Split::Train,
            );
            e.id = format!("warm-{s}{i:02}");
            train.push(e);
        }
    }
    Ok(CheaterFixture {
        dataset,
        exemplars: Dataset::new("cheater-train", train)?,
        planted,
    })
}
