use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::McqEntry;

/// What a responder is asked. Stubs may look at `entry`; model-backed
/// responders only see `prompt`.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub prompt: &'a str,
    pub entry: &'a McqEntry,
    pub max_tokens: usize,
    pub temperature: f64,
}

pub trait Responder: Send + Sync {
    fn id(&self) -> &str;

    /// Raw completion text for the query.
    fn respond(&self, query: &Query<'_>) -> Result<String>;

    /// True when the answer is a function of the ordered choice list only.
    fn question_blind(&self) -> bool {
        false
    }
}

fn answer(index: usize) -> String {
    format!("({})", (b'A' + index as u8) as char)
}

fn fnv(seed: u64, parts: &[&str]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325 ^ seed;
    for part in parts {
        for b in part.bytes().chain(std::iter::once(0x1f)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    mix(h)
}

/// splitmix64 finalizer, so nearby inputs land far apart.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Always answers with the gold letter.
#[derive(Debug, Default, Clone)]
pub struct OracleResponder;

impl Responder for OracleResponder {
    fn id(&self) -> &str {
        "oracle"
    }

    fn respond(&self, q: &Query<'_>) -> Result<String> {
        Ok(answer(q.entry.answer_index))
    }
}

/// Gold letter, except on a deterministic pseudo-random fraction of
/// questions where it answers the next choice instead.
#[derive(Debug, Clone)]
pub struct NoisyOracleResponder {
    pub error_rate: f64,
    pub seed: u64,
}

impl Default for NoisyOracleResponder {
    fn default() -> Self {
        NoisyOracleResponder {
            error_rate: 0.2,
            seed: 17,
        }
    }
}

impl Responder for NoisyOracleResponder {
    fn id(&self) -> &str {
        "noisy-oracle"
    }

    fn respond(&self, q: &Query<'_>) -> Result<String> {
        let e = q.entry;
        let roll = fnv(self.seed, &[&e.question]) as f64 / u64::MAX as f64;
        let pick = if roll < self.error_rate {
            (e.answer_index + 1) % e.choices.len()
        } else {
            e.answer_index
        };
        Ok(answer(pick))
    }
}

/// Picks the longest choice (in characters); earliest wins ties.
#[derive(Debug, Default, Clone)]
pub struct LongestChoiceResponder;

impl Responder for LongestChoiceResponder {
    fn id(&self) -> &str {
        "longest-choice"
    }

    fn respond(&self, q: &Query<'_>) -> Result<String> {
        let mut best = 0;
        for (i, c) in q.entry.choices.iter().enumerate() {
            if c.chars().count() > q.entry.choices[best].chars().count() {
                best = i;
            }
        }
        Ok(answer(best))
    }

    fn question_blind(&self) -> bool {
        true
    }
}

/// Argmax over positions of a fixed hash of (ordered choice list, position).
#[derive(Debug, Default, Clone)]
pub struct ChoiceHashResponder;

impl Responder for ChoiceHashResponder {
    fn id(&self) -> &str {
        "choice-hash"
    }

    fn respond(&self, q: &Query<'_>) -> Result<String> {
        let parts: Vec<&str> = q.entry.choices.iter().map(|s| s.as_str()).collect();
        let list = fnv(0, &parts);
        let best = (0..parts.len())
            .max_by_key(|&i| (fnv(list, &[&i.to_string()]), std::cmp::Reverse(i)))
            .unwrap_or(0);
        Ok(answer(best))
    }

    fn question_blind(&self) -> bool {
        true
    }
}

/// Always `(A)`.
#[derive(Debug, Default, Clone)]
pub struct FirstChoiceResponder;

impl Responder for FirstChoiceResponder {
    fn id(&self) -> &str {
        "first-choice"
    }

    fn respond(&self, _q: &Query<'_>) -> Result<String> {
        Ok(answer(0))
    }

    fn question_blind(&self) -> bool {
        true
    }
}

/// Every shipped stub that never reads the question.
pub fn question_blind_stubs() -> Vec<Box<dyn Responder>> {
    vec![
        Box::new(LongestChoiceResponder),
        Box::new(ChoiceHashResponder),
        Box::new(FirstChoiceResponder),
    ]
}

/// Stub responder by name.
pub fn stub(name: &str) -> Option<Box<dyn Responder>> {
    Some(match name {
        "oracle" => Box::new(OracleResponder),
        "noisy-oracle" => Box::new(NoisyOracleResponder::default()),
        "longest-choice" => Box::new(LongestChoiceResponder),
        "choice-hash" => Box::new(ChoiceHashResponder),
        "first-choice" => Box::new(FirstChoiceResponder),
        _ => return None,
    })
}

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    text: String,
}

/// Text-in/text-out completion endpoint:
/// request `{prompt, max_tokens, temperature}`, response `{text}`.
pub struct HttpResponder {
    id: String,
    url: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpResponder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpResponder")
            .field("id", &self.id)
            .field("url", &self.url)
            .finish()
    }
}

impl HttpResponder {
    pub fn new(id: impl Into<String>, url: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        HttpResponder {
            id: id.into(),
            url: url.into(),
            agent,
        }
    }
}

impl Responder for HttpResponder {
    fn id(&self) -> &str {
        &self.id
    }

    fn respond(&self, q: &Query<'_>) -> Result<String> {
        let req = CompletionRequest {
            prompt: q.prompt,
            max_tokens: q.max_tokens,
            temperature: q.temperature,
        };
        self.agent
            .post(&self.url)
            .send_json(&req)
            .and_then(|mut r| r.body_mut().read_json::<CompletionResponse>())
            .map(|r| r.text)
            .map_err(|e| Error::Transport {
                responder: self.id.clone(),
                reason: e.to_string(),
            })
    }
}
