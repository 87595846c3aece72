//! Semantic equivalence of answer texts: normalization, embedding providers,
//! a persistent embedding cache and the thresholded cosine test.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.85;
pub const TRIGRAM_DIM: usize = 512;
pub const TRIGRAM_SEED: u64 = 0x5eed_c0de_2024_0001;

const TERMINAL_PUNCTUATION: [char; 6] = ['.', ',', ';', ':', '!', '?'];

/// Lowercases, trims, collapses internal whitespace and strips terminal
/// punctuation.
pub fn normalize(text: &str) -> String {
    let collapsed = text
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    collapsed
        .trim_end_matches(TERMINAL_PUNCTUATION)
        .trim_end()
        .to_string()
}

/// Cosine similarity, clamped to [-1, 1]. Exactly symmetric in its arguments.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(u.len(), v.len()));
    }
    let mut dot = 0.0f64;
    let mut nu = 0.0f64;
    let mut nv = 0.0f64;
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (nu * nv).sqrt()).clamp(-1.0, 1.0))
}

/// Turns texts into fixed-length vectors. Implementations must be
/// deterministic per (`id`, text).
pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

/// Hashed bag of character trigrams. Needs no model and no network.
#[derive(Debug, Clone)]
pub struct TrigramProvider {
    id: String,
    dim: usize,
    seed: u64,
}

impl Default for TrigramProvider {
    fn default() -> Self {
        Self::new(TRIGRAM_DIM, TRIGRAM_SEED)
    }
}

impl TrigramProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "dimension must be positive");
        let id = if dim == TRIGRAM_DIM && seed == TRIGRAM_SEED {
            format!("trigram-{dim}")
        } else {
            format!("trigram-{dim}-{seed:016x}")
        };
        Self { id, dim, seed }
    }

    fn bucket(&self, gram: &[char]) -> usize {
        // FNV-1a over the UTF-8 bytes, offset basis mixed with the seed
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed;
        let mut buf = [0u8; 4];
        for c in gram {
            for b in c.encode_utf8(&mut buf).bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        (h % self.dim as u64) as usize
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let padded: Vec<char> = std::iter::once('#')
            .chain(text.chars())
            .chain(std::iter::once('#'))
            .collect();
        let mut v = vec![0.0f32; self.dim];
        if padded.len() < 3 {
            v[self.bucket(&padded)] += 1.0;
        } else {
            for gram in padded.windows(3) {
                v[self.bucket(gram)] += 1.0;
            }
        }
        v
    }
}

impl EmbeddingProvider for TrigramProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
    dim: usize,
    model_id: String,
}

#[derive(Debug, Deserialize)]
struct HealthResponse {
    status: String,
    model_id: String,
    dim: usize,
}

/// Client for the embedding sidecar: `GET /health`, `POST /embed`.
pub struct RemoteProvider {
    id: String,
    endpoint: String,
    model_id: String,
    dim: usize,
    attempts: u32,
    backoff: Duration,
    agent: ureq::Agent,
}

impl std::fmt::Debug for RemoteProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteProvider")
            .field("endpoint", &self.endpoint)
            .field("model_id", &self.model_id)
            .field("dim", &self.dim)
            .finish()
    }
}

impl RemoteProvider {
    pub const ENDPOINT_ENV: &'static str = "CONTRAST_EMBED_ENDPOINT";

    /// Queries `/health` to learn the model id and dimension.
    pub fn connect(endpoint: &str, attempts: u32) -> Result<Self> {
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        let mut provider = RemoteProvider {
            id: String::new(),
            endpoint,
            model_id: String::new(),
            dim: 0,
            attempts: attempts.max(1),
            backoff: Duration::from_millis(200),
            agent,
        };
        let health: HealthResponse = provider.with_retries(|p| {
            p.agent
                .get(format!("{}/health", p.endpoint))
                .call()
                .and_then(|mut r| r.body_mut().read_json::<HealthResponse>())
                .map_err(|e| e.to_string())
        })?;
        if health.status != "ok" && health.status != "ready" {
            return Err(provider.err(format!("service not ready: {}", health.status)));
        }
        if health.dim == 0 {
            return Err(provider.err("service reports dimension 0".into()));
        }
        provider.id = format!("remote:{}", health.model_id);
        provider.model_id = health.model_id;
        provider.dim = health.dim;
        Ok(provider)
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    fn err(&self, reason: String) -> Error {
        Error::Provider {
            provider: if self.id.is_empty() {
                self.endpoint.clone()
            } else {
                self.id.clone()
            },
            reason,
        }
    }

    fn with_retries<T>(&self, f: impl Fn(&Self) -> std::result::Result<T, String>) -> Result<T> {
        let mut last = String::new();
        for attempt in 0..self.attempts {
            match f(self) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!("{}: attempt {} failed: {e}", self.endpoint, attempt + 1);
                    last = e;
                    if attempt + 1 < self.attempts {
                        std::thread::sleep(self.backoff * (attempt + 1));
                    }
                }
            }
        }
        Err(self.err(format!("gave up after {} attempts: {last}", self.attempts)))
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let resp: EmbedResponse = self.with_retries(|p| {
            p.agent
                .post(format!("{}/embed", p.endpoint))
                .send_json(EmbedRequest { texts })
                .and_then(|mut r| r.body_mut().read_json::<EmbedResponse>())
                .map_err(|e| e.to_string())
        })?;
        if resp.model_id != self.model_id {
            return Err(self.err(format!(
                "model changed from `{}` to `{}`",
                self.model_id, resp.model_id
            )));
        }
        if resp.vectors.len() != texts.len() {
            return Err(self.err(format!(
                "sent {} texts, got {} vectors",
                texts.len(),
                resp.vectors.len()
            )));
        }
        if resp.dim != self.dim || resp.vectors.iter().any(|v| v.len() != self.dim) {
            return Err(self.err(format!("expected dimension {}", self.dim)));
        }
        Ok(resp.vectors)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    provider_id: String,
    text: String,
    vector: Vec<f32>,
}

/// Vectors keyed by (provider id, text), optionally backed by an
/// append-only JSON-lines file.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    map: HashMap<(String, String), Arc<[f32]>>,
    path: Option<PathBuf>,
    pending: Vec<(String, String)>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) a cache file. Existing records are loaded.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut map = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord =
                    serde_json::from_str(&line).map_err(|e| Error::Malformed {
                        path: path.clone(),
                        line: n + 1,
                        reason: e.to_string(),
                    })?;
                map.insert((rec.provider_id, rec.text), Arc::from(rec.vector));
            }
        }
        Ok(EmbeddingCache {
            map,
            path: Some(path),
            pending: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, provider_id: &str, text: &str) -> Option<Arc<[f32]>> {
        self.map
            .get(&(provider_id.to_string(), text.to_string()))
            .cloned()
    }

    pub fn insert(&mut self, provider_id: &str, text: &str, vector: Vec<f32>) {
        let key = (provider_id.to_string(), text.to_string());
        if self.map.insert(key.clone(), Arc::from(vector)).is_none() {
            self.pending.push(key);
        }
    }

    /// Appends records added since the last flush to the backing file.
    pub fn flush(&mut self) -> Result<()> {
        let Some(path) = &self.path else {
            self.pending.clear();
            return Ok(());
        };
        if self.pending.is_empty() {
            return Ok(());
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for key in self.pending.drain(..) {
            let rec = CacheRecord {
                vector: self.map[&key].to_vec(),
                provider_id: key.0,
                text: key.1,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub enum Backend {
    /// Score 1.0 for identical keys, else 0.0.
    ExactMatch,
    Embedding(Box<dyn EmbeddingProvider>),
}

impl Backend {
    pub fn id(&self) -> &str {
        match self {
            Backend::ExactMatch => "exact",
            Backend::Embedding(p) => p.id(),
        }
    }
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Backend({})", self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub threshold: f64,
    /// Compare normalized rather than raw texts.
    pub normalize: bool,
    /// Texts per provider call.
    pub batch_size: usize,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            threshold: DEFAULT_THRESHOLD,
            normalize: true,
            batch_size: 64,
        }
    }
}

impl SimilarityConfig {
    pub fn with_threshold(threshold: f64) -> Self {
        SimilarityConfig {
            threshold,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!(
                "threshold {} outside (0, 1]",
                self.threshold
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Thresholded equivalence over one backend, with cached embeddings.
#[derive(Debug)]
pub struct Similarity {
    backend: Backend,
    config: SimilarityConfig,
    cache: RwLock<EmbeddingCache>,
}

impl Similarity {
    pub fn new(backend: Backend, config: SimilarityConfig) -> Result<Self> {
        config.validate()?;
        Ok(Similarity {
            backend,
            config,
            cache: RwLock::new(EmbeddingCache::in_memory()),
        })
    }

    pub fn exact(threshold: f64) -> Result<Self> {
        Self::new(Backend::ExactMatch, SimilarityConfig::with_threshold(threshold))
    }

    pub fn trigram(threshold: f64) -> Result<Self> {
        Self::new(
            Backend::Embedding(Box::new(TrigramProvider::default())),
            SimilarityConfig::with_threshold(threshold),
        )
    }

    pub fn with_cache(mut self, cache: EmbeddingCache) -> Self {
        self.cache = RwLock::new(cache);
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn config(&self) -> &SimilarityConfig {
        &self.config
    }

    pub fn threshold(&self) -> f64 {
        self.config.threshold
    }

    /// The text actually compared: normalized unless disabled.
    pub fn key(&self, text: &str) -> String {
        if self.config.normalize {
            normalize(text)
        } else {
            text.to_string()
        }
    }

    pub fn flush_cache(&self) -> Result<()> {
        self.cache.write().expect("cache lock").flush()
    }

    /// Embeds keys (already passed through [`Similarity::key`]), consulting
    /// the cache first. Misses go to the provider in batches, each flushed to
    /// the cache file before the next is sent.
    pub fn embed_batch(&self, keys: &[String]) -> Result<Vec<Arc<[f32]>>> {
        let Backend::Embedding(provider) = &self.backend else {
            return Err(Error::Config("exact-match backend has no embeddings".into()));
        };
        let pid = provider.id();
        let mut missing: Vec<String> = Vec::new();
        {
            let cache = self.cache.read().expect("cache lock");
            let mut seen = HashSet::new();
            for k in keys {
                if cache.get(pid, k).is_none() && seen.insert(k.as_str()) {
                    missing.push(k.clone());
                }
            }
        }
        for chunk in missing.chunks(self.config.batch_size) {
            let vectors = provider.embed(chunk);
            let mut cache = self.cache.write().expect("cache lock");
            let vectors = match vectors {
                Ok(v) => v,
                Err(e) => {
                    cache.flush()?;
                    return Err(e);
                }
            };
            if vectors.len() != chunk.len() {
                cache.flush()?;
                return Err(Error::Provider {
                    provider: pid.to_string(),
                    reason: format!("sent {} texts, got {} vectors", chunk.len(), vectors.len()),
                });
            }
            for (text, v) in chunk.iter().zip(vectors) {
                if v.len() != provider.dim() {
                    cache.flush()?;
                    return Err(Error::DimensionMismatch(v.len(), provider.dim()));
                }
                cache.insert(pid, text, v);
            }
            cache.flush()?;
        }
        let cache = self.cache.read().expect("cache lock");
        Ok(keys
            .iter()
            .map(|k| cache.get(pid, k).expect("embedded above"))
            .collect())
    }

    /// Makes sure every text has a cached vector.
    pub fn prepare<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> Result<()> {
        if matches!(self.backend, Backend::ExactMatch) {
            return Ok(());
        }
        let keys: Vec<String> = texts
            .into_iter()
            .map(|t| self.key(t))
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        self.embed_batch(&keys).map(|_| ())
    }

    fn score_keys(&self, ka: &str, kb: &str) -> Result<f64> {
        if ka == kb {
            return Ok(1.0);
        }
        match &self.backend {
            Backend::ExactMatch => Ok(0.0),
            Backend::Embedding(_) => {
                let v = self.embed_batch(&[ka.to_string(), kb.to_string()])?;
                cosine(&v[0], &v[1])
            }
        }
    }

    /// Similarity of two raw texts in [-1, 1].
    pub fn score(&self, a: &str, b: &str) -> Result<f64> {
        self.score_keys(&self.key(a), &self.key(b))
    }

    /// Whether `a` and `b` are equivalent at the configured threshold, plus
    /// the score that decided it.
    pub fn equivalent(&self, a: &str, b: &str) -> Result<(bool, f64)> {
        let s = self.score(a, b)?;
        Ok((s >= self.config.threshold, s))
    }

    /// For every query key, the candidate indices whose score reaches the
    /// threshold. Uses the same scoring as [`Similarity::score`].
    pub fn matches_above(
        &self,
        queries: &[String],
        candidates: &[String],
    ) -> Result<Vec<Vec<(usize, f64)>>> {
        match &self.backend {
            Backend::ExactMatch => {
                let index: HashMap<&str, usize> = candidates
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (c.as_str(), i))
                    .collect();
                Ok(queries
                    .iter()
                    .map(|q| match index.get(q.as_str()) {
                        Some(&i) if 1.0 >= self.config.threshold => vec![(i, 1.0)],
                        _ => Vec::new(),
                    })
                    .collect())
            }
            Backend::Embedding(_) => {
                let qv = self.embed_batch(queries)?;
                let cv = self.embed_batch(candidates)?;
                let threshold = self.config.threshold;
                queries
                    .par_iter()
                    .zip(qv.par_iter())
                    .map(|(q, u)| {
                        let mut hits = Vec::new();
                        for (i, (c, v)) in candidates.iter().zip(&cv).enumerate() {
                            let s = if q == c { 1.0 } else { cosine(u, v)? };
                            if s >= threshold {
                                hits.push((i, s));
                            }
                        }
                        Ok(hits)
                    })
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("  The Rain."), "the rain");
        assert_eq!(normalize("rain"), "rain");
        assert_eq!(normalize("Rain\tFall "), "rain fall");
        assert_eq!(normalize("Really?!"), "really");
        assert_eq!(normalize("(a) b)"), "(a) b)");
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3f32, -1.5, 2.25, 7.0];
        assert_eq!(cosine(&v, &v).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // 1*2 + 2*1 + 2*2 = 8 over |u||v| = 3 * 3
        let c = cosine(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap();
        assert!((c - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch(1, 2))
        ));
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 2.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn trigram_is_deterministic() {
        let p = TrigramProvider::default();
        let v = p
            .embed(&["rain".to_string(), "rain".to_string()])
            .unwrap();
        assert_eq!(v[0], v[1]);
        assert_eq!(v[0].len(), TRIGRAM_DIM);
        assert_eq!(p.id(), "trigram-512");
    }

    #[test]
    fn trigram_ranks_rainfall_above_the_sun() {
        let p = TrigramProvider::default();
        let rain = p.embed_one("rain");
        let near = cosine(&rain, &p.embed_one("rainfall")).unwrap();
        let far = cosine(&rain, &p.embed_one("the sun")).unwrap();
        assert!(near > far, "{near} <= {far}");
    }

    #[test]
    fn trigram_empty_text_is_not_zero() {
        let p = TrigramProvider::default();
        assert!(p.embed_one("").iter().any(|&x| x > 0.0));
    }

    #[test]
    fn identity_is_equivalent() {
        let sim = Similarity::trigram(DEFAULT_THRESHOLD).unwrap();
        assert_eq!(sim.equivalent("the sun", "the sun").unwrap(), (true, 1.0));
        let sim = Similarity::trigram(1.0).unwrap();
        assert!(sim.equivalent("The Sun.", "the sun").unwrap().0);
    }

    #[test]
    fn ratio_and_integer_not_equivalent_under_trigram() {
        let sim = Similarity::trigram(DEFAULT_THRESHOLD).unwrap();
        let (eq, s) = sim.equivalent("a ratio like 3:4", "7").unwrap();
        assert!(!eq);
        assert!(s < DEFAULT_THRESHOLD);
    }

    #[test]
    fn exact_backend() {
        let sim = Similarity::exact(DEFAULT_THRESHOLD).unwrap();
        assert_eq!(sim.equivalent("Rain.", "rain").unwrap(), (true, 1.0));
        assert_eq!(sim.equivalent("rain", "rainfall").unwrap(), (false, 0.0));
        assert_eq!(sim.backend_id(), "exact");
    }

    #[test]
    fn threshold_validated() {
        assert!(Similarity::exact(0.0).is_err());
        assert!(Similarity::exact(1.01).is_err());
        assert!(Similarity::exact(1.0).is_ok());
    }

    struct Counting {
        inner: TrigramProvider,
        calls: Arc<AtomicUsize>,
        texts: Arc<AtomicUsize>,
    }

    impl EmbeddingProvider for Counting {
        fn id(&self) -> &str {
            self.inner.id()
        }
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.texts.fetch_add(texts.len(), Ordering::SeqCst);
            self.inner.embed(texts)
        }
    }

    fn counting() -> (Similarity, Arc<AtomicUsize>, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        let texts = Arc::new(AtomicUsize::new(0));
        let p = Counting {
            inner: TrigramProvider::default(),
            calls: calls.clone(),
            texts: texts.clone(),
        };
        let sim = Similarity::new(Backend::Embedding(Box::new(p)), SimilarityConfig::default())
            .unwrap();
        (sim, calls, texts)
    }

    #[test]
    fn second_batch_hits_cache() {
        let (sim, calls, _) = counting();
        let keys = vec!["rain".to_string(), "the sun".to_string()];
        let a = sim.embed_batch(&keys).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        let b = sim.embed_batch(&keys).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_keys_embedded_once() {
        let (sim, _, texts) = counting();
        let keys = vec!["rain".to_string(); 5];
        sim.embed_batch(&keys).unwrap();
        assert_eq!(texts.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn cache_file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let texts = ["rain", "rainfall", "the sun", "précipitation", "0.1 + 0.2"];
        let keys: Vec<String> = texts.iter().map(|t| normalize(t)).collect();
        {
            let sim = Similarity::trigram(0.85)
                .unwrap()
                .with_cache(EmbeddingCache::open(&path).unwrap());
            sim.embed_batch(&keys).unwrap();
        }
        let cache = EmbeddingCache::open(&path).unwrap();
        assert_eq!(cache.len(), texts.len());
        let fresh = TrigramProvider::default();
        for k in &keys {
            let cached = cache.get("trigram-512", k).unwrap();
            let recomputed = fresh.embed_one(k);
            let a: Vec<u32> = cached.iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = recomputed.iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn reloaded_cache_needs_no_provider_calls() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let keys = vec!["rain".to_string(), "hail".to_string()];
        {
            let (sim, _, _) = counting();
            let sim = sim.with_cache(EmbeddingCache::open(&path).unwrap());
            sim.embed_batch(&keys).unwrap();
        }
        let (sim, calls, _) = counting();
        let sim = sim.with_cache(EmbeddingCache::open(&path).unwrap());
        sim.embed_batch(&keys).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 0);
    }

    struct FailAfter {
        ok_calls: usize,
        calls: AtomicUsize,
    }

    impl EmbeddingProvider for FailAfter {
        fn id(&self) -> &str {
            "flaky"
        }
        fn dim(&self) -> usize {
            3
        }
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
            if self.calls.fetch_add(1, Ordering::SeqCst) >= self.ok_calls {
                return Err(Error::Provider {
                    provider: "flaky".into(),
                    reason: "down".into(),
                });
            }
            Ok(texts.iter().map(|t| vec![t.len() as f32, 1.0, 0.0]).collect())
        }
    }

    #[test]
    fn provider_failure_keeps_partial_cache() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let p = FailAfter {
            ok_calls: 1,
            calls: AtomicUsize::new(0),
        };
        let config = SimilarityConfig {
            batch_size: 2,
            ..SimilarityConfig::default()
        };
        let sim = Similarity::new(Backend::Embedding(Box::new(p)), config)
            .unwrap()
            .with_cache(EmbeddingCache::open(&path).unwrap());
        let keys: Vec<String> = ["a", "bb", "ccc", "dddd"].iter().map(|s| s.to_string()).collect();
        assert!(matches!(sim.embed_batch(&keys), Err(Error::Provider { .. })));
        assert_eq!(EmbeddingCache::open(&path).unwrap().len(), 2);
    }

    #[test]
    fn matches_above_agrees_with_score() {
        let sim = Similarity::trigram(0.5).unwrap();
        let q: Vec<String> = ["rain", "sunlight"].iter().map(|s| s.to_string()).collect();
        let c: Vec<String> = ["rainfall", "sunlight", "the sun", "rain"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let hits = sim.matches_above(&q, &c).unwrap();
        for (qi, row) in hits.iter().enumerate() {
            for (ci, cand) in c.iter().enumerate() {
                let s = sim.score(&q[qi], cand).unwrap();
                let found = row.iter().find(|(i, _)| *i == ci);
                assert_eq!(found.is_some(), s >= 0.5);
                if let Some((_, fs)) = found {
                    assert_eq!(*fs, s);
                }
            }
        }
    }
}
