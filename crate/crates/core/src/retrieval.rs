//! Few-shot example selection over a flat exact-cosine index, plus mining
//! of training pairs whose regression target is Jaccard program similarity.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsl::{self, ApiName, ParseError};

/// One (natural-language prompt, DSL source) tuple; the unit of few-shot
/// retrieval and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExamplePair {
    pub id: String,
    pub nl: String,
    pub dsl: String,
    /// Distinct API names used by the flow, cached at construction.
    api_set: BTreeSet<ApiName>,
}

impl ExamplePair {
    pub fn new(id: &str, nl: &str, dsl: &str) -> Result<Self, ParseError> {
        let program = dsl::parse(dsl)?;
        let api_set = program.extract_actions().into_iter().collect();
        Ok(Self {
            id: id.into(),
            nl: nl.into(),
            dsl: dsl.into(),
            api_set,
        })
    }

    pub fn api_set(&self) -> &BTreeSet<ApiName> {
        &self.api_set
    }
}

pub trait EmbeddingProvider: Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    /// Embeds a batch of texts, one vector per input, in input order.
    /// Vectors must be deterministic per provider instance.
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError>;
}

/// Provider-side embedding failure (transport, shape mismatch, etc.).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedError(pub String);

impl fmt::Display for EmbedError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "embedding failed: {}", self.0)
    }
}

impl core::error::Error for EmbedError {}

#[derive(Debug, Clone, PartialEq)]
pub enum RetrievalError {
    Embed(EmbedError),
    InvalidExample { id: String, error: ParseError },
    DegenerateVector { id: String },
    ProviderMismatch { expected: String, got: String },
    EmptyInput,
}

impl fmt::Display for RetrievalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RetrievalError::Embed(e) => write!(f, "{e}"),
            RetrievalError::InvalidExample { id, error } => {
                write!(f, "example `{id}` has unparseable DSL: {error}")
            }
            RetrievalError::DegenerateVector { id } => {
                write!(f, "example `{id}` embedded to a zero vector")
            }
            RetrievalError::ProviderMismatch { expected, got } => {
                write!(f, "index was built with provider `{expected}`, got `{got}`")
            }
            RetrievalError::EmptyInput => write!(f, "need at least one example"),
        }
    }
}

impl core::error::Error for RetrievalError {}

impl From<EmbedError> for RetrievalError {
    fn from(e: EmbedError) -> Self {
        RetrievalError::Embed(e)
    }
}

/// Scales a vector to unit L2 norm; returns false if it is (near) zero.
pub fn normalize(v: &mut [f32]) -> bool {
    let norm_sq: f64 = v.iter().map(|x| (*x as f64) * (*x as f64)).sum();
    let norm = libm::sqrt(norm_sq);
    if norm < 1e-12 {
        return false;
    }
    for x in v.iter_mut() {
        *x = ((*x as f64) / norm) as f32;
    }
    true
}

pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Deterministic local embedding provider: hashed bag-of-tokens with
/// optional IDF weighting and sign hashing. Intended for offline tests
/// and desk-scale experiments; real runs point at an HTTP provider.
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    dimension: usize,
    name: String,
    idf: Vec<f32>,
}

impl HashedEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0);
        Self {
            dimension,
            name: alloc::format!("hashed-bow-{dimension}"),
            idf: alloc::vec![1.0; dimension],
        }
    }

    /// Fits per-bucket IDF weights on a corpus.
    pub fn fit(dimension: usize, corpus: &[&str]) -> Self {
        let mut df = alloc::vec![0usize; dimension];
        for text in corpus {
            let mut seen = BTreeSet::new();
            for token in tokens(text) {
                seen.insert(bucket(&token, dimension));
            }
            for b in seen {
                df[b] += 1;
            }
        }
        let n = corpus.len() as f64;
        let idf = df
            .iter()
            .map(|&d| (libm::log((1.0 + n) / (1.0 + d as f64)) + 1.0) as f32)
            .collect();
        Self {
            dimension,
            name: alloc::format!("hashed-idf-{dimension}"),
            idf,
        }
    }
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn bucket(token: &str, dimension: usize) -> usize {
    (fnv1a(token.as_bytes()) % dimension as u64) as usize
}

fn sign(token: &str) -> f32 {
    if (fnv1a(token.as_bytes()) >> 32) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

impl EmbeddingProvider for HashedEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts
            .iter()
            .map(|text| {
                let mut v = alloc::vec![0.0f32; self.dimension];
                for token in tokens(text) {
                    let b = bucket(&token, self.dimension);
                    v[b] += sign(&token) * self.idf[b];
                }
                v
            })
            .collect())
    }
}

/// Flat exact-cosine index over example pairs. Immutable after build.
#[derive(Debug, Clone)]
pub struct ShotIndex {
    provider_name: String,
    dimension: usize,
    pairs: Vec<ExamplePair>,
    /// Unit vectors, aligned with `pairs`.
    vectors: Vec<Vec<f32>>,
}

impl ShotIndex {
    pub fn provider_name(&self) -> &str {
        &self.provider_name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[ExamplePair] {
        &self.pairs
    }

    pub fn vectors(&self) -> &[Vec<f32>] {
        &self.vectors
    }

    /// Reconstructs an index from persisted parts, re-normalizing the
    /// vectors so a stored index behaves identically to a freshly built
    /// one.
    pub fn from_parts(
        provider_name: &str,
        dimension: usize,
        pairs: Vec<ExamplePair>,
        mut vectors: Vec<Vec<f32>>,
    ) -> Result<Self, RetrievalError> {
        if pairs.is_empty() || pairs.len() != vectors.len() {
            return Err(RetrievalError::EmptyInput);
        }
        for (pair, v) in pairs.iter().zip(vectors.iter_mut()) {
            if v.len() != dimension {
                return Err(EmbedError(alloc::format!(
                    "stored vector has dimension {} (expected {dimension})",
                    v.len()
                ))
                .into());
            }
            if !normalize(v) {
                return Err(RetrievalError::DegenerateVector {
                    id: pair.id.clone(),
                });
            }
        }
        Ok(Self {
            provider_name: provider_name.to_string(),
            dimension,
            pairs,
            vectors,
        })
    }
}

/// Embeds every example's NL text and builds the flat index.
pub fn build_index(
    pairs: Vec<ExamplePair>,
    provider: &dyn EmbeddingProvider,
) -> Result<ShotIndex, RetrievalError> {
    if pairs.is_empty() {
        return Err(RetrievalError::EmptyInput);
    }
    let texts: Vec<&str> = pairs.iter().map(|p| p.nl.as_str()).collect();
    let mut vectors = provider.embed(&texts)?;
    for (pair, v) in pairs.iter().zip(vectors.iter_mut()) {
        if v.len() != provider.dimension() {
            return Err(EmbedError(alloc::format!(
                "provider returned dimension {} (expected {})",
                v.len(),
                provider.dimension()
            ))
            .into());
        }
        if !normalize(v) {
            return Err(RetrievalError::DegenerateVector {
                id: pair.id.clone(),
            });
        }
    }
    Ok(ShotIndex {
        provider_name: provider.name().to_string(),
        dimension: provider.dimension(),
        pairs,
        vectors,
    })
}

/// Top-k examples by cosine similarity, descending; ties broken by
/// ascending example id. Returns fewer than k iff the index is smaller.
pub fn retrieve_few_shots<'a>(
    index: &'a ShotIndex,
    query: &str,
    k: usize,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<(&'a ExamplePair, f32)>, RetrievalError> {
    if provider.name() != index.provider_name {
        return Err(RetrievalError::ProviderMismatch {
            expected: index.provider_name.clone(),
            got: provider.name().to_string(),
        });
    }
    let mut q = provider.embed(&[query])?.remove(0);
    normalize(&mut q); // a zero-vector query scores 0 everywhere
    let mut scored: Vec<(usize, f32)> = index
        .vectors
        .iter()
        .enumerate()
        .map(|(i, v)| (i, dot(v, &q)))
        .collect();
    scored.sort_by(|(i, a), (j, b)| {
        b.partial_cmp(a)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then_with(|| index.pairs[*i].id.cmp(&index.pairs[*j].id))
    });
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .map(|(i, score)| (&index.pairs[i], score))
        .collect())
}

/// Jaccard similarity over the distinct API-name sets of two programs.
/// Both-empty scores 1 (vacuous match).
pub fn program_similarity(a: &str, b: &str) -> Result<f64, ParseError> {
    let set_a: BTreeSet<ApiName> = dsl::parse(a)?.extract_actions().into_iter().collect();
    let set_b: BTreeSet<ApiName> = dsl::parse(b)?.extract_actions().into_iter().collect();
    Ok(jaccard(&set_a, &set_b))
}

pub fn jaccard(a: &BTreeSet<ApiName>, b: &BTreeSet<ApiName>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PairLabel {
    Positive,
    Negative,
}

/// One mined training pair for external embedding-model fine-tuning:
/// NL cosine under the current provider, the thresholded label, and the
/// Jaccard program-similarity regression target.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TstPairRecord {
    pub id_i: String,
    pub id_j: String,
    pub u_i: String,
    pub u_j: String,
    pub cosine_nl: f64,
    pub label: PairLabel,
    pub target_s: f64,
}

/// Samples unordered example pairs (seeded shuffle over all i<j pairs, up
/// to `budget`) and computes label and regression target for each.
pub fn generate_tst_pairs(
    dataset: &[ExamplePair],
    provider: &dyn EmbeddingProvider,
    threshold: f64,
    budget: usize,
    seed: u64,
) -> Result<Vec<TstPairRecord>, RetrievalError> {
    if dataset.len() < 2 {
        return Err(RetrievalError::EmptyInput);
    }
    let texts: Vec<&str> = dataset.iter().map(|p| p.nl.as_str()).collect();
    let mut vectors = provider.embed(&texts)?;
    let mut degenerate = alloc::vec![false; vectors.len()];
    for (i, v) in vectors.iter_mut().enumerate() {
        degenerate[i] = !normalize(v);
    }

    let mut pair_indices: Vec<(usize, usize)> = Vec::new();
    for i in 0..dataset.len() {
        for j in (i + 1)..dataset.len() {
            pair_indices.push((i, j));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pair_indices.shuffle(&mut rng);
    pair_indices.truncate(budget);

    Ok(pair_indices
        .into_iter()
        .map(|(i, j)| {
            let cosine_nl = if degenerate[i] || degenerate[j] {
                0.0
            } else {
                dot(&vectors[i], &vectors[j]) as f64
            };
            let label = if cosine_nl > threshold {
                PairLabel::Positive
            } else {
                PairLabel::Negative
            };
            TstPairRecord {
                id_i: dataset[i].id.clone(),
                id_j: dataset[j].id.clone(),
                u_i: dataset[i].nl.clone(),
                u_j: dataset[j].nl.clone(),
                cosine_nl,
                label,
                target_s: jaccard(dataset[i].api_set(), dataset[j].api_set()),
            }
        })
        .collect())
}
