//! Bi-encoder tower: hashed token features, pooling, a shared linear
//! projection, and L2 normalization. Queries and documents go through the
//! exact same path.

mod projection;
mod train;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

pub use projection::Projection;
pub use train::{loss_and_grad, train, Objective, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
    First,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub dim: usize,
    pub hash_seed: u64,
    pub pooling: Pooling,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            dim: 256,
            hash_seed: 0x5eed_f00d,
            pooling: Pooling::Mean,
        }
    }
}

impl FeatureConfig {
    pub fn with_dim(dim: usize) -> Self {
        FeatureConfig {
            dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 8 {
            return Err(Error::config("features.dim", "must be at least 8"));
        }
        Ok(())
    }
}

const TOKEN_WEIGHT: f64 = 1.0;
const TRIGRAM_WEIGHT: f64 = 0.5;

fn add_hashed(vec: &mut [f64], piece: &[u8], seed: u64, weight: f64) {
    let h = xxh3_64_with_seed(piece, seed);
    let bucket = (h % vec.len() as u64) as usize;
    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
    vec[bucket] += sign * weight;
}

fn token_features(token: &str, cfg: &FeatureConfig) -> Vec<f64> {
    let mut v = vec![0.0; cfg.dim];
    let trimmed = token.trim_matches(|c: char| !c.is_alphanumeric());
    let norm = if trimmed.is_empty() { token } else { trimmed }.to_lowercase();

    let mut whole = Vec::with_capacity(norm.len() + 2);
    whole.extend_from_slice(b"w:");
    whole.extend_from_slice(norm.as_bytes());
    add_hashed(&mut v, &whole, cfg.hash_seed, TOKEN_WEIGHT);

    let chars: Vec<char> = std::iter::once('<')
        .chain(norm.chars())
        .chain(std::iter::once('>'))
        .collect();
    for window in chars.windows(3) {
        let tri: String = window.iter().collect();
        add_hashed(&mut v, tri.as_bytes(), cfg.hash_seed, TRIGRAM_WEIGHT);
    }

    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// One unit-length feature vector per whitespace token.
pub fn featurize(text: &str, cfg: &FeatureConfig) -> Vec<Vec<f64>> {
    text.split_whitespace()
        .map(|tok| token_features(tok, cfg))
        .collect()
}

/// Pools token vectors into one base vector of length `dim`.
/// An empty token list pools to the zero vector.
pub fn pool(features: &[Vec<f64>], mode: Pooling, dim: usize) -> Vec<f64> {
    let Some(first) = features.first() else {
        return vec![0.0; dim];
    };
    match mode {
        Pooling::First => first.clone(),
        Pooling::Mean => {
            let mut acc = vec![0.0; first.len()];
            for f in features {
                acc.iter_mut().zip(f).for_each(|(a, x)| *a += x);
            }
            let n = features.len() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            acc
        }
        Pooling::Max => {
            let mut acc = first.clone();
            for f in &features[1..] {
                acc.iter_mut().zip(f).for_each(|(a, &x)| *a = a.max(x));
            }
            acc
        }
    }
}

/// Featurize + pool, with the all-zero case replaced by e₀ so the tower
/// output is always normalizable.
pub fn base_vector(text: &str, cfg: &FeatureConfig) -> Vec<f64> {
    let mut v = pool(&featurize(text, cfg), cfg.pooling, cfg.dim);
    if v.iter().all(|&x| x == 0.0) {
        v[0] = 1.0;
    }
    v
}

/// Unit-norm dense vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f32>);

impl Embedding {
    /// Normalizes `v`; a zero (or non-finite) vector maps to e₀.
    pub fn from_unnormalized(v: &[f64]) -> Self {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 && n.is_finite() {
            Embedding(v.iter().map(|x| (x / n) as f32).collect())
        } else {
            let mut e = vec![0.0f32; v.len().max(1)];
            e[0] = 1.0;
            Embedding(e)
        }
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
    }

    /// Cosine similarity, computed in f64 and clamped to [-1, 1].
    pub fn cosine(&self, other: &Embedding) -> f64 {
        cosine(&self.0, &other.0)
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// featurize → pool → project → normalize.
pub fn embed(text: &str, proj: &Projection, cfg: &FeatureConfig) -> Embedding {
    let base = base_vector(text, cfg);
    Embedding::from_unnormalized(&proj.apply(&base))
}

/// A projection bundled with the feature settings it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    pub projection: Projection,
    pub features: FeatureConfig,
}

impl Embedder {
    pub fn new(projection: Projection, features: FeatureConfig) -> Result<Self> {
        if projection.dim() != features.dim {
            return Err(Error::config(
                "features.dim",
                format!(
                    "projection dim {} does not match feature dim {}",
                    projection.dim(),
                    features.dim
                ),
            ));
        }
        Ok(Embedder {
            projection,
            features,
        })
    }

    pub fn embed(&self, text: &str) -> Embedding {
        embed(text, &self.projection, &self.features)
    }
}
