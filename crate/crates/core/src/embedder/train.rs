//! Relevance-weighted cosine regression with optional in-batch negatives,
//! optimized with Adam.
//!
//! For a batch of B pairs with query/document embeddings qᵢ, dᵢ:
//!
//! ```text
//! L = Σᵢ wᵢ (cos(qᵢ, dᵢ) − rᵢ)² / Σᵢ wᵢ  +  λ · mean_{i≠j} cos(qᵢ, dⱼ)²
//! ```
//!
//! where rᵢ is the click ratio, wᵢ its weight, and the negative mean skips
//! pairs that share a query or a document text.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{base_vector, FeatureConfig, Projection};
use crate::click_ingest::TrainingPair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub in_batch_negative_weight: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 20,
            batch_size: 32,
            in_batch_negative_weight: 0.2,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::config("train.learning_rate", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.in_batch_negative_weight) {
            return Err(Error::config("train.in_batch_negative_weight", "must lie in [0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if self.in_batch_negative_weight > 0.0 && self.batch_size < 2 {
            return Err(Error::config(
                "train.batch_size",
                "must be >= 2 when in-batch negatives are enabled",
            ));
        }
        Ok(())
    }
}

type Sparse = Vec<(usize, f64)>;

#[derive(Debug, Clone, Copy)]
struct PairRef {
    query: usize,
    doc: usize,
    ratio: f64,
    weight: f64,
}

/// Training pairs with every distinct text featurized and pooled once.
#[derive(Debug, Clone)]
pub struct Objective {
    dim: usize,
    texts: Vec<Sparse>,
    pairs: Vec<PairRef>,
}

impl Objective {
    pub fn new(pairs: &[TrainingPair], fcfg: &FeatureConfig) -> Self {
        let mut ids: HashMap<&str, usize> = HashMap::new();
        let mut texts: Vec<Sparse> = Vec::new();
        let mut refs = Vec::with_capacity(pairs.len());
        for p in pairs {
            let mut slots = [0usize; 2];
            for (slot, t) in slots.iter_mut().zip([p.query.as_str(), p.doc_text.as_str()]) {
                *slot = *ids.entry(t).or_insert_with(|| {
                    texts.push(
                        base_vector(t, fcfg)
                            .into_iter()
                            .enumerate()
                            .filter(|(_, x)| *x != 0.0)
                            .collect(),
                    );
                    texts.len() - 1
                });
            }
            refs.push(PairRef {
                query: slots[0],
                doc: slots[1],
                ratio: p.ratio,
                weight: p.weight,
            });
        }
        Objective {
            dim: fcfg.dim,
            texts,
            pairs: refs,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Loss and exact gradient w.r.t. the row-major `matrix` over the pairs
    /// selected by `batch`. Errors name the offending position in `batch`.
    pub fn loss_and_grad(
        &self,
        matrix: &[f64],
        batch: &[usize],
        negative_weight: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let dim = self.dim;
        assert_eq!(matrix.len(), dim * dim, "matrix shape");
        if batch.is_empty() {
            return Err(Error::EmptyInput("training batch"));
        }

        // Forward pass for each distinct text in the batch.
        let mut slot: HashMap<usize, usize> = HashMap::new();
        let mut fwd: Vec<Tower> = Vec::new();
        let mut slot_of = |text: usize, fwd: &mut Vec<Tower>| -> usize {
            *slot.entry(text).or_insert_with(|| {
                fwd.push(Tower::forward(matrix, dim, &self.texts[text], text));
                fwd.len() - 1
            })
        };
        let sel: Vec<(usize, usize, PairRef)> = batch
            .iter()
            .map(|&i| {
                let p = self.pairs[i];
                (slot_of(p.query, &mut fwd), slot_of(p.doc, &mut fwd), p)
            })
            .collect();

        let mut upstream = vec![vec![0.0; dim]; fwd.len()];
        let total_weight: f64 = sel.iter().map(|(_, _, p)| p.weight).sum();
        let mut loss = 0.0;

        if total_weight > 0.0 {
            for (pos, &(q, d, p)) in sel.iter().enumerate() {
                let c = dot(&fwd[q].unit, &fwd[d].unit);
                let resid = c - p.ratio;
                let term = p.weight * resid * resid / total_weight;
                if !term.is_finite() {
                    return Err(Error::NonFiniteLoss { pair: pos });
                }
                loss += term;
                let g = 2.0 * p.weight * resid / total_weight;
                axpy(&mut upstream[q], g, &fwd[d].unit);
                axpy(&mut upstream[d], g, &fwd[q].unit);
            }
        }

        if negative_weight > 0.0 {
            let mut negs = Vec::new();
            for (i, &(qi, _, pi)) in sel.iter().enumerate() {
                for (j, &(_, dj, pj)) in sel.iter().enumerate() {
                    if i == j || pi.query == pj.query || pi.doc == pj.doc {
                        continue;
                    }
                    let c = dot(&fwd[qi].unit, &fwd[dj].unit);
                    if !c.is_finite() {
                        return Err(Error::NonFiniteLoss { pair: i });
                    }
                    negs.push((qi, dj, c));
                }
            }
            if !negs.is_empty() {
                let n = negs.len() as f64;
                for (q, d, c) in negs {
                    loss += negative_weight * c * c / n;
                    let g = 2.0 * negative_weight * c / n;
                    axpy(&mut upstream[q], g, &fwd[d].unit);
                    axpy(&mut upstream[d], g, &fwd[q].unit);
                }
            }
        }

        let mut grad = vec![0.0; dim * dim];
        for (tower, up) in fwd.iter().zip(&upstream) {
            if tower.norm == 0.0 {
                continue;
            }
            // d unit / d z = (I − u uᵀ) / ‖z‖
            let proj = dot(up, &tower.unit);
            let x = &self.texts[tower.text];
            for r in 0..dim {
                let dz = (up[r] - proj * tower.unit[r]) / tower.norm;
                if dz == 0.0 {
                    continue;
                }
                let row = &mut grad[r * dim..(r + 1) * dim];
                for &(c, xv) in x {
                    row[c] += dz * xv;
                }
            }
        }
        Ok((loss, grad))
    }
}

struct Tower {
    text: usize,
    unit: Vec<f64>,
    norm: f64,
}

impl Tower {
    fn forward(matrix: &[f64], dim: usize, x: &Sparse, text: usize) -> Self {
        let z: Vec<f64> = (0..dim)
            .map(|r| {
                let row = &matrix[r * dim..(r + 1) * dim];
                x.iter().map(|&(c, v)| row[c] * v).sum()
            })
            .collect();
        let norm = dot(&z, &z).sqrt();
        let unit = if norm > 0.0 && norm.is_finite() {
            z.iter().map(|v| v / norm).collect()
        } else {
            let mut e = vec![0.0; dim];
            e[0] = 1.0;
            e
        };
        let norm = if norm.is_finite() { norm } else { 0.0 };
        Tower { text, unit, norm }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(y, v)| *y += a * v);
}

/// Loss and gradient for a batch against a persisted projection.
pub fn loss_and_grad(
    batch: &[TrainingPair],
    proj: &Projection,
    fcfg: &FeatureConfig,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("training batch"));
    }
    let objective = Objective::new(batch, fcfg);
    let idx: Vec<usize> = (0..batch.len()).collect();
    objective.loss_and_grad(&proj.to_f64(), &idx, cfg.in_batch_negative_weight)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub projection: Projection,
    /// Mean batch loss per epoch, measured before each batch's update.
    pub epoch_losses: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

/// Trains the shared projection starting from identity + noise.
///
/// Pairs are put in a canonical order before the seeded shuffle, so the
/// result depends only on the pair multiset and the seed.
pub fn train(pairs: &[TrainingPair], cfg: &TrainConfig, fcfg: &FeatureConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    fcfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no training pairs"));
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| {
        (&a.query, &a.doc_text, a.ratio.to_bits(), a.weight.to_bits())
            .cmp(&(&b.query, &b.doc_text, b.ratio.to_bits(), b.weight.to_bits()))
    });
    let objective = Objective::new(&sorted, fcfg);
    let init = Projection::init(fcfg.dim, cfg.rng_seed);
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            projection: init,
            epoch_losses: Vec::new(),
        });
    }

    let mut weights = init.to_f64();
    let mut adam = Adam::new(weights.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..objective.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grad) = objective
                .loss_and_grad(&weights, batch, cfg.in_batch_negative_weight)
                .map_err(|_| Error::Diverged { epoch, batch: b })?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, batch: b });
            }
            adam.step(&mut weights, &grad, cfg);
            sum += loss;
            batches += 1;
        }
        let mean = sum / batches as f64;
        tracing::debug!(epoch, loss = mean, "epoch done");
        epoch_losses.push(mean);
    }

    Ok(TrainOutcome {
        projection: Projection::from_f64(fcfg.dim, &weights)
            .map_err(|_| Error::Diverged { epoch: cfg.epochs - 1, batch: 0 })?,
        epoch_losses,
    })
}
