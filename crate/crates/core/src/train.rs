//! Pairwise training: triple sampling, the BPR and adaptive losses, and a
//! mini-batch SGD loop with L2 regularization and validation-based early
//! stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{InteractionDataset, SplitLabel};
use crate::error::{Error, Result};
use crate::eval::{self, EvalOptions, EvalReport};
use crate::linalg::{axpy, dot, DenseMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bpr,
    Adaptive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub reg: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    pub xi: f64,
    pub seed: u64,
    /// Stop after this many evaluations without a validation nDCG@20 gain;
    /// `0` disables early stopping.
    pub patience: usize,
    /// Validate every this many epochs; `0` disables validation.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            reg: 0.01,
            batch_size: 256,
            epochs: 100,
            loss: LossKind::Adaptive,
            xi: 0.99,
            seed: 0,
            patience: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::config(format!("xi must lie in (0, 1), got {}", self.xi)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be finite and non-negative"));
        }
        if !(self.reg >= 0.0 && self.reg.is_finite()) {
            return Err(Error::config("reg must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triple {
    pub u: usize,
    pub i: usize,
    pub j: usize,
}

/// Draws `(u, i)` uniformly from the training pairs and `j` uniformly from
/// the items `u` has not interacted with in training.
pub struct TripleSampler {
    pairs: Vec<(usize, usize)>,
    positives: Vec<Vec<usize>>,
    item_count: usize,
}

const NEGATIVE_RETRIES: usize = 64;
const PAIR_RETRIES: usize = 64;

impl TripleSampler {
    pub fn new(ds: &InteractionDataset) -> Result<Self> {
        let pairs = ds.pairs_with(SplitLabel::Train)?;
        if pairs.is_empty() {
            return Err(Error::input("training split is empty"));
        }
        let positives = ds.user_items(&[SplitLabel::Train])?;
        if positives.iter().all(|p| p.len() == ds.item_count) {
            return Err(Error::input("every user interacts with every item; no negatives exist"));
        }
        Ok(TripleSampler {
            pairs,
            positives,
            item_count: ds.item_count,
        })
    }

    pub fn train_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Triple {
        loop {
            for _ in 0..PAIR_RETRIES {
                let (u, i) = self.pairs[rng.random_range(0..self.pairs.len())];
                let pos = &self.positives[u];
                if pos.len() == self.item_count {
                    continue;
                }
                for _ in 0..NEGATIVE_RETRIES {
                    let j = rng.random_range(0..self.item_count);
                    if pos.binary_search(&j).is_err() {
                        return Triple { u, i, j };
                    }
                }
            }
        }
    }
}

pub fn sample_triples(ds: &InteractionDataset, count: usize, rng: &mut impl Rng) -> Result<Vec<Triple>> {
    let sampler = TripleSampler::new(ds)?;
    Ok((0..count).map(|_| sampler.sample(rng)).collect())
}

/// Loss value and its derivatives with respect to the two scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub d_pos: f64,
    pub d_neg: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `−ln σ(r_ui − r_uj)`
pub fn bpr_loss(r_ui: f64, r_uj: f64) -> LossEval {
    let x = r_ui - r_uj;
    let g = sigmoid(-x);
    LossEval {
        loss: softplus(-x),
        d_pos: -g,
        d_neg: g,
    }
}

/// `1 − ln(1 − min(σ(r_uj), ξ))`
pub fn adaptive_delta(r_uj: f64, xi: f64) -> f64 {
    1.0 - (1.0 - sigmoid(r_uj).min(xi)).ln()
}

/// `−ln σ(r_ui − δ r_uj)` with `δ` held constant when differentiating.
pub fn adaptive_loss(r_ui: f64, r_uj: f64, xi: f64) -> LossEval {
    let delta = adaptive_delta(r_uj, xi);
    let x = r_ui - delta * r_uj;
    let g = sigmoid(-x);
    LossEval {
        loss: softplus(-x),
        d_pos: -g,
        d_neg: delta * g,
    }
}

pub fn pair_loss(kind: LossKind, r_ui: f64, r_uj: f64, xi: f64) -> LossEval {
    match kind {
        LossKind::Bpr => bpr_loss(r_ui, r_uj),
        LossKind::Adaptive => adaptive_loss(r_ui, r_uj, xi),
    }
}

/// A model trained through the representations it scores with. The loop
/// asks for the output rows of the users and items in a batch, then hands
/// back gradients with respect to exactly those rows.
pub trait Trainable {
    fn user_count(&self) -> usize;
    fn item_count(&self) -> usize;
    /// Output rows for `users` and `items` (both sorted, unique), in that
    /// order. Training-time randomness such as dropout draws from `rng`.
    fn forward_batch(&mut self, users: &[usize], items: &[usize], rng: &mut ChaCha8Rng) -> Result<(DenseMatrix, DenseMatrix)>;
    /// Applies one SGD step from gradients with respect to the rows returned
    /// by the last `forward_batch`.
    fn backward_batch(&mut self, grad_users: &DenseMatrix, grad_items: &DenseMatrix, lr: f64) -> Result<()>;
    /// Deterministic output embeddings for scoring.
    fn output_embeddings(&self) -> Result<(DenseMatrix, DenseMatrix)>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean pairwise loss plus regularization per triple.
    pub loss: f64,
    /// Mean `|∂ℓ/∂r_uj|` over the epoch's triples.
    pub neg_grad: f64,
    pub seconds: f64,
}

fn sorted_unique(xs: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = xs.collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// One SGD step on a batch of triples. Returns (summed loss, summed
/// |∂ℓ/∂r_uj|).
pub fn train_batch<M: Trainable>(model: &mut M, batch: &[Triple], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let users = sorted_unique(batch.iter().map(|t| t.u));
    let items = sorted_unique(batch.iter().flat_map(|t| [t.i, t.j]));
    let (ou, oi) = model.forward_batch(&users, &items, rng)?;
    let d = ou.cols();
    let mut gu = DenseMatrix::zeros(ou.rows(), d);
    let mut gi = DenseMatrix::zeros(oi.rows(), d);
    let scale = 1.0 / batch.len() as f64;
    let reg2 = 2.0 * cfg.reg;
    let (mut loss_sum, mut neg_sum) = (0.0, 0.0);
    for t in batch {
        let ru = users.binary_search(&t.u).unwrap();
        let ri = items.binary_search(&t.i).unwrap();
        let rj = items.binary_search(&t.j).unwrap();
        let (o_u, o_i, o_j) = (ou.row(ru), oi.row(ri), oi.row(rj));
        let l = pair_loss(cfg.loss, dot(o_u, o_i), dot(o_u, o_j), cfg.xi);
        let reg = cfg.reg * (dot(o_u, o_u) + dot(o_i, o_i) + dot(o_j, o_j));
        loss_sum += l.loss + reg;
        neg_sum += l.d_neg.abs();

        let gu_row = gu.row_mut(ru);
        axpy(scale * l.d_pos, o_i, gu_row);
        axpy(scale * l.d_neg, o_j, gu_row);
        axpy(scale * reg2, o_u, gu_row);
        axpy(scale * l.d_pos, o_u, gi.row_mut(ri));
        axpy(scale * reg2, o_i, gi.row_mut(ri));
        axpy(scale * l.d_neg, o_u, gi.row_mut(rj));
        axpy(scale * reg2, o_j, gi.row_mut(rj));
    }
    if !loss_sum.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite training loss ({loss_sum}); the learning rate {} is probably too high",
            cfg.learning_rate
        )));
    }
    model.backward_batch(&gu, &gi, cfg.learning_rate)?;
    Ok((loss_sum, neg_sum))
}

/// One pass of `|train pairs|` sampled triples in batches of `batch_size`.
pub fn train_epoch<M: Trainable>(
    model: &mut M,
    sampler: &TripleSampler,
    cfg: &TrainConfig,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpochStats> {
    let start = Instant::now();
    let total = sampler.train_pairs();
    let triples: Vec<Triple> = (0..total).map(|_| sampler.sample(rng)).collect();
    let (mut loss, mut neg) = (0.0, 0.0);
    for batch in triples.chunks(cfg.batch_size) {
        let (l, g) = train_batch(model, batch, cfg, rng)?;
        loss += l;
        neg += g;
    }
    Ok(EpochStats {
        epoch,
        loss: loss / total as f64,
        neg_grad: neg / total as f64,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub neg_grad: f64,
    pub valid_recall: Option<f64>,
    pub valid_ndcg: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Epoch 0 holds the metrics of the initial model.
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_ndcg: Option<f64>,
}

impl TrainHistory {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "loss", "recall@20(valid)", "ndcg@20(valid)", "seconds"])?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.loss.to_string(),
                opt(r.valid_recall),
                opt(r.valid_ndcg),
                r.seconds.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Validation metrics at cutoff 20.
pub fn validate<M: Trainable>(model: &M, ds: &InteractionDataset) -> Result<EvalReport> {
    let (ou, oi) = model.output_embeddings()?;
    let opts = EvalOptions {
        ks: vec![20],
        ..Default::default()
    };
    eval::evaluate_embeddings(&ou, &oi, ds, SplitLabel::Valid, &opts)
}

/// Trains for up to `cfg.epochs` epochs. When the dataset has a validation
/// split and `eval_every > 0`, the model with the best validation nDCG@20 is
/// kept and returned in place of the last one.
pub fn fit<M: Trainable + Clone>(model: &mut M, ds: &InteractionDataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    let sampler = TripleSampler::new(ds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let validating = cfg.eval_every > 0 && ds.count(SplitLabel::Valid) > 0;

    let mut records = Vec::with_capacity(cfg.epochs + 1);
    let initial = if validating { Some(validate(model, ds)?) } else { None };
    records.push(EpochRecord {
        epoch: 0,
        loss: f64::NAN,
        neg_grad: f64::NAN,
        valid_recall: initial.as_ref().map(|r| r.recall(20)),
        valid_ndcg: initial.as_ref().map(|r| r.ndcg(20)),
        seconds: 0.0,
    });
    let mut best: Option<(f64, usize, M)> = initial.as_ref().map(|r| (r.ndcg(20), 0, model.clone()));
    let mut stale = 0usize;

    for epoch in 1..=cfg.epochs {
        let stats = train_epoch(model, &sampler, cfg, epoch, &mut rng)?;
        let mut rec = EpochRecord {
            epoch,
            loss: stats.loss,
            neg_grad: stats.neg_grad,
            valid_recall: None,
            valid_ndcg: None,
            seconds: stats.seconds,
        };
        if validating && epoch % cfg.eval_every == 0 {
            let r = validate(model, ds)?;
            rec.valid_recall = Some(r.recall(20));
            rec.valid_ndcg = Some(r.ndcg(20));
            let score = r.ndcg(20);
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, epoch, model.clone()));
                stale = 0;
            } else {
                stale += 1;
            }
        }
        records.push(rec);
        if cfg.patience > 0 && stale >= cfg.patience {
            break;
        }
    }

    let (best_epoch, best_valid_ndcg) = match best {
        Some((score, epoch, m)) => {
            *model = m;
            (epoch, Some(score))
        }
        None => (records.last().map_or(0, |r| r.epoch), None),
    };
    Ok(TrainHistory {
        records,
        best_epoch,
        best_valid_ndcg,
    })
}

/// Shuffles a copy of `xs` with a seeded generator.
pub fn shuffled<T: Clone>(xs: &[T], seed: u64) -> Vec<T> {
    let mut v = xs.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bpr_reference_points() {
        let l = bpr_loss(0.3, 0.3);
        assert!((l.loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bpr_loss(800.0, -800.0).loss < 1e-300);
        assert!(bpr_loss(-800.0, 800.0).loss.is_finite());
    }

    #[test]
    fn delta_reference_points() {
        assert!((adaptive_delta(-1e3, 0.99) - 1.0).abs() < 1e-15);
        assert!((adaptive_delta(0.0, 0.99) - (1.0 + std::f64::consts::LN_2)).abs() < 1e-15);
        let cap = 1.0 - 0.01f64.ln();
        assert!((adaptive_delta(10.0, 0.99) - cap).abs() < 1e-12);
        assert!((cap - 5.605170185988092).abs() < 1e-12);
    }

    #[test]
    fn adaptive_reduces_to_bpr_for_very_negative_scores() {
        let a = adaptive_loss(0.7, -50.0, 0.99);
        let b = bpr_loss(0.7, -50.0);
        assert!((a.loss - b.loss).abs() < 1e-9);
    }

    #[test]
    fn adaptive_pushes_harder_on_positive_negatives() {
        let a = adaptive_loss(2.0, 2.0, 0.99);
        let b = bpr_loss(2.0, 2.0);
        assert!(a.d_neg.abs() >= b.d_neg.abs());
    }

    #[test]
    fn forced_triple() {
        let mut ds = InteractionDataset::from_pairs(1, 2, &[(0, 0)]).unwrap();
        ds.labels = Some(vec![SplitLabel::Train]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = sample_triples(&ds, 20, &mut rng).unwrap();
        assert!(t.iter().all(|t| *t == Triple { u: 0, i: 0, j: 1 }));
    }

    #[test]
    fn saturated_user_is_skipped() {
        // User 0 owns every item; only user 1 can produce triples.
        let mut ds = InteractionDataset::from_pairs(2, 2, &[(0, 0), (0, 1), (1, 0)]).unwrap();
        ds.labels = Some(vec![SplitLabel::Train; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = sample_triples(&ds, 50, &mut rng).unwrap();
        assert!(t.iter().all(|t| *t == Triple { u: 1, i: 0, j: 1 }));
    }
}
