//! Full-ranking top-k evaluation: Recall@k and nDCG@k over held-out items.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataio::{InteractionDataset, SplitLabel};
use crate::error::{Error, Result};
use crate::linalg::{gemm, DenseMatrix};

/// Denominator used by Recall@k.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RecallNormalization {
    /// `hits / min(k, |relevant|)`, so a perfect top-k scores 1 even when the
    /// user has more than `k` held-out items.
    #[default]
    Truncated,
    /// `hits / |relevant|`
    Relevant,
}

fn by_score_then_id(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        let (sa, sb) = (scores[a], scores[b]);
        // NaN sorts last.
        let sa = if sa.is_nan() { f64::NEG_INFINITY } else { sa };
        let sb = if sb.is_nan() { f64::NEG_INFINITY } else { sb };
        sb.total_cmp(&sa).then(a.cmp(&b))
    }
}

/// Top `k` item ids by descending score, skipping `exclude` (sorted), ties
/// broken by ascending id.
pub fn rank_items(scores: &[f64], exclude: &[usize], k: usize) -> Result<Vec<usize>> {
    let mut candidates: Vec<usize> = Vec::with_capacity(scores.len());
    let mut ex = exclude.iter().peekable();
    for i in 0..scores.len() {
        while ex.peek().is_some_and(|&&e| e < i) {
            ex.next();
        }
        if ex.peek() == Some(&&i) {
            continue;
        }
        candidates.push(i);
    }
    if k > candidates.len() {
        return Err(Error::config(format!(
            "cannot rank {k} items from {} candidates",
            candidates.len()
        )));
    }
    let cmp = by_score_then_id(scores);
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, &cmp);
        candidates.truncate(k);
    }
    candidates.sort_by(&cmp);
    Ok(candidates)
}

fn hits<'a>(ranked: &'a [usize], relevant: &'a [usize], k: usize) -> impl Iterator<Item = usize> + 'a {
    ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.binary_search(i).is_ok())
        .map(|(p, _)| p)
}

/// `|top-k ∩ relevant| / |relevant|`; `None` for an empty relevant set.
/// `relevant` must be sorted.
pub fn recall_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Option<f64> {
    recall_at_k_with(ranked, relevant, k, RecallNormalization::Relevant)
}

pub fn recall_at_k_with(ranked: &[usize], relevant: &[usize], k: usize, norm: RecallNormalization) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let h = hits(ranked, relevant, k).count() as f64;
    let denom = match norm {
        RecallNormalization::Relevant => relevant.len(),
        RecallNormalization::Truncated => relevant.len().min(k),
    };
    Some(if denom == 0 { 0.0 } else { h / denom as f64 })
}

/// Binary-relevance nDCG with gains `1/log2(p+1)` at 1-based position `p`.
pub fn ndcg_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let dcg: f64 = hits(ranked, relevant, k).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
    let ideal: f64 = (0..relevant.len().min(k)).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
    Some(if ideal == 0.0 { 0.0 } else { dcg / ideal })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerUserMetrics {
    pub users: Vec<usize>,
    pub recall_at_k: BTreeMap<usize, Vec<f64>>,
    pub ndcg_at_k: BTreeMap<usize, Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at_k: BTreeMap<usize, f64>,
    pub ndcg_at_k: BTreeMap<usize, f64>,
    pub users_evaluated: usize,
    pub recall_normalization: RecallNormalization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_user: Option<PerUserMetrics>,
}

impl EvalReport {
    pub fn recall(&self, k: usize) -> f64 {
        self.recall_at_k.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn ndcg(&self, k: usize) -> f64 {
        self.ndcg_at_k.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub normalization: RecallNormalization,
    pub per_user: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: vec![10, 20],
            normalization: RecallNormalization::Truncated,
            per_user: false,
        }
    }
}

/// Averages metrics over users that have at least one relevant item and are
/// marked `eligible`. `score_block` fills scores for a block of users, one
/// row per user.
pub fn evaluate<F>(
    item_count: usize,
    relevant: &[Vec<usize>],
    exclude: &[Vec<usize>],
    eligible: &[bool],
    opts: &EvalOptions,
    mut score_block: F,
) -> Result<EvalReport>
where
    F: FnMut(&[usize], &mut DenseMatrix),
{
    if opts.ks.is_empty() || opts.ks.contains(&0) {
        return Err(Error::config("cutoffs must be a non-empty list of positive integers"));
    }
    let kmax = *opts.ks.iter().max().unwrap();
    let users: Vec<usize> = (0..relevant.len())
        .filter(|&u| eligible[u] && !relevant[u].is_empty())
        .collect();
    let mut recall_sum: BTreeMap<usize, f64> = opts.ks.iter().map(|&k| (k, 0.0)).collect();
    let mut ndcg_sum = recall_sum.clone();
    let mut per_user = opts.per_user.then(|| PerUserMetrics {
        users: users.clone(),
        recall_at_k: opts.ks.iter().map(|&k| (k, Vec::new())).collect(),
        ndcg_at_k: opts.ks.iter().map(|&k| (k, Vec::new())).collect(),
    });

    const BLOCK: usize = 256;
    let mut scores = DenseMatrix::zeros(0, 0);
    for chunk in users.chunks(BLOCK) {
        if scores.rows() != chunk.len() {
            scores = DenseMatrix::zeros(chunk.len(), item_count);
        }
        score_block(chunk, &mut scores);
        for (r, &u) in chunk.iter().enumerate() {
            let available = item_count - exclude[u].len();
            let ranked = rank_items(scores.row(r), &exclude[u], kmax.min(available))?;
            for &k in &opts.ks {
                let rec = recall_at_k_with(&ranked, &relevant[u], k, opts.normalization).unwrap();
                let nd = ndcg_at_k(&ranked, &relevant[u], k).unwrap();
                *recall_sum.get_mut(&k).unwrap() += rec;
                *ndcg_sum.get_mut(&k).unwrap() += nd;
                if let Some(pu) = per_user.as_mut() {
                    pu.recall_at_k.get_mut(&k).unwrap().push(rec);
                    pu.ndcg_at_k.get_mut(&k).unwrap().push(nd);
                }
            }
        }
    }
    let n = users.len().max(1) as f64;
    Ok(EvalReport {
        recall_at_k: recall_sum.into_iter().map(|(k, v)| (k, v / n)).collect(),
        ndcg_at_k: ndcg_sum.into_iter().map(|(k, v)| (k, v / n)).collect(),
        users_evaluated: users.len(),
        recall_normalization: opts.normalization,
        per_user,
    })
}

/// Evaluates inner-product scores of output embeddings against the pairs
/// labelled `target`. Items seen in training (and, for the test split, in
/// validation) are removed from the candidates; users without training pairs
/// are skipped.
pub fn evaluate_embeddings(
    users: &DenseMatrix,
    items: &DenseMatrix,
    ds: &InteractionDataset,
    target: SplitLabel,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let exclude_labels: &[SplitLabel] = match target {
        SplitLabel::Test => &[SplitLabel::Train, SplitLabel::Valid],
        _ => &[SplitLabel::Train],
    };
    let relevant = ds.user_items(&[target])?;
    let exclude = ds.user_items(exclude_labels)?;
    let eligible = ds.warm_users()?;
    if users.rows() != ds.user_count || items.rows() != ds.item_count {
        return Err(Error::input("embedding tables do not match the dataset"));
    }
    evaluate(ds.item_count, &relevant, &exclude, &eligible, opts, |block, out| {
        let u = users.select_rows(block);
        gemm(out, false, u.view(), items.view().transpose(), 1.0);
    })
}
