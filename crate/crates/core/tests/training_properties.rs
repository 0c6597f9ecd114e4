use gde_core::baselines::MfModel;
use gde_core::dataio::{split, synthetic, InteractionDataset, SplitConfig, SplitLabel};
use gde_core::linalg::DenseMatrix;
use gde_core::train::{
    adaptive_delta, adaptive_loss, bpr_loss, fit, train_batch, train_epoch, LossKind, TrainConfig, Triple, TripleSampler,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const XI: f64 = 0.99;

fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-5;
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-6 * numeric.abs().max(1.0)
}

#[test]
fn loss_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let (p, n): (f64, f64) = (rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0));
        let b = bpr_loss(p, n);
        assert!(close(b.d_pos, central(|x| bpr_loss(x, n).loss, p)));
        assert!(close(b.d_neg, central(|x| bpr_loss(p, x).loss, n)));
        let a = adaptive_loss(p, n, XI);
        // The scaling factor is held fixed when differentiating.
        let delta = adaptive_delta(n, XI);
        let frozen = |pos: f64, neg: f64| bpr_loss(pos, delta * neg).loss;
        assert!(close(a.d_pos, central(|x| frozen(x, n), p)));
        assert!(close(a.d_neg, central(|x| frozen(p, x), n)));
    }
}

proptest! {
    #[test]
    fn delta_is_at_least_one_and_capped(r in -50.0f64..50.0) {
        let d = adaptive_delta(r, XI);
        prop_assert!(d >= 1.0);
        prop_assert!(d <= 1.0 - (1.0 - XI).ln() + 1e-12);
    }

    #[test]
    fn delta_is_nondecreasing(a in -20.0f64..20.0, b in -20.0f64..20.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(adaptive_delta(lo, XI) <= adaptive_delta(hi, XI));
    }

    #[test]
    fn adaptive_dominates_bpr_for_nonnegative_negatives(p in -10.0f64..10.0, n in 0.0f64..10.0) {
        prop_assert!(adaptive_loss(p, n, XI).loss >= bpr_loss(p, n).loss - 1e-12);
    }

    #[test]
    fn negatives_get_larger_gradients_when_likely(p in -10.0f64..10.0, n in 1e-6f64..10.0) {
        prop_assert!(adaptive_loss(p, n, XI).d_neg.abs() >= bpr_loss(p, n).d_neg.abs());
    }
}

#[test]
fn positive_pairs_are_sampled_uniformly() {
    let ds = synthetic(1000, 400, 8, 25, 3).unwrap();
    let ds = split(&ds, &SplitConfig::new(0.8, 0.0, 3)).unwrap();
    let pairs = ds.pairs_with(SplitLabel::Train).unwrap();
    let index: std::collections::HashMap<(usize, usize), usize> = pairs.iter().enumerate().map(|(k, &p)| (p, k)).collect();
    let sampler = TripleSampler::new(&ds).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 100_000;
    let mut counts = vec![0usize; pairs.len()];
    for _ in 0..draws {
        let t = sampler.sample(&mut rng);
        counts[index[&(t.u, t.i)]] += 1;
    }
    let expected = draws as f64 / pairs.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // Upper 1% point of chi-square by the Wilson-Hilferty approximation.
    let df = (pairs.len() - 1) as f64;
    let z = 2.326_347_874;
    let critical = df * (1.0 - 2.0 / (9.0 * df) + z * (2.0 / (9.0 * df)).sqrt()).powi(3);
    assert!(chi2 < critical, "chi2 {chi2} exceeds {critical}");
}

#[test]
fn negatives_are_unobserved() {
    let ds = small();
    let train = ds.user_items(&[SplitLabel::Train]).unwrap();
    let sampler = TripleSampler::new(&ds).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5000 {
        let t = sampler.sample(&mut rng);
        assert!(train[t.u].binary_search(&t.i).is_ok());
        assert!(train[t.u].binary_search(&t.j).is_err());
    }
}

fn small() -> InteractionDataset {
    let ds = synthetic(60, 40, 3, 8, 2).unwrap();
    split(&ds, &SplitConfig::new(0.6, 0.1, 2)).unwrap()
}

fn config(loss: LossKind, lr: f64) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        loss,
        epochs: 5,
        seed: 9,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let ds = small();
    let mut model = MfModel::new(60, 40, 8, 1).unwrap();
    let before = model.clone();
    let cfg = config(LossKind::Bpr, 0.0);
    let sampler = TripleSampler::new(&ds).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = train_epoch(&mut model, &sampler, &cfg, 1, &mut rng).unwrap();
    let b = train_epoch(&mut model, &sampler, &cfg, 2, &mut rng).unwrap();
    assert_eq!(model.user_embedding, before.user_embedding);
    assert_eq!(model.item_embedding, before.item_embedding);
    // Only the sampled triples differ between the two epochs.
    assert!((a.loss - b.loss).abs() < 0.05);
}

#[test]
fn one_mf_step_matches_the_hand_gradient() {
    let eu = DenseMatrix::from_rows(&[vec![0.1, 0.2]]).unwrap();
    let ei = DenseMatrix::from_rows(&[vec![0.3, -0.1], vec![0.2, 0.4]]).unwrap();
    let mut model = MfModel::from_embeddings(eu.clone(), ei.clone());
    let cfg = TrainConfig {
        learning_rate: 0.5,
        reg: 0.01,
        loss: LossKind::Bpr,
        ..TrainConfig::default()
    };
    let batch = [Triple { u: 0, i: 0, j: 1 }];
    train_batch(&mut model, &batch, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let (u, i, j) = (eu.row(0), ei.row(0), ei.row(1));
    let x: f64 = u.iter().zip(i).map(|(a, b)| a * b).sum::<f64>() - u.iter().zip(j).map(|(a, b)| a * b).sum::<f64>();
    let g = -1.0 / (1.0 + x.exp());
    let (lr, reg) = (0.5, 0.01);
    for k in 0..2 {
        let du = g * (i[k] - j[k]) + 2.0 * reg * u[k];
        let di = g * u[k] + 2.0 * reg * i[k];
        let dj = -g * u[k] + 2.0 * reg * j[k];
        assert!((model.user_embedding.get(0, k) - (u[k] - lr * du)).abs() < 1e-12);
        assert!((model.item_embedding.get(0, k) - (i[k] - lr * di)).abs() < 1e-12);
        assert!((model.item_embedding.get(1, k) - (j[k] - lr * dj)).abs() < 1e-12);
    }
}

#[test]
fn fixed_seed_gives_identical_trajectories() {
    let ds = small();
    let run = || {
        let mut model = MfModel::new(60, 40, 8, 4).unwrap();
        let h = fit(&mut model, &ds, &config(LossKind::Adaptive, 0.05)).unwrap();
        (h.records.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>(), model)
    };
    assert_eq!(run(), run());
}

#[test]
fn divergence_is_reported() {
    let ds = small();
    let mut model = MfModel::new(60, 40, 8, 4).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        ..config(LossKind::Bpr, 1e6)
    };
    let err = fit(&mut model, &ds, &cfg).unwrap_err();
    assert_eq!(err.category(), gde_core::ErrorCategory::Numeric);
}
