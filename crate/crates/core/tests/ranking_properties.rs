use gde_core::eval::{evaluate, ndcg_at_k, rank_items, recall_at_k, EvalOptions, RecallNormalization};
use gde_core::linalg::DenseMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scores_and_relevant() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (5usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::btree_set(0..n, 1..n.min(12)).prop_map(|s| s.into_iter().collect()),
        )
    })
}

proptest! {
    #[test]
    fn ranking_is_invariant_under_increasing_transforms((scores, _) in scores_and_relevant(), k in 1usize..5) {
        let k = k.min(scores.len());
        let moved: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 3.0).collect();
        prop_assert_eq!(rank_items(&scores, &[], k).unwrap(), rank_items(&moved, &[], k).unwrap());
    }

    #[test]
    fn metrics_are_bounded_and_recall_grows_with_k((scores, relevant) in scores_and_relevant()) {
        let ranked = rank_items(&scores, &[], scores.len()).unwrap();
        let mut last = 0.0;
        for k in 1..=scores.len() {
            let r = recall_at_k(&ranked, &relevant, k).unwrap();
            let n = ndcg_at_k(&ranked, &relevant, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&r) && (0.0..=1.0).contains(&n));
            prop_assert!(r >= last - 1e-12);
            last = r;
        }
        prop_assert!((last - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_order_scores_exactly_one((scores, relevant) in scores_and_relevant(), k in 1usize..20) {
        let mut boosted = scores.clone();
        for &i in &relevant {
            boosted[i] = 100.0 + i as f64;
        }
        let ranked = rank_items(&boosted, &[], boosted.len()).unwrap();
        prop_assert_eq!(ndcg_at_k(&ranked, &relevant, k).unwrap(), 1.0);
    }

    #[test]
    fn excluded_items_never_appear((scores, excluded) in scores_and_relevant()) {
        let k = scores.len() - excluded.len();
        let ranked = rank_items(&scores, &excluded, k).unwrap();
        prop_assert!(ranked.iter().all(|i| !excluded.contains(i)));
        prop_assert!(ranked.windows(2).all(|w| scores[w[0]] >= scores[w[1]]));
    }
}

#[test]
fn random_scores_sit_near_the_chance_level() {
    let (users, items, k) = (400, 500, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let relevant: Vec<Vec<usize>> = (0..users)
        .map(|_| {
            let mut v: Vec<usize> = (0..5).map(|_| rng.random_range(0..items)).collect();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect();
    let exclude = vec![Vec::new(); users];
    let eligible = vec![true; users];
    let opts = EvalOptions {
        ks: vec![k],
        normalization: RecallNormalization::Relevant,
        per_user: false,
    };
    let mut recall = 0.0;
    let seeds = 20;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let r = evaluate(items, &relevant, &exclude, &eligible, &opts, |_, out: &mut DenseMatrix| {
            out.data_mut().iter_mut().for_each(|x| *x = rng.random());
        })
        .unwrap();
        recall += r.recall(k) / seeds as f64;
    }
    let chance = k as f64 / items as f64;
    assert!((recall - chance).abs() < 0.2 * chance, "recall {recall} vs chance {chance}");
}
