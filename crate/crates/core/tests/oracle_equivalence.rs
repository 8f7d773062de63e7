mod oracles;

use jdetrack_core::assignment::solve;
use jdetrack_core::metriclearn::{
    self, Distance, LossConfig, LossVariant, MiningStrategy, Reduction, Selection,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn assignment_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let cost = oracles::random_cost(&mut rng, 6);
        let cutoff = if rng.random_bool(0.5) { 1e9 } else { rng.random_range(0.0..10.0) };
        let got = solve(&cost, cutoff).unwrap();
        let (k, total) = oracles::brute_force_assignment(&cost, cutoff);
        assert_eq!(got.matches.len(), k, "{cost}");
        assert_eq!(got.total_cost(&cost), total, "{cost}");
    }
}

#[test]
fn assignment_with_forbidden_entries() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let mut cost = oracles::random_cost(&mut rng, 5);
        cost.iter_mut().for_each(|c| {
            if rng.random_bool(0.3) {
                *c = f64::INFINITY;
            }
        });
        let got = solve(&cost, 15.0).unwrap();
        let (k, total) = oracles::brute_force_assignment(&cost, 15.0);
        assert_eq!((got.matches.len(), got.total_cost(&cost)), (k, total), "{cost}");
        for &(r, c) in &got.matches {
            assert!(cost[(r, c)] <= 15.0);
        }
    }
}

fn strategies() -> Vec<MiningStrategy> {
    let mut all = MiningStrategy::ALL.to_vec();
    all.push(MiningStrategy::new(Selection::Easy, Selection::Easy).unwrap());
    all
}

#[test]
fn miner_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..60 {
        let batch = oracles::random_batch(&mut rng, 32, 8, 6);
        let keep = if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.1..1.0) };
        for metric in [Distance::Euclidean, Distance::Cosine] {
            for s in strategies() {
                let got = metriclearn::mine(&batch, s, keep, metric);
                let want = oracles::brute_force_mine(&batch, s.positive(), s.negative(), keep, metric);
                assert_eq!(got, want, "strategy {s}, keep {keep}, {metric:?}");
            }
        }
    }
}

#[test]
fn mined_triplets_are_valid_and_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..30 {
        let batch = oracles::random_batch(&mut rng, 40, 6, 5);
        for s in strategies() {
            let t = metriclearn::mine(&batch, s, 1.0, Distance::Euclidean);
            assert!(t.len() <= batch.len());
            assert_eq!(t, metriclearn::mine(&batch, s, 1.0, Distance::Euclidean));
            for tr in &t {
                assert_ne!(tr.anchor, tr.positive);
                assert_eq!(batch.labels[tr.anchor], batch.labels[tr.positive]);
                assert_ne!(batch.labels[tr.anchor], batch.labels[tr.negative]);
            }
        }
    }
}

#[test]
fn keep_fraction_limits_pool() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let batch = oracles::random_batch(&mut rng, 64, 4, 4);
    let kept = metriclearn::most_confident(&batch.confidences, 0.5);
    assert_eq!(kept.len(), batch.len().div_ceil(2));
    let t = metriclearn::mine(&batch, MiningStrategy::default(), 0.5, Distance::Euclidean);
    for tr in t {
        for i in [tr.anchor, tr.positive, tr.negative] {
            assert!(kept.contains(&i));
        }
    }
}

fn unit_rows(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut r in m.row_iter_mut() {
        let n = r.norm();
        r /= n;
    }
    m
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for variant in [LossVariant::Hinge, LossVariant::Smooth, LossVariant::Swap] {
        for distance in [Distance::Euclidean, Distance::Cosine] {
            let cfg = LossConfig {
                variant,
                distance,
                margin: 0.3,
                weight: 0.7,
                reduction: Reduction::Mean,
                ..LossConfig::default()
            };
            let mut checked = 0;
            while checked < 10 {
                let batch = oracles::random_batch(&mut rng, 16, 6, 4);
                let embs = unit_rows(batch.embeddings.clone());
                let triplets = metriclearn::mine(
                    &metriclearn::TripletBatch::new(embs.clone(), batch.labels.clone(), batch.confidences.clone()).unwrap(),
                    MiningStrategy::new(Selection::Hard, Selection::Hard).unwrap(),
                    1.0,
                    distance,
                );
                if triplets.is_empty() || !oracles::away_from_kinks(&embs, &triplets, &cfg, 1e-3) {
                    continue;
                }
                let (_, grad) = metriclearn::triplet_loss(&embs, &triplets, &cfg).unwrap();
                let fd = oracles::fd_gradient(&embs, &triplets, &cfg, 1e-5);
                let err = oracles::relative_error(&grad, &fd);
                assert!(err < 1e-4, "{variant:?}/{distance:?}: {err}");
                checked += 1;
            }
        }
    }
}

fn arb_embs() -> impl Strategy<Value = (DMatrix<f64>, Vec<i64>)> {
    (3usize..12, 1usize..5).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(-1.0..1.0f64, n * d).prop_map(move |v| DMatrix::from_row_slice(n, d, &v)),
            prop::collection::vec(0i64..3, n),
        )
    })
}

proptest! {
    #[test]
    fn loss_is_translation_invariant((embs, labels) in arb_embs(), shift in prop::collection::vec(-3.0..3.0f64, 4)) {
        let n = embs.nrows();
        let batch = metriclearn::TripletBatch::new(embs.clone(), labels, vec![1.0; n]).unwrap();
        let t = metriclearn::mine(&batch, MiningStrategy::default(), 1.0, Distance::Euclidean);
        let shifted = DMatrix::from_fn(n, embs.ncols(), |i, c| embs[(i, c)] + shift[c % shift.len()]);
        for variant in [LossVariant::Hinge, LossVariant::Smooth, LossVariant::Swap] {
            let cfg = LossConfig { variant, ..LossConfig::default() };
            let a = metriclearn::triplet_loss(&embs, &t, &cfg).unwrap().0;
            let b = metriclearn::triplet_loss(&shifted, &t, &cfg).unwrap().0;
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_monotone_in_margin((embs, labels) in arb_embs(), m1 in 0.01..1.0f64, dm in 0.0..1.0f64) {
        let n = embs.nrows();
        let batch = metriclearn::TripletBatch::new(embs.clone(), labels, vec![1.0; n]).unwrap();
        let t = metriclearn::mine(&batch, MiningStrategy::new(Selection::Easy, Selection::Hard).unwrap(), 1.0, Distance::Euclidean);
        for variant in [LossVariant::Hinge, LossVariant::Smooth, LossVariant::Swap] {
            let lo = LossConfig { variant, margin: m1, ..LossConfig::default() };
            let hi = LossConfig { margin: m1 + dm, ..lo };
            let a = metriclearn::triplet_loss(&embs, &t, &lo).unwrap().0;
            let b = metriclearn::triplet_loss(&embs, &t, &hi).unwrap().0;
            prop_assert!(b >= a);
            prop_assert!(a >= 0.0);
            if variant == LossVariant::Smooth && !t.is_empty() {
                prop_assert!(a > 0.0);
            }
        }
    }

    #[test]
    fn assignment_is_optimal_for_random_tall_and_wide(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cost = oracles::random_cost(&mut rng, 5);
        let got = solve(&cost, 6.0).unwrap();
        let (k, total) = oracles::brute_force_assignment(&cost, 6.0);
        prop_assert_eq!(got.matches.len(), k);
        prop_assert_eq!(got.total_cost(&cost), total);
        let mut rows: Vec<usize> = got.matches.iter().map(|m| m.0).chain(got.unmatched_rows.iter().copied()).collect();
        rows.sort_unstable();
        prop_assert_eq!(rows, (0..cost.nrows()).collect::<Vec<_>>());
    }
}
