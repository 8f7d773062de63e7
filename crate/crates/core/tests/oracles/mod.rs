//! Slow, obviously-correct reference implementations used by the
//! equivalence tests.

#![allow(dead_code)]

use jdetrack_core::metriclearn::{Distance, LossConfig, Selection, Triplet, TripletBatch};
use jdetrack_core::metriclearn;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Best partial matching by exhaustive search: most admissible pairs first,
/// then least total cost. Returns `(cardinality, total)`; totals are summed
/// in row order.
pub fn brute_force_assignment(cost: &DMatrix<f64>, max_cost: f64) -> (usize, f64) {
    fn go(
        cost: &DMatrix<f64>,
        max_cost: f64,
        row: usize,
        used: &mut Vec<bool>,
        picked: &mut Vec<f64>,
        best: &mut (usize, f64),
    ) {
        if row == cost.nrows() {
            let total = picked.iter().fold(0.0, |acc, c| acc + c);
            let k = picked.len();
            if k > best.0 || (k == best.0 && total < best.1) {
                *best = (k, total);
            }
            return;
        }
        go(cost, max_cost, row + 1, used, picked, best);
        for c in 0..cost.ncols() {
            if !used[c] && cost[(row, c)] <= max_cost {
                used[c] = true;
                picked.push(cost[(row, c)]);
                go(cost, max_cost, row + 1, used, picked, best);
                picked.pop();
                used[c] = false;
            }
        }
    }
    let mut best = (0, 0.0);
    go(cost, max_cost, 0, &mut vec![false; cost.ncols()], &mut Vec::new(), &mut best);
    best
}

/// Random cost matrix: integer-valued (many ties) or continuous.
pub fn random_cost(rng: &mut ChaCha8Rng, max_dim: usize) -> DMatrix<f64> {
    let n = rng.random_range(0..=max_dim);
    let m = rng.random_range(0..=max_dim);
    if rng.random_bool(0.5) {
        DMatrix::from_fn(n, m, |_, _| rng.random_range(0..10) as f64)
    } else {
        DMatrix::from_fn(n, m, |_, _| rng.random_range(-5.0..20.0))
    }
}

fn dist(e: &DMatrix<f64>, i: usize, j: usize, metric: Distance) -> f64 {
    if i == j {
        return 0.0;
    }
    let mut dot = 0.0;
    let mut ni = 0.0;
    let mut nj = 0.0;
    let mut sq = 0.0;
    for c in 0..e.ncols() {
        let (a, b) = (e[(i, c)], e[(j, c)]);
        dot += a * b;
        ni += a * a;
        nj += b * b;
        sq += (a - b) * (a - b);
    }
    match metric {
        Distance::Euclidean => sq.sqrt(),
        Distance::Cosine if ni * nj > 0.0 => 1.0 - dot / (ni * nj).sqrt(),
        Distance::Cosine => 1.0,
    }
}

/// Indices kept by confidence filtering: sample `i` survives when fewer
/// than `K = ceil(keep · N)` samples outrank it.
pub fn kept_by_confidence(conf: &[f64], keep: f64) -> Vec<bool> {
    let n = conf.len();
    let target = keep * n as f64;
    let k = (0..=n).find(|&k| k as f64 >= target - 1e-9).unwrap_or(n);
    (0..n)
        .map(|i| {
            let outranked = (0..n)
                .filter(|&j| conf[j] > conf[i] || (conf[j] == conf[i] && j < i))
                .count();
            outranked < k
        })
        .collect()
}

/// `cand` is the largest (or smallest) element of `pool` under `key` (strictly better
/// wins, equal keys favour the lower index).
fn is_extreme(
    cand: usize,
    pool: &[usize],
    key: &dyn Fn(usize) -> f64,
    larger: bool,
) -> bool {
    pool.iter().all(|&q| {
        let (kq, kc) = (key(q), key(cand));
        let beats = if larger { kq > kc } else { kq < kc };
        !beats && !(kq == kc && q < cand)
    })
}

/// Exhaustive miner: for every anchor, scans all `(p, n)` pairs and keeps
/// the one pair satisfying both selection predicates.
pub fn brute_force_mine(
    batch: &TripletBatch,
    positive: Selection,
    negative: Selection,
    keep: f64,
    metric: Distance,
) -> Vec<Triplet> {
    let n = batch.len();
    let e = &batch.embeddings;
    let kept = kept_by_confidence(&batch.confidences, keep);
    let lab = &batch.labels;
    let mut out = Vec::new();
    for a in 0..n {
        if !kept[a] {
            continue;
        }
        let d = |j: usize| dist(e, a, j, metric);
        let pos: Vec<usize> = (0..n).filter(|&j| kept[j] && j != a && lab[j] == lab[a]).collect();
        let neg: Vec<usize> = (0..n).filter(|&j| kept[j] && lab[j] != lab[a]).collect();
        let semi_pos: Vec<usize> = pos.iter().copied().filter(|&q| neg.iter().all(|&k| d(q) < d(k))).collect();
        let mut found = Vec::new();
        for &p in &pos {
            let p_ok = match positive {
                Selection::Hard => is_extreme(p, &pos, &d, true),
                Selection::Easy => is_extreme(p, &pos, &d, false),
                Selection::SemiHard => semi_pos.contains(&p) && is_extreme(p, &semi_pos, &d, true),
            };
            if !p_ok {
                continue;
            }
            let beyond: Vec<usize> = neg.iter().copied().filter(|&q| d(q) > d(p)).collect();
            for &k in &neg {
                let n_ok = match negative {
                    Selection::Hard => is_extreme(k, &neg, &d, false),
                    Selection::Easy => is_extreme(k, &neg, &d, true),
                    Selection::SemiHard => d(k) > d(p) && is_extreme(k, &beyond, &d, false),
                };
                if n_ok {
                    found.push(Triplet { anchor: a, positive: p, negative: k });
                }
            }
        }
        assert!(found.len() <= 1, "selection predicates must be unique");
        out.extend(found);
    }
    out
}

/// Labeled batch with clustered rows; duplicates rows now and then so
/// that exact distance ties occur.
pub fn random_batch(rng: &mut ChaCha8Rng, max_n: usize, max_d: usize, max_ids: usize) -> TripletBatch {
    let n = rng.random_range(1..=max_n);
    let d = rng.random_range(1..=max_d);
    let ids = rng.random_range(1..=max_ids);
    let centers = DMatrix::from_fn(ids, d, |_, _| rng.random_range(-1.0..1.0));
    let spread = rng.random_range(0.05..1.0);
    let labels: Vec<i64> = (0..n).map(|_| rng.random_range(0..ids) as i64).collect();
    let mut e = DMatrix::from_fn(n, d, |i, c| centers[(labels[i] as usize, c)] + rng.random_range(-spread..spread));
    for i in 1..n {
        if rng.random_bool(0.1) {
            let src = rng.random_range(0..i);
            let row = e.row(src).into_owned();
            e.set_row(i, &row);
        }
    }
    let confidences = (0..n)
        .map(|_| if rng.random_bool(0.2) { 0.5 } else { rng.random_range(0.0..=1.0) })
        .collect();
    TripletBatch::new(e, labels, confidences).unwrap()
}

/// Central finite-difference gradient of the loss at fixed triplets.
pub fn fd_gradient(embs: &DMatrix<f64>, triplets: &[Triplet], cfg: &LossConfig, h: f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(embs.nrows(), embs.ncols());
    let mut x = embs.clone();
    for i in 0..embs.nrows() {
        for c in 0..embs.ncols() {
            let orig = x[(i, c)];
            x[(i, c)] = orig + h;
            let up = metriclearn::triplet_loss(&x, triplets, cfg).unwrap().0;
            x[(i, c)] = orig - h;
            let down = metriclearn::triplet_loss(&x, triplets, cfg).unwrap().0;
            x[(i, c)] = orig;
            g[(i, c)] = (up - down) / (2.0 * h);
        }
    }
    g
}

/// Max absolute difference scaled by the largest gradient magnitude.
pub fn relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    let diff = (analytic - numeric).abs().max();
    let scale = analytic.abs().max().max(numeric.abs().max()).max(1e-8);
    diff / scale
}

/// True when every triplet sits at least `eps` away from a kink of the
/// loss (hinge corner, swap switch, coincident points).
pub fn away_from_kinks(embs: &DMatrix<f64>, triplets: &[Triplet], cfg: &LossConfig, eps: f64) -> bool {
    triplets.iter().all(|t| {
        let dap = dist(embs, t.anchor, t.positive, cfg.distance);
        let dan = dist(embs, t.anchor, t.negative, cfg.distance);
        let dpn = dist(embs, t.positive, t.negative, cfg.distance);
        let dneg = if cfg.variant == metriclearn::LossVariant::Swap { dan.min(dpn) } else { dan };
        let z = dap - dneg + cfg.margin;
        let swap_ok = cfg.variant != metriclearn::LossVariant::Swap || (dan - dpn).abs() > eps;
        z.abs() > eps && swap_ok && dap > eps && dan > eps && dpn > eps
    })
}
