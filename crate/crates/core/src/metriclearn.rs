//! Triplet mining, triplet losses and embedding diagnostics.
//!
//! Mining emits at most one triplet per anchor. The positive is picked first
//! and the negative rule may depend on it (semi-hard negatives must lie
//! beyond the chosen positive). All selections break ties toward the lowest
//! index, so mining is a pure function of the batch.

use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Distance {
    #[default]
    Euclidean,
    /// `1 − cos(x, y)`.
    Cosine,
}

impl FromStr for Distance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Distance::Euclidean),
            "cosine" => Ok(Distance::Cosine),
            o => Err(Error::invalid(format!("unknown distance `{o}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossVariant {
    #[default]
    Hinge,
    /// Softplus in place of the hinge.
    Smooth,
    /// Uses `min(d_an, d_pn)` as the negative distance.
    Swap,
}

impl FromStr for LossVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hinge" => Ok(LossVariant::Hinge),
            "smooth" | "softplus" => Ok(LossVariant::Smooth),
            "swap" => Ok(LossVariant::Swap),
            o => Err(Error::invalid(format!("unknown loss variant `{o}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

impl FromStr for Reduction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            o => Err(Error::invalid(format!("unknown reduction `{o}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    pub variant: LossVariant,
    pub distance: Distance,
    pub weight: f64,
    pub confidence_keep_fraction: f64,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 0.075,
            variant: LossVariant::Hinge,
            distance: Distance::Euclidean,
            weight: 1.0,
            confidence_keep_fraction: 1.0,
            reduction: Reduction::Sum,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, msg: String| Error::Config {
            key: key.into(),
            msg,
        };
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(err("margin", format!("{} must be positive", self.margin)));
        }
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(err("weight", format!("{} must be non-negative", self.weight)));
        }
        if !(0.0..=1.0).contains(&self.confidence_keep_fraction) {
            return Err(err(
                "confidence_keep_fraction",
                format!("{} is outside [0, 1]", self.confidence_keep_fraction),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Selection {
    Hard,
    SemiHard,
    Easy,
}

impl FromStr for Selection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "hard" => Ok(Selection::Hard),
            "semihard" => Ok(Selection::SemiHard),
            "easy" => Ok(Selection::Easy),
            o => Err(Error::invalid(format!("unknown selection `{o}`"))),
        }
    }
}

/// Positive and negative selection rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MiningStrategy {
    positive: Selection,
    negative: Selection,
}

impl MiningStrategy {
    /// The seven supported combinations; semi-hard on both sides is excluded.
    pub const ALL: [MiningStrategy; 7] = [
        MiningStrategy::of(Selection::Hard, Selection::Hard),
        MiningStrategy::of(Selection::Hard, Selection::SemiHard),
        MiningStrategy::of(Selection::Hard, Selection::Easy),
        MiningStrategy::of(Selection::SemiHard, Selection::Hard),
        MiningStrategy::of(Selection::SemiHard, Selection::Easy),
        MiningStrategy::of(Selection::Easy, Selection::Hard),
        MiningStrategy::of(Selection::Easy, Selection::SemiHard),
    ];

    const fn of(positive: Selection, negative: Selection) -> Self {
        MiningStrategy { positive, negative }
    }

    pub fn new(positive: Selection, negative: Selection) -> Result<Self> {
        if positive == Selection::SemiHard && negative == Selection::SemiHard {
            return Err(Error::invalid(
                "semi-hard positives with semi-hard negatives is not a supported strategy",
            ));
        }
        Ok(Self::of(positive, negative))
    }

    pub fn positive(&self) -> Selection {
        self.positive
    }

    pub fn negative(&self) -> Selection {
        self.negative
    }
}

impl Default for MiningStrategy {
    fn default() -> Self {
        Self::of(Selection::Hard, Selection::SemiHard)
    }
}

impl FromStr for MiningStrategy {
    type Err = Error;
    /// Parses `"POS,NEG"`, e.g. `"hard,semihard"`.
    fn from_str(s: &str) -> Result<Self> {
        let (p, n) = s
            .split_once(',')
            .ok_or_else(|| Error::invalid(format!("expected POS,NEG, got `{s}`")))?;
        MiningStrategy::new(p.parse()?, n.parse()?)
    }
}

impl std::fmt::Display for MiningStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = |s: Selection| match s {
            Selection::Hard => "hard",
            Selection::SemiHard => "semihard",
            Selection::Easy => "easy",
        };
        write!(f, "{},{}", name(self.positive), name(self.negative))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// `N` embeddings (rows) with identity labels and detection confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub embeddings: DMatrix<f64>,
    pub labels: Vec<i64>,
    pub confidences: Vec<f64>,
}

impl TripletBatch {
    pub fn new(embeddings: DMatrix<f64>, labels: Vec<i64>, confidences: Vec<f64>) -> Result<Self> {
        let n = embeddings.nrows();
        if labels.len() != n || confidences.len() != n {
            return Err(Error::invalid(format!(
                "batch has {n} embeddings, {} labels, {} confidences",
                labels.len(),
                confidences.len()
            )));
        }
        if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::invalid(format!("confidence {c} is outside [0, 1]")));
        }
        Ok(TripletBatch {
            embeddings,
            labels,
            confidences,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn row_dot(e: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (0..e.ncols()).map(|c| e[(i, c)] * e[(j, c)]).sum()
}

fn pair_distance(e: &DMatrix<f64>, i: usize, j: usize, metric: Distance) -> f64 {
    match metric {
        Distance::Euclidean => (0..e.ncols())
            .map(|c| (e[(i, c)] - e[(j, c)]).powi(2))
            .sum::<f64>()
            .sqrt(),
        Distance::Cosine => {
            let denom = (row_dot(e, i, i) * row_dot(e, j, j)).sqrt();
            if denom > 0.0 {
                1.0 - row_dot(e, i, j) / denom
            } else {
                1.0
            }
        }
    }
}

/// Symmetric `N x N` distance matrix with a zero diagonal.
pub fn pairwise_distances(embs: &DMatrix<f64>, metric: Distance) -> DMatrix<f64> {
    let n = embs.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = pair_distance(embs, i, j, metric);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Indices of the `ceil(keep_fraction · N)` most confident samples, in
/// ascending index order. Equal confidences favour the lower index.
pub fn most_confident(confidences: &[f64], keep_fraction: f64) -> Vec<usize> {
    let n = confidences.len();
    let keep = ((keep_fraction.clamp(0.0, 1.0) * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]).then(a.cmp(&b)));
    order.truncate(keep.min(n));
    order.sort_unstable();
    order
}

fn argmax_by(cands: impl Iterator<Item = usize>, key: impl Fn(usize) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for c in cands {
        let k = key(c);
        if best.is_none_or(|(_, b)| k > b) {
            best = Some((c, k));
        }
    }
    best.map(|b| b.0)
}

fn argmin_by(cands: impl Iterator<Item = usize>, key: impl Fn(usize) -> f64) -> Option<usize> {
    argmax_by(cands, |c| -key(c))
}

/// Mines one triplet per eligible anchor.
///
/// The batch is first restricted to the `keep_fraction` most confident
/// samples; only those act as anchors, positives or negatives.
pub fn mine(
    batch: &TripletBatch,
    strategy: MiningStrategy,
    keep_fraction: f64,
    metric: Distance,
) -> Vec<Triplet> {
    let kept = most_confident(&batch.confidences, keep_fraction);
    let dist = pairwise_distances(&batch.embeddings, metric);
    let labels = &batch.labels;
    let mut out = Vec::new();

    for &a in &kept {
        let d = |j: usize| dist[(a, j)];
        let positives = || kept.iter().copied().filter(|&j| j != a && labels[j] == labels[a]);
        let negatives = || kept.iter().copied().filter(|&j| labels[j] != labels[a]);
        if positives().next().is_none() || negatives().next().is_none() {
            continue;
        }

        let p = match strategy.positive {
            Selection::Hard => argmax_by(positives(), d),
            Selection::Easy => argmin_by(positives(), d),
            Selection::SemiHard => {
                let nearest_neg = negatives().map(d).fold(f64::INFINITY, f64::min);
                argmax_by(positives().filter(|&j| d(j) < nearest_neg), d)
            }
        };
        let Some(p) = p else { continue };

        let n = match strategy.negative {
            Selection::Hard => argmin_by(negatives(), d),
            Selection::Easy => argmax_by(negatives(), d),
            Selection::SemiHard => {
                let dap = d(p);
                argmin_by(negatives().filter(|&j| d(j) > dap), d)
            }
        };
        let Some(n) = n else { continue };

        out.push(Triplet {
            anchor: a,
            positive: p,
            negative: n,
        });
    }
    out
}

/// Distance between rows `i`, `j` and its gradients with respect to each row.
fn distance_and_grads(e: &DMatrix<f64>, i: usize, j: usize, metric: Distance) -> (f64, Vec<f64>, Vec<f64>) {
    let dim = e.ncols();
    match metric {
        Distance::Euclidean => {
            let diff: Vec<f64> = (0..dim).map(|c| e[(i, c)] - e[(j, c)]).collect();
            let dist = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
            if dist == 0.0 {
                return (0.0, vec![0.0; dim], vec![0.0; dim]);
            }
            let gi: Vec<f64> = diff.iter().map(|x| x / dist).collect();
            let gj = gi.iter().map(|x| -x).collect();
            (dist, gi, gj)
        }
        Distance::Cosine => {
            let xi2 = row_dot(e, i, i);
            let xj2 = row_dot(e, j, j);
            let ni = xi2.sqrt();
            let nj = xj2.sqrt();
            if ni == 0.0 || nj == 0.0 {
                return (1.0, vec![0.0; dim], vec![0.0; dim]);
            }
            let dot = row_dot(e, i, j);
            let cos = dot / (ni * nj);
            // d(1 − cos)/dxi = −(xj / (|xi||xj|) − cos · xi / |xi|²)
            let gi = (0..dim)
                .map(|c| -(e[(j, c)] / (ni * nj) - cos * e[(i, c)] / xi2))
                .collect();
            let gj = (0..dim)
                .map(|c| -(e[(i, c)] / (ni * nj) - cos * e[(j, c)] / xj2))
                .collect();
            (1.0 - cos, gi, gj)
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_indices(n: usize, triplets: &[Triplet]) -> Result<()> {
    for t in triplets {
        if t.anchor >= n || t.positive >= n || t.negative >= n {
            return Err(Error::invalid(format!(
                "triplet {t:?} indexes outside a batch of {n}"
            )));
        }
    }
    Ok(())
}

/// Per-triplet margin term `d_ap − d_neg + m` before the hinge/softplus.
pub fn margin_terms(embs: &DMatrix<f64>, triplets: &[Triplet], cfg: &LossConfig) -> Result<Vec<f64>> {
    check_indices(embs.nrows(), triplets)?;
    Ok(triplets
        .iter()
        .map(|t| {
            let dap = pair_distance(embs, t.anchor, t.positive, cfg.distance);
            let dan = pair_distance(embs, t.anchor, t.negative, cfg.distance);
            let dneg = if cfg.variant == LossVariant::Swap {
                dan.min(pair_distance(embs, t.positive, t.negative, cfg.distance))
            } else {
                dan
            };
            dap - dneg + cfg.margin
        })
        .collect())
}

/// Weighted triplet loss and its gradient with respect to every embedding.
pub fn triplet_loss(
    embs: &DMatrix<f64>,
    triplets: &[Triplet],
    cfg: &LossConfig,
) -> Result<(f64, DMatrix<f64>)> {
    check_indices(embs.nrows(), triplets)?;
    let mut grad = DMatrix::zeros(embs.nrows(), embs.ncols());
    let mut loss = 0.0;
    let mut add = |row: usize, g: &[f64], scale: f64| {
        for (c, v) in g.iter().enumerate() {
            grad[(row, c)] += scale * v;
        }
    };

    for t in triplets {
        let (dap, g_ap_a, g_ap_p) = distance_and_grads(embs, t.anchor, t.positive, cfg.distance);
        let (dan, g_an_a, g_an_n) = distance_and_grads(embs, t.anchor, t.negative, cfg.distance);
        let swap = if cfg.variant == LossVariant::Swap {
            let (dpn, g_pn_p, g_pn_n) = distance_and_grads(embs, t.positive, t.negative, cfg.distance);
            (dpn < dan).then_some((dpn, g_pn_p, g_pn_n))
        } else {
            None
        };
        let dneg = swap.as_ref().map_or(dan, |s| s.0);
        let z = dap - dneg + cfg.margin;
        let (value, slope) = match cfg.variant {
            LossVariant::Hinge | LossVariant::Swap => {
                if z > 0.0 {
                    (z, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            LossVariant::Smooth => (softplus(z), sigmoid(z)),
        };
        loss += value;
        if slope == 0.0 {
            continue;
        }
        add(t.anchor, &g_ap_a, slope);
        add(t.positive, &g_ap_p, slope);
        match &swap {
            Some((_, g_pn_p, g_pn_n)) => {
                add(t.positive, g_pn_p, -slope);
                add(t.negative, g_pn_n, -slope);
            }
            None => {
                add(t.anchor, &g_an_a, -slope);
                add(t.negative, &g_an_n, -slope);
            }
        }
    }

    let mut scale = cfg.weight;
    if cfg.reduction == Reduction::Mean && !triplets.is_empty() {
        scale /= triplets.len() as f64;
    }
    Ok((loss * scale, grad * scale))
}

/// Gradient-descent step followed by row re-normalization.
pub fn gradient_step(embs: &DMatrix<f64>, grad: &DMatrix<f64>, lr: f64) -> DMatrix<f64> {
    let mut out = embs - grad * lr;
    for mut row in out.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    out
}

/// Clustering and retrieval indicators for a set of labeled embeddings.
/// Fields are `None` where the quantity is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub silhouette: Option<f64>,
    pub retrieval_map: Option<f64>,
    pub mean_pos_euclidean: Option<f64>,
    pub mean_neg_euclidean: Option<f64>,
    pub mean_pos_cosine: Option<f64>,
    pub mean_neg_cosine: Option<f64>,
}

pub fn embedding_diagnostics(embs: &DMatrix<f64>, labels: &[i64]) -> Result<DiagnosticsReport> {
    if embs.nrows() != labels.len() {
        return Err(Error::invalid(format!(
            "{} embeddings but {} labels",
            embs.nrows(),
            labels.len()
        )));
    }
    let eu = pairwise_distances(embs, Distance::Euclidean);
    let co = pairwise_distances(embs, Distance::Cosine);
    let (pos_eu, neg_eu) = mean_pair_distances(&eu, labels);
    let (pos_co, neg_co) = mean_pair_distances(&co, labels);
    Ok(DiagnosticsReport {
        silhouette: silhouette(&eu, labels),
        retrieval_map: retrieval_map(&eu, labels),
        mean_pos_euclidean: pos_eu,
        mean_neg_euclidean: neg_eu,
        mean_pos_cosine: pos_co,
        mean_neg_cosine: neg_co,
    })
}

fn mean_pair_distances(d: &DMatrix<f64>, labels: &[i64]) -> (Option<f64>, Option<f64>) {
    let (mut ps, mut pn, mut ns, mut nn) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if labels[i] == labels[j] {
                ps += d[(i, j)];
                pn += 1;
            } else {
                ns += d[(i, j)];
                nn += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
    (mean(ps, pn), mean(ns, nn))
}

/// Mean silhouette coefficient. Samples alone in their cluster score 0.
/// Undefined with fewer than two distinct labels.
pub fn silhouette(d: &DMatrix<f64>, labels: &[i64]) -> Option<f64> {
    let mut ids: Vec<i64> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return None;
    }
    let n = labels.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; ids.len()];
        let mut counts = vec![0usize; ids.len()];
        for j in 0..n {
            if j == i {
                continue;
            }
            let k = ids.binary_search(&labels[j]).unwrap();
            sums[k] += d[(i, j)];
            counts[k] += 1;
        }
        let own = ids.binary_search(&labels[i]).unwrap();
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..ids.len())
            .filter(|&k| k != own && counts[k] > 0)
            .map(|k| sums[k] / counts[k] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Some(total / n as f64)
}

/// Mean average precision with every sample as a query against all others,
/// same-label samples relevant, ranked by ascending distance.
pub fn retrieval_map(d: &DMatrix<f64>, labels: &[i64]) -> Option<f64> {
    let n = labels.len();
    let mut sum = 0.0;
    let mut queries = 0usize;
    for q in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != q).collect();
        others.sort_by(|&a, &b| d[(q, a)].total_cmp(&d[(q, b)]).then(a.cmp(&b)));
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (rank, &j) in others.iter().enumerate() {
            if labels[j] == labels[q] {
                hits += 1;
                ap += hits as f64 / (rank + 1) as f64;
            }
        }
        if hits > 0 {
            sum += ap / hits as f64;
            queries += 1;
        }
    }
    (queries > 0).then(|| sum / queries as f64)
}
