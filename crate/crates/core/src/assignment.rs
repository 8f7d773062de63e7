//! Minimum-cost bipartite assignment with a cost cutoff.
//!
//! Pairs whose cost is infinite or above the cutoff are forbidden. Rather
//! than substituting a large finite sentinel, forbidden pairs carry cost
//! `(1, 0)` and admissible pairs `(0, c)` in a lexicographically ordered
//! group, and the Hungarian method runs on those pairs directly. The solution
//! therefore matches as many admissible pairs as possible and, among those
//! matchings, minimizes the admissible cost, with no precision loss from
//! mixing a huge sentinel with small costs. Forbidden placeholder pairs are
//! stripped before returning.
//!
//! Among optimal assignments the lexicographically smallest (sorted by row,
//! then column) is returned, so outputs do not depend on solver internals.

use std::cmp::Ordering;
use std::ops::{Add, Sub};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssignmentResult {
    /// `(row, col)` pairs, sorted by row.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl AssignmentResult {
    /// Sum of matched entries, accumulated in row order.
    pub fn total_cost(&self, cost: &DMatrix<f64>) -> f64 {
        self.matches.iter().map(|&(r, c)| cost[(r, c)]).sum()
    }
}

/// Solves the assignment problem on `cost` with cutoff `max_cost`.
///
/// Entries equal to `max_cost` are admissible; larger or infinite entries
/// are never matched.
pub fn solve(cost: &DMatrix<f64>, max_cost: f64) -> Result<AssignmentResult> {
    if !max_cost.is_finite() {
        return Err(Error::invalid(format!("max_cost must be finite, got {max_cost}")));
    }
    let (n, m) = cost.shape();
    let mut lex = DMatrix::from_element(n, m, LexCost::FORBIDDEN);
    let mut scale: f64 = 1.0;
    for i in 0..n {
        for j in 0..m {
            let c = cost[(i, j)];
            if c.is_nan() || c == f64::NEG_INFINITY {
                return Err(Error::invalid(format!("cost[{i}][{j}] = {c}")));
            }
            if c <= max_cost {
                lex[(i, j)] = LexCost::admissible(c);
                scale = scale.max(c.abs());
            }
        }
    }

    let full = solve_lex(&lex, scale);
    let mut matched_rows = vec![false; n];
    let mut matched_cols = vec![false; m];
    let mut matches = Vec::with_capacity(full.len());
    for (r, c) in full {
        if lex[(r, c)].forbidden == 0 {
            matched_rows[r] = true;
            matched_cols[c] = true;
            matches.push((r, c));
        }
    }
    Ok(AssignmentResult {
        matches,
        unmatched_rows: (0..n).filter(|&r| !matched_rows[r]).collect(),
        unmatched_cols: (0..m).filter(|&c| !matched_cols[c]).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LexCost {
    forbidden: i64,
    value: f64,
}

impl LexCost {
    const ZERO: LexCost = LexCost {
        forbidden: 0,
        value: 0.0,
    };
    const FORBIDDEN: LexCost = LexCost {
        forbidden: 1,
        value: 0.0,
    };
    // Larger than any reachable path length; never used in arithmetic.
    const UNREACHED: LexCost = LexCost {
        forbidden: i64::MAX,
        value: 0.0,
    };

    fn admissible(value: f64) -> Self {
        LexCost {
            forbidden: 0,
            value,
        }
    }
}

impl Add for LexCost {
    type Output = LexCost;
    fn add(self, o: LexCost) -> LexCost {
        LexCost {
            forbidden: self.forbidden + o.forbidden,
            value: self.value + o.value,
        }
    }
}

impl Sub for LexCost {
    type Output = LexCost;
    fn sub(self, o: LexCost) -> LexCost {
        LexCost {
            forbidden: self.forbidden - o.forbidden,
            value: self.value - o.value,
        }
    }
}

impl PartialOrd for LexCost {
    fn partial_cmp(&self, o: &LexCost) -> Option<Ordering> {
        match self.forbidden.cmp(&o.forbidden) {
            Ordering::Equal => self.value.partial_cmp(&o.value),
            ord => Some(ord),
        }
    }
}

/// Full assignment of size `min(n, m)` in original orientation, tie-broken.
fn solve_lex(cost: &DMatrix<LexCost>, scale: f64) -> Vec<(usize, usize)> {
    let (n, m) = cost.shape();
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let transposed = n > m;
    let oriented = if transposed {
        cost.transpose()
    } else {
        cost.clone()
    };
    let sol = Lsap::run(&oriented);

    let orient = |i: usize, j: usize| if transposed { (j, i) } else { (i, j) };
    let mut best: Vec<(usize, usize)> = sol
        .col4row
        .iter()
        .enumerate()
        .map(|(i, &j)| orient(i, j))
        .collect();
    best.sort_unstable();
    let optimum = canonical_total(cost, &best);

    // Any pair of an optimal assignment is tight under optimal duals. Only
    // tight pairs can therefore replace the solver's choice; each candidate
    // is confirmed by re-solving with the prefix fixed.
    let eps = 1e-9 * scale;
    let tight = |r: usize, c: usize| {
        let (i, j) = orient(r, c);
        let rc = oriented[(i, j)] - sol.u[i] - sol.v[j];
        rc.forbidden == 0 && rc.value.abs() <= eps
    };

    let k = best.len();
    let mut fixed: Vec<(usize, usize)> = Vec::with_capacity(k);
    let mut row_used = vec![false; n];
    let mut col_used = vec![false; m];
    'rows: for r in 0..n {
        for c in 0..m {
            if fixed.len() == k {
                break 'rows;
            }
            if row_used[r] {
                continue 'rows;
            }
            if col_used[c] {
                continue;
            }
            let accept = if best.binary_search(&(r, c)).is_ok() {
                true
            } else if tight(r, c) {
                let mut trial = fixed.clone();
                trial.push((r, c));
                let mut candidate = complete(cost, &trial);
                candidate.sort_unstable();
                if canonical_total(cost, &candidate) == optimum {
                    best = candidate;
                    true
                } else {
                    false
                }
            } else {
                false
            };
            if accept {
                fixed.push((r, c));
                row_used[r] = true;
                col_used[c] = true;
            }
        }
    }
    best
}

/// Optimal completion of a partial assignment `prefix`.
fn complete(cost: &DMatrix<LexCost>, prefix: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let (n, m) = cost.shape();
    let rows: Vec<usize> = (0..n).filter(|r| prefix.iter().all(|p| p.0 != *r)).collect();
    let cols: Vec<usize> = (0..m).filter(|c| prefix.iter().all(|p| p.1 != *c)).collect();
    let mut out = prefix.to_vec();
    if rows.is_empty() || cols.is_empty() {
        return out;
    }
    let transposed = rows.len() > cols.len();
    let sub = if transposed {
        DMatrix::from_fn(cols.len(), rows.len(), |i, j| cost[(rows[j], cols[i])])
    } else {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| cost[(rows[i], cols[j])])
    };
    let sol = Lsap::run(&sub);
    for (i, &j) in sol.col4row.iter().enumerate() {
        out.push(if transposed {
            (rows[j], cols[i])
        } else {
            (rows[i], cols[j])
        });
    }
    out
}

fn canonical_total(cost: &DMatrix<LexCost>, sorted_pairs: &[(usize, usize)]) -> LexCost {
    sorted_pairs
        .iter()
        .fold(LexCost::ZERO, |acc, &(r, c)| acc + cost[(r, c)])
}

/// Shortest augmenting path solver for `n <= m`.
struct Lsap {
    col4row: Vec<usize>,
    u: Vec<LexCost>,
    v: Vec<LexCost>,
}

impl Lsap {
    fn run(cost: &DMatrix<LexCost>) -> Lsap {
        let (n, m) = cost.shape();
        debug_assert!(n <= m);
        let mut u = vec![LexCost::ZERO; n];
        let mut v = vec![LexCost::ZERO; m];
        let mut col4row = vec![usize::MAX; n];
        let mut row4col = vec![usize::MAX; m];

        let mut shortest = vec![LexCost::UNREACHED; m];
        let mut path = vec![usize::MAX; m];
        let mut remaining = vec![0usize; m];
        let mut scanned_rows = vec![false; n];
        let mut scanned_cols = vec![false; m];

        for cur_row in 0..n {
            shortest.fill(LexCost::UNREACHED);
            scanned_rows.fill(false);
            scanned_cols.fill(false);
            for (it, slot) in remaining.iter_mut().enumerate() {
                *slot = m - it - 1;
            }
            let mut num_remaining = m;
            let mut min_val = LexCost::ZERO;
            let mut i = cur_row;
            let sink = loop {
                scanned_rows[i] = true;
                let mut index = usize::MAX;
                let mut lowest = LexCost::UNREACHED;
                for (it, &j) in remaining[..num_remaining].iter().enumerate() {
                    let r = min_val + cost[(i, j)] - u[i] - v[j];
                    if r < shortest[j] {
                        path[j] = i;
                        shortest[j] = r;
                    }
                    if shortest[j] < lowest
                        || (shortest[j] == lowest && row4col[j] == usize::MAX)
                    {
                        lowest = shortest[j];
                        index = it;
                    }
                }
                // Every entry is finite in the lexicographic group, so some
                // column is always reachable.
                min_val = lowest;
                let j = remaining[index];
                scanned_cols[j] = true;
                num_remaining -= 1;
                remaining[index] = remaining[num_remaining];
                if row4col[j] == usize::MAX {
                    break j;
                }
                i = row4col[j];
            };

            u[cur_row] = u[cur_row] + min_val;
            for r in 0..n {
                if scanned_rows[r] && r != cur_row {
                    u[r] = u[r] + min_val - shortest[col4row[r]];
                }
            }
            for c in 0..m {
                if scanned_cols[c] {
                    v[c] = v[c] - (min_val - shortest[c]);
                }
            }

            let mut j = sink;
            loop {
                let r = path[j];
                row4col[j] = r;
                std::mem::swap(&mut col4row[r], &mut j);
                if r == cur_row {
                    break;
                }
            }
        }
        Lsap { col4row, u, v }
    }
}
