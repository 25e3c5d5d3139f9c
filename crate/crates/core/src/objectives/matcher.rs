//! Bipartite matching between predicted and ground-truth spans.

use crate::span::{giou_1d, MomentSpan};

/// Minimum-cost assignment for a `rows x cols` cost matrix.
///
/// Returns `(row, col)` pairs sorted by row; exactly `min(rows, cols)` pairs.
/// Shortest augmenting path with potentials, `O(n^2 m)`. Non-finite entries
/// are treated as a very large finite cost.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        let clean: Vec<Vec<f64>> = cost
            .iter()
            .map(|r| r.iter().map(|&c| if c.is_finite() { c } else { UNMATCHABLE }).collect())
            .collect();
        return hungarian(&clean);
    }
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols)
            .map(|c| (0..rows).map(|r| cost[r][c]).collect())
            .collect();
        let mut pairs: Vec<(usize, usize)> = hungarian(&transposed).into_iter().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        return pairs;
    }

    let (n, m) = (rows, cols);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    // p[j]: row (1-based) assigned to column j; 0 = free
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    pairs
}

const UNMATCHABLE: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchCostWeights {
    pub l1: f64,
    pub giou: f64,
    pub class: f64,
}

/// Per-sample `(query_index, gt_index)` pairs; unmatched queries are background.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub pairs: Vec<Vec<(usize, usize)>>,
}

impl MatchResult {
    pub fn num_matched(&self) -> usize {
        self.pairs.iter().map(Vec::len).sum()
    }

    /// `B x K` foreground flags.
    pub fn foreground(&self, num_queries: usize) -> Vec<bool> {
        let mut out = vec![false; self.pairs.len() * num_queries];
        for (b, pairs) in self.pairs.iter().enumerate() {
            for &(q, _) in pairs {
                out[b * num_queries + q] = true;
            }
        }
        out
    }
}

/// Cost of assigning query `pred` (with confidence `conf`) to `gt`.
pub fn match_cost(pred: &MomentSpan, conf: f64, gt: &MomentSpan, w: &MatchCostWeights) -> f64 {
    let l1 = (pred.center - gt.center).abs() + (pred.width - gt.width).abs();
    w.l1 * l1 + w.giou * (1.0 - giou_1d(pred, gt)) + w.class * (1.0 - conf)
}

/// Matches one sample's `K` predictions against its ground truths.
pub fn match_sample(spans: &[MomentSpan], conf: &[f64], gts: &[MomentSpan], w: &MatchCostWeights) -> Vec<(usize, usize)> {
    let cost: Vec<Vec<f64>> = spans
        .iter()
        .zip(conf)
        .map(|(s, c)| gts.iter().map(|g| match_cost(s, *c, g, w)).collect())
        .collect();
    hungarian(&cost)
}

/// Batched matching. `spans` is `B x K` spans, `conf` is `B x K`.
pub fn hungarian_match(
    spans: &[Vec<MomentSpan>],
    conf: &[Vec<f64>],
    gts: &[Vec<MomentSpan>],
    w: &MatchCostWeights,
) -> MatchResult {
    MatchResult {
        pairs: spans
            .iter()
            .zip(conf)
            .zip(gts)
            .map(|((s, c), g)| match_sample(s, c, g, w))
            .collect(),
    }
}
