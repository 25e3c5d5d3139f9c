//! Interval math on normalized 1-D moment spans.
//!
//! A span is stored as `(center, width)` in normalized video time. Geometry
//! (IoU, gIoU, NMS) always works on the interval clamped to `[0, 1]`; the
//! stored pair itself is never rewritten by that clamp.

use std::cmp::Ordering;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest width a span may have.
pub const W_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 2]", try_from = "[f64; 2]")]
pub struct MomentSpan {
    pub center: f64,
    pub width: f64,
}

impl MomentSpan {
    /// Builds a span, clamping the center into `[0, 1]` and the width into `[W_MIN, 1]`.
    pub fn new(center: f64, width: f64) -> Self {
        Self {
            center: center.clamp(0.0, 1.0),
            width: width.clamp(W_MIN, 1.0),
        }
    }

    /// Strict constructor for external input. Out-of-range values are rejected;
    /// only the width floor is applied.
    pub fn try_new(center: f64, width: f64) -> Result<Self> {
        if !center.is_finite() || !width.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite span ({center}, {width})"
            )));
        }
        if !(0.0..=1.0).contains(&center) {
            return Err(Error::InvalidArgument(format!(
                "span center {center} outside [0, 1]"
            )));
        }
        if width <= 0.0 || width > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "span width {width} outside (0, 1]"
            )));
        }
        Ok(Self {
            center,
            width: width.max(W_MIN),
        })
    }

    /// Span covering `[start, end]`.
    pub fn from_interval(start: f64, end: f64) -> Self {
        Self::new((start + end) / 2.0, end - start)
    }

    pub fn to_interval(&self) -> (f64, f64) {
        to_interval(self)
    }
}

impl From<MomentSpan> for [f64; 2] {
    fn from(s: MomentSpan) -> Self {
        [s.center, s.width]
    }
}

impl TryFrom<[f64; 2]> for MomentSpan {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        MomentSpan::try_new(v[0], v[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSpan {
    pub span: MomentSpan,
    pub score: f64,
    pub query_index: usize,
}

/// Clamped `[start, end]` interval of a span.
pub fn to_interval(span: &MomentSpan) -> (f64, f64) {
    let half = span.width / 2.0;
    (
        (span.center - half).max(0.0),
        (span.center + half).min(1.0),
    )
}

pub fn iou_1d(a: &MomentSpan, b: &MomentSpan) -> f64 {
    let (s1, e1) = to_interval(a);
    let (s2, e2) = to_interval(b);
    let inter = (e1.min(e2) - s1.max(s2)).max(0.0);
    let union = (e1 - s1) + (e2 - s2) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn giou_1d(a: &MomentSpan, b: &MomentSpan) -> f64 {
    let (s1, e1) = to_interval(a);
    let (s2, e2) = to_interval(b);
    let inter = (e1.min(e2) - s1.max(s2)).max(0.0);
    let union = (e1 - s1) + (e2 - s2) - inter;
    let hull = e1.max(e2) - s1.min(s2);
    if union <= 0.0 || hull <= 0.0 {
        return 0.0;
    }
    inter / union - (hull - union) / hull
}

/// Descending score, ties broken by the lower query index.
pub fn rank_order(a: &ScoredSpan, b: &ScoredSpan) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.query_index.cmp(&b.query_index))
}

/// Greedy non-maximum suppression. A candidate is dropped when its IoU with an
/// already kept candidate exceeds `threshold`.
pub fn nms(candidates: &[ScoredSpan], threshold: f64) -> Vec<ScoredSpan> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(rank_order);
    let mut kept: Vec<ScoredSpan> = Vec::with_capacity(sorted.len());
    for cand in sorted {
        if kept
            .iter()
            .all(|k| iou_1d(&k.span, &cand.span) <= threshold)
        {
            kept.push(cand);
        }
    }
    kept
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(point: [f64; 2], centroids: &[[f64; 2]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, *c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Result of a single k-means run with its per-iteration SSE trace.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    /// Centroids sorted by `(center, width)`.
    pub centroids: Vec<MomentSpan>,
    pub sse: f64,
    /// SSE after each Lloyd iteration.
    pub history: Vec<f64>,
}

/// Within-cluster sum of squared distances of `points` to their nearest centroid.
pub fn kmeans_sse(spans: &[MomentSpan], centroids: &[MomentSpan]) -> f64 {
    let cents: Vec<[f64; 2]> = centroids.iter().map(|c| [c.center, c.width]).collect();
    spans
        .iter()
        .map(|s| nearest([s.center, s.width], &cents).1)
        .sum()
}

/// Lloyd's algorithm on `(center, width)` points with k-means++ seeding.
pub fn kmeans_fit(spans: &[MomentSpan], k: usize, seed: u64, max_iters: usize) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::InvalidArgument("k-means needs K >= 1".into()));
    }
    if spans.len() < k {
        return Err(Error::InsufficientData {
            needed: k,
            got: spans.len(),
        });
    }
    let points: Vec<[f64; 2]> = spans.iter().map(|s| [s.center, s.width]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut dists: Vec<f64> = points.iter().map(|p| sq_dist(*p, centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dists.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, d) in dists.iter().enumerate() {
                if *d > 0.0 && r < *d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            // guard against landing on a zero-weight tail from rounding
            if dists[chosen] == 0.0 {
                chosen = dists
                    .iter()
                    .enumerate()
                    .rev()
                    .find(|(_, d)| **d > 0.0)
                    .map(|(i, _)| i)
                    .unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx];
        centroids.push(c);
        for (d, p) in dists.iter_mut().zip(&points) {
            *d = d.min(sq_dist(*p, c));
        }
    }

    let mut assign: Vec<usize> = points.iter().map(|p| nearest(*p, &centroids).0).collect();
    let mut history = Vec::new();
    for _ in 0..max_iters.max(1) {
        // update step
        let mut sums = vec![[0.0f64; 2]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = [sums[j][0] / counts[j] as f64, sums[j][1] / counts[j] as f64];
            }
        }
        // empty clusters take the point farthest from its own centroid
        for j in 0..k {
            if counts[j] == 0 {
                let (far, _) = points
                    .iter()
                    .zip(&assign)
                    .enumerate()
                    .filter(|(_, (_, &a))| counts[a] > 1)
                    .map(|(i, (p, &a))| (i, sq_dist(*p, centroids[a])))
                    .fold((usize::MAX, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
                if far == usize::MAX {
                    centroids[j] = points[0];
                    continue;
                }
                counts[assign[far]] -= 1;
                assign[far] = j;
                counts[j] = 1;
                centroids[j] = points[far];
            }
        }
        let sse: f64 = points
            .iter()
            .zip(&assign)
            .map(|(p, &a)| sq_dist(*p, centroids[a]))
            .sum();
        history.push(sse);

        // assignment step
        let next: Vec<usize> = points.iter().map(|p| nearest(*p, &centroids).0).collect();
        if next == assign {
            break;
        }
        assign = next;
    }

    let mut out: Vec<MomentSpan> = centroids
        .iter()
        .map(|c| MomentSpan::new(c[0], c[1]))
        .collect();
    out.sort_by(|a, b| {
        a.center
            .partial_cmp(&b.center)
            .unwrap_or(Ordering::Equal)
            .then(a.width.partial_cmp(&b.width).unwrap_or(Ordering::Equal))
    });
    let sse = kmeans_sse(spans, &out);
    Ok(KMeansFit {
        centroids: out,
        sse,
        history,
    })
}

pub fn kmeans_spans(spans: &[MomentSpan], k: usize, seed: u64, max_iters: usize) -> Result<Vec<MomentSpan>> {
    kmeans_fit(spans, k, seed, max_iters).map(|f| f.centroids)
}

/// Best of `restarts` seeded k-means runs by SSE.
pub fn kmeans_spans_restarts(
    spans: &[MomentSpan],
    k: usize,
    seed: u64,
    max_iters: usize,
    restarts: usize,
) -> Result<KMeansFit> {
    let mut best: Option<KMeansFit> = None;
    for r in 0..restarts.max(1) as u64 {
        let fit = kmeans_fit(spans, k, seed.wrapping_add(r), max_iters)?;
        if best.as_ref().is_none_or(|b| fit.sse < b.sse) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Row-major grid over `(center, width)` cell midpoints.
pub fn uniform_grid_anchors(n_center: usize, n_width: usize) -> Result<Vec<MomentSpan>> {
    if n_center == 0 || n_width == 0 {
        return Err(Error::InvalidArgument("grid dimensions must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(n_center * n_width);
    for i in 0..n_center {
        let c = (i as f64 + 0.5) / n_center as f64;
        for j in 0..n_width {
            let w = ((j as f64 + 0.5) / n_width as f64).min(1.0);
            out.push(MomentSpan::new(c, w));
        }
    }
    Ok(out)
}

pub fn random_anchors(k: usize, seed: u64) -> Result<Vec<MomentSpan>> {
    if k == 0 {
        return Err(Error::InvalidArgument("random anchors need K >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..k)
        .map(|_| {
            let c = rng.random_range(0.0..=1.0);
            let w = rng.random_range(W_MIN..=1.0);
            MomentSpan::new(c, w)
        })
        .collect())
}

pub fn write_anchor_file(path: &Path, anchors: &[MomentSpan]) -> Result<()> {
    let rows: Vec<[f64; 2]> = anchors.iter().map(|a| (*a).into()).collect();
    crate::io::write_atomic(path, serde_json::to_string_pretty(&rows)?.as_bytes())
}

pub fn read_anchor_file(path: &Path) -> Result<Vec<MomentSpan>> {
    let text = std::fs::read_to_string(path)?;
    let rows: Vec<MomentSpan> = serde_json::from_str(&text)?;
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "anchor file {} is empty",
            path.display()
        )));
    }
    Ok(rows)
}
