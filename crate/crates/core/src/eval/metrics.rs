use crate::span::{iou_1d, MomentSpan};

use super::scoring::SamplePrediction;

/// The ten thresholds `0.5, 0.55, ..., 0.95`.
pub fn map_avg_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

fn best_iou(span: &MomentSpan, gts: &[MomentSpan]) -> f64 {
    gts.iter().map(|g| iou_1d(span, g)).fold(0.0, f64::max)
}

fn top1_iou(p: &SamplePrediction, gts: &[MomentSpan]) -> Option<f64> {
    match p.top1() {
        Some(top) => Some(best_iou(&top.span, gts)),
        None => {
            log::warn!("sample {} has no predictions; counted as a miss", p.id);
            None
        }
    }
}

/// Fraction of samples whose top-1 span reaches IoU `mu` with some ground truth.
pub fn recall_at_1(predictions: &[SamplePrediction], gts: &[Vec<MomentSpan>], mu: f64) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .zip(gts)
        .filter(|(p, g)| top1_iou(p, g).is_some_and(|iou| iou >= mu))
        .count();
    hits as f64 / predictions.len() as f64
}

/// Mean over samples of the top-1 span's best IoU.
pub fn mean_iou(predictions: &[SamplePrediction], gts: &[Vec<MomentSpan>]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let total: f64 = predictions.iter().zip(gts).map(|(p, g)| top1_iou(p, g).unwrap_or(0.0)).sum();
    total / predictions.len() as f64
}

/// True-positive flags of a ranked list: each prediction claims the unmatched
/// ground truth with the highest IoU, provided it reaches `mu`.
pub fn greedy_true_positives(ranked: &[MomentSpan], gts: &[MomentSpan], mu: f64) -> Vec<bool> {
    let mut taken = vec![false; gts.len()];
    ranked
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let iou = iou_1d(p, gt);
                if iou >= mu && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Area under the all-points interpolated precision/recall curve.
pub fn average_precision(ranked: &[MomentSpan], gts: &[MomentSpan], mu: f64) -> f64 {
    if gts.is_empty() || ranked.is_empty() {
        return 0.0;
    }
    let tp = greedy_true_positives(ranked, gts, mu);
    let mut recall = Vec::with_capacity(tp.len() + 2);
    let mut precision = Vec::with_capacity(tp.len() + 2);
    recall.push(0.0);
    precision.push(0.0);
    let mut hits = 0usize;
    for (i, t) in tp.iter().enumerate() {
        if *t {
            hits += 1;
        }
        recall.push(hits as f64 / gts.len() as f64);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    (1..recall.len())
        .map(|i| (recall[i] - recall[i - 1]) * precision[i])
        .sum()
}

/// Per-threshold mAP (mean AP over samples) in threshold order.
pub fn mean_average_precision(predictions: &[SamplePrediction], gts: &[Vec<MomentSpan>], thresholds: &[f64]) -> Vec<f64> {
    thresholds
        .iter()
        .map(|&mu| {
            if predictions.is_empty() {
                return 0.0;
            }
            let total: f64 = predictions
                .iter()
                .zip(gts)
                .map(|(p, g)| average_precision(&p.spans(), g, mu))
                .sum();
            total / predictions.len() as f64
        })
        .collect()
}
