//! Ranking, metrics and diagnostics.

pub mod diagnostics;
pub mod metrics;
pub mod scoring;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use diagnostics::{diversity_report, score_iou_correlation, DiversityReport, LinearFit, QueryStats, ScatterRow};
pub use metrics::{average_precision, map_avg_thresholds, mean_average_precision, mean_iou, recall_at_1};
pub use scoring::{ranking, score_and_rank, RankedSpan, SamplePrediction, ScoringMode};

use crate::data::{collate, GroundingSample};
use crate::error::{Error, Result};
use crate::model::{to_host, ForwardCtx, Rgtr};
use crate::span::{iou_1d, MomentSpan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub scoring: ScoringMode,
    pub nms_threshold: f64,
    pub r1_thresholds: Vec<f64>,
    pub map_thresholds: Vec<f64>,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            scoring: ScoringMode::Product,
            nms_threshold: 0.8,
            r1_thresholds: vec![0.3, 0.5, 0.7],
            map_thresholds: vec![0.5, 0.75],
            batch_size: 64,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.nms_threshold) {
            return Err(Error::Config(format!("eval.nms_threshold must lie in [0, 1], got {}", self.nms_threshold)));
        }
        for t in self.r1_thresholds.iter().chain(&self.map_thresholds) {
            if !(0.0..=1.0).contains(t) {
                return Err(Error::Config(format!("eval thresholds must lie in [0, 1], got {t}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("eval.batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_samples: usize,
    pub scoring: ScoringMode,
    pub nms_threshold: f64,
    pub r1: BTreeMap<String, f64>,
    pub map_at: BTreeMap<String, f64>,
    pub map_avg: f64,
    pub miou: f64,
    pub diversity: DiversityReport,
    /// Fit of ground-truth IoU on ranking score; absent when scores are constant.
    pub correlation: Option<LinearFit>,
}

impl EvalReport {
    pub fn r1_at(&self, mu: f64) -> Option<f64> {
        self.r1.get(&threshold_key(mu)).copied()
    }

    pub fn map_at(&self, mu: f64) -> Option<f64> {
        self.map_at.get(&threshold_key(mu)).copied()
    }
}

pub fn threshold_key(mu: f64) -> String {
    format!("{mu:.2}")
}

/// Final-layer, pre-NMS outputs for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPrediction {
    pub id: String,
    pub spans: Vec<MomentSpan>,
    pub conf: Vec<f64>,
    pub iou_pred: Vec<f64>,
}

/// Runs the model in eval mode over `samples`.
pub fn predict_samples(model: &Rgtr, samples: &[GroundingSample], batch_size: usize) -> Result<Vec<RawPrediction>> {
    let ctx = ForwardCtx::eval();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&GroundingSample> = chunk.iter().collect();
        let batch = collate(&refs)?;
        let tensors = model.batch_tensors(&batch)?;
        let fwd = model.forward(&tensors, &ctx)?;
        let last = fwd.last();
        let k = model.config.num_queries;
        let spans = to_host(&last.spans)?;
        let conf = to_host(&last.conf)?;
        let iou = to_host(&last.iou_pred)?;
        for (i, s) in chunk.iter().enumerate() {
            out.push(RawPrediction {
                id: s.id.clone(),
                spans: (0..k)
                    .map(|q| MomentSpan::new(spans[(i * k + q) * 2], spans[(i * k + q) * 2 + 1]))
                    .collect(),
                conf: conf[i * k..(i + 1) * k].to_vec(),
                iou_pred: iou[i * k..(i + 1) * k].to_vec(),
            });
        }
    }
    Ok(out)
}

pub struct Evaluation {
    pub report: EvalReport,
    pub predictions: Vec<SamplePrediction>,
    pub scatter: Vec<ScatterRow>,
    /// Ranking score of every pre-NMS prediction.
    pub corr_scores: Vec<f64>,
    /// Best ground-truth IoU of the same predictions.
    pub corr_ious: Vec<f64>,
}

/// Scores, ranks and measures raw predictions against `gts`.
pub fn evaluate(raw: &[RawPrediction], gts: &[Vec<MomentSpan>], cfg: &EvalConfig) -> Result<Evaluation> {
    if raw.len() != gts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} ground-truth lists",
            raw.len(),
            gts.len()
        )));
    }
    let predictions: Vec<SamplePrediction> = raw
        .iter()
        .map(|r| score_and_rank(&r.id, &r.spans, &r.conf, &r.iou_pred, cfg.scoring, cfg.nms_threshold))
        .collect();

    let r1 = cfg
        .r1_thresholds
        .iter()
        .map(|&mu| (threshold_key(mu), recall_at_1(&predictions, gts, mu)))
        .collect();
    let map_at = cfg
        .map_thresholds
        .iter()
        .zip(mean_average_precision(&predictions, gts, &cfg.map_thresholds))
        .map(|(&mu, ap)| (threshold_key(mu), ap))
        .collect();
    let avg = mean_average_precision(&predictions, gts, &map_avg_thresholds());
    let map_avg = avg.iter().sum::<f64>() / avg.len() as f64;

    let mut scatter = Vec::new();
    let mut corr_scores = Vec::new();
    let mut corr_ious = Vec::new();
    for (r, g) in raw.iter().zip(gts) {
        for (q, span) in r.spans.iter().enumerate() {
            let score = cfg.scoring.score(r.conf[q], r.iou_pred[q]);
            scatter.push(ScatterRow {
                query_index: q,
                center: span.center,
                width: span.width,
                score,
                sample_id: r.id.clone(),
            });
            corr_scores.push(score);
            corr_ious.push(g.iter().map(|t| iou_1d(span, t)).fold(0.0, f64::max));
        }
    }
    let correlation = match score_iou_correlation(&corr_scores, &corr_ious) {
        Ok(fit) => Some(fit),
        Err(e) => {
            log::warn!("score/IoU correlation skipped: {e}");
            None
        }
    };
    let per_sample: Vec<Vec<MomentSpan>> = raw.iter().map(|r| r.spans.clone()).collect();
    let report = EvalReport {
        num_samples: raw.len(),
        scoring: cfg.scoring,
        nms_threshold: cfg.nms_threshold,
        r1,
        map_at,
        map_avg,
        miou: mean_iou(&predictions, gts),
        diversity: diversity_report(&per_sample),
        correlation,
    };
    Ok(Evaluation {
        report,
        predictions,
        scatter,
        corr_scores,
        corr_ious,
    })
}

/// Inference plus evaluation on labelled samples.
pub fn evaluate_model(model: &Rgtr, samples: &[GroundingSample], cfg: &EvalConfig) -> Result<Evaluation> {
    let raw = predict_samples(model, samples, cfg.batch_size)?;
    let gts: Vec<Vec<MomentSpan>> = samples.iter().map(|s| s.moments.clone()).collect();
    evaluate(&raw, &gts, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_keys_and_nms_invariance() {
        let g = MomentSpan::from_interval(0.2, 0.5);
        let raw = vec![RawPrediction {
            id: "a".into(),
            spans: vec![g, MomentSpan::from_interval(0.21, 0.5), MomentSpan::from_interval(0.7, 0.9)],
            conf: vec![0.9, 0.8, 0.3],
            iou_pred: vec![0.9, 0.95, 0.5],
        }];
        let cfg = EvalConfig::default();
        let a = evaluate(&raw, &[vec![g]], &cfg).unwrap().report;
        assert_eq!(a.r1_at(0.5), Some(1.0));
        assert_eq!(a.map_at(0.75), Some(1.0));
        assert_eq!(a.miou, 1.0);
        let b = evaluate(&raw, &[vec![g]], &EvalConfig { nms_threshold: 1.0, ..cfg }).unwrap().report;
        assert_eq!(a.r1, b.r1);
        assert_eq!(a.miou, b.miou);
        let json = serde_json::to_string(&a).unwrap();
        assert!(json.contains("\"0.50\""));
    }
}
