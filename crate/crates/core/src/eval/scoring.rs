use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::span::{nms, rank_order, MomentSpan, ScoredSpan};

/// How confidence and predicted IoU combine into the ranking score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    #[default]
    Product,
    Sum,
    ConfOnly,
}

impl ScoringMode {
    pub fn score(self, conf: f64, iou_pred: f64) -> f64 {
        match self {
            Self::Product => conf * iou_pred,
            Self::Sum => conf + iou_pred,
            Self::ConfOnly => conf,
        }
    }
}

impl std::str::FromStr for ScoringMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" => Ok(Self::Product),
            "sum" => Ok(Self::Sum),
            "conf_only" | "conf-only" => Ok(Self::ConfOnly),
            other => Err(Error::InvalidArgument(format!("unknown scoring mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for ScoringMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Product => "product",
            Self::Sum => "sum",
            Self::ConfOnly => "conf_only",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedSpan {
    pub span: MomentSpan,
    pub query_index: usize,
    pub conf: f64,
    pub iou_pred: f64,
    pub score: f64,
}

impl RankedSpan {
    pub fn scored(&self) -> ScoredSpan {
        ScoredSpan {
            span: self.span,
            score: self.score,
            query_index: self.query_index,
        }
    }
}

/// Ranked post-NMS predictions of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub id: String,
    pub ranked: Vec<RankedSpan>,
}

impl SamplePrediction {
    pub fn top1(&self) -> Option<&RankedSpan> {
        self.ranked.first()
    }

    pub fn spans(&self) -> Vec<MomentSpan> {
        self.ranked.iter().map(|r| r.span).collect()
    }
}

/// Scores every query, sorts descending (ties by query index) and applies NMS.
pub fn score_and_rank(
    id: &str,
    spans: &[MomentSpan],
    conf: &[f64],
    iou_pred: &[f64],
    mode: ScoringMode,
    nms_threshold: f64,
) -> SamplePrediction {
    let entries: Vec<RankedSpan> = spans
        .iter()
        .enumerate()
        .map(|(q, s)| RankedSpan {
            span: *s,
            query_index: q,
            conf: conf[q],
            iou_pred: iou_pred[q],
            score: mode.score(conf[q], iou_pred[q]),
        })
        .collect();
    let scored: Vec<ScoredSpan> = entries.iter().map(RankedSpan::scored).collect();
    let ranked = nms(&scored, nms_threshold)
        .into_iter()
        .map(|s| entries[s.query_index])
        .collect();
    SamplePrediction { id: id.to_string(), ranked }
}

/// Query indices in ranking order without suppression.
pub fn ranking(conf: &[f64], iou_pred: &[f64], mode: ScoringMode) -> Vec<usize> {
    let mut scored: Vec<ScoredSpan> = (0..conf.len())
        .map(|q| ScoredSpan {
            span: MomentSpan::new(0.5, 1.0),
            score: mode.score(conf[q], iou_pred[q]),
            query_index: q,
        })
        .collect();
    scored.sort_by(rank_order);
    scored.into_iter().map(|s| s.query_index).collect()
}
