//! Set matching and the training objective.

pub mod losses;
pub mod matcher;

use candle_core::{DType, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use losses::{
    alignment_loss, giou_tensor, iou_loss, iou_targets, moment_loss, overall_loss, saliency_loss, sigmoid_focal_loss,
    LossComponents, MomentLoss,
};
pub use matcher::{hungarian, hungarian_match, match_cost, match_sample, MatchCostWeights, MatchResult};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{to_host, ModelOutput};
use crate::span::MomentSpan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum IouLossType {
    #[default]
    L2,
    L1,
    Huber,
}

impl std::str::FromStr for IouLossType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(Self::L2),
            "l1" => Ok(Self::L1),
            "huber" => Ok(Self::Huber),
            other => Err(Error::InvalidArgument(format!("unknown IoU loss type `{other}`"))),
        }
    }
}

impl std::fmt::Display for IouLossType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::L2 => "L2",
            Self::L1 => "L1",
            Self::Huber => "Huber",
        })
    }
}

/// Balancing weights. `span_l1`, `giou` and `focal` also weight the matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub saliency: f64,
    pub align: f64,
    pub iou: f64,
    pub span_l1: f64,
    pub giou: f64,
    pub focal: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            saliency: 1.0,
            align: 0.3,
            iou: 1.0,
            span_l1: 10.0,
            giou: 1.0,
            focal: 1.0,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("saliency", self.saliency),
            ("align", self.align),
            ("iou", self.iou),
            ("span_l1", self.span_l1),
            ("giou", self.giou),
            ("focal", self.focal),
            ("focal_alpha", self.focal_alpha),
            ("focal_gamma", self.focal_gamma),
        ];
        for (name, v) in all {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("loss.weights.{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn match_cost(&self) -> MatchCostWeights {
        MatchCostWeights {
            l1: self.span_l1,
            giou: self.giou,
            class: self.focal,
        }
    }
}

/// Loss section of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub iou_loss_type: IouLossType,
    pub iou_include_background: bool,
    pub huber_delta: f64,
    pub saliency_margin: f64,
    /// Ranking pairs sampled per sample.
    pub saliency_pairs: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            iou_loss_type: IouLossType::L2,
            iou_include_background: false,
            huber_delta: 0.1,
            saliency_margin: 0.2,
            saliency_pairs: 32,
        }
    }
}

impl LossConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.huber_delta > 0.0) {
            return Err(Error::Config("loss.huber_delta must be > 0".into()));
        }
        if !(self.saliency_margin >= 0.0) {
            return Err(Error::Config("loss.saliency_margin must be >= 0".into()));
        }
        if self.saliency_pairs == 0 {
            return Err(Error::Config("loss.saliency_pairs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Training objective for one forward pass.
pub struct LossOutput {
    /// Differentiable overall loss.
    pub total: Tensor,
    /// Per decoder layer: `moment + λ_iou * iou`.
    pub layer_terms: Vec<Tensor>,
    /// `λ_sal * saliency + λ_align * align`.
    pub encoder_term: Tensor,
    /// Moment and IoU values summed over layers.
    pub components: LossComponents,
    pub matches: Vec<MatchResult>,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn host_spans(spans: &Tensor) -> Result<Vec<Vec<MomentSpan>>> {
    let (b, k, _) = spans.dims3()?;
    let v = to_host(spans)?;
    Ok((0..b)
        .map(|i| (0..k).map(|q| MomentSpan::new(v[(i * k + q) * 2], v[(i * k + q) * 2 + 1])).collect())
        .collect())
}

/// Matches every decoder layer independently and assembles the overall loss.
pub fn compute_loss(out: &ModelOutput, batch: &Batch, cfg: &LossConfig, rng: &mut impl Rng) -> Result<LossOutput> {
    let w = &cfg.weights;
    let mut layer_terms = Vec::with_capacity(out.layers.len());
    let mut matches = Vec::with_capacity(out.layers.len());
    let (mut moment_v, mut iou_v) = (0.0, 0.0);
    for layer in &out.layers {
        let spans = host_spans(&layer.spans)?;
        let k = spans.first().map_or(0, Vec::len);
        let conf_flat = to_host(&layer.conf)?;
        let conf: Vec<Vec<f64>> = conf_flat.chunks(k.max(1)).map(<[f64]>::to_vec).collect();
        let m = hungarian_match(&spans, &conf, &batch.targets, &w.match_cost());
        let mom = moment_loss(&layer.spans, &layer.conf_logits, &batch.targets, &m, w)?;
        let targets = iou_targets(&spans, &batch.targets, &m);
        let iou = iou_loss(
            &layer.iou_pred,
            &targets,
            &m,
            cfg.iou_loss_type,
            cfg.iou_include_background,
            cfg.huber_delta,
        )?;
        moment_v += scalar(&mom.total)?;
        iou_v += scalar(&iou)?;
        layer_terms.push((mom.total + (iou * w.iou)?)?);
        matches.push(m);
    }
    let mask: Vec<bool> = batch.video_mask.clone();
    let sal = saliency_loss(
        &out.encoder.saliency_scores,
        &batch.saliency_labels,
        &mask,
        cfg.saliency_margin,
        cfg.saliency_pairs,
        rng,
    )?;
    let align = alignment_loss(&out.encoder.global_video, &out.encoder.global_text)?;
    let components = LossComponents {
        moment: moment_v,
        saliency: scalar(&sal)?,
        align: scalar(&align)?,
        iou: iou_v,
    };
    let encoder_term = ((sal * w.saliency)? + (align * w.align)?)?;
    let mut total = encoder_term.clone();
    for t in &layer_terms {
        total = (total + t)?;
    }
    Ok(LossOutput {
        total,
        layer_terms,
        encoder_term,
        components,
        matches,
    })
}
