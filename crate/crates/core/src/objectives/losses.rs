use candle_core::{DType, Tensor, D};
use rand::Rng;

use super::matcher::MatchResult;
use super::{IouLossType, LossWeights};
use crate::error::{Error, Result};
use crate::model::nn::{sigmoid, MASK_BIAS};
use crate::span::{iou_1d, MomentSpan};

fn constant(values: Vec<f64>, shape: &[usize], like: &Tensor) -> Result<Tensor> {
    Ok(Tensor::from_vec(values, shape, like.device())?.to_dtype(like.dtype())?)
}

/// Log-sum-exp over the last axis, `max` detached for stability.
fn logsumexp_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let s = x.broadcast_sub(&max)?.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok((s + max)?.squeeze(D::Minus1)?)
}

/// Contrastive video-sentence alignment over a batch of global features:
/// `-(1/B) sum_i log(exp(g_v^i . g_t^i) / sum_{i,j} exp(g_v^i . g_t^j))`.
/// No temperature.
pub fn alignment_loss(global_video: &Tensor, global_text: &Tensor) -> Result<Tensor> {
    let scores = global_video.matmul(&global_text.t()?)?;
    let lse = logsumexp_last(&scores.flatten_all()?.unsqueeze(0)?)?.squeeze(0)?;
    let diag = (global_video * global_text)?.sum(D::Minus1)?.mean_all()?;
    Ok((lse - diag)?)
}

/// Saliency supervision: hinge ranking over (positive, negative) clip pairs
/// plus cross-entropy of the clip softmax against the normalized labels.
///
/// Only samples with at least one positive (label > 0.5) and one negative
/// valid clip contribute. Each sample uses every pair when there are at most
/// `max_pairs`, otherwise `max_pairs` pairs drawn from `rng`.
pub fn saliency_loss(
    scores: &Tensor,
    labels: &[f32],
    mask: &[bool],
    margin: f64,
    max_pairs: usize,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let (b, l) = scores.dims2()?;
    let mut pos_idx = Vec::new();
    let mut neg_idx = Vec::new();
    let mut pair_weight = Vec::new();
    let mut row_weight = vec![0.0f64; b];
    let mut target = vec![0.0f64; b * l];
    let mut contributing = Vec::new();
    for i in 0..b {
        let valid = (0..l).filter(|&j| mask[i * l + j]);
        let (pos, neg): (Vec<usize>, Vec<usize>) = valid.partition(|&j| labels[i * l + j] > 0.5);
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        contributing.push((i, pos, neg));
    }
    let n_contrib = contributing.len();
    if n_contrib == 0 {
        return Ok(Tensor::zeros((), scores.dtype(), scores.device())?);
    }
    for (i, pos, neg) in &contributing {
        let mut pairs = Vec::new();
        if pos.len() * neg.len() <= max_pairs {
            for &p in pos {
                for &n in neg {
                    pairs.push((p, n));
                }
            }
        } else {
            for _ in 0..max_pairs {
                pairs.push((pos[rng.random_range(0..pos.len())], neg[rng.random_range(0..neg.len())]));
            }
        }
        let w = 1.0 / (pairs.len() * n_contrib) as f64;
        for (p, n) in pairs {
            pos_idx.push((i * l + p) as u32);
            neg_idx.push((i * l + n) as u32);
            pair_weight.push(w);
        }
        let total: f64 = (0..l).filter(|&j| mask[i * l + j]).map(|j| labels[i * l + j] as f64).sum();
        for j in 0..l {
            if mask[i * l + j] {
                target[i * l + j] = labels[i * l + j] as f64 / total;
            }
        }
        row_weight[*i] = 1.0 / n_contrib as f64;
    }

    let flat = scores.flatten_all()?;
    let dev = scores.device();
    let n_pairs = pos_idx.len();
    let s_pos = flat.index_select(&Tensor::from_vec(pos_idx, n_pairs, dev)?, 0)?;
    let s_neg = flat.index_select(&Tensor::from_vec(neg_idx, n_pairs, dev)?, 0)?;
    let hinge = ((s_neg - s_pos)? + margin)?.relu()?;
    let ranking = (hinge * constant(pair_weight, &[n_pairs], scores)?)?.sum_all()?;

    let bias: Vec<f64> = mask.iter().map(|m| if *m { 0.0 } else { MASK_BIAS }).collect();
    let masked = (scores + constant(bias, &[b, l], scores)?)?;
    let lse = logsumexp_last(&masked)?;
    let expected = (scores * constant(target, &[b, l], scores)?)?.sum(D::Minus1)?;
    let ce = ((lse - expected)? * constant(row_weight, &[b], scores)?)?.sum_all()?;
    Ok((ranking + ce)?)
}

/// Element-wise sigmoid focal loss on logits.
pub fn sigmoid_focal_loss(logits: &Tensor, targets: &Tensor, alpha: f64, gamma: f64) -> Result<Tensor> {
    let p = sigmoid(logits)?;
    // softplus(x) - t*x, stable form
    let softplus = (logits.relu()? + ((logits.abs()?.neg()?.exp()? + 1.0)?.log()?))?;
    let ce = (softplus - (targets * logits)?)?;
    let one_minus_t = targets.affine(-1.0, 1.0)?;
    let p_t = ((&p * targets)? + (p.affine(-1.0, 1.0)? * &one_minus_t)?)?;
    let mut loss = if gamma == 0.0 {
        ce
    } else if gamma == 2.0 {
        (ce * p_t.affine(-1.0, 1.0)?.sqr()?)?
    } else {
        (ce * p_t.affine(-1.0, 1.0)?.powf(gamma)?)?
    };
    if alpha >= 0.0 {
        let alpha_t = (targets.affine(alpha, 0.0)? + one_minus_t.affine(1.0 - alpha, 0.0)?)?;
        loss = (loss * alpha_t)?;
    }
    Ok(loss)
}

/// Interval endpoints of `M x 2` `(center, width)` spans, clamped to `[0, 1]`.
fn span_bounds(spans: &Tensor) -> Result<(Tensor, Tensor)> {
    let c = spans.narrow(D::Minus1, 0, 1)?.squeeze(D::Minus1)?;
    let w = spans.narrow(D::Minus1, 1, 1)?.squeeze(D::Minus1)?;
    let half = (w * 0.5)?;
    let start = (&c - &half)?.clamp(0.0, 1.0)?;
    let end = (&c + &half)?.clamp(0.0, 1.0)?;
    Ok((start, end))
}

/// Differentiable generalized IoU between matched `M x 2` span tensors.
pub fn giou_tensor(pred: &Tensor, gt: &Tensor) -> Result<Tensor> {
    let (s1, e1) = span_bounds(pred)?;
    let (s2, e2) = span_bounds(gt)?;
    let inter = (e1.minimum(&e2)? - s1.maximum(&s2)?)?.relu()?;
    let union = (((&e1 - &s1)? + (&e2 - &s2)?)? - &inter)?;
    let hull = (e1.maximum(&e2)? - s1.minimum(&s2)?)?;
    let iou = (&inter / &union)?;
    Ok((iou - ((&hull - &union)? / &hull)?)?)
}

/// Moment loss terms for one decoder layer.
pub struct MomentLoss {
    pub total: Tensor,
    pub l1: f64,
    pub giou: f64,
    pub focal: f64,
}

/// Gathers matched predicted spans (`M x 2`, with gradient) and their targets.
fn gather_matched(spans: &Tensor, targets: &[Vec<MomentSpan>], m: &MatchResult) -> Result<(Tensor, Tensor)> {
    let (_, k, _) = spans.dims3()?;
    let mut idx = Vec::new();
    let mut gt = Vec::new();
    for (b, pairs) in m.pairs.iter().enumerate() {
        for &(q, g) in pairs {
            idx.push((b * k + q) as u32);
            gt.push(targets[b][g].center);
            gt.push(targets[b][g].width);
        }
    }
    let n = idx.len();
    let flat = spans.reshape(((), 2))?;
    let pred = flat.index_select(&Tensor::from_vec(idx, n, spans.device())?, 0)?;
    Ok((pred, constant(gt, &[n, 2], spans)?))
}

/// `w_l1 * mean L1 + w_giou * mean (1 - gIoU)` over matched pairs plus
/// `w_focal * focal` over all queries, normalized by the matched count.
pub fn moment_loss(
    spans: &Tensor,
    conf_logits: &Tensor,
    targets: &[Vec<MomentSpan>],
    m: &MatchResult,
    w: &LossWeights,
) -> Result<MomentLoss> {
    let (b, k, _) = spans.dims3()?;
    let n = m.num_matched();
    let fg: Vec<f64> = m.foreground(k).into_iter().map(|f| if f { 1.0 } else { 0.0 }).collect();
    let labels = constant(fg, &[b, k], conf_logits)?;
    let focal = (sigmoid_focal_loss(conf_logits, &labels, w.focal_alpha, w.focal_gamma)?.sum_all()? / n.max(1) as f64)?;
    let mut total = (&focal * w.focal)?;
    let (mut l1_v, mut giou_v) = (0.0, 0.0);
    if n > 0 {
        let (pred, gt) = gather_matched(spans, targets, m)?;
        let l1 = ((&pred - &gt)?.abs()?.sum_all()? / n as f64)?;
        let giou = giou_tensor(&pred, &gt)?.affine(-1.0, 1.0)?.mean_all()?;
        l1_v = l1.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        giou_v = giou.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        total = ((total + (l1 * w.span_l1)?)? + (giou * w.giou)?)?;
    }
    let focal_v = focal.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    Ok(MomentLoss {
        total,
        l1: l1_v,
        giou: giou_v,
        focal: focal_v,
    })
}

/// IoU regression targets, `B x K` row-major: IoU of each matched prediction
/// with its ground truth, 0 for background. Host values, so no gradient.
pub fn iou_targets(spans: &[Vec<MomentSpan>], targets: &[Vec<MomentSpan>], m: &MatchResult) -> Vec<f64> {
    let k = spans.first().map_or(0, Vec::len);
    let mut out = vec![0.0; spans.len() * k];
    for (b, pairs) in m.pairs.iter().enumerate() {
        for &(q, g) in pairs {
            out[b * k + q] = iou_1d(&spans[b][q], &targets[b][g]);
        }
    }
    out
}

/// IoU-score regression over matched queries (optionally all queries).
pub fn iou_loss(
    iou_pred: &Tensor,
    targets: &[f64],
    m: &MatchResult,
    kind: IouLossType,
    include_background: bool,
    huber_delta: f64,
) -> Result<Tensor> {
    let (b, k) = iou_pred.dims2()?;
    let weights: Vec<f64> = if include_background {
        vec![1.0; b * k]
    } else {
        m.foreground(k).into_iter().map(|f| if f { 1.0 } else { 0.0 }).collect()
    };
    let count: f64 = weights.iter().sum();
    if count == 0.0 {
        return Ok(Tensor::zeros((), iou_pred.dtype(), iou_pred.device())?);
    }
    let diff = (iou_pred - constant(targets.to_vec(), &[b, k], iou_pred)?)?;
    let per = match kind {
        IouLossType::L2 => diff.sqr()?,
        IouLossType::L1 => diff.abs()?,
        IouLossType::Huber => {
            // 0.5 d^2 inside delta, delta (|d| - 0.5 delta) outside
            let a = diff.abs()?;
            let quad = a.minimum(huber_delta)?;
            let lin = (&a - &quad)?;
            ((quad.sqr()? * 0.5)? + (lin * huber_delta)?)?
        }
    };
    Ok(((per * constant(weights, &[b, k], iou_pred)?)?.sum_all()? / count)?)
}

/// Scalar values of the four objective terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct LossComponents {
    pub moment: f64,
    pub saliency: f64,
    pub align: f64,
    pub iou: f64,
}

/// `moment + λ_sal saliency + λ_align align + λ_iou iou`.
pub fn overall_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    for (name, v) in [("moment", c.moment), ("saliency", c.saliency), ("align", c.align), ("iou", c.iou)] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { component: name.into(), step: 0 });
        }
    }
    Ok(c.moment + w.saliency * c.saliency + w.align * c.align + w.iou * c.iou)
}
