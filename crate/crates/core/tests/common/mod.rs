#![allow(dead_code)]

use candle_core::{DType, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rgtr::data::{collate, Batch, FeatureMatrix, GroundingSample};
use rgtr::model::{to_host, BatchTensors, ForwardCtx, ModelConfig, ModelOutput, Rgtr};
use rgtr::objectives::{
    alignment_loss, hungarian_match, iou_loss, iou_targets, moment_loss, saliency_loss, LossConfig, MatchResult,
};
use rgtr::span::MomentSpan;
use rgtr::Result;

pub fn random_sample(id: &str, clips: usize, words: usize, d_v: usize, d_t: usize, moments: Vec<MomentSpan>, rng: &mut impl Rng) -> GroundingSample {
    let mut feat = |r: usize, c: usize| {
        FeatureMatrix::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
    };
    GroundingSample {
        id: id.into(),
        video_features: feat(clips, d_v),
        text_features: feat(words, d_t),
        moments,
        saliency: None,
    }
}

pub fn micro_config(dec_layers: usize) -> ModelConfig {
    ModelConfig {
        hidden_dim: 8,
        heads: 2,
        enc_cross_layers: 1,
        enc_self_layers: 1,
        dec_layers,
        ffn_dim: 16,
        dropout: 0.0,
        num_queries: 3,
        ..ModelConfig::default()
    }
}

pub const MICRO_DV: usize = 5;
pub const MICRO_DT: usize = 4;

pub fn micro_anchors() -> Vec<MomentSpan> {
    vec![MomentSpan::new(0.3, 0.2), MomentSpan::new(0.5, 0.4), MomentSpan::new(0.7, 0.3)]
}

/// Two samples of 6 and 5 clips, so the batch carries padding.
pub fn micro_batch(seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_sample("a", 6, 3, MICRO_DV, MICRO_DT, vec![MomentSpan::new(0.4, 0.3)], &mut rng);
    let b = random_sample(
        "b",
        5,
        4,
        MICRO_DV,
        MICRO_DT,
        vec![MomentSpan::new(0.3, 0.2), MomentSpan::new(0.75, 0.3)],
        &mut rng,
    );
    collate(&[&a, &b]).unwrap()
}

/// Adds uniform noise to every parameter so no weight sits at its init value.
pub fn jitter_params(model: &Rgtr, seed: u64, scale: f64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for var in model.vars() {
        let t = var.as_tensor();
        let noise: Vec<f64> = (0..t.elem_count()).map(|_| rng.random_range(-scale..scale)).collect();
        let noise = Tensor::from_vec(noise, t.shape(), t.device())?.to_dtype(t.dtype())?;
        var.set(&(t + noise)?)?;
    }
    Ok(())
}

pub fn micro_model(dec_layers: usize, seed: u64) -> Rgtr {
    let model = Rgtr::new(&micro_config(dec_layers), MICRO_DV, MICRO_DT, micro_anchors(), seed, DType::F64).unwrap();
    jitter_params(&model, seed ^ 0xABCD, 0.1).unwrap();
    model
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Align,
    Saliency,
    Moment,
    Iou,
    Overall,
}

/// Matching and IoU targets frozen at one parameter point, so finite
/// differences see the same piecewise branch as the analytic gradient.
pub struct Frozen {
    pub matches: Vec<MatchResult>,
    pub targets: Vec<Vec<f64>>,
}

pub fn freeze(out: &ModelOutput, batch: &Batch, cfg: &LossConfig) -> Result<Frozen> {
    let mut matches = Vec::new();
    let mut targets = Vec::new();
    for layer in &out.layers {
        let (b, k, _) = layer.spans.dims3()?;
        let s = to_host(&layer.spans)?;
        let spans: Vec<Vec<MomentSpan>> = (0..b)
            .map(|i| (0..k).map(|q| MomentSpan::new(s[(i * k + q) * 2], s[(i * k + q) * 2 + 1])).collect())
            .collect();
        let c = to_host(&layer.conf)?;
        let conf: Vec<Vec<f64>> = c.chunks(k).map(<[f64]>::to_vec).collect();
        let m = hungarian_match(&spans, &conf, &batch.targets, &cfg.weights.match_cost());
        targets.push(iou_targets(&spans, &batch.targets, &m));
        matches.push(m);
    }
    Ok(Frozen { matches, targets })
}

/// Loss term with frozen matching; `Overall` reproduces the training objective.
pub fn term_loss(out: &ModelOutput, batch: &Batch, cfg: &LossConfig, frozen: &Frozen, term: Term) -> Result<Tensor> {
    let w = &cfg.weights;
    let sal = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        saliency_loss(
            &out.encoder.saliency_scores,
            &batch.saliency_labels,
            &batch.video_mask,
            cfg.saliency_margin,
            cfg.saliency_pairs,
            &mut rng,
        )
    };
    let align = || alignment_loss(&out.encoder.global_video, &out.encoder.global_text);
    let moment = |j: usize| -> Result<Tensor> {
        let l = &out.layers[j];
        Ok(moment_loss(&l.spans, &l.conf_logits, &batch.targets, &frozen.matches[j], w)?.total)
    };
    let iou = |j: usize| {
        iou_loss(
            &out.layers[j].iou_pred,
            &frozen.targets[j],
            &frozen.matches[j],
            cfg.iou_loss_type,
            cfg.iou_include_background,
            cfg.huber_delta,
        )
    };
    let sum_layers = |f: &dyn Fn(usize) -> Result<Tensor>| -> Result<Tensor> {
        let mut acc = f(0)?;
        for j in 1..out.layers.len() {
            acc = (acc + f(j)?)?;
        }
        Ok(acc)
    };
    match term {
        Term::Align => align(),
        Term::Saliency => sal(),
        Term::Moment => sum_layers(&moment),
        Term::Iou => sum_layers(&iou),
        Term::Overall => {
            let enc = ((sal()? * w.saliency)? + (align()? * w.align)?)?;
            let layers = sum_layers(&|j| Ok((moment(j)? + (iou(j)? * w.iou)?)?))?;
            Ok((enc + layers)?)
        }
    }
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    pub nonzero: usize,
}

fn set_entry(var: &Var, idx: usize, value: f64) -> Result<()> {
    let t = var.as_tensor();
    let mut host = to_host(t)?;
    host[idx] = value;
    var.set(&Tensor::from_vec(host, t.shape(), t.device())?.to_dtype(t.dtype())?)?;
    Ok(())
}

/// Central-difference check of `term` over `per_param` random entries of every parameter.
pub fn grad_check(model: &Rgtr, batch: &Batch, cfg: &LossConfig, term: Term, per_param: usize, h: f64, seed: u64) -> Result<GradCheck> {
    let ctx = ForwardCtx::eval();
    let bt: BatchTensors = model.batch_tensors(batch)?;
    let out = model.forward(&bt, &ctx)?;
    let frozen = freeze(&out, batch, cfg)?;
    let loss = term_loss(&out, batch, cfg, &frozen, term)?;
    let grads = loss.backward()?;
    let eval = || -> Result<f64> {
        let out = model.forward(&bt, &ctx)?;
        Ok(scalar(&term_loss(&out, batch, cfg, &frozen, term)?))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheck { max_rel_err: 0.0, checked: 0, nonzero: 0 };
    for var in model.vars() {
        let n = var.as_tensor().elem_count();
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => to_host(g)?,
            None => vec![0.0; n],
        };
        let base = to_host(var.as_tensor())?;
        for _ in 0..per_param.min(n) {
            let i = rng.random_range(0..n);
            set_entry(&var, i, base[i] + h)?;
            let up = eval()?;
            set_entry(&var, i, base[i] - h)?;
            let down = eval()?;
            set_entry(&var, i, base[i])?;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i];
            let scale = a.abs().max(numeric.abs()).max(1e-6);
            report.max_rel_err = report.max_rel_err.max((a - numeric).abs() / scale);
            report.checked += 1;
            if a.abs() > 1e-6 {
                report.nonzero += 1;
            }
        }
    }
    Ok(report)
}
