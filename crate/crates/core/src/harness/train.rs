use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::DType;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::{DataConfig, RunConfig};
use super::optim::AdamW;
use crate::data::{all_moments, collate, generate_synthetic_dataset, load_manifest, GroundingSample};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, EvalReport};
use crate::model::{init_anchors, ForwardCtx, Rgtr};
use crate::objectives::{compute_loss, LossComponents};
use crate::span::{read_anchor_file, write_anchor_file, MomentSpan};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const BEST_CHECKPOINT: &str = "best.safetensors";
pub const LAST_CHECKPOINT: &str = "last.safetensors";

/// Training and validation samples per the data section.
pub fn load_datasets(cfg: &DataConfig) -> Result<(Vec<GroundingSample>, Vec<GroundingSample>)> {
    let mut train = match &cfg.manifest {
        Some(p) => load_manifest(p)?,
        None => generate_synthetic_dataset(&cfg.synth)?,
    };
    let val = match &cfg.val_manifest {
        Some(p) => load_manifest(p)?,
        None => {
            if cfg.val_count >= train.len() {
                return Err(Error::InsufficientData {
                    needed: cfg.val_count + 1,
                    got: train.len(),
                });
            }
            train.split_off(train.len() - cfg.val_count)
        }
    };
    if train.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok((train, val))
}

/// Reads the configured anchor file, or initializes anchors from the training
/// ground truth (writing the file when a path is configured).
pub fn resolve_anchors(cfg: &RunConfig, train: &[GroundingSample]) -> Result<Vec<MomentSpan>> {
    let m = &cfg.model;
    if let Some(path) = &m.anchor_file {
        if path.exists() {
            let anchors = read_anchor_file(path)?;
            if anchors.len() != m.num_queries {
                return Err(Error::Config(format!(
                    "anchor file {} has {} rows, model.num_queries is {}",
                    path.display(),
                    anchors.len(),
                    m.num_queries
                )));
            }
            return Ok(anchors);
        }
    }
    let anchors = init_anchors(&all_moments(train), m.num_queries, m.init_strategy, cfg.optim.seed, m.kmeans_iters)?;
    if let Some(path) = &m.anchor_file {
        write_anchor_file(path, &anchors)?;
    }
    Ok(anchors)
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub components: LossComponents,
    pub val: Option<EvalReport>,
}

pub struct TrainOutcome {
    pub model: Rgtr,
    pub optimizer: AdamW,
    pub history: Vec<EpochRecord>,
    /// Report of the last validation pass.
    pub final_report: Option<EvalReport>,
    pub best_metric: Option<f64>,
    pub output_dir: PathBuf,
}

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogEvent<'a> {
    Step {
        epoch: usize,
        step: usize,
        loss: f64,
        moment: f64,
        saliency: f64,
        align: f64,
        iou: f64,
        grad_norm: f64,
    },
    Epoch {
        epoch: usize,
        train_loss: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        val: Option<&'a EvalReport>,
    },
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_finite(c: &LossComponents, total: f64, step: usize) -> Result<()> {
    for (name, v) in [
        ("moment", c.moment),
        ("saliency", c.saliency),
        ("align", c.align),
        ("iou", c.iou),
        ("total", total),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss {
                component: name.into(),
                step,
            });
        }
    }
    Ok(())
}

/// Seeded training loop. With `resume`, model, optimizer and epoch counter
/// come from that checkpoint and training continues to `optim.epochs`.
pub fn train(
    cfg: &RunConfig,
    train_set: &[GroundingSample],
    val_set: &[GroundingSample],
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = train_set.first().ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    let (d_v, d_t) = (first.video_features.cols, first.text_features.cols);
    let seed = cfg.optim.seed;

    let (model, mut optimizer, start_epoch, mut best_metric) = match resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if (ck.d_v, ck.d_t) != (d_v, d_t) {
                return Err(Error::Dimension(format!(
                    "checkpoint expects d_v={} d_t={}, data has d_v={d_v} d_t={d_t}",
                    ck.d_v, ck.d_t
                )));
            }
            let mut opt = match ck.optimizer {
                Some(o) => o,
                None => AdamW::new(ck.model.store.params(), cfg.optim.lr, cfg.optim.weight_decay)?,
            };
            opt.lr = cfg.optim.lr;
            opt.weight_decay = cfg.optim.weight_decay;
            (ck.model, opt, ck.epoch, ck.best_metric)
        }
        None => {
            let anchors = resolve_anchors(cfg, train_set)?;
            let model = Rgtr::new(&cfg.model, d_v, d_t, anchors, seed, DType::F32)?;
            let opt = AdamW::new(model.store.params(), cfg.optim.lr, cfg.optim.weight_decay)?;
            (model, opt, 0, None)
        }
    };

    let out_dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&out_dir)?;
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(out_dir.join(LOG_FILE))?;

    let params = model.store.params().to_vec();
    let mut history = Vec::new();
    let mut final_report = None;
    for epoch in start_epoch + 1..=cfg.optim.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, epoch as u64, 0));
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut comp_sum = LossComponents::default();
        let mut batches = 0usize;
        for (i, chunk) in order.chunks(cfg.optim.batch_size).enumerate() {
            let samples: Vec<&GroundingSample> = chunk.iter().map(|&j| &train_set[j]).collect();
            let batch = collate(&samples)?;
            let tensors = model.batch_tensors(&batch)?;
            let ctx = ForwardCtx::train(mix(seed, epoch as u64, i as u64 + 1));
            let out = model.forward(&tensors, &ctx)?;
            let loss = compute_loss(&out, &batch, &cfg.loss, &mut rng)?;
            let total = loss.total.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            let step = optimizer.step + 1;
            check_finite(&loss.components, total, step)?;
            let grads = loss.total.backward()?;
            let grad_norm = optimizer.step(&params, &grads, cfg.optim.grad_clip)?;
            let c = loss.components;
            let event = LogEvent::Step {
                epoch,
                step,
                loss: total,
                moment: c.moment,
                saliency: c.saliency,
                align: c.align,
                iou: c.iou,
                grad_norm,
            };
            writeln!(log, "{}", serde_json::to_string(&event)?)?;
            loss_sum += total;
            comp_sum.moment += c.moment;
            comp_sum.saliency += c.saliency;
            comp_sum.align += c.align;
            comp_sum.iou += c.iou;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        let train_loss = loss_sum / n;
        let components = LossComponents {
            moment: comp_sum.moment / n,
            saliency: comp_sum.saliency / n,
            align: comp_sum.align / n,
            iou: comp_sum.iou / n,
        };

        let val = if !val_set.is_empty() && (epoch % cfg.optim.eval_every == 0 || epoch == cfg.optim.epochs) {
            Some(evaluate_model(&model, val_set, &cfg.eval)?.report)
        } else {
            None
        };
        writeln!(
            log,
            "{}",
            serde_json::to_string(&LogEvent::Epoch {
                epoch,
                train_loss,
                val: val.as_ref()
            })?
        )?;
        log::info!(
            "epoch {epoch}: loss {train_loss:.4}{}",
            val.as_ref().map_or(String::new(), |r| format!(", val mAP {:.4}", r.map_avg))
        );
        if let Some(report) = &val {
            if best_metric.is_none_or(|b| report.map_avg > b) {
                best_metric = Some(report.map_avg);
                if cfg.output.checkpoints {
                    save_checkpoint(&out_dir.join(BEST_CHECKPOINT), cfg, &model, None, epoch, best_metric)?;
                }
            }
            final_report = Some(report.clone());
        }
        if cfg.output.checkpoints {
            save_checkpoint(&out_dir.join(LAST_CHECKPOINT), cfg, &model, Some(&optimizer), epoch, best_metric)?;
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            components,
            val,
        });
    }
    log.flush()?;
    Ok(TrainOutcome {
        model,
        optimizer,
        history,
        final_report,
        best_metric,
        output_dir: out_dir,
    })
}
