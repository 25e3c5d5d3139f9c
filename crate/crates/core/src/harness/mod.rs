//! Configuration, training, checkpoints and the CLI commands.

pub mod checkpoint;
pub mod config;
pub mod optim;
pub mod train;

use std::io::Write;
use std::path::Path;

use serde::Serialize;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{apply_override, DataConfig, OptimConfig, OutputConfig, RunConfig, SEED_ENV};
pub use optim::AdamW;
pub use train::{load_datasets, resolve_anchors, train, EpochRecord, TrainOutcome};

use crate::data::{all_moments, generate_synthetic_dataset, load_manifest, write_manifest};
use crate::error::{Error, Result};
use crate::eval::diagnostics::{write_correlation_csv, write_scatter_csv};
use crate::eval::{evaluate_model, EvalConfig, EvalReport, ScoringMode};
use crate::model::{init_anchors, InitStrategy};
use crate::objectives::IouLossType;
use crate::span::{write_anchor_file, MomentSpan};

pub const REPORT_FILE: &str = "eval_report.json";
pub const SCATTER_FILE: &str = "query_scatter.csv";
pub const CORRELATION_FILE: &str = "score_iou.csv";

/// Writes the synthetic dataset of `cfg.data.synth` as a manifest.
pub fn cmd_synth_data(cfg: &RunConfig, out: &Path) -> Result<usize> {
    let samples = generate_synthetic_dataset(&cfg.data.synth)?;
    write_manifest(out, &samples)?;
    Ok(samples.len())
}

/// Initializes anchors from every ground-truth span in `manifest`.
pub fn cmd_init_anchors(
    manifest: &Path,
    k: usize,
    strategy: InitStrategy,
    seed: u64,
    max_iters: usize,
    out: &Path,
) -> Result<Vec<MomentSpan>> {
    let samples = load_manifest(manifest)?;
    let anchors = init_anchors(&all_moments(&samples), k, strategy, seed, max_iters)?;
    write_anchor_file(out, &anchors)?;
    Ok(anchors)
}

pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    let (train_set, val_set) = load_datasets(&cfg.data)?;
    train(cfg, &train_set, &val_set, resume)
}

/// Evaluates a checkpoint on `manifest`, writing the report and diagnostic
/// CSVs into `out_dir`.
pub fn cmd_eval(checkpoint: &Path, manifest: &Path, eval: &EvalConfig, out_dir: &Path) -> Result<EvalReport> {
    eval.validate()?;
    let ck = load_checkpoint(checkpoint)?;
    let samples = load_manifest(manifest)?;
    for s in &samples {
        if s.video_features.cols != ck.d_v || s.text_features.cols != ck.d_t {
            return Err(Error::Dimension(format!(
                "sample {} has d_v={} d_t={}, checkpoint expects d_v={} d_t={}",
                s.id, s.video_features.cols, s.text_features.cols, ck.d_v, ck.d_t
            )));
        }
    }
    let ev = evaluate_model(&ck.model, &samples, eval)?;
    std::fs::create_dir_all(out_dir)?;
    crate::io::write_atomic(&out_dir.join(REPORT_FILE), serde_json::to_string_pretty(&ev.report)?.as_bytes())?;
    write_scatter_csv(&out_dir.join(SCATTER_FILE), &ev.scatter)?;
    write_correlation_csv(&out_dir.join(CORRELATION_FILE), &ev.corr_scores, &ev.corr_ious)?;
    Ok(ev.report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    K,
    InitStrategy,
    Scoring,
    IouLossType,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" | "num_queries" => Ok(Self::K),
            "init_strategy" => Ok(Self::InitStrategy),
            "scoring" => Ok(Self::Scoring),
            "iou_loss_type" => Ok(Self::IouLossType),
            other => Err(Error::InvalidArgument(format!(
                "unknown sweep axis `{other}` (expected K, init_strategy, scoring or iou_loss_type)"
            ))),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

/// Applies one sweep value to a copy of `base`.
pub fn sweep_config(base: &RunConfig, axis: SweepAxis, value: &str) -> Result<RunConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::K => {
            cfg.model.num_queries = value
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("K value `{value}` is not an integer")))?
        }
        SweepAxis::InitStrategy => cfg.model.init_strategy = value.parse()?,
        SweepAxis::Scoring => cfg.eval.scoring = value.parse::<ScoringMode>()?,
        SweepAxis::IouLossType => cfg.loss.iou_loss_type = value.parse::<IouLossType>()?,
    }
    cfg.model.anchor_file = None;
    cfg.output.dir = base.output.dir.join(format!("sweep-{}", value.replace(['/', '\\'], "_")));
    cfg.validate()?;
    Ok(cfg)
}

/// One training run per value with the shared seed. Failed runs are reported
/// and the remaining values still run. Writes `sweep.csv` in the output dir.
pub fn cmd_sweep(base: &RunConfig, axis: SweepAxis, values: &[String]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value".into()));
    }
    let (train_set, val_set) = load_datasets(&base.data)?;
    let mut rows = Vec::new();
    for value in values {
        let result = sweep_config(base, axis, value).and_then(|cfg| {
            train(&cfg, &train_set, &val_set, None)?
                .final_report
                .ok_or_else(|| Error::InvalidArgument("sweep runs need a validation split".into()))
        });
        rows.push(match result {
            Ok(report) => SweepRow {
                value: value.clone(),
                report: Some(report),
                error: None,
            },
            Err(e) => {
                log::error!("sweep value {value} failed: {e}");
                SweepRow {
                    value: value.clone(),
                    report: None,
                    error: Some(e.to_string()),
                }
            }
        });
    }
    write_sweep_csv(&base.output.dir.join("sweep.csv"), &rows)?;
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "value,r1_0.5,r1_0.7,map_avg,error")?;
    for r in rows {
        match &r.report {
            Some(rep) => writeln!(
                buf,
                "{},{},{},{},",
                r.value,
                rep.r1_at(0.5).map_or(String::new(), |v| v.to_string()),
                rep.r1_at(0.7).map_or(String::new(), |v| v.to_string()),
                rep.map_avg
            )?,
            None => writeln!(buf, "{},,,,\"{}\"", r.value, r.error.as_deref().unwrap_or("").replace('"', "'"))?,
        }
    }
    crate::io::write_atomic(path, &buf)
}
