use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::model::ModelConfig;
use crate::objectives::LossConfig;

pub const SEED_ENV: &str = "RGTR_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Training manifest; synthetic data is generated when absent.
    pub manifest: Option<PathBuf>,
    /// Separate validation manifest. Without it the last `val_count`
    /// samples of the training data are held out.
    pub val_manifest: Option<PathBuf>,
    pub val_count: usize,
    pub synth: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            val_manifest: None,
            val_count: 100,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    /// Validation cadence in epochs; the final epoch is always evaluated.
    pub eval_every: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            batch_size: 32,
            epochs: 200,
            grad_clip: 0.1,
            seed: 2024,
            eval_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write `best` / `last` checkpoints during training.
    pub checkpoints: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            checkpoints: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        self.data.synth.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        self.eval.validate()?;
        let o = &self.optim;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::Config(format!("optim.lr must be > 0, got {}", o.lr)));
        }
        if !(o.weight_decay >= 0.0) {
            return Err(Error::Config(format!("optim.weight_decay must be >= 0, got {}", o.weight_decay)));
        }
        if o.batch_size == 0 {
            return Err(Error::Config("optim.batch_size must be >= 1".into()));
        }
        if !(o.grad_clip >= 0.0) {
            return Err(Error::Config(format!("optim.grad_clip must be >= 0, got {}", o.grad_clip)));
        }
        if o.eval_every == 0 {
            return Err(Error::Config("optim.eval_every must be >= 1".into()));
        }
        Ok(())
    }

    /// Parses TOML text, applies `key=value` overrides and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file (or defaults when `path` is `None`), applies
    /// overrides and the seed environment variable.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.optim.seed = seed
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={seed} is not an unsigned integer")))?;
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Applies one `a.b.c=value` override. The value is read as a TOML literal
/// and falls back to a plain string.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override `{spec}` has an empty key segment")));
    }
    let value = parse_literal(raw.trim());
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{}` is not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    unreachable!("key has at least one segment")
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitStrategy;

    #[test]
    fn defaults() {
        let c = RunConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(c.optim.lr, 1e-4);
        assert_eq!(c.optim.weight_decay, 1e-4);
        assert_eq!(c.optim.batch_size, 32);
        assert_eq!(c.optim.grad_clip, 0.1);
        assert_eq!(c.eval.nms_threshold, 0.8);
        assert_eq!(c.model.num_queries, 20);
        assert_eq!(c.model.hidden_dim, 256);
        assert_eq!(c.model.heads, 8);
        assert_eq!(c.loss.weights.align, 0.3);
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = RunConfig::from_toml_str("[optim]\nlearning_rate = 0.1\n", &[]).unwrap_err();
        assert!(e.to_string().contains("learning_rate"), "{e}");
        let e = RunConfig::from_toml_str("", &["model.nope=3".into()]).unwrap_err();
        assert!(e.to_string().contains("nope"), "{e}");
    }

    #[test]
    fn range_errors_name_key() {
        let e = RunConfig::from_toml_str("", &["optim.lr=-1".into()]).unwrap_err();
        assert!(e.to_string().contains("optim.lr"));
        let e = RunConfig::from_toml_str("", &["eval.nms_threshold=1.5".into()]).unwrap_err();
        assert!(e.to_string().contains("nms_threshold"));
    }

    #[test]
    fn overrides() {
        let c = RunConfig::from_toml_str(
            "[model]\nnum_queries = 5\n",
            &[
                "model.num_queries=10".into(),
                "model.init_strategy=random".into(),
                "loss.iou_loss_type=\"Huber\"".into(),
                "output.dir=/tmp/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.model.num_queries, 10);
        assert_eq!(c.model.init_strategy, InitStrategy::Random);
        assert_eq!(c.loss.iou_loss_type, crate::objectives::IouLossType::Huber);
        assert_eq!(c.output.dir, PathBuf::from("/tmp/x"));
        assert!(RunConfig::from_toml_str("", &["novalue".into()]).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap(), &[]).unwrap();
        assert_eq!(back, c);
    }
}
