//! The region-guided grounding transformer: encoder, anchor-pair decoder and
//! the shared IoU-aware prediction head.

pub mod decoder;
pub mod encoder;
pub mod head;
pub mod nn;

use candle_core::{DType, Device, Tensor, Var};
use serde::{Deserialize, Serialize};

pub use decoder::{update_anchor, update_dynamic_anchors, AnchorSet, AnchorUpdate, Decoder, DecoderConfig, DecoderLayerOutput};
pub use encoder::{global_pool, Encoder, EncoderConfig, EncoderOutput};
pub use head::PredictionHead;
pub use nn::{ForwardCtx, ParamStore};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::span::MomentSpan;

/// Anchor initialization strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    Kmeans,
    UniformGrid,
    Random,
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" | "k-means" => Ok(Self::Kmeans),
            "uniform_grid" | "uniform-grid" | "grid" => Ok(Self::UniformGrid),
            "random" => Ok(Self::Random),
            other => Err(Error::InvalidArgument(format!("unknown init strategy `{other}`"))),
        }
    }
}

impl std::fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Kmeans => "kmeans",
            Self::UniformGrid => "uniform_grid",
            Self::Random => "random",
        })
    }
}

/// Anchor pairs for `k` queries from the training ground-truth spans.
///
/// `UniformGrid` uses the smallest near-square `n_center x n_width` grid with
/// at least `k` cells, truncated to `k`.
pub fn init_anchors(
    train_spans: &[MomentSpan],
    k: usize,
    strategy: InitStrategy,
    seed: u64,
    max_iters: usize,
) -> Result<Vec<MomentSpan>> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be >= 1".into()));
    }
    match strategy {
        InitStrategy::Kmeans => crate::span::kmeans_spans(train_spans, k, seed, max_iters),
        InitStrategy::UniformGrid => {
            let n_center = (k as f64).sqrt().ceil() as usize;
            let n_width = k.div_ceil(n_center);
            let mut grid = crate::span::uniform_grid_anchors(n_center, n_width)?;
            grid.truncate(k);
            Ok(grid)
        }
        InitStrategy::Random => crate::span::random_anchors(k, seed),
    }
}

/// Model hyperparameters. Feature dims `d_v`/`d_t` come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub heads: usize,
    pub enc_cross_layers: usize,
    pub enc_self_layers: usize,
    pub dec_layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub num_queries: usize,
    pub init_strategy: InitStrategy,
    /// Anchor file to read; written on first use when absent.
    pub anchor_file: Option<std::path::PathBuf>,
    pub anchor_update: AnchorUpdate,
    pub kmeans_iters: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 256,
            heads: 8,
            enc_cross_layers: 3,
            enc_self_layers: 3,
            dec_layers: 3,
            ffn_dim: 1024,
            dropout: 0.1,
            num_queries: 20,
            init_strategy: InitStrategy::Kmeans,
            anchor_file: None,
            anchor_update: AnchorUpdate::Additive,
            kmeans_iters: 300,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden_dim == 0 || self.heads == 0 {
            return err("model.hidden_dim and model.heads must be positive");
        }
        if !self.hidden_dim.is_multiple_of(self.heads) {
            return err("model.hidden_dim must be divisible by model.heads");
        }
        if !self.hidden_dim.is_multiple_of(4) {
            return err("model.hidden_dim must be divisible by 4 (sinusoidal span encoding)");
        }
        if self.enc_cross_layers == 0 || self.enc_self_layers == 0 || self.dec_layers == 0 {
            return err("model layer counts must be >= 1");
        }
        if self.num_queries == 0 {
            return err("model.num_queries must be >= 1");
        }
        if self.ffn_dim == 0 {
            return err("model.ffn_dim must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err("model.dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn encoder(&self, d_v: usize, d_t: usize) -> EncoderConfig {
        EncoderConfig {
            d_v,
            d_t,
            hidden: self.hidden_dim,
            heads: self.heads,
            num_cross_layers: self.enc_cross_layers,
            num_self_layers: self.enc_self_layers,
            ffn_dim: self.ffn_dim,
            dropout: self.dropout,
        }
    }

    pub fn decoder(&self) -> DecoderConfig {
        DecoderConfig {
            num_queries: self.num_queries,
            num_layers: self.dec_layers,
            hidden: self.hidden_dim,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            dropout: self.dropout,
            anchor_update: self.anchor_update,
        }
    }
}

/// Device tensors for one [`Batch`].
pub struct BatchTensors {
    /// `B x L x d_v`
    pub video: Tensor,
    /// `B x L`, 1 at valid clips.
    pub video_mask: Tensor,
    /// `B x 1 x 1 x L` additive attention bias.
    pub video_bias: Tensor,
    /// `B x N x d_t`
    pub text: Tensor,
    pub text_mask: Tensor,
    pub text_bias: Tensor,
    /// `B x L x D` clip positional encodings.
    pub clip_pos: Tensor,
    pub clip_counts: Vec<usize>,
    pub word_counts: Vec<usize>,
}

impl BatchTensors {
    pub fn new(batch: &Batch, hidden: usize, dtype: DType, device: &Device) -> Result<Self> {
        let b = batch.batch_size;
        let (l, n) = (batch.max_clips, batch.max_words);
        let f = |data: &[f32], shape: &[usize]| -> Result<Tensor> {
            Ok(Tensor::from_slice(data, shape, device)?.to_dtype(dtype)?)
        };
        let mask = |m: &[bool]| -> Vec<f32> { m.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect() };
        let bias = |m: &[bool]| -> Vec<f32> {
            m.iter().map(|v| if *v { 0.0 } else { nn::MASK_BIAS as f32 }).collect()
        };
        let clip_pos = nn::clip_position_embed(&batch.clip_counts, l, hidden);
        Ok(Self {
            video: f(&batch.video, &[b, l, batch.d_v])?,
            video_mask: f(&mask(&batch.video_mask), &[b, l])?,
            video_bias: f(&bias(&batch.video_mask), &[b, 1, 1, l])?,
            text: f(&batch.text, &[b, n, batch.d_t])?,
            text_mask: f(&mask(&batch.text_mask), &[b, n])?,
            text_bias: f(&bias(&batch.text_mask), &[b, 1, 1, n])?,
            clip_pos: Tensor::from_vec(clip_pos, (b, l, hidden), device)?.to_dtype(dtype)?,
            clip_counts: batch.clip_counts.clone(),
            word_counts: batch.word_counts.clone(),
        })
    }
}

/// Per-layer predictions from the shared head.
pub struct LayerPrediction {
    pub content: Tensor,
    pub anchors_in: Tensor,
    pub offsets: Tensor,
    /// `B x K x 2` predicted spans (the refined dynamic anchors).
    pub spans: Tensor,
    /// `B x K`
    pub conf_logits: Tensor,
    /// `B x K`, sigmoid of the logits.
    pub conf: Tensor,
    /// `B x K`
    pub iou_pred: Tensor,
}

pub struct ModelOutput {
    pub encoder: EncoderOutput,
    pub layers: Vec<LayerPrediction>,
}

impl ModelOutput {
    pub fn last(&self) -> &LayerPrediction {
        self.layers.last().expect("decoder has at least one layer")
    }
}

pub struct Rgtr {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub head: PredictionHead,
}

impl Rgtr {
    pub fn new(
        config: &ModelConfig,
        d_v: usize,
        d_t: usize,
        anchors: Vec<MomentSpan>,
        seed: u64,
        dtype: DType,
    ) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed, dtype, Device::Cpu);
        let encoder = Encoder::new(&mut store, config.encoder(d_v, d_t))?;
        let head = PredictionHead::new(&mut store, config.hidden_dim)?;
        let decoder = Decoder::new(&mut store, config.decoder(), anchors)?;
        Ok(Self {
            config: config.clone(),
            store,
            encoder,
            decoder,
            head,
        })
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn vars(&self) -> Vec<Var> {
        self.store.params().iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn batch_tensors(&self, batch: &Batch) -> Result<BatchTensors> {
        BatchTensors::new(batch, self.config.hidden_dim, self.dtype(), self.device())
    }

    /// Converts decoder contents into spans, confidences and IoU scores.
    pub fn predict(&self, content: &Tensor, anchors_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let logits = self.head.confidence_logits(content)?;
        Ok((anchors_out.clone(), nn::sigmoid(&logits)?, self.head.iou_scores(content)?))
    }

    pub fn forward(&self, batch: &BatchTensors, ctx: &ForwardCtx) -> Result<ModelOutput> {
        let enc = self.encoder.encode(batch, ctx)?;
        let layers = self
            .decoder
            .decode(&enc.fused, batch, &self.head, ctx)?
            .into_iter()
            .map(|out| {
                let conf_logits = self.head.confidence_logits(&out.content)?;
                Ok(LayerPrediction {
                    conf: nn::sigmoid(&conf_logits)?,
                    iou_pred: self.head.iou_scores(&out.content)?,
                    conf_logits,
                    spans: out.anchors_out,
                    anchors_in: out.anchors_in,
                    offsets: out.offsets,
                    content: out.content,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelOutput { encoder: enc, layers })
    }
}

/// Row-major copy of a tensor as `f64`.
pub fn to_host(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?)
}
