//! Cross-modal alignment encoder: per-modality projection, global pooling for
//! the contrastive alignment objective, text-to-video cross-attention, a
//! self-attention stack over clips, and a per-clip saliency head.

use candle_core::{Tensor, D};

use super::nn::{ForwardCtx, LayerNorm, Linear, MultiHeadAttention, ParamStore};
use super::BatchTensors;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub d_v: usize,
    pub d_t: usize,
    pub hidden: usize,
    pub heads: usize,
    pub num_cross_layers: usize,
    pub num_self_layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
}

pub struct EncoderOutput {
    /// `B x L x D` fused clip embedding.
    pub fused: Tensor,
    /// `B x L`
    pub saliency_scores: Tensor,
    /// `B x D`, unit norm.
    pub global_video: Tensor,
    /// `B x D`, unit norm.
    pub global_text: Tensor,
    pub projected_video: Tensor,
    pub projected_text: Tensor,
}

struct Projection {
    fc1: Linear,
    fc2: Linear,
    norm: LayerNorm,
}

impl Projection {
    fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fc1: store.linear(&format!("{name}.fc1"), input, hidden)?,
            fc2: store.linear(&format!("{name}.fc2"), hidden, hidden)?,
            norm: store.layer_norm(&format!("{name}.norm"), hidden)?,
        })
    }

    fn forward(&self, x: &Tensor, p: f64, ctx: &ForwardCtx) -> Result<Tensor> {
        let h = ctx.dropout(&self.fc1.forward(x)?.relu()?, p)?;
        self.norm.forward(&self.fc2.forward(&h)?)
    }
}

/// Post-norm attention block followed by a feed-forward sublayer.
pub(crate) struct AttentionBlock {
    pub(crate) attn: MultiHeadAttention,
    norm1: LayerNorm,
    ffn1: Linear,
    ffn2: Linear,
    norm2: LayerNorm,
}

impl AttentionBlock {
    pub(crate) fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, ffn: usize) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, d, d, d, d, heads)?,
            norm1: store.layer_norm(&format!("{name}.norm1"), d)?,
            ffn1: store.linear(&format!("{name}.ffn1"), d, ffn)?,
            ffn2: store.linear(&format!("{name}.ffn2"), ffn, d)?,
            norm2: store.layer_norm(&format!("{name}.norm2"), d)?,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn forward(
        &self,
        x: &Tensor,
        queries: &Tensor,
        keys: &Tensor,
        values: &Tensor,
        key_bias: Option<&Tensor>,
        p: f64,
        ctx: &ForwardCtx,
    ) -> Result<Tensor> {
        let a = self.attn.forward(queries, keys, values, key_bias)?;
        let x = self.norm1.forward(&(x + ctx.dropout(&a, p)?)?)?;
        let f = self.ffn2.forward(&self.ffn1.forward(&x)?.relu()?)?;
        self.norm2.forward(&(&x + ctx.dropout(&f, p)?)?)
    }
}

pub struct Encoder {
    cfg: EncoderConfig,
    video_proj: Projection,
    text_proj: Projection,
    cross: Vec<AttentionBlock>,
    self_layers: Vec<AttentionBlock>,
    saliency: Linear,
}

/// Masked mean over valid positions followed by L2 normalization.
pub fn global_pool(features: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let counts = mask.sum_keepdim(D::Minus1)?;
    let host: Vec<f64> = counts.to_dtype(candle_core::DType::F64)?.flatten_all()?.to_vec1()?;
    if let Some(row) = host.iter().position(|c| *c <= 0.0) {
        return Err(Error::InvalidArgument(format!("row {row} has no valid positions to pool")));
    }
    let summed = features.broadcast_mul(&mask.unsqueeze(D::Minus1)?)?.sum(1)?;
    let mean = summed.broadcast_div(&counts)?;
    let norm = mean.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    Ok(mean.broadcast_div(&norm)?)
}

impl Encoder {
    pub fn new(store: &mut ParamStore, cfg: EncoderConfig) -> Result<Self> {
        let d = cfg.hidden;
        let cross = (0..cfg.num_cross_layers)
            .map(|i| AttentionBlock::new(store, &format!("encoder.cross.{i}"), d, cfg.heads, cfg.ffn_dim))
            .collect::<Result<Vec<_>>>()?;
        let self_layers = (0..cfg.num_self_layers)
            .map(|i| AttentionBlock::new(store, &format!("encoder.self.{i}"), d, cfg.heads, cfg.ffn_dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            video_proj: Projection::new(store, "encoder.video_proj", cfg.d_v, d)?,
            text_proj: Projection::new(store, "encoder.text_proj", cfg.d_t, d)?,
            cross,
            self_layers,
            saliency: store.linear("encoder.saliency", d, 1)?,
            cfg,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn project_features(&self, video: &Tensor, text: &Tensor, ctx: &ForwardCtx) -> Result<(Tensor, Tensor)> {
        let dv = video.dim(D::Minus1)?;
        let dt = text.dim(D::Minus1)?;
        if dv != self.cfg.d_v || dt != self.cfg.d_t {
            return Err(Error::Dimension(format!(
                "model expects d_v={}, d_t={}, got d_v={dv}, d_t={dt}",
                self.cfg.d_v, self.cfg.d_t
            )));
        }
        Ok((
            self.video_proj.forward(video, self.cfg.dropout, ctx)?,
            self.text_proj.forward(text, self.cfg.dropout, ctx)?,
        ))
    }

    pub fn t2v_cross_attention(
        &self,
        video: &Tensor,
        text: &Tensor,
        text_bias: &Tensor,
        ctx: &ForwardCtx,
    ) -> Result<Tensor> {
        let mut x = video.clone();
        for block in &self.cross {
            x = block.forward(&x, &x, text, text, Some(text_bias), self.cfg.dropout, ctx)?;
        }
        Ok(x)
    }

    pub fn encode(&self, batch: &BatchTensors, ctx: &ForwardCtx) -> Result<EncoderOutput> {
        if let Some(i) = batch.word_counts.iter().position(|n| *n == 0) {
            return Err(Error::InvalidArgument(format!("sample {i} has an all-padded text mask")));
        }
        let (pv, pt) = self.project_features(&batch.video, &batch.text, ctx)?;
        let global_video = global_pool(&pv, &batch.video_mask)?;
        let global_text = global_pool(&pt, &batch.text_mask)?;
        // Visual feature refinement would slot in here, between projection and fusion.
        let mut x = self.t2v_cross_attention(&pv, &pt, &batch.text_bias, ctx)?;
        for block in &self.self_layers {
            let qk = (&x + &batch.clip_pos)?;
            x = block.forward(&x, &qk, &qk, &x, Some(&batch.video_bias), self.cfg.dropout, ctx)?;
        }
        let saliency_scores = self.saliency.forward(&x)?.squeeze(D::Minus1)?;
        Ok(EncoderOutput {
            fused: x,
            saliency_scores,
            global_video,
            global_text,
            projected_video: pv,
            projected_text: pt,
        })
    }
}
