//! Region-guided decoder.
//!
//! Every moment query is an anchor pair. The static anchor never moves and its
//! positional embedding conditions the self-attention between queries. The
//! dynamic anchor starts at the same point, conditions cross-attention into
//! the fused clip features, and is shifted by the shared head's offsets after
//! every layer.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use super::head::PredictionHead;
use super::nn::{span_sine_embed, ForwardCtx, LayerNorm, Linear, Mlp, MultiHeadAttention, ParamStore};
use super::BatchTensors;
use crate::error::{Error, Result};
use crate::span::{MomentSpan, W_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorUpdate {
    /// `a + delta` in normalized coordinates, then clamped.
    #[default]
    Additive,
    /// `sigmoid(logit(a) + delta)`, then clamped.
    Logit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub num_queries: usize,
    pub num_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub anchor_update: AnchorUpdate,
}

/// Frozen static anchors and their positional embedding.
///
/// `static_pos` is evaluated once, when the anchors are installed, and kept as
/// a constant tensor; it is not a trainable parameter.
pub struct AnchorSet {
    pub static_anchors: Vec<MomentSpan>,
    /// `K x D`
    pub static_pos: Tensor,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.static_anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.static_anchors.is_empty()
    }

    /// `K x 2` tensor of the static anchors.
    pub fn anchor_tensor(&self, dtype: DType, device: &candle_core::Device) -> Result<Tensor> {
        let flat: Vec<f64> = self
            .static_anchors
            .iter()
            .flat_map(|a| [a.center, a.width])
            .collect();
        Ok(Tensor::from_vec(flat, (self.len(), 2), device)?.to_dtype(dtype)?)
    }
}

pub struct DecoderLayerOutput {
    /// `B x K x D` content embedding after this layer.
    pub content: Tensor,
    /// `B x K x 2` dynamic anchors entering this layer (no gradient).
    pub anchors_in: Tensor,
    /// `B x K x 2` raw head offsets.
    pub offsets: Tensor,
    /// `B x K x 2` refined anchors, i.e. this layer's predicted spans.
    /// Carries gradient to the offsets.
    pub anchors_out: Tensor,
}

struct DecoderLayer {
    self_attn: MultiHeadAttention,
    norm1: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm2: LayerNorm,
    ffn1: Linear,
    ffn2: Linear,
    norm3: LayerNorm,
}

pub struct Decoder {
    cfg: DecoderConfig,
    layers: Vec<DecoderLayer>,
    anchor_mlp: Mlp,
    anchors: AnchorSet,
}

/// Host-side anchor update for one span.
pub fn update_anchor(anchor: MomentSpan, delta: [f64; 2], mode: AnchorUpdate) -> MomentSpan {
    match mode {
        AnchorUpdate::Additive => MomentSpan::new(anchor.center + delta[0], anchor.width + delta[1]),
        AnchorUpdate::Logit => {
            let s = |a: f64, d: f64| 1.0 / (1.0 + (-(logit(a) + d)).exp());
            MomentSpan::new(s(anchor.center, delta[0]), s(anchor.width, delta[1]))
        }
    }
}

fn logit(x: f64) -> f64 {
    let x = x.clamp(1e-4, 1.0 - 1e-4);
    (x / (1.0 - x)).ln()
}

/// Applies an anchor update to `B x K x 2` tensors. `anchors` is treated as a
/// constant; the result carries gradient to `delta` only.
pub fn update_dynamic_anchors(anchors: &Tensor, delta: &Tensor, mode: AnchorUpdate) -> Result<Tensor> {
    let device = anchors.device();
    let dtype = delta.dtype();
    let anchors = anchors.detach();
    let lo = Tensor::new(&[0.0f64, W_MIN], device)?.to_dtype(dtype)?;
    let hi = Tensor::new(&[1.0f64, 1.0], device)?.to_dtype(dtype)?;
    let raw = match mode {
        AnchorUpdate::Additive => (anchors.to_dtype(dtype)? + delta)?,
        AnchorUpdate::Logit => {
            let host: Vec<f64> = anchors.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
            let logits: Vec<f64> = host.into_iter().map(logit).collect();
            let base = Tensor::from_vec(logits, anchors.shape(), device)?.to_dtype(dtype)?;
            super::nn::sigmoid(&(base + delta)?)?
        }
    };
    Ok(raw.broadcast_maximum(&lo)?.broadcast_minimum(&hi)?)
}

impl Decoder {
    pub fn new(store: &mut ParamStore, cfg: DecoderConfig, static_anchors: Vec<MomentSpan>) -> Result<Self> {
        if static_anchors.len() != cfg.num_queries {
            return Err(Error::Config(format!(
                "model.num_queries is {} but {} anchors were supplied",
                cfg.num_queries,
                static_anchors.len()
            )));
        }
        let d = cfg.hidden;
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for i in 0..cfg.num_layers {
            let name = format!("decoder.layer.{i}");
            layers.push(DecoderLayer {
                self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d, d, d, d, d, cfg.heads)?,
                norm1: store.layer_norm(&format!("{name}.norm1"), d)?,
                cross_attn: MultiHeadAttention::new(
                    store,
                    &format!("{name}.cross_attn"),
                    2 * d,
                    2 * d,
                    d,
                    2 * d,
                    d,
                    cfg.heads,
                )?,
                norm2: store.layer_norm(&format!("{name}.norm2"), d)?,
                ffn1: store.linear(&format!("{name}.ffn1"), d, cfg.ffn_dim)?,
                ffn2: store.linear(&format!("{name}.ffn2"), cfg.ffn_dim, d)?,
                norm3: store.layer_norm(&format!("{name}.norm3"), d)?,
            });
        }
        let anchor_mlp = store.mlp("decoder.anchor_mlp", &[d, d, d])?;
        let placeholder = Tensor::zeros((static_anchors.len(), d), store.dtype(), store.device())?;
        let mut decoder = Self {
            cfg,
            layers,
            anchor_mlp,
            anchors: AnchorSet {
                static_anchors,
                static_pos: placeholder,
            },
        };
        let a = decoder.anchors.anchor_tensor(store.dtype(), store.device())?;
        decoder.anchors.static_pos = decoder.anchor_positional_embedding(&a)?.detach();
        Ok(decoder)
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    /// Replaces the frozen static positional embedding, e.g. from a checkpoint.
    pub fn set_static_pos(&mut self, pos: Tensor) -> Result<()> {
        if pos.dims() != self.anchors.static_pos.dims() {
            return Err(Error::Checkpoint(format!(
                "static positional embedding shape {:?}, expected {:?}",
                pos.dims(),
                self.anchors.static_pos.dims()
            )));
        }
        self.anchors.static_pos = pos.detach();
        Ok(())
    }

    /// `MLP(PE(a))` for `... x 2` anchors, producing `... x D`.
    pub fn anchor_positional_embedding(&self, anchors: &Tensor) -> Result<Tensor> {
        let d = self.cfg.hidden;
        let host: Vec<f64> = anchors.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        let pairs: Vec<[f64; 2]> = host.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let pe = span_sine_embed(&pairs, d);
        let mut shape = anchors.dims().to_vec();
        *shape.last_mut().unwrap() = d;
        let pe = Tensor::from_vec(pe, shape, anchors.device())?.to_dtype(self.anchors.static_pos.dtype())?;
        self.anchor_mlp.forward(&pe)
    }

    /// Self-attention among queries with static-anchor positions added to
    /// queries and keys; values are content only.
    pub fn region_guided_self_attention(
        &self,
        layer: usize,
        content: &Tensor,
        static_pos: &Tensor,
        ctx: &ForwardCtx,
    ) -> Result<Tensor> {
        let l = &self.layers[layer];
        let qk = content.broadcast_add(static_pos)?;
        let a = l.self_attn.forward(&qk, &qk, content, None)?;
        l.norm1.forward(&(content + ctx.dropout(&a, self.cfg.dropout)?)?)
    }

    /// Cross-attention from queries `[content ; dynamic pos]` to keys
    /// `[fused ; clip pos]` with the fused features as values.
    #[allow(clippy::too_many_arguments)]
    pub fn region_guided_cross_attention(
        &self,
        layer: usize,
        content: &Tensor,
        dynamic_pos: &Tensor,
        fused: &Tensor,
        clip_pos: &Tensor,
        video_bias: &Tensor,
        ctx: &ForwardCtx,
    ) -> Result<Tensor> {
        let l = &self.layers[layer];
        let q = Tensor::cat(&[content, dynamic_pos], D::Minus1)?;
        let k = Tensor::cat(&[fused, clip_pos], D::Minus1)?;
        let a = l.cross_attn.forward(&q, &k, fused, Some(video_bias))?;
        let x = l.norm2.forward(&(content + ctx.dropout(&a, self.cfg.dropout)?)?)?;
        let f = l.ffn2.forward(&l.ffn1.forward(&x)?.relu()?)?;
        l.norm3.forward(&(&x + ctx.dropout(&f, self.cfg.dropout)?)?)
    }

    pub fn decode(
        &self,
        fused: &Tensor,
        batch: &BatchTensors,
        head: &PredictionHead,
        ctx: &ForwardCtx,
    ) -> Result<Vec<DecoderLayerOutput>> {
        let (b, _, d) = fused.dims3()?;
        let k = self.anchors.len();
        let dtype = fused.dtype();
        let static_pos = self.anchors.static_pos.unsqueeze(0)?.broadcast_as((b, k, d))?;
        let mut anchors = self
            .anchors
            .anchor_tensor(dtype, fused.device())?
            .unsqueeze(0)?
            .broadcast_as((b, k, 2))?
            .contiguous()?;
        let mut content = Tensor::zeros((b, k, d), dtype, fused.device())?;
        let mut outputs = Vec::with_capacity(self.layers.len());
        for j in 0..self.layers.len() {
            let dynamic_pos = self.anchor_positional_embedding(&anchors)?;
            let content_s = self.region_guided_self_attention(j, &content, &static_pos, ctx)?;
            content = self.region_guided_cross_attention(
                j,
                &content_s,
                &dynamic_pos,
                fused,
                &batch.clip_pos,
                &batch.video_bias,
                ctx,
            )?;
            let offsets = head.offsets(&content)?;
            let refined = update_dynamic_anchors(&anchors, &offsets, self.cfg.anchor_update)?;
            outputs.push(DecoderLayerOutput {
                content: content.clone(),
                anchors_in: anchors.clone(),
                offsets,
                anchors_out: refined.clone(),
            });
            anchors = refined.detach();
        }
        Ok(outputs)
    }
}
