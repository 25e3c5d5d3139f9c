use candle_core::{Tensor, D};

use super::nn::{sigmoid, Linear, Mlp, ParamStore};
use crate::error::Result;

/// Prediction head shared by every decoder layer.
///
/// The offset network doubles as the span predictor: refined anchors are the
/// predicted spans. Its last layer starts at zero so the first forward pass
/// predicts spans exactly at the anchor priors.
pub struct PredictionHead {
    offset_net: Mlp,
    confidence: Linear,
    iou: Linear,
}

impl PredictionHead {
    pub fn new(store: &mut ParamStore, d: usize) -> Result<Self> {
        let offset_net = Mlp::from_layers(vec![
            store.linear("head.offset.0", d, d)?,
            store.linear("head.offset.1", d, d)?,
            store.zero_linear("head.offset.2", d, 2)?,
        ]);
        Ok(Self {
            offset_net,
            confidence: store.linear("head.confidence", d, 1)?,
            iou: store.linear("head.iou", d, 1)?,
        })
    }

    /// `B x K x D -> B x K x 2`
    pub fn offsets(&self, content: &Tensor) -> Result<Tensor> {
        self.offset_net.forward(content)
    }

    /// Foreground logits `B x K` (confidence before the sigmoid).
    pub fn confidence_logits(&self, content: &Tensor) -> Result<Tensor> {
        Ok(self.confidence.forward(content)?.squeeze(D::Minus1)?)
    }

    /// Predicted IoU in `[0, 1]`, `B x K`.
    pub fn iou_scores(&self, content: &Tensor) -> Result<Tensor> {
        sigmoid(&self.iou.forward(content)?.squeeze(D::Minus1)?)
    }
}

/// Parameter-name prefix owned by the shared head.
pub const HEAD_PREFIX: &str = "head.";
