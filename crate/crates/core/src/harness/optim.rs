use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};

use crate::error::{Error, Result};

/// AdamW with decoupled weight decay and global-norm gradient clipping.
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: usize,
    /// First and second moments, one pair per parameter, in parameter order.
    pub moments: Vec<(Tensor, Tensor)>,
}

impl AdamW {
    pub fn new(params: &[(String, Var)], lr: f64, weight_decay: f64) -> Result<Self> {
        let moments = params
            .iter()
            .map(|(_, v)| Ok((v.zeros_like()?, v.zeros_like()?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments,
        })
    }

    /// Global L2 norm of the gradients present in `grads`.
    pub fn grad_norm(params: &[(String, Var)], grads: &GradStore) -> Result<f64> {
        let mut sq = 0.0;
        for (_, v) in params {
            if let Some(g) = grads.get(v.as_tensor()) {
                sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            }
        }
        Ok(sq.sqrt())
    }

    /// One update. Returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &[(String, Var)], grads: &GradStore, clip: f64) -> Result<f64> {
        if params.len() != self.moments.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer holds {} moment pairs for {} parameters",
                self.moments.len(),
                params.len()
            )));
        }
        let norm = Self::grad_norm(params, grads)?;
        let scale = if clip > 0.0 && norm > clip { clip / (norm + 1e-6) } else { 1.0 };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((_, var), (m, v)) in params.iter().zip(self.moments.iter_mut()) {
            let Some(g) = grads.get(var.as_tensor()) else { continue };
            // gradients can still reference the forward graph
            let g = (g.detach() * scale)?;
            *m = ((&*m * self.beta1)? + (&g * (1.0 - self.beta1))?)?;
            *v = ((&*v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let m_hat = (&*m / bc1)?;
            let v_hat = (&*v / bc2)?;
            let update = (m_hat / (v_hat.sqrt()? + self.eps)?)?;
            let theta = var.as_tensor();
            let decayed = (theta * (1.0 - self.lr * self.weight_decay))?;
            var.set(&(decayed - (update * self.lr)?)?.detach())?;
        }
        Ok(norm)
    }
}
