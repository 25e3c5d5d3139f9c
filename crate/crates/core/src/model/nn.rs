//! Small building blocks on top of candle tensors.
//!
//! Parameters live in a [`ParamStore`] that initializes them from a seeded
//! host RNG, so two models built with the same seed are bit-identical.

use std::cell::RefCell;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Additive attention bias for padded keys.
pub const MASK_BIAS: f64 = -1e9;
const LN_EPS: f64 = 1e-5;
pub const PE_TEMPERATURE: f64 = 10000.0;

pub struct ParamStore {
    device: Device,
    dtype: DType,
    rng: ChaCha8Rng,
    params: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: Device) -> Self {
        Self {
            device,
            dtype,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Vec::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    fn register(&mut self, name: &str, values: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        debug_assert!(self.get(name).is_none(), "duplicate parameter {name}");
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.params.push((name.to_string(), var));
        Ok(out)
    }

    fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let values = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.register(name, values, shape)
    }

    fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        self.register(name, vec![value; n], shape)
    }

    /// Xavier-uniform weight, zero bias.
    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Linear> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Ok(Linear {
            weight: self.uniform(&format!("{name}.weight"), &[fan_in, fan_out], bound)?,
            bias: self.constant(&format!("{name}.bias"), &[fan_out], 0.0)?,
        })
    }

    pub fn zero_linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Linear> {
        Ok(Linear {
            weight: self.constant(&format!("{name}.weight"), &[fan_in, fan_out], 0.0)?,
            bias: self.constant(&format!("{name}.bias"), &[fan_out], 0.0)?,
        })
    }

    pub fn layer_norm(&mut self, name: &str, dim: usize) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gamma: self.constant(&format!("{name}.gamma"), &[dim], 1.0)?,
            beta: self.constant(&format!("{name}.beta"), &[dim], 0.0)?,
        })
    }

    /// `dims = [in, hidden.., out]`, ReLU between layers.
    pub fn mlp(&mut self, name: &str, dims: &[usize]) -> Result<Mlp> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| self.linear(&format!("{name}.{i}"), w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Mlp { layers })
    }
}

/// Forward-pass context: train/eval switch and the dropout RNG.
pub struct ForwardCtx {
    pub train: bool,
    rng: RefCell<ChaCha8Rng>,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)),
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            train: true,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn dropout(&self, x: &Tensor, p: f64) -> Result<Tensor> {
        if !self.train || p <= 0.0 {
            return Ok(x.clone());
        }
        let scale = 1.0 / (1.0 - p);
        let n = x.elem_count();
        let mut rng = self.rng.borrow_mut();
        let mask: Vec<f32> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale as f32 })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
        Ok(x.mul(&mask)?)
    }
}

#[derive(Clone)]
pub struct Linear {
    /// `in x out`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let fan_in = *dims.last().expect("non-scalar input");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let y = x
            .reshape((rows, fan_in))?
            .matmul(&self.weight)?
            .broadcast_add(&self.bias)?;
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.weight.dim(1)?;
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

#[derive(Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn from_layers(layers: Vec<Linear>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = h.relu()?;
            }
        }
        Ok(h)
    }
}

/// Logistic sigmoid, `0.5 * (1 + tanh(x / 2))`.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(((x * 0.5)?.tanh()? + 1.0)?.affine(0.5, 0.0)?)
}

/// Numerically stable softmax over the last axis.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

/// Multi-head attention with separate query/key and value widths.
///
/// Queries and keys are projected to `qk_dim`, values to `v_dim`; both are
/// split evenly across heads and scores are scaled by `1/sqrt(qk_dim/heads)`.
#[derive(Clone)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
    qk_dim: usize,
    v_dim: usize,
}

impl MultiHeadAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        q_in: usize,
        k_in: usize,
        v_in: usize,
        qk_dim: usize,
        v_dim: usize,
        heads: usize,
    ) -> Result<Self> {
        Ok(Self {
            q: store.linear(&format!("{name}.q"), q_in, qk_dim)?,
            k: store.linear(&format!("{name}.k"), k_in, qk_dim)?,
            v: store.linear(&format!("{name}.v"), v_in, v_dim)?,
            out: store.linear(&format!("{name}.out"), v_dim, v_dim)?,
            heads,
            qk_dim,
            v_dim,
        })
    }

    fn split(&self, x: &Tensor, width: usize) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        Ok(x
            .reshape((b, t, self.heads, width / self.heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    /// `queries: B x Tq x q_in`, `keys: B x Tk x k_in`, `values: B x Tk x v_in`,
    /// `key_bias: B x 1 x 1 x Tk` (0 for valid keys, [`MASK_BIAS`] for padding).
    pub fn forward(
        &self,
        queries: &Tensor,
        keys: &Tensor,
        values: &Tensor,
        key_bias: Option<&Tensor>,
    ) -> Result<Tensor> {
        let (b, tq, _) = queries.dims3()?;
        let q = self.split(&self.q.forward(queries)?, self.qk_dim)?;
        let k = self.split(&self.k.forward(keys)?, self.qk_dim)?;
        let v = self.split(&self.v.forward(values)?, self.v_dim)?;
        let scale = 1.0 / ((self.qk_dim / self.heads) as f64).sqrt();
        let mut scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?;
        if let Some(bias) = key_bias {
            scores = scores.broadcast_add(bias)?;
        }
        let attn = softmax_last(&scores)?;
        let ctx = attn
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, tq, self.v_dim))?;
        self.out.forward(&ctx)
    }
}

/// Sinusoidal encoding of a scalar in `[0, 1]`: `dim/2` sines followed by
/// `dim/2` cosines with geometric frequencies.
pub fn sine_embed(pos: f64, dim: usize, out: &mut Vec<f64>) {
    let half = dim / 2;
    let angle = |i: usize| 2.0 * std::f64::consts::PI * pos / PE_TEMPERATURE.powf(i as f64 / half as f64);
    out.extend((0..half).map(|i| angle(i).sin()));
    out.extend((0..half).map(|i| angle(i).cos()));
}

/// Positional encoding of `(center, width)` pairs: `dim/2` channels per coordinate.
pub fn span_sine_embed(pairs: &[[f64; 2]], dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(pairs.len() * dim);
    for p in pairs {
        sine_embed(p[0], dim / 2, &mut out);
        sine_embed(p[1], dim / 2, &mut out);
    }
    out
}

/// Clip positional encodings `B x L_max x dim` at normalized clip midpoints.
pub fn clip_position_embed(clip_counts: &[usize], max_clips: usize, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(clip_counts.len() * max_clips * dim);
    for &l in clip_counts {
        for i in 0..max_clips {
            let pos = if i < l { (i as f64 + 0.5) / l as f64 } else { 0.0 };
            sine_embed(pos, dim, &mut out);
        }
    }
    out
}
