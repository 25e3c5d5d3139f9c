use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, GroundingSample};
use crate::error::{Error, Result};
use crate::span::MomentSpan;

const PLACEMENT_RETRIES: usize = 64;
const MIN_TOKENS: usize = 3;
const MAX_TOKENS: usize = 8;
const MIN_EVENT_WIDTH: f64 = 0.05;
const MAX_EVENT_WIDTH: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_samples: usize,
    /// Clips per video.
    pub num_clips: usize,
    pub d_v: usize,
    pub d_t: usize,
    /// Number of distinct event types.
    pub vocab_size: usize,
    pub max_events_per_video: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_samples: 600,
            num_clips: 32,
            d_v: 32,
            d_t: 32,
            vocab_size: 8,
            max_events_per_video: 3,
            noise_std: 0.1,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_samples", self.num_samples),
            ("num_clips", self.num_clips),
            ("d_v", self.d_v),
            ("d_t", self.d_t),
            ("vocab_size", self.vocab_size),
            ("max_events_per_video", self.max_events_per_video),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("data.synth.{key} must be positive")));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("data.synth.noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

/// Event placed on the clip grid: `[start, start + len)` in clip indices.
#[derive(Debug, Clone, Copy)]
struct Placed {
    kind: usize,
    start: usize,
    len: usize,
}

fn place_events(rng: &mut ChaCha8Rng, kinds: &[usize], clips: usize) -> Option<Vec<Placed>> {
    let mut placed: Vec<Placed> = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let mut ok = false;
        for _ in 0..PLACEMENT_RETRIES {
            let w = rng.random_range(MIN_EVENT_WIDTH..=MAX_EVENT_WIDTH);
            let len = ((w * clips as f64).round() as usize).clamp(1, clips);
            let start = rng.random_range(0..=clips - len);
            let overlaps = placed
                .iter()
                .any(|p| start < p.start + p.len && p.start < start + len);
            if !overlaps {
                placed.push(Placed { kind, start, len });
                ok = true;
                break;
            }
        }
        if !ok {
            return None;
        }
    }
    Some(placed)
}

fn generate_sample(
    cfg: &SynthConfig,
    index: usize,
    video_sigs: &[Vec<f32>],
    text_sigs: &[Vec<f32>],
) -> GroundingSample {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let noise = Normal::new(0.0, cfg.noise_std).expect("noise_std validated");
    let l = cfg.num_clips;

    let queried = rng.random_range(0..cfg.vocab_size);
    let mut n_events = rng.random_range(1..=cfg.max_events_per_video);
    let placed = loop {
        let mut kinds = vec![queried];
        for _ in 1..n_events {
            kinds.push(rng.random_range(0..cfg.vocab_size));
        }
        if let Some(p) = place_events(&mut rng, &kinds, l) {
            break p;
        }
        n_events = (n_events - 1).max(1);
    };

    let mut video = FeatureMatrix::zeros(l, cfg.d_v);
    for i in 0..l {
        let event = placed.iter().find(|p| i >= p.start && i < p.start + p.len);
        let row = video.row_mut(i);
        for (k, v) in row.iter_mut().enumerate() {
            let base = event.map_or(0.0, |p| video_sigs[p.kind][k]);
            *v = base + noise.sample(&mut rng) as f32;
        }
    }

    let n_tokens = rng.random_range(MIN_TOKENS..=MAX_TOKENS);
    let mut text = FeatureMatrix::zeros(n_tokens, cfg.d_t);
    for i in 0..n_tokens {
        for (k, v) in text.row_mut(i).iter_mut().enumerate() {
            *v = text_sigs[queried][k] + noise.sample(&mut rng) as f32;
        }
    }

    let mut gt: Vec<&Placed> = placed.iter().filter(|p| p.kind == queried).collect();
    gt.sort_by_key(|p| p.start);
    let moments: Vec<MomentSpan> = gt
        .iter()
        .map(|p| MomentSpan::from_interval(p.start as f64 / l as f64, (p.start + p.len) as f64 / l as f64))
        .collect();
    let saliency = super::saliency_from_spans(&moments, l);

    GroundingSample {
        id: format!("synth-{:06}", index),
        video_features: video,
        text_features: text,
        moments,
        saliency: Some(saliency),
    }
}

/// Deterministic toy grounding dataset. Each event type owns a unit-norm
/// clip signature and a unit-norm query signature; clips inside an event carry
/// that event's signature plus Gaussian noise, and the query tokens carry the
/// queried type's signature plus noise. Every instance of the queried type is
/// a ground-truth moment.
pub fn generate_synthetic_dataset(cfg: &SynthConfig) -> Result<Vec<GroundingSample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let video_sigs: Vec<Vec<f32>> = (0..cfg.vocab_size).map(|_| unit_vector(&mut rng, cfg.d_v)).collect();
    let text_sigs: Vec<Vec<f32>> = (0..cfg.vocab_size).map(|_| unit_vector(&mut rng, cfg.d_t)).collect();
    Ok((0..cfg.num_samples)
        .map(|i| generate_sample(cfg, i, &video_sigs, &text_sigs))
        .collect())
}
