use super::GroundingSample;
use crate::error::{Error, Result};
use crate::span::{to_interval, MomentSpan};

/// Padded host-side batch. Feature tensors are flat row-major buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub batch_size: usize,
    pub max_clips: usize,
    pub max_words: usize,
    pub d_v: usize,
    pub d_t: usize,
    /// `B x L_max x d_v`
    pub video: Vec<f32>,
    /// `B x L_max`
    pub video_mask: Vec<bool>,
    /// `B x N_max x d_t`
    pub text: Vec<f32>,
    /// `B x N_max`
    pub text_mask: Vec<bool>,
    pub targets: Vec<Vec<MomentSpan>>,
    /// `B x L_max`, zero at padding.
    pub saliency_labels: Vec<f32>,
    pub clip_counts: Vec<usize>,
    pub word_counts: Vec<usize>,
}

/// Binary span membership of each clip midpoint.
pub fn saliency_from_spans(spans: &[MomentSpan], num_clips: usize) -> Vec<f32> {
    let intervals: Vec<(f64, f64)> = spans.iter().map(to_interval).collect();
    (0..num_clips)
        .map(|i| {
            let mid = (i as f64 + 0.5) / num_clips as f64;
            let inside = intervals.iter().any(|&(s, e)| mid >= s && mid <= e);
            if inside {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

pub fn collate(samples: &[&GroundingSample]) -> Result<Batch> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot collate an empty sample list".into()))?;
    let d_v = first.video_features.cols;
    let d_t = first.text_features.cols;
    for s in samples {
        if s.video_features.cols != d_v || s.text_features.cols != d_t {
            return Err(Error::Dimension(format!(
                "sample `{}` has feature dims ({}, {}), batch expects ({d_v}, {d_t})",
                s.id, s.video_features.cols, s.text_features.cols
            )));
        }
    }
    let b = samples.len();
    let max_clips = samples.iter().map(|s| s.num_clips()).max().unwrap_or(0);
    let max_words = samples.iter().map(|s| s.num_words()).max().unwrap_or(0);

    let mut video = vec![0.0f32; b * max_clips * d_v];
    let mut video_mask = vec![false; b * max_clips];
    let mut text = vec![0.0f32; b * max_words * d_t];
    let mut text_mask = vec![false; b * max_words];
    let mut saliency_labels = vec![0.0f32; b * max_clips];

    for (i, s) in samples.iter().enumerate() {
        let l = s.num_clips();
        let n = s.num_words();
        let vo = i * max_clips * d_v;
        video[vo..vo + l * d_v].copy_from_slice(&s.video_features.data);
        video_mask[i * max_clips..i * max_clips + l].fill(true);
        let to = i * max_words * d_t;
        text[to..to + n * d_t].copy_from_slice(&s.text_features.data);
        text_mask[i * max_words..i * max_words + n].fill(true);
        let sal = match &s.saliency {
            Some(v) => v.clone(),
            None => saliency_from_spans(&s.moments, l),
        };
        saliency_labels[i * max_clips..i * max_clips + l].copy_from_slice(&sal);
    }

    Ok(Batch {
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        batch_size: b,
        max_clips,
        max_words,
        d_v,
        d_t,
        video,
        video_mask,
        text,
        text_mask,
        targets: samples.iter().map(|s| s.moments.clone()).collect(),
        saliency_labels,
        clip_counts: samples.iter().map(|s| s.num_clips()).collect(),
        word_counts: samples.iter().map(|s| s.num_words()).collect(),
    })
}
