//! Grounding samples, synthetic generation, manifest I/O and batching.

mod batch;
mod manifest;
mod synth;

pub use batch::{collate, saliency_from_spans, Batch};
pub use manifest::{load_manifest, write_manifest, write_manifest_with_sidecars};
pub use synth::{generate_synthetic_dataset, SynthConfig};

use crate::error::{Error, Result};
use crate::span::MomentSpan;

/// Dense row-major `rows x cols` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
            return Err(Error::Dimension(format!(
                "row {i} has {} columns, expected {cols}",
                r.len()
            )));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn to_rows(&self) -> Vec<Vec<f32>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingSample {
    pub id: String,
    /// `L x d_v` clip features.
    pub video_features: FeatureMatrix,
    /// `N x d_t` token features.
    pub text_features: FeatureMatrix,
    pub moments: Vec<MomentSpan>,
    pub saliency: Option<Vec<f32>>,
}

impl GroundingSample {
    pub fn num_clips(&self) -> usize {
        self.video_features.rows
    }

    pub fn num_words(&self) -> usize {
        self.text_features.rows
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidSample {
            id: self.id.clone(),
            reason,
        };
        if self.num_clips() == 0 {
            return Err(fail("video has no clips".into()));
        }
        if self.num_words() == 0 {
            return Err(fail("text has no tokens".into()));
        }
        if self.moments.is_empty() {
            return Err(fail("no ground-truth moments".into()));
        }
        for m in &self.moments {
            MomentSpan::try_new(m.center, m.width).map_err(|e| fail(e.to_string()))?;
        }
        if let Some(sal) = &self.saliency {
            if sal.len() != self.num_clips() {
                return Err(fail(format!(
                    "saliency has {} entries for {} clips",
                    sal.len(),
                    self.num_clips()
                )));
            }
            if sal.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(fail("saliency values must lie in [0, 1]".into()));
            }
        }
        if self.video_features.data.iter().any(|v| !v.is_finite())
            || self.text_features.data.iter().any(|v| !v.is_finite())
        {
            return Err(fail("non-finite feature value".into()));
        }
        Ok(())
    }
}

/// All ground-truth spans across a dataset.
pub fn all_moments(samples: &[GroundingSample]) -> Vec<MomentSpan> {
    samples.iter().flat_map(|s| s.moments.iter().copied()).collect()
}
