use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::span::{iou_1d, MomentSpan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryStats {
    pub query_index: usize,
    pub count: usize,
    pub mean_center: f64,
    pub mean_width: f64,
    pub center_std: f64,
    pub width_std: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DiversityReport {
    pub per_query: Vec<QueryStats>,
    /// Mean over samples of the average pairwise IoU between distinct queries.
    pub redundancy: f64,
    pub mean_center_std: f64,
    pub mean_width_std: f64,
}

/// One pre-NMS prediction of one query on one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub query_index: usize,
    pub center: f64,
    pub width: f64,
    pub score: f64,
    pub sample_id: String,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `per_sample[s][q]` is query `q`'s prediction on sample `s`.
pub fn diversity_report(per_sample: &[Vec<MomentSpan>]) -> DiversityReport {
    let k = per_sample.iter().map(Vec::len).max().unwrap_or(0);
    let per_query: Vec<QueryStats> = (0..k)
        .map(|q| {
            let spans: Vec<MomentSpan> = per_sample.iter().filter_map(|s| s.get(q).copied()).collect();
            let (mean_center, center_std) = mean_std(&spans.iter().map(|s| s.center).collect::<Vec<_>>());
            let (mean_width, width_std) = mean_std(&spans.iter().map(|s| s.width).collect::<Vec<_>>());
            QueryStats {
                query_index: q,
                count: spans.len(),
                mean_center,
                mean_width,
                center_std,
                width_std,
            }
        })
        .collect();
    let mut redundancy = 0.0;
    let mut counted = 0usize;
    for spans in per_sample {
        if spans.len() < 2 {
            continue;
        }
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..spans.len() {
            for j in i + 1..spans.len() {
                sum += iou_1d(&spans[i], &spans[j]);
                pairs += 1;
            }
        }
        redundancy += sum / pairs as f64;
        counted += 1;
    }
    let kq = per_query.len().max(1) as f64;
    DiversityReport {
        redundancy: if counted == 0 { 0.0 } else { redundancy / counted as f64 },
        mean_center_std: per_query.iter().map(|q| q.center_std).sum::<f64>() / kq,
        mean_width_std: per_query.iter().map(|q| q.width_std).sum::<f64>() / kq,
        per_query,
    }
}

/// Ordinary least squares `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

pub fn score_iou_correlation(scores: &[f64], gt_ious: &[f64]) -> Result<LinearFit> {
    if scores.len() != gt_ious.len() || scores.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "correlation needs two equal-length series of at least 2 points, got {} and {}",
            scores.len(),
            gt_ious.len()
        )));
    }
    let n = scores.len() as f64;
    let mx = scores.iter().sum::<f64>() / n;
    let my = gt_ious.iter().sum::<f64>() / n;
    let sxx: f64 = scores.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = scores.iter().zip(gt_ious).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::InvalidArgument("correlation is undefined for constant scores".into()));
    }
    let slope = sxy / sxx;
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
    })
}

pub fn write_scatter_csv(path: &Path, rows: &[ScatterRow]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "query_index,center,width,score,sample_id")?;
    for r in rows {
        writeln!(buf, "{},{},{},{},{}", r.query_index, r.center, r.width, r.score, r.sample_id)?;
    }
    crate::io::write_atomic(path, &buf)
}

pub fn write_correlation_csv(path: &Path, scores: &[f64], gt_ious: &[f64]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "score,gt_iou")?;
    for (s, g) in scores.iter().zip(gt_ious) {
        writeln!(buf, "{s},{g}")?;
    }
    crate::io::write_atomic(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn redundancy_conventions() {
        let a = MomentSpan::new(0.3, 0.2);
        let b = MomentSpan::new(0.8, 0.2);
        assert_eq!(diversity_report(&[vec![a], vec![b]]).redundancy, 0.0);
        assert_eq!(diversity_report(&[vec![a, a], vec![b, b]]).redundancy, 1.0);
        assert_eq!(diversity_report(&[vec![a, b], vec![b, a]]).redundancy, 0.0);
    }

    #[test]
    fn per_query_stats() {
        let r = diversity_report(&[
            vec![MomentSpan::new(0.2, 0.1), MomentSpan::new(0.5, 0.5)],
            vec![MomentSpan::new(0.4, 0.3), MomentSpan::new(0.5, 0.5)],
        ]);
        assert_eq!(r.per_query[0].count, 2);
        assert!((r.per_query[0].mean_center - 0.3).abs() < 1e-12);
        assert!((r.per_query[0].center_std - 0.1).abs() < 1e-12);
        assert_eq!(r.per_query[1].width_std, 0.0);
        assert!((r.mean_center_std - 0.05).abs() < 1e-12);
    }

    #[test]
    fn ols_examples() {
        let f = score_iou_correlation(&[0.0, 0.5, 1.0], &[0.0, 0.5, 1.0]).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12 && f.intercept.abs() < 1e-12);
        let f = score_iou_correlation(&[0.1, 0.4, 0.9], &[0.3; 3]).unwrap();
        assert!(f.slope.abs() < 1e-12);
        // closed form on 4 points
        let (x, y) = ([0.1, 0.3, 0.6, 0.8], [0.2, 0.1, 0.7, 0.6]);
        let n = 4.0;
        let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = (sy - slope * sx) / n;
        let f = score_iou_correlation(&x, &y).unwrap();
        assert!((f.slope - slope).abs() < 1e-9 && (f.intercept - intercept).abs() < 1e-9);
        assert!(score_iou_correlation(&[0.5, 0.5], &[0.1, 0.9]).is_err());
    }
}
