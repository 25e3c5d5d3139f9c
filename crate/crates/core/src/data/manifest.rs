//! JSON Lines dataset manifests.
//!
//! Each line holds one sample: `id`, `video_features` (`L x d_v`),
//! `text_features` (`N x d_t`), `moments` (list of `[center, width]`) and an
//! optional `saliency` vector of length `L`. Feature fields may instead be
//! `{"path", "rows", "cols"}` pointing at a little-endian f32 row-major file,
//! resolved relative to the manifest's directory.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, GroundingSample};
use crate::error::{Error, Result};
use crate::span::MomentSpan;

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum FeatureField {
    Inline(Vec<Vec<f32>>),
    Sidecar { path: PathBuf, rows: usize, cols: usize },
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    id: String,
    video_features: FeatureField,
    text_features: FeatureField,
    moments: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    saliency: Option<Vec<f32>>,
}

fn read_sidecar(base: &Path, path: &Path, rows: usize, cols: usize) -> std::result::Result<FeatureMatrix, String> {
    let full = if path.is_absolute() { path.to_path_buf() } else { base.join(path) };
    let bytes = std::fs::read(&full).map_err(|e| format!("cannot read {}: {e}", full.display()))?;
    if bytes.len() != rows * cols * 4 {
        return Err(format!(
            "{} holds {} bytes, declared shape {rows}x{cols} needs {}",
            full.display(),
            bytes.len(),
            rows * cols * 4
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    FeatureMatrix::new(rows, cols, data).map_err(|e| e.to_string())
}

fn resolve(field: FeatureField, base: &Path, what: &str) -> std::result::Result<FeatureMatrix, String> {
    match field {
        FeatureField::Inline(rows) => {
            FeatureMatrix::from_rows(&rows).map_err(|e| format!("{what}: {e}"))
        }
        FeatureField::Sidecar { path, rows, cols } => {
            read_sidecar(base, &path, rows, cols).map_err(|e| format!("{what}: {e}"))
        }
    }
}

fn parse_line(text: &str, base: &Path) -> std::result::Result<GroundingSample, String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let id = value
        .get("id")
        .and_then(|v| v.as_str())
        .map(str::to_owned)
        .ok_or_else(|| "missing required key `id`".to_string())?;
    let tag = |msg: String| format!("sample `{id}`: {msg}");
    let line: ManifestLine = serde_json::from_value(value).map_err(|e| tag(e.to_string()))?;
    let video_features = resolve(line.video_features, base, "video_features").map_err(tag)?;
    let text_features = resolve(line.text_features, base, "text_features").map_err(tag)?;
    let moments = line
        .moments
        .iter()
        .map(|m| MomentSpan::try_new(m[0], m[1]))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| tag(e.to_string()))?;
    let sample = GroundingSample {
        id: line.id,
        video_features,
        text_features,
        moments,
        saliency: line.saliency,
    };
    sample.validate().map_err(|e| e.to_string())?;
    Ok(sample)
}

pub fn load_manifest(path: &Path) -> Result<Vec<GroundingSample>> {
    let file = File::open(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_line(&line, &base).map_err(|reason| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        })?;
        out.push(sample);
    }
    Ok(out)
}

fn to_line(s: &GroundingSample, video: FeatureField, text: FeatureField) -> ManifestLine {
    ManifestLine {
        id: s.id.clone(),
        video_features: video,
        text_features: text,
        moments: s.moments.iter().map(|m| [m.center, m.width]).collect(),
        saliency: s.saliency.clone(),
    }
}

fn write_lines(path: &Path, lines: impl Iterator<Item = ManifestLine>) -> Result<()> {
    let mut buf = Vec::new();
    for line in lines {
        serde_json::to_writer(&mut buf, &line)?;
        buf.write_all(b"\n")?;
    }
    crate::io::write_atomic(path, &buf)
}

/// Writes samples with inline nested-array features.
pub fn write_manifest(path: &Path, samples: &[GroundingSample]) -> Result<()> {
    write_lines(
        path,
        samples.iter().map(|s| {
            to_line(
                s,
                FeatureField::Inline(s.video_features.to_rows()),
                FeatureField::Inline(s.text_features.to_rows()),
            )
        }),
    )
}

/// Writes the manifest plus one `.f32` sidecar file per feature matrix in
/// `<manifest dir>/features/`.
pub fn write_manifest_with_sidecars(path: &Path, samples: &[GroundingSample]) -> Result<()> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let dir = base.join("features");
    std::fs::create_dir_all(&dir)?;
    let mut lines = Vec::with_capacity(samples.len());
    for s in samples {
        let field = |m: &FeatureMatrix, suffix: &str| -> Result<FeatureField> {
            let rel = PathBuf::from("features").join(format!("{}.{suffix}.f32", s.id));
            let bytes: Vec<u8> = m.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            crate::io::write_atomic(&base.join(&rel), &bytes)?;
            Ok(FeatureField::Sidecar { path: rel, rows: m.rows, cols: m.cols })
        };
        let v = field(&s.video_features, "video")?;
        let t = field(&s.text_features, "text")?;
        lines.push(to_line(s, v, t));
    }
    write_lines(path, lines.into_iter())
}
