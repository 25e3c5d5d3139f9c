use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use super::config::RunConfig;
use super::optim::AdamW;
use crate::error::{Error, Result};
use crate::model::Rgtr;
use crate::span::MomentSpan;

pub const FORMAT_VERSION: u32 = 1;

const STATIC_POS: &str = "__static_pos";
const ANCHORS: &str = "__static_anchors";
const ADAM_M: &str = "__adam_m.";
const ADAM_V: &str = "__adam_v.";

/// Everything needed to rebuild a model and continue training.
pub struct Checkpoint {
    pub config: RunConfig,
    pub epoch: usize,
    pub d_v: usize,
    pub d_t: usize,
    pub best_metric: Option<f64>,
    pub model: Rgtr,
    pub optimizer: Option<AdamW>,
}

fn cerr(e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(e.to_string())
}

fn to_bytes(t: &Tensor) -> Result<(Dtype, Vec<u8>)> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F64 => (Dtype::F64, flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        DType::F32 => (Dtype::F32, flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    })
}

fn from_view(view: &TensorView<'_>, device: &Device) -> Result<Tensor> {
    let shape = view.shape().to_vec();
    let data = view.data();
    Ok(match view.dtype() {
        Dtype::F64 => {
            let v: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(v, shape, device)?
        }
        Dtype::F32 => {
            let v: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(v, shape, device)?
        }
        other => return Err(Error::Checkpoint(format!("unsupported stored dtype {other:?}"))),
    })
}

/// Writes the model (and optimizer state when given) atomically.
pub fn save_checkpoint(
    path: &Path,
    config: &RunConfig,
    model: &Rgtr,
    optimizer: Option<&AdamW>,
    epoch: usize,
    best_metric: Option<f64>,
) -> Result<()> {
    let mut entries: Vec<(String, Tensor)> = Vec::new();
    for (name, var) in model.store.params() {
        entries.push((name.clone(), var.as_tensor().clone()));
    }
    let anchors = &model.decoder.anchors();
    entries.push((STATIC_POS.into(), anchors.static_pos.clone()));
    let flat: Vec<f64> = anchors.static_anchors.iter().flat_map(|a| [a.center, a.width]).collect();
    entries.push((ANCHORS.into(), Tensor::from_vec(flat, (anchors.len(), 2), &Device::Cpu)?));
    if let Some(opt) = optimizer {
        for ((name, _), (m, v)) in model.store.params().iter().zip(&opt.moments) {
            entries.push((format!("{ADAM_M}{name}"), m.clone()));
            entries.push((format!("{ADAM_V}{name}"), v.clone()));
        }
    }
    let bytes: Vec<(String, Dtype, Vec<usize>, Vec<u8>)> = entries
        .iter()
        .map(|(n, t)| {
            let (dt, b) = to_bytes(t)?;
            Ok((n.clone(), dt, t.dims().to_vec(), b))
        })
        .collect::<Result<_>>()?;
    let views = bytes
        .iter()
        .map(|(n, dt, shape, b)| Ok((n.clone(), TensorView::new(*dt, shape.clone(), b).map_err(cerr)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut meta = HashMap::new();
    meta.insert("format_version".to_string(), FORMAT_VERSION.to_string());
    meta.insert("config".to_string(), serde_json::to_string(config)?);
    meta.insert("epoch".to_string(), epoch.to_string());
    meta.insert("d_v".to_string(), model.encoder.config().d_v.to_string());
    meta.insert("d_t".to_string(), model.encoder.config().d_t.to_string());
    meta.insert("dtype".to_string(), format!("{:?}", model.dtype()));
    if let Some(b) = best_metric {
        meta.insert("best_metric".to_string(), serde_json::to_string(&b)?);
    }
    if let Some(opt) = optimizer {
        meta.insert("optim_step".to_string(), opt.step.to_string());
    }
    let buf = safetensors::tensor::serialize(views, Some(meta)).map_err(cerr)?;
    crate::io::write_atomic(path, &buf)
}

fn meta_get<'a>(meta: &'a HashMap<String, String>, key: &str) -> Result<&'a str> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Checkpoint(format!("missing metadata key `{key}`")))
}

fn meta_parse<T: std::str::FromStr>(meta: &HashMap<String, String>, key: &str) -> Result<T> {
    meta_get(meta, key)?
        .parse()
        .map_err(|_| Error::Checkpoint(format!("bad metadata value for `{key}`")))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let (_, header) = SafeTensors::read_metadata(&buf).map_err(cerr)?;
    let meta = header
        .metadata()
        .clone()
        .ok_or_else(|| Error::Checkpoint("checkpoint has no metadata".into()))?;
    let version: u32 = meta_parse(&meta, "format_version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let config: RunConfig = serde_json::from_str(meta_get(&meta, "config")?)?;
    let epoch: usize = meta_parse(&meta, "epoch")?;
    let d_v: usize = meta_parse(&meta, "d_v")?;
    let d_t: usize = meta_parse(&meta, "d_t")?;
    let dtype = match meta_get(&meta, "dtype")? {
        "F64" => DType::F64,
        "F32" => DType::F32,
        other => return Err(Error::Checkpoint(format!("unsupported dtype {other}"))),
    };
    let best_metric = meta.get("best_metric").map(|s| serde_json::from_str(s)).transpose()?;

    let st = SafeTensors::deserialize(&buf).map_err(cerr)?;
    let device = Device::Cpu;
    let get = |name: &str| -> Result<Tensor> {
        let view = st
            .tensor(name)
            .map_err(|_| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        from_view(&view, &device)
    };
    let anchor_vals: Vec<f64> = get(ANCHORS)?.flatten_all()?.to_vec1()?;
    let anchors: Vec<MomentSpan> = anchor_vals.chunks_exact(2).map(|c| MomentSpan::new(c[0], c[1])).collect();

    let mut model = Rgtr::new(&config.model, d_v, d_t, anchors, config.optim.seed, dtype)?;
    for (name, var) in model.store.params() {
        let t = get(name)?;
        if t.dims() != var.dims() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, model expects {:?}",
                t.dims(),
                var.dims()
            )));
        }
        var.set(&t.to_dtype(dtype)?)?;
    }
    model.decoder.set_static_pos(get(STATIC_POS)?.to_dtype(dtype)?)?;

    let optimizer = match meta.get("optim_step") {
        Some(step) => {
            let mut opt = AdamW::new(model.store.params(), config.optim.lr, config.optim.weight_decay)?;
            opt.step = step.parse().map_err(|_| Error::Checkpoint("bad optim_step".into()))?;
            opt.moments = model
                .store
                .params()
                .iter()
                .map(|(name, _)| {
                    Ok((
                        get(&format!("{ADAM_M}{name}"))?.to_dtype(dtype)?,
                        get(&format!("{ADAM_V}{name}"))?.to_dtype(dtype)?,
                    ))
                })
                .collect::<Result<_>>()?;
            Some(opt)
        }
        None => None,
    };
    Ok(Checkpoint {
        config,
        epoch,
        d_v,
        d_t,
        best_metric,
        model,
        optimizer,
    })
}
