//! Binary checkpoints for trained models.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "TFCK"                magic
//! u32                   format version
//! u64                   header length in bytes
//! [u8; header length]   UTF-8 JSON header
//! tensors               f64 little-endian, in header order
//! ```
//!
//! The header holds the architecture, schedule, margin labels, the transform
//! in its text form, and the name and shape of every tensor. All real-valued
//! state lives in the tensor section, stored bit for bit, so a save/load
//! cycle reproduces the model exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tailflow_core::datagen::MarginLabel;
use tailflow_core::flow::{EpochLog, Schedule, Standardizer, TrainedModel};
use tailflow_core::nn::{NetConfig, VelocityNet};
use tailflow_core::transforms::TransformSpec;

use crate::io::write_file;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"TFCK";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    d: usize,
    width: usize,
    depth: usize,
    embed_pairs: usize,
    schedule: String,
    labels: Vec<String>,
    transform: String,
    best_epoch: usize,
    seed: u64,
    tensors: Vec<TensorInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

/// Serialize a model to checkpoint bytes.
pub fn encode_model(model: &TrainedModel) -> Vec<u8> {
    let net = &model.net;
    let cfg = net.config();
    let mut tensors: Vec<(String, usize, usize, Vec<f64>)> = Vec::new();
    tensors.push(("time.freqs".into(), 1, net.freqs().len(), net.freqs().to_vec()));
    for (name, rows, cols, off) in net.tensor_layout() {
        tensors.push((name, rows, cols, net.params()[off..off + rows * cols].to_vec()));
    }
    if let Some(s) = &model.standardizer {
        tensors.push(("standardizer.mean".into(), 1, s.mean.len(), s.mean.clone()));
        tensors.push(("standardizer.scale".into(), 1, s.scale.len(), s.scale.clone()));
    }
    let log: Vec<f64> =
        model.log.iter().flat_map(|l| [l.epoch as f64, l.train_loss, l.val_loss, l.grad_norm]).collect();
    tensors.push(("train.log".into(), model.log.len(), 4, log));

    let header = Header {
        d: cfg.d,
        width: cfg.width,
        depth: cfg.depth,
        embed_pairs: cfg.embed_pairs,
        schedule: model.schedule.name().into(),
        labels: model.labels.iter().map(|l| l.name().into()).collect(),
        transform: model.transform.to_text(),
        best_epoch: model.best_epoch,
        seed: model.seed,
        tensors: tensors.iter().map(|(name, rows, cols, _)| TensorInfo { name: name.clone(), rows: *rows, cols: *cols }).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let body: usize = tensors.iter().map(|t| t.3.len() * 8).sum();
    let mut out = Vec::with_capacity(16 + json.len() + body);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, _, values) in &tensors {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parse checkpoint bytes; `path` is only used in error messages.
pub fn decode_model(bytes: &[u8], path: &Path) -> Result<TrainedModel> {
    let bad = |reason: &str| Error::format(path, reason.to_string());
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..header_end]).map_err(|e| Error::format(path, e.to_string()))?;

    let mut pos = header_end;
    let mut tensors = std::collections::HashMap::new();
    for info in &header.tensors {
        let len = info.rows.checked_mul(info.cols).ok_or_else(|| bad("tensor shape overflows"))?;
        let end = len.checked_mul(8).and_then(|b| b.checked_add(pos)).filter(|&e| e <= bytes.len());
        let end = end.ok_or_else(|| Error::format(path, format!("truncated tensor `{}`", info.name)))?;
        let values: Vec<f64> =
            bytes[pos..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.insert(info.name.as_str(), (info.rows, info.cols, values));
        pos = end;
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after the last tensor"));
    }
    let mut take = |name: &str, rows: Option<usize>, cols: Option<usize>| -> Result<Vec<f64>> {
        let (r, c, v) = tensors.remove(name).ok_or_else(|| Error::format(path, format!("missing tensor `{name}`")))?;
        if rows.is_some_and(|x| x != r) || cols.is_some_and(|x| x != c) {
            return Err(Error::format(path, format!("tensor `{name}` has shape {r}×{c}")));
        }
        Ok(v)
    };

    let cfg = NetConfig { d: header.d, width: header.width, depth: header.depth, embed_pairs: header.embed_pairs };
    let freqs = take("time.freqs", Some(1), Some(cfg.embed_pairs))?;
    let mut params = vec![0.0; cfg.param_count()];
    let layout = VelocityNet::from_parts(cfg, freqs.clone(), params.clone())?.tensor_layout();
    for (name, rows, cols, off) in layout {
        params[off..off + rows * cols].copy_from_slice(&take(&name, Some(rows), Some(cols))?);
    }
    let net = VelocityNet::from_parts(cfg, freqs, params)?;
    let standardizer = if header.tensors.iter().any(|t| t.name == "standardizer.mean") {
        Some(Standardizer {
            mean: take("standardizer.mean", Some(1), Some(cfg.d))?,
            scale: take("standardizer.scale", Some(1), Some(cfg.d))?,
        })
    } else {
        None
    };
    let log = take("train.log", None, Some(4))?
        .chunks_exact(4)
        .map(|c| EpochLog { epoch: c[0] as usize, train_loss: c[1], val_loss: c[2], grad_norm: c[3] })
        .collect();

    let schedule =
        Schedule::parse(&header.schedule).ok_or_else(|| Error::format(path, format!("unknown schedule `{}`", header.schedule)))?;
    let labels = header
        .labels
        .iter()
        .map(|l| MarginLabel::parse(l).ok_or_else(|| Error::format(path, format!("unknown label `{l}`"))))
        .collect::<Result<Vec<_>>>()?;
    let transform = TransformSpec::from_text(&header.transform)?;
    if labels.len() != cfg.d || transform.dim() != cfg.d {
        return Err(bad("labels or transform do not match the network dimension"));
    }
    Ok(TrainedModel {
        net,
        transform,
        schedule,
        standardizer,
        labels,
        log,
        best_epoch: header.best_epoch,
        seed: header.seed,
    })
}

pub fn save_model(path: impl AsRef<Path>, model: &TrainedModel) -> Result<()> {
    write_file(path.as_ref(), &encode_model(model))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tailflow_core::datagen::SampleMatrix;
    use tailflow_core::flow::{initial_noise, train, TrainConfig, TransformMode};

    fn small_model(mode: TransformMode, standardize: bool) -> TrainedModel {
        let data = initial_noise(64, 3, 1).map(|v| v * v.abs() * 4.0);
        let cfg = TrainConfig {
            mode,
            standardize,
            max_epochs: 4,
            patience: None,
            width: 8,
            depth: 2,
            embed_pairs: 3,
            seed: 5,
            ..TrainConfig::default()
        };
        train(&SampleMatrix::unlabeled(data), None, &cfg).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for (mode, standardize) in [(TransformMode::Adaptive, false), (TransformMode::Arcsinh, true)] {
            let model = small_model(mode, standardize);
            let p = dir.path().join("m.tfck");
            save_model(&p, &model).unwrap();
            let back = load_model(&p).unwrap();
            // Without a validation set the logged validation losses are NaN,
            // so equality is checked on the exact byte image and the parts.
            assert_eq!(encode_model(&back), fs::read(&p).unwrap());
            assert_eq!((&back.net, &back.transform, &back.standardizer), (&model.net, &model.transform, &model.standardizer));
            assert_eq!((back.schedule, &back.labels, back.best_epoch, back.seed), (model.schedule, &model.labels, model.best_epoch, model.seed));
            assert_eq!(back.log.len(), model.log.len());
            assert_eq!(back.sample(10, 5, f64::INFINITY, 2).unwrap(), model.sample(10, 5, f64::INFINITY, 2).unwrap());
        }
    }

    #[test]
    fn rejects_corrupt_files() {
        let bytes = encode_model(&small_model(TransformMode::Uniform, false));
        let p = Path::new("m.tfck");
        assert!(decode_model(&bytes[..bytes.len() - 1], p).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_model(&extra, p).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(decode_model(&magic, p).unwrap_err().to_string().contains("magic"));
        let mut version = bytes;
        version[4] = 9;
        assert!(decode_model(&version, p).unwrap_err().to_string().contains("version"));
    }
}
