//! Little-endian binary dumps for datasets and checkpoints, and the training
//! trace CSV.
//!
//! Dataset: `"DPFL"`, version u32, d u32, n u64, seed u64, then per sample
//! label u8 (1 or 2), group u8 (0 majority, 1 minority), feature slot u8 and
//! `2 d` f64.
//!
//! Checkpoint: `"DPFW"`, version u32, m u32, d u32, the `2 m d` weights as f64
//! in row-major `W[k][r][c]` order, then the frozen mask packed eight flags
//! per byte, least significant bit first.

use std::io::{Read, Write};

use dpfl_core::data::{Class, Dataset, Group, Sample};
use dpfl_core::network::ModelParams;
use dpfl_core::optim::TrainTrace;

use crate::error::{LabError, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"DPFL";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DPFW";
pub const FORMAT_VERSION: u32 = 1;

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| LabError::format(what, format!("truncated input: {e}")))
}

fn read_u8<R: Read>(r: &mut R, what: &str) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b, what)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    read_exact(r, &mut buf, what)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn check_header<R: Read>(r: &mut R, magic: &[u8; 4], what: &str) -> Result<()> {
    let mut m = [0u8; 4];
    read_exact(r, &mut m, what)?;
    if &m != magic {
        return Err(LabError::format(what, "bad magic"));
    }
    let version = read_u32(r, what)?;
    if version != FORMAT_VERSION {
        return Err(LabError::format(what, format!("unsupported version {version}")));
    }
    Ok(())
}

fn expect_eof<R: Read>(r: &mut R, what: &str) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b) {
        Ok(0) => Ok(()),
        Ok(_) => Err(LabError::format(what, "trailing bytes")),
        Err(e) => Err(LabError::format(what, e.to_string())),
    }
}

fn io(what: &str) -> impl FnOnce(std::io::Error) -> LabError + '_ {
    move |source| LabError::Io { context: format!("writing {what}"), source }
}

pub fn write_dataset<W: Write>(w: &mut W, data: &Dataset) -> Result<()> {
    let mut buf = Vec::with_capacity(28 + data.len() * (3 + 16 * data.dim));
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(data.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
    buf.extend_from_slice(&data.seed.to_le_bytes());
    for s in &data.samples {
        if s.x.len() != 2 * data.dim {
            return Err(LabError::format("dataset", "sample length does not match dimension"));
        }
        buf.push(s.label.label());
        buf.push(s.group.index() as u8);
        buf.push(s.feature_patch as u8);
        for v in &s.x {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io("dataset"))
}

pub fn read_dataset<R: Read>(r: &mut R) -> Result<Dataset> {
    const WHAT: &str = "dataset";
    check_header(r, DATASET_MAGIC, WHAT)?;
    let dim = read_u32(r, WHAT)? as usize;
    let n = read_u64(r, WHAT)? as usize;
    let seed = read_u64(r, WHAT)?;
    let mut samples = Vec::with_capacity(n.min(1 << 20));
    for i in 0..n {
        let label = Class::from_label(read_u8(r, WHAT)?)
            .ok_or_else(|| LabError::format(WHAT, format!("sample {i}: label must be 1 or 2")))?;
        let group = Group::from_index(read_u8(r, WHAT)?)
            .ok_or_else(|| LabError::format(WHAT, format!("sample {i}: group must be 0 or 1")))?;
        let feature_patch = read_u8(r, WHAT)? as usize;
        if feature_patch > 1 {
            return Err(LabError::format(WHAT, format!("sample {i}: feature slot must be 0 or 1")));
        }
        let x = read_f64s(r, 2 * dim, WHAT)?;
        samples.push(Sample { x, label, group, feature_patch });
    }
    expect_eof(r, WHAT)?;
    Ok(Dataset { dim, seed, samples })
}

pub fn write_checkpoint<W: Write>(w: &mut W, params: &ModelParams) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + params.len() * 8 + params.len().div_ceil(8));
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.width() as u32).to_le_bytes());
    buf.extend_from_slice(&(params.dim() as u32).to_le_bytes());
    for v in params.weights() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut packed = vec![0u8; params.len().div_ceil(8)];
    for (i, &f) in params.frozen().iter().enumerate() {
        if f {
            packed[i / 8] |= 1 << (i % 8);
        }
    }
    buf.extend_from_slice(&packed);
    w.write_all(&buf).map_err(io("checkpoint"))
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<ModelParams> {
    const WHAT: &str = "checkpoint";
    check_header(r, CHECKPOINT_MAGIC, WHAT)?;
    let width = read_u32(r, WHAT)? as usize;
    let dim = read_u32(r, WHAT)? as usize;
    let len = 2 * width * dim;
    let weights = read_f64s(r, len, WHAT)?;
    let mut packed = vec![0u8; len.div_ceil(8)];
    read_exact(r, &mut packed, WHAT)?;
    if len % 8 != 0 && packed[len / 8] >> (len % 8) != 0 {
        return Err(LabError::format(WHAT, "padding bits of the frozen mask are set"));
    }
    expect_eof(r, WHAT)?;
    let mask = (0..len).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
    let mut params = ModelParams::from_weights(width, dim, weights).map_err(|e| LabError::format(WHAT, e.to_string()))?;
    params.set_frozen(mask).map_err(|e| LabError::format(WHAT, e.to_string()))?;
    Ok(params)
}

pub const TRACE_HEADER: [&str; 11] = [
    "run_id",
    "iter",
    "mean_loss",
    "grad_norm_mean",
    "clip_fraction",
    "noise_norm",
    "batch_size",
    "min_loss",
    "grad_norm_max",
    "clipped_norm_max",
    "frozen_fraction",
];

/// One row per iteration. `frozen_fraction[t]` is the share of frozen
/// weights during iteration `t + 1`; pass an empty slice when nothing is
/// frozen.
pub fn trace_csv(trace: &TrainTrace, frozen_fraction: &[f64], run_id: &str) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_HEADER)?;
    for (t, r) in trace.records.iter().enumerate() {
        let frozen = frozen_fraction.get(t).copied().unwrap_or(0.0);
        w.write_record([
            run_id.to_string(),
            r.iter.to_string(),
            r.mean_loss.to_string(),
            r.grad_norm_mean.to_string(),
            r.clip_fraction.to_string(),
            r.noise_norm.to_string(),
            r.batch_size.to_string(),
            r.min_loss.to_string(),
            r.grad_norm_max.to_string(),
            r.clipped_norm_max.to_string(),
            frozen.to_string(),
        ])?;
    }
    finish_csv(w)
}

pub(crate) fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| LabError::format("csv", e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| LabError::format("csv", e.to_string()))
}
