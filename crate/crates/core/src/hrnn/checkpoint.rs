//! Binary checkpoint: magic, version, JSON header, then f32 arrays.
//!
//! Layout:
//!
//! ```text
//! b"HRNNCKPT" | u32 LE version | u32 LE header length | header JSON
//! | for each header.arrays entry in order: product(shape) f32 LE values
//! ```
//!
//! Model arrays come first, in parameter registration order
//! (`gru1.*`, `gru2.*`, `attn.*`, `w_s`, `w_l`, `feat.*`). When optimizer
//! state is saved, `adam.m.<name>` and `adam.v.<name>` follow for every
//! parameter.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Model, ModelConfig};
use crate::autodiff::{Optimizer, OptimizerKind, Shape};

const MAGIC: &[u8; 8] = b"HRNNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("array `{name}`: {message}")]
    Array { name: String, message: String },
    #[error("vocabulary hash mismatch: checkpoint {stored}, current {current}")]
    VocabMismatch { stored: String, current: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub seed: u64,
    /// Epochs completed when the checkpoint was written.
    pub epochs: usize,
    pub optimizer: Option<OptimizerState>,
    pub arrays: Vec<ArrayInfo>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Model,
    pub optimizer: Option<Optimizer>,
}

impl Checkpoint {
    pub fn check_vocab(&self, current: &str) -> Result<(), CheckpointError> {
        if self.header.vocab_hash == current {
            Ok(())
        } else {
            Err(CheckpointError::VocabMismatch {
                stored: self.header.vocab_hash.clone(),
                current: current.to_string(),
            })
        }
    }
}

fn dims(shape: Shape) -> Vec<usize> {
    match shape {
        Shape::Scalar => vec![],
        Shape::Vector(n) => vec![n],
        Shape::Matrix(r, c) => vec![r, c],
    }
}

fn write_f32s<W: Write>(out: &mut W, data: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for &x in data {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out.write_all(&buf)
}

fn read_f32s<R: Read>(input: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 4];
    input.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn write_checkpoint<W: Write>(
    mut out: W,
    model: &Model,
    optimizer: Option<&Optimizer>,
    vocab_hash: &str,
    seed: u64,
    epochs: usize,
) -> Result<(), CheckpointError> {
    let mut arrays: Vec<ArrayInfo> = model
        .store
        .iter()
        .map(|(_, name, t)| ArrayInfo {
            name: name.to_string(),
            shape: dims(t.shape()),
        })
        .collect();
    let with_moments = optimizer.is_some_and(|o| o.kind == OptimizerKind::Adam);
    if with_moments {
        for prefix in ["adam.m", "adam.v"] {
            for (_, name, t) in model.store.iter() {
                arrays.push(ArrayInfo {
                    name: format!("{prefix}.{name}"),
                    shape: dims(t.shape()),
                });
            }
        }
    }
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        config: model.config,
        vocab_hash: vocab_hash.to_string(),
        seed,
        epochs,
        optimizer: optimizer.map(|o| OptimizerState {
            kind: o.kind,
            learning_rate: o.learning_rate,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            step: o.step,
        }),
        arrays,
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    for (_, _, t) in model.store.iter() {
        write_f32s(&mut out, t.data())?;
    }
    if let Some(o) = optimizer.filter(|_| with_moments) {
        for m in o.first_moment.iter().chain(&o.second_moment) {
            write_f32s(&mut out, m)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a checkpoint and validates every array against the model structure
/// implied by the stored configuration.
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint, CheckpointError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    input.read_exact(&mut word)?;
    let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
    input.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;

    let mut model = Model::new(header.config, 0);
    let n_params = model.store.len();
    let with_moments = header.optimizer.as_ref().is_some_and(|o| o.kind == OptimizerKind::Adam);
    let expected = if with_moments { 3 * n_params } else { n_params };
    if header.arrays.len() != expected {
        return Err(CheckpointError::Array {
            name: "<all>".into(),
            message: format!("expected {expected} arrays, header lists {}", header.arrays.len()),
        });
    }
    let ids: Vec<_> = model.store.ids().collect();
    let mut moments: Vec<Vec<f64>> = Vec::with_capacity(expected - n_params);
    for (k, info) in header.arrays.iter().enumerate() {
        let id = ids[k % n_params];
        let base = model.store.name(id);
        let want_name = match k / n_params {
            0 => base.to_string(),
            1 => format!("adam.m.{base}"),
            _ => format!("adam.v.{base}"),
        };
        let want_shape = dims(model.store.get(id).shape());
        if info.name != want_name || info.shape != want_shape {
            return Err(CheckpointError::Array {
                name: info.name.clone(),
                message: format!("expected `{want_name}` with shape {want_shape:?}, found shape {:?}", info.shape),
            });
        }
        let data = read_f32s(&mut input, want_shape.iter().product::<usize>())
            .map_err(|e| CheckpointError::Array {
                name: info.name.clone(),
                message: e.to_string(),
            })?;
        if k < n_params {
            model.store.get_mut(id).data_mut().copy_from_slice(&data);
        } else {
            moments.push(data);
        }
    }
    let optimizer = header.optimizer.as_ref().map(|s| {
        let mut o = Optimizer::new(s.kind, s.learning_rate, &model.store);
        o.beta1 = s.beta1;
        o.beta2 = s.beta2;
        o.eps = s.eps;
        o.step = s.step;
        if with_moments {
            let second = moments.split_off(n_params);
            o.first_moment = moments;
            o.second_moment = second;
        }
        o
    });
    Ok(Checkpoint { header, model, optimizer })
}
