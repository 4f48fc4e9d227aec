//! Self-describing binary checkpoints.
//!
//! Layout: magic `IGAN`, format version (`u32`), then records until EOF:
//! name length (`u32`), UTF-8 name, dtype tag (`u8`, 0 = `f32`), rank (`u32`),
//! extents (`u32` each), payload. All integers and floats are little-endian.
//! Tensors are stored as `f32` and widened to `f64` on load.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use super::adam::{Moments, OptimizerState};
use super::TrainState;
use crate::error::{Error, Result};
use crate::networks::{build_model, ArchConfig, IganModel};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"IGAN";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated checkpoint record at byte {offset}")]
    Truncated { offset: usize },
    #[error("duplicate checkpoint record {0:?}")]
    NameCollision(String),
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("checkpoint is missing record {0:?}")]
    MissingRecord(String),
    #[error("malformed checkpoint record {name:?}: {reason}")]
    Malformed { name: String, reason: String },
}

/// Encode named tensors in the order given.
pub fn encode_records<'a>(records: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated { offset: self.pos }),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Decode every record, rejecting duplicates.
pub fn decode_records(bytes: &[u8]) -> std::result::Result<BTreeMap<String, Tensor>, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let mut out = BTreeMap::new();
    while r.pos < bytes.len() {
        let start = r.pos;
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::Malformed {
                name: format!("<record at byte {start}>"),
                reason: "name is not UTF-8".into(),
            })?
            .to_string();
        let dtype = r.take(1)?[0];
        if dtype != DTYPE_F32 {
            return Err(CheckpointError::UnknownDtype(dtype));
        }
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| CheckpointError::Malformed {
                name: name.clone(),
                reason: "extent overflow".into(),
            })?;
        let payload = r.take(n.checked_mul(4).ok_or(CheckpointError::Truncated { offset: r.pos })?)?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        let t = Tensor::from_vec(shape, data).map_err(|e| CheckpointError::Malformed {
            name: name.clone(),
            reason: e.to_string(),
        })?;
        if out.insert(name.clone(), t).is_some() {
            return Err(CheckpointError::NameCollision(name));
        }
    }
    Ok(out)
}

fn ints(t: &Tensor, name: &str) -> std::result::Result<Vec<usize>, CheckpointError> {
    t.data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(CheckpointError::Malformed {
                    name: name.into(),
                    reason: format!("{v} is not a count"),
                })
            }
        })
        .collect()
}

fn usize_tensor(v: &[usize]) -> Tensor {
    Tensor::from_vec(vec![v.len()], v.iter().map(|&x| x as f64).collect()).expect("non-empty")
}

fn arch_records(arch: &ArchConfig) -> Vec<(String, Tensor)> {
    vec![
        ("meta/data_shape".into(), usize_tensor(&arch.data_shape)),
        (
            "meta/arch".into(),
            usize_tensor(&[
                arch.latent_dim,
                arch.secondary_latent_dim,
                arch.base_channels,
                usize::from(arch.omit_h),
                usize::from(arch.toy_mode),
                arch.toy_depth,
            ]),
        ),
    ]
}

fn model_records(model: &IganModel) -> Vec<(String, Tensor)> {
    let mut out = arch_records(&model.arch);
    for kind in model.kinds() {
        let net = model.network(kind).expect("listed kind");
        for e in &net.params.entries {
            out.push((format!("{}/{}", kind.name(), e.name), e.tensor.clone()));
        }
    }
    out
}

fn optimizer_records(group: &str, st: &OptimizerState) -> Vec<(String, Tensor)> {
    let mut out = vec![(format!("opt/{group}/step"), usize_tensor(&[st.step as usize]))];
    for (k, m) in &st.moments {
        out.push((format!("opt/{group}/{k}/m"), m.m.clone()));
        out.push((format!("opt/{group}/{k}/v"), m.v.clone()));
    }
    out
}

/// Serialized bytes of a full training state.
pub fn checkpoint_bytes(state: &TrainState) -> Vec<u8> {
    let mut recs = vec![("meta/step".to_string(), usize_tensor(&[state.step]))];
    recs.extend(model_records(&state.model));
    recs.extend(optimizer_records("D", &state.opt_d));
    recs.extend(optimizer_records("EG", &state.opt_eg));
    encode_records(recs.iter().map(|(n, t)| (n.as_str(), t)))
}

fn take_record(recs: &mut BTreeMap<String, Tensor>, name: &str) -> std::result::Result<Tensor, CheckpointError> {
    recs.remove(name)
        .ok_or_else(|| CheckpointError::MissingRecord(name.into()))
}

fn model_from_records(recs: &mut BTreeMap<String, Tensor>) -> Result<IganModel> {
    let data_shape = ints(&take_record(recs, "meta/data_shape")?, "meta/data_shape")?;
    let a = ints(&take_record(recs, "meta/arch")?, "meta/arch")?;
    let [latent_dim, secondary_latent_dim, base_channels, omit_h, toy_mode, toy_depth] = a[..] else {
        return Err(CheckpointError::Malformed {
            name: "meta/arch".into(),
            reason: format!("expected 6 values, got {}", a.len()),
        }
        .into());
    };
    let arch = ArchConfig {
        data_shape,
        latent_dim,
        secondary_latent_dim,
        base_channels,
        omit_h: omit_h != 0,
        toy_mode: toy_mode != 0,
        toy_depth,
    };
    let mut model = build_model(&arch, 0)?;
    for kind in model.kinds() {
        let net = model.network_mut(kind).expect("listed kind");
        for e in &mut net.params.entries {
            let name = format!("{}/{}", kind.name(), e.name);
            let t = take_record(recs, &name)?;
            if t.shape() != e.tensor.shape() {
                return Err(CheckpointError::Malformed {
                    name,
                    reason: format!("shape {:?}, expected {:?}", t.shape(), e.tensor.shape()),
                }
                .into());
            }
            e.tensor = t;
        }
    }
    Ok(model)
}

fn optimizer_from_records(
    recs: &mut BTreeMap<String, Tensor>,
    group: &str,
) -> std::result::Result<OptimizerState, CheckpointError> {
    let step_name = format!("opt/{group}/step");
    let step = ints(&take_record(recs, &step_name)?, &step_name)?[0] as u64;
    let prefix = format!("opt/{group}/");
    let keys: Vec<String> = recs
        .keys()
        .filter(|k| k.starts_with(&prefix) && k.ends_with("/m"))
        .cloned()
        .collect();
    let mut moments = BTreeMap::new();
    for mk in keys {
        let base = &mk[prefix.len()..mk.len() - 2];
        let m = take_record(recs, &mk)?;
        let v = take_record(recs, &format!("{prefix}{base}/v"))?;
        moments.insert(base.to_string(), Moments { m, v });
    }
    Ok(OptimizerState { step, moments })
}

pub fn state_from_bytes(bytes: &[u8]) -> Result<TrainState> {
    let mut recs = decode_records(bytes)?;
    let step = ints(&take_record(&mut recs, "meta/step")?, "meta/step")?[0];
    let model = model_from_records(&mut recs)?;
    let opt_d = optimizer_from_records(&mut recs, "D")?;
    let opt_eg = optimizer_from_records(&mut recs, "EG")?;
    if let Some(extra) = recs.keys().next() {
        return Err(CheckpointError::Malformed {
            name: extra.clone(),
            reason: "unexpected record".into(),
        }
        .into());
    }
    Ok(TrainState {
        model,
        opt_d,
        opt_eg,
        step,
    })
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    state_from_bytes(&bytes)
}

/// A model restored from a checkpoint, without its optimizer state.
pub fn load_model(path: &Path) -> Result<(IganModel, usize)> {
    let st = load_checkpoint(path)?;
    Ok((st.model, st.step))
}
