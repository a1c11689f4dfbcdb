//! Binary checkpoint format.
//!
//! Layout: magic `DSV2`, `u32` LE version, `u64` LE length and a UTF-8 JSON
//! header, then tensors until end of file, each as `u32` name length, name,
//! `u32` rank, `rank` x `u64` dims and raw LE `f32` data. Tensor names are
//! prefixed `param.`, `adam_m.` or `adam_v.`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AdamState, TrainConfig};
use crate::codec::CodecSpec;
use crate::net::{ModelConfig, ModelParams, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DSV2";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic {0:?})")]
    NotACheckpoint([u8; 4]),
    #[error("unsupported version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("truncated checkpoint")]
    Truncated,
    #[error("invalid checkpoint header: {0}")]
    Header(String),
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("unexpected tensor {0}")]
    UnexpectedTensor(String),
    #[error("tensor {name}: shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Io(io::Error),
}

impl From<io::Error> for CheckpointError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            CheckpointError::Truncated
        } else {
            CheckpointError::Io(e)
        }
    }
}

/// Complete training state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    /// Vocabulary description.
    pub codec: CodecSpec,
    pub step: u64,
    pub params: ModelParams<f32>,
    pub opt: AdamState<f32>,
    pub run_config: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    train: TrainConfig,
    vocab: CodecSpec,
    step: u64,
    adam_step: u64,
    #[serde(default)]
    run_config: Option<serde_json::Value>,
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        model: ckpt.model_config.clone(),
        train: ckpt.train_config.clone(),
        vocab: ckpt.codec.clone(),
        step: ckpt.step,
        adam_step: ckpt.opt.step,
        run_config: ckpt.run_config.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (prefix, p) in [("param", &ckpt.params), ("adam_m", &ckpt.opt.m), ("adam_v", &ckpt.opt.v)] {
        for (name, t) in p.tensors() {
            let full = format!("{prefix}.{name}");
            w.write_all(&(full.len() as u32).to_le_bytes())?;
            w.write_all(full.as_bytes())?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.data.len() * 4);
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a `u32`, distinguishing clean end of input (`None`) from truncation.
fn read_u32_or_eof<R: Read>(r: &mut R) -> Result<Option<u32>, CheckpointError> {
    let mut b = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut b[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    match got {
        0 => Ok(None),
        4 => Ok(Some(u32::from_le_bytes(b))),
        _ => Err(CheckpointError::Truncated),
    }
}

const MAX_NAME: u32 = 1 << 16;
const MAX_RANK: u32 = 8;
const MAX_HEADER: u64 = 1 << 26;

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, CheckpointError> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut magic[got..])? {
            0 => break,
            n => got += n,
        }
    }
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::NotACheckpoint(magic));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let len = read_u64(&mut r)?;
    if len > MAX_HEADER {
        return Err(CheckpointError::Header(format!("header length {len} too large")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| CheckpointError::Header(e.to_string()))?;
    header
        .model
        .validate()
        .map_err(|e| CheckpointError::Header(e.to_string()))?;

    let mut tensors: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    while let Some(name_len) = read_u32_or_eof(&mut r)? {
        if name_len > MAX_NAME {
            return Err(CheckpointError::Header(format!("tensor name length {name_len}")));
        }
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::Header("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)?;
        if rank > MAX_RANK {
            return Err(CheckpointError::Header(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.insert(name, Tensor::from_vec(&shape, data));
    }

    let mut fill = |prefix: &str| -> Result<ModelParams<f32>, CheckpointError> {
        let mut p = ModelParams::<f32>::zeros(&header.model).map_err(|e| CheckpointError::Header(e.to_string()))?;
        for (name, t) in p.tensors_mut() {
            let full = format!("{prefix}.{name}");
            let src = tensors.remove(&full).ok_or_else(|| CheckpointError::MissingTensor(full.clone()))?;
            if src.shape != t.shape {
                return Err(CheckpointError::ShapeMismatch {
                    name: full,
                    expected: t.shape.clone(),
                    found: src.shape,
                });
            }
            *t = src;
        }
        Ok(p)
    };
    let params = fill("param")?;
    let m = fill("adam_m")?;
    let v = fill("adam_v")?;
    if let Some(extra) = tensors.into_keys().next() {
        return Err(CheckpointError::UnexpectedTensor(extra));
    }
    Ok(Checkpoint {
        model_config: header.model,
        train_config: header.train,
        codec: header.vocab,
        step: header.step,
        params,
        opt: AdamState {
            m,
            v,
            step: header.adam_step,
        },
        run_config: header.run_config,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let f = File::create(path.as_ref()).map_err(CheckpointError::Io)?;
    write_checkpoint(BufWriter::new(f), ckpt)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let f = File::open(path.as_ref()).map_err(CheckpointError::Io)?;
    read_checkpoint(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecConfig;
    use crate::doc::DocSchema;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig {
            vocab_size: 522,
            context_len: 16,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: None,
            dropout: 0.0,
        };
        let params = ModelParams::<f32>::init(&cfg, 9).unwrap();
        let mut opt = AdamState::new(&params);
        opt.step = 17;
        opt.m.tok_emb.data[5] = -1.25e-7;
        opt.v.head_w.data[0] = f32::MIN_POSITIVE;
        Checkpoint {
            model_config: cfg,
            train_config: TrainConfig::default(),
            codec: CodecSpec {
                schema: DocSchema::publaynet(),
                config: CodecConfig::default(),
            },
            step: 17,
            params,
            opt,
            run_config: Some(serde_json::json!({"note": "x"})),
        }
    }

    fn bytes(c: &Checkpoint) -> Vec<u8> {
        let mut out = Vec::new();
        write_checkpoint(&mut out, c).unwrap();
        out
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = sample();
        let raw = bytes(&c);
        let back = read_checkpoint(&raw[..]).unwrap();
        assert_eq!(back, c);
        for ((_, a), (_, b)) in back.params.tensors().iter().zip(c.params.tensors()) {
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(bytes(&back), raw);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = sample();
        save_checkpoint(&path, &c).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), c);
    }

    #[test]
    fn corrupted_magic() {
        let mut raw = bytes(&sample());
        raw[0] = b'X';
        let e = read_checkpoint(&raw[..]).unwrap_err();
        assert!(matches!(e, CheckpointError::NotACheckpoint(_)));
        assert!(e.to_string().contains("not a checkpoint"));
        assert!(matches!(read_checkpoint(&b"{}"[..]), Err(CheckpointError::NotACheckpoint(_))));
    }

    #[test]
    fn future_version() {
        let mut raw = bytes(&sample());
        raw[4..8].copy_from_slice(&2u32.to_le_bytes());
        let e = read_checkpoint(&raw[..]).unwrap_err();
        assert!(matches!(e, CheckpointError::UnsupportedVersion { found: 2, .. }));
        assert!(e.to_string().contains("unsupported version"));
    }

    #[test]
    fn truncation_detected_everywhere() {
        let raw = bytes(&sample());
        for cut in [6, 12, 30, raw.len() / 2, raw.len() - 1] {
            let e = read_checkpoint(&raw[..cut]).unwrap_err();
            assert!(matches!(e, CheckpointError::Truncated), "cut {cut}: {e}");
        }
    }
}
