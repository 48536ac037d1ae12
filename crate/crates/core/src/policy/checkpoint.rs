//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u32` header length, a JSON
//! header describing the architecture, preprocessing and tensor shapes,
//! then every tensor as little-endian `f64` in header order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Architecture, PolicyParams};
use crate::equivariance::PreprocessConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TSPRLCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained parameters together with the preprocessing they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub preprocess: PreprocessConfig,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    preprocess: PreprocessConfig,
    tensors: Vec<TensorMeta>,
}

pub fn write_checkpoint(ckpt: &Checkpoint, mut out: impl Write) -> std::io::Result<()> {
    let p = &ckpt.params;
    let header = Header {
        architecture: p.architecture().clone(),
        preprocess: ckpt.preprocess.clone(),
        tensors: p
            .names()
            .iter()
            .zip(p.tensors())
            .map(|(n, t)| TensorMeta {
                name: n.clone(),
                shape: [t.nrows(), t.ncols()],
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(p.num_scalars() * 8);
    for t in p.tensors() {
        for v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)
}

fn take<'a>(data: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if data.len() < n {
        return Err(Error::Model("checkpoint truncated".into()));
    }
    let (head, rest) = data.split_at(n);
    *data = rest;
    Ok(head)
}

fn read_u32(data: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(data, 4)?.try_into().expect("4 bytes")))
}

pub fn read_checkpoint(mut input: impl Read) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Model(format!("reading checkpoint: {e}")))?;
    let mut data = bytes.as_slice();
    if take(&mut data, 8)? != MAGIC {
        return Err(Error::Model("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&mut data)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Model(format!(
            "checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = read_u32(&mut data)? as usize;
    let header: Header = serde_json::from_slice(take(&mut data, len)?)
        .map_err(|e| Error::Model(format!("checkpoint header: {e}")))?;
    header
        .preprocess
        .validate()
        .map_err(|e| Error::Model(format!("checkpoint preprocessing: {e}")))?;
    let mut named = Vec::with_capacity(header.tensors.len());
    for meta in header.tensors {
        let [r, c] = meta.shape;
        let raw = take(&mut data, r * c * 8)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let t = Array2::from_shape_vec((r, c), values).expect("shape matches length");
        named.push((meta.name, t));
    }
    if !data.is_empty() {
        return Err(Error::Model(format!("{} trailing bytes in checkpoint", data.len())));
    }
    let params = PolicyParams::from_named(&header.architecture, named)?;
    Ok(Checkpoint {
        params,
        preprocess: header.preprocess,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(ckpt, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn sample() -> Checkpoint {
        let arch = Architecture {
            hidden: 8,
            n_gnn: 2,
            mlp_hidden: vec![4],
        };
        Checkpoint {
            params: PolicyParams::init(&arch, &mut RngStream::new(5)).unwrap(),
            preprocess: PreprocessConfig::default(),
        }
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let c = sample();
        let mut a = Vec::new();
        write_checkpoint(&c, &mut a).unwrap();
        let back = read_checkpoint(a.as_slice()).unwrap();
        assert_eq!(back, c);
        let mut b = Vec::new();
        write_checkpoint(&back, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_inputs_are_model_errors() {
        let mut bytes = Vec::new();
        write_checkpoint(&sample(), &mut bytes).unwrap();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_checkpoint(bad_magic.as_slice()), Err(Error::Model(_))));
        assert!(matches!(read_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Model(_))));
        let mut bad_version = bytes.clone();
        bad_version[8] = 9;
        assert!(matches!(read_checkpoint(bad_version.as_slice()), Err(Error::Model(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = sample();
        save_checkpoint(&c, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), c);
        assert!(matches!(load_checkpoint(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
