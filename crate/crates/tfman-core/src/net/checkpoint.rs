//! Checkpoint serialization.
//!
//! Little-endian layout: magic `TFMN` | u32 version | u32 config length +
//! UTF-8 `key=value` config text | u32 tensor count | per tensor: u16 name
//! length + name, u8 rank, rank x u64 dims, raw f32 data.

use std::io::{Read, Write};
use std::path::Path;

use super::config::TfmanConfig;
use super::Model;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TFMN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg_text = model.cfg.to_kv_string();
    buf.extend_from_slice(&(cfg_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg_text.as_bytes());
    buf.extend_from_slice(&(model.store.len() as u32).to_le_bytes());
    for (_, p) in model.store.iter() {
        let name = p.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(&buf).map_err(io_err)?;
    Ok(())
}

struct Reader<'a> {
    path: &'a Path,
    data: Vec<u8>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::CheckpointTruncated {
                path: self.path.to_path_buf(),
                what: what.to_string(),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let mut data = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut data))
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    let mut r = Reader {
        path,
        data,
        pos: 0,
    };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointBadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let cfg_len = r.u32("config length")? as usize;
    let cfg_text = std::str::from_utf8(r.take(cfg_len, "config text")?)
        .map_err(|_| Error::CheckpointInvalid {
            path: path.to_path_buf(),
            message: "config text is not UTF-8".into(),
        })?
        .to_string();
    let cfg = TfmanConfig::from_kv_str(&cfg_text).map_err(|e| Error::CheckpointInvalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;

    let mut model = Model::<f32>::build(&cfg, 0).map_err(|e| Error::CheckpointInvalid {
        path: path.to_path_buf(),
        message: format!("cannot rebuild model from config: {e}"),
    })?;
    let count = r.u32("tensor count")? as usize;
    if count != model.store.len() {
        return Err(Error::CheckpointInvalid {
            path: path.to_path_buf(),
            message: format!(
                "checkpoint has {count} tensors, model expects {}",
                model.store.len()
            ),
        });
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let name_len = r.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::CheckpointInvalid {
                path: path.to_path_buf(),
                message: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.take(1, "tensor rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("tensor dims")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(4 * numel, &format!("data of '{name}'"))?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let id = model
            .store
            .by_name(&name)
            .ok_or_else(|| Error::CheckpointInvalid {
                path: path.to_path_buf(),
                message: format!("unknown parameter '{name}'"),
            })?;
        if seen[id.0] {
            return Err(Error::CheckpointInvalid {
                path: path.to_path_buf(),
                message: format!("duplicate parameter '{name}'"),
            });
        }
        seen[id.0] = true;
        let param = model.store.get_mut(id);
        if param.value.shape() != shape.as_slice() {
            return Err(Error::CheckpointInvalid {
                path: path.to_path_buf(),
                message: format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    shape,
                    param.value.shape()
                ),
            });
        }
        param.value = crate::tensor::Tensor::from_vec(&shape, values).expect("sized above");
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn toy_model(seed: u64) -> Model<f32> {
        let mut cfg = TfmanConfig::toy();
        cfg.recurrences = 1;
        cfg.channels = 4;
        cfg.nonlocal_channels = 4;
        cfg.ca_reduced = 2;
        cfg.tfm_features = 3;
        Model::build(&cfg, seed).unwrap()
    }

    #[test]
    fn roundtrip_preserves_forward_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = toy_model(42);
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let mut rng = crate::rng::Rng::from_seed(1);
        let x = Tensor::generate(&[3, 6, 7], || rng.uniform() as f32);
        let a = model.forward(&x).unwrap();
        let b = loaded.forward(&x).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn first_four_bytes_are_the_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&toy_model(0), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"TFMN");
    }

    #[test]
    fn bad_magic_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&toy_model(0), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::CheckpointBadMagic { .. })
        ));
    }

    #[test]
    fn unsupported_version_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&toy_model(0), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::CheckpointVersion { version: 9, .. })
        ));
    }

    #[test]
    fn truncation_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&toy_model(0), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::CheckpointTruncated { .. })
        ));
    }

    #[test]
    fn flipping_one_data_byte_changes_exactly_one_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = toy_model(3);
        save_checkpoint(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Flip one byte near the end of the file: inside the last tensor's
        // raw data region.
        let idx = bytes.len() - 3;
        bytes[idx] ^= 0xFF;
        std::fs::write(&path, &bytes).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let mut diffs = 0usize;
        for ((_, a), (_, b)) in model.store.iter().zip(loaded.store.iter()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.value.data().iter().zip(b.value.data()) {
                if x.to_bits() != y.to_bits() {
                    diffs += 1;
                }
            }
        }
        assert_eq!(diffs, 1, "exactly one scalar must change");
    }
}
