//! Versioned binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "SLOTCKPT"
//! version u32      currently 1
//! cfg_len u32      length of the model-config JSON block
//! cfg     cfg_len  ModelConfig as JSON
//! count   u32      number of parameter blobs
//! per parameter:
//!   name_len u16, name bytes (UTF-8)
//!   ndim u8, dims u32 * ndim
//!   data f32 * prod(dims), little-endian
//! ```
//!
//! Save writes to a temporary file and renames it into place, so an aborted
//! save leaves the previous checkpoint intact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::model::{Model, ModelConfig, Param};
use super::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SLOTCKPT";
const VERSION: u32 = 1;

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&model.cfg)?;
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(&cfg);
    buf.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for p in &model.params {
        let name = p.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        let shape = p.value.shape();
        buf.push(shape.len() as u8);
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Cursor { bytes: &bytes, pos: 0 };
    let magic = r.take(8)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("bad magic string".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let cfg_len = r.u32()? as usize;
    let cfg: ModelConfig = serde_json::from_slice(r.take(cfg_len)?)?;
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f32()? as f64);
        }
        params.push(Param {
            name,
            value: Tensor::from_vec(&shape, data),
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "trailing bytes: expected {} total, file has {}",
            r.pos,
            bytes.len()
        )));
    }
    Ok(Model { cfg, params })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {}: wanted {} more bytes, {} available",
                self.pos,
                n,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::new(ModelConfig::desk(), 42).unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&model, &p1).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        save_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        assert_eq!(loaded.cfg, model.cfg);
        assert_eq!(loaded.params.len(), model.params.len());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::new(ModelConfig::desk(), 7).unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&model, &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 10);
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));
        fs::write(&p, b"NOTACKPT").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));
    }
}
