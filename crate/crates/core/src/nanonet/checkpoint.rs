//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "XGAT" | version u32 | config_len u32 | config UTF-8 (key = value lines)
//! tensor_count u32
//! per tensor: name_len u32 | name UTF-8 | dtype u8 (0 = f64) | rank u32
//!             | extents u64 * rank | payload f64 * product(extents)
//! ```

use std::path::Path;

use crate::error::{Error, Result};

use super::config::NetConfig;
use super::model::Model;

pub const MAGIC: &[u8; 4] = b"XGAT";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = model.config.to_text();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    let params = model.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(DTYPE_F64);
        let shape = p.tensor.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &e in shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, at: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: at,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return self.fail(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            );
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        match std::str::from_utf8(bytes) {
            Ok(s) => Ok(s.to_string()),
            Err(_) => self.fail(at, format!("{what} is not UTF-8")),
        }
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Model> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return r.fail(0, "bad magic, not an XGAT checkpoint");
    }
    let at = r.pos;
    let version = r.u32("version")?;
    if version != VERSION {
        return r.fail(at, format!("unsupported version {version}"));
    }
    let at = r.pos;
    let text = r.string("config")?;
    let config = match NetConfig::from_text(&text) {
        Ok(c) => c,
        Err(e) => return r.fail(at, format!("config: {e}")),
    };
    let mut model = Model::zeros(&config).or_else(|e| r.fail(at, format!("config: {e}")))?;
    let names: Vec<String> = model.params().into_iter().map(|p| p.name).collect();
    let mut filled = vec![false; names.len()];
    let at = r.pos;
    let count = r.u32("tensor count")? as usize;
    if count != names.len() {
        return r.fail(at, format!("{count} tensors, config implies {}", names.len()));
    }
    {
        let mut params = model.params_mut();
        for _ in 0..count {
            let at = r.pos;
            let name = r.string("tensor name")?;
            let Some(idx) = names.iter().position(|n| *n == name) else {
                return r.fail(at, format!("unknown tensor `{name}`"));
            };
            if filled[idx] {
                return r.fail(at, format!("duplicate tensor `{name}`"));
            }
            let at = r.pos;
            let dtype = r.u8("dtype")?;
            if dtype != DTYPE_F64 {
                return r.fail(at, format!("`{name}`: unsupported dtype tag {dtype}"));
            }
            let at = r.pos;
            let rank = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64("extent")? as usize);
            }
            let tensor = &mut params[idx].tensor;
            if shape != tensor.shape() {
                return r.fail(at, format!("`{name}` has shape {shape:?}, expected {:?}", tensor.shape()));
            }
            let payload = r.take(8 * tensor.len(), "payload")?;
            for (v, chunk) in tensor.data_mut().iter_mut().zip(payload.chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().unwrap());
            }
            filled[idx] = true;
        }
    }
    if r.pos != buf.len() {
        return r.fail(r.pos, format!("{} trailing bytes", buf.len() - r.pos));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}
