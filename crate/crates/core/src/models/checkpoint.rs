//! Portable model checkpoints.
//!
//! Little-endian binary layout:
//!
//! ```text
//! magic    8 bytes  "DNECKPT1"
//! version  u32      1
//! arch     u8       0 = bow, 1 = cnn
//! embed_dim, hidden, kernel, classes, max_len   u32 each
//! dropout_embed     f64
//! param_count       u32
//! per parameter:
//!   name_len u32, name utf-8 bytes,
//!   rank u32, dims u32 * rank,
//!   data f64 * prod(dims)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

use super::{Arch, Classifier, ClassifierConfig, ParamStore};

const MAGIC: &[u8; 8] = b"DNECKPT1";
const VERSION: u32 = 1;

pub fn save_checkpoint(model: &Classifier, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let c = &model.config;
    buf.push(match c.arch {
        Arch::Bow => 0,
        Arch::Cnn => 1,
    });
    for v in [c.embed_dim, c.hidden, c.kernel, c.classes, c.max_len] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&c.dropout_embed.to_le_bytes());
    buf.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for p in model.params.iter() {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for d in p.value.dims() {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Classifier> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        buf: &bytes,
        pos: 0,
    };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a model checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            version
        )));
    }
    let arch = match r.take(1)?[0] {
        0 => Arch::Bow,
        1 => Arch::Cnn,
        other => return Err(Error::Checkpoint(format!("unknown arch tag {}", other))),
    };
    let embed_dim = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let kernel = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let max_len = r.u32()? as usize;
    let dropout_embed = r.f64()?;
    let config = ClassifierConfig {
        arch,
        embed_dim,
        hidden,
        kernel,
        classes,
        dropout_embed,
        max_len,
    };
    let count = r.u32()? as usize;
    let mut params = ParamStore::default();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("non-utf8 parameter name".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f64()?);
        }
        params.push(&name, Tensor::new(dims, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Classifier::from_parts(config, params)
}
