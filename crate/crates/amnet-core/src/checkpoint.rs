//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!   magic "AMNT" · u32 version (=1) · u32 param count, then per parameter:
//!   u16 name length · UTF-8 name · u8 ndim · u32 dims · f32 values row-major.
//! Parameters appear in store order, so save→load round-trips byte-for-byte.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Dims, Tensor};

pub const MAGIC: [u8; 4] = *b"AMNT";
pub const VERSION: u32 = 1;

const MAX_PARAMS: u32 = 10_000;
const MAX_NAME: u16 = 4096;
const MAX_ELEMENTS: usize = 1 << 28;

pub fn to_bytes(store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, entry) in store.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let d = entry.value.dims();
        out.push(4u8);
        for dim in [d.n, d.c, d.h, d.w] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in entry.value.data() {
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
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CheckpointFormat {
                offset: self.pos,
                reason: format!("unexpected end of file while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ParamStore<f32>> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::CheckpointFormat {
            offset: 0,
            reason: format!("bad magic {magic:02x?}, expected \"AMNT\""),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::CheckpointFormat {
            offset: 4,
            reason: format!("unsupported version {version}, expected {VERSION}"),
        });
    }
    let count = r.u32("parameter count")?;
    if count > MAX_PARAMS {
        return Err(Error::CheckpointFormat {
            offset: 8,
            reason: format!("implausible parameter count {count}"),
        });
    }

    let mut store = ParamStore::new();
    for i in 0..count {
        let at = r.pos;
        let name_len = r.u16(&format!("name length of parameter {i}"))?;
        if name_len == 0 || name_len > MAX_NAME {
            return Err(Error::CheckpointFormat {
                offset: at,
                reason: format!("implausible name length {name_len}"),
            });
        }
        let name_bytes = r.take(name_len as usize, &format!("name of parameter {i}"))?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|e| Error::CheckpointFormat {
                offset: at + 2,
                reason: format!("parameter name is not UTF-8: {e}"),
            })?
            .to_string();

        let ndim = r.u8(&format!("rank of '{name}'"))?;
        if ndim == 0 || ndim > 4 {
            return Err(Error::CheckpointFormat {
                offset: r.pos - 1,
                reason: format!("unsupported rank {ndim} for '{name}'"),
            });
        }
        let mut dims = [1usize; 4];
        for d in 0..ndim as usize {
            let at = r.pos;
            let v = r.u32(&format!("dims of '{name}'"))? as usize;
            if v == 0 || v > MAX_ELEMENTS {
                return Err(Error::CheckpointFormat {
                    offset: at,
                    reason: format!("implausible dimension {v} for '{name}'"),
                });
            }
            dims[4 - ndim as usize + d] = v;
        }
        let dims = Dims::new(dims[0], dims[1], dims[2], dims[3]);
        if dims.count() > MAX_ELEMENTS {
            return Err(Error::CheckpointFormat {
                offset: r.pos,
                reason: format!("implausible element count {} for '{name}'", dims.count()),
            });
        }

        let bytes = r.take(dims.count() * 4, &format!("values of '{name}'"))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let at = r.pos;
        store
            .insert(name, Tensor::from_vec(dims, data).unwrap())
            .map_err(|e| Error::CheckpointFormat { offset: at, reason: e.to_string() })?;
    }
    if r.pos != buf.len() {
        return Err(Error::CheckpointFormat {
            offset: r.pos,
            reason: format!("{} trailing bytes after the last parameter", buf.len() - r.pos),
        });
    }
    Ok(store)
}

pub fn save(store: &ParamStore<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&to_bytes(store))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore<f32>> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    from_bytes(&buf)
}
