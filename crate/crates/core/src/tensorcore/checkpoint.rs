//! `.wcpt` checkpoint files.
//!
//! Layout (little-endian): magic `WCPT`, version `u16`, then per param until
//! end of file: name length `u16`, UTF-8 name, rank `u8`, `rank` x `u32`
//! dims, payload `f64` values.

use std::collections::HashMap;

use super::{Param, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WCPT";
pub const VERSION: u16 = 1;

pub fn encode<'a>(params: impl IntoIterator<Item = &'a Param>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for p in params {
        let name = p.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("param name too long: {}", p.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        let shape = p.value.shape();
        let rank = u8::try_from(shape.len()).map_err(|_| Error::Format("rank > 255".into()))?;
        out.push(rank);
        for &d in shape {
            let d = u32::try_from(d).map_err(|_| Error::Format("dim exceeds u32".into()))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::Length { expected: self.at + n, actual: self.buf.len() });
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint into `(name, tensor)` pairs in file order.
pub fn decode(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut out = Vec::new();
    while r.at < buf.len() {
        let n = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::Format("param name is not UTF-8".into()))?
            .to_owned();
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize);
        }
        let count: usize = shape.iter().product();
        let data = r
            .take(count * 8)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Loads values into `params` by name. Every param must be present with a matching shape.
pub fn restore<'a>(buf: &[u8], params: impl IntoIterator<Item = &'a mut Param>) -> Result<()> {
    let mut by_name: HashMap<String, Tensor> = decode(buf)?.into_iter().collect();
    for p in params {
        let t = by_name
            .remove(&p.name)
            .ok_or_else(|| Error::config(format!("checkpoint lacks param {}", p.name)))?;
        if t.shape() != p.value.shape() {
            return Err(Error::shape(format!(
                "checkpoint param {} has shape {:?}, expected {:?}",
                p.name,
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t;
    }
    Ok(())
}
