//! Binary checkpoint, all integers u64 and all reals f64, little-endian:
//!
//! ```text
//! "UCFED-M v1"                      10 ASCII bytes
//! num_users, num_items, dim         u64 x3
//! user table                        num_users*dim f64, row-major
//! item table                        num_items*dim f64, row-major
//! num_filters                       u64
//! per filter:
//!   name_len, name                  u64, UTF-8 bytes
//!   classes, hidden                 u64 x2
//!   W1 (hidden x dim), b1 (hidden), W2 (classes x hidden), b2 (classes)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::RecModel;
use crate::error::{Error, Result};
use crate::filters::AttributeFilter;
use crate::numeric::Matrix;

pub const MODEL_MAGIC: &[u8; 10] = b"UCFED-M v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: RecModel,
    pub filters: Vec<AttributeFilter>,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    out.reserve(xs.len() * 8);
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode(model: &RecModel, filters: &[AttributeFilter]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    put_u64(&mut out, model.num_users() as u64);
    put_u64(&mut out, model.num_items() as u64);
    put_u64(&mut out, model.dim() as u64);
    put_f64s(&mut out, model.user_table().as_slice());
    put_f64s(&mut out, model.item_table().as_slice());
    put_u64(&mut out, filters.len() as u64);
    for f in filters {
        put_u64(&mut out, f.name().len() as u64);
        out.extend_from_slice(f.name().as_bytes());
        put_u64(&mut out, f.classes() as u64);
        put_u64(&mut out, f.hidden() as u64);
        for t in f.tensors() {
            put_f64s(&mut out, t);
        }
    }
    out
}

pub fn write_checkpoint(model: &RecModel, filters: &[AttributeFilter], mut w: impl Write) -> Result<()> {
    w.write_all(&encode(model, filters))?;
    Ok(())
}

pub fn write_checkpoint_file(model: &RecModel, filters: &[AttributeFilter], path: &Path) -> Result<()> {
    fs::write(path, encode(model, filters))?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::Format {
            what: "checkpoint",
            msg: format!("truncated at byte {}", self.pos),
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| Error::Format { what: "checkpoint", msg: format!("implausible size {v}") })
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format {
            what: "checkpoint",
            msg: "size overflow".into(),
        })?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode(buf: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(MODEL_MAGIC.len())? != MODEL_MAGIC {
        return Err(Error::Format { what: "checkpoint", msg: "bad magic".into() });
    }
    let (nu, ni, d) = (c.len()?, c.len()?, c.len()?);
    let users = Matrix::from_vec(nu, d, c.f64s(nu * d)?)?;
    let items = Matrix::from_vec(ni, d, c.f64s(ni * d)?)?;
    let model = RecModel::from_tables(users, items)?;
    let nf = c.len()?;
    let mut filters = Vec::with_capacity(nf);
    for _ in 0..nf {
        let name_len = c.len()?;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::Format { what: "checkpoint", msg: "filter name is not UTF-8".into() })?
            .to_string();
        let classes = c.len()?;
        let hidden = c.len()?;
        let w1 = Matrix::from_vec(hidden, d, c.f64s(hidden * d)?)?;
        let b1 = c.f64s(hidden)?;
        let w2 = Matrix::from_vec(classes, hidden, c.f64s(classes * hidden)?)?;
        let b2 = c.f64s(classes)?;
        filters.push(AttributeFilter::from_parts(name, w1, b1, w2, b2)?);
    }
    if c.pos != buf.len() {
        return Err(Error::Format { what: "checkpoint", msg: "trailing bytes".into() });
    }
    Ok(Checkpoint { model, filters })
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode(&buf)
}

pub fn read_checkpoint_file(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}
