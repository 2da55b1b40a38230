//! `VTCK` parameter container.
//!
//! Little-endian layout: magic `VTCK`, version `u16`, parameter count `u32`,
//! then per parameter: name length `u16`, UTF-8 name, ndim `u8`, each dim
//! `u32`, and the raw `f32` values.

use alloc::string::String;
use alloc::vec::Vec;

use super::param::Module;
use super::scalar::Scalar;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VTCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode_checkpoint(entries: &[CheckpointEntry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Format(alloc::format!("parameter name too long: {}", e.name)))?;
        let ndim = u8::try_from(e.shape.len())
            .map_err(|_| Error::Format(alloc::format!("too many dims for {}", e.name)))?;
        if e.shape.iter().product::<usize>() != e.data.len() {
            return Err(Error::Format(alloc::format!("shape/data mismatch for {}", e.name)));
        }
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(ndim);
        for &d in &e.shape {
            let d = u32::try_from(d).map_err(|_| Error::Format(alloc::format!("dim too large in {}", e.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(alloc::format!(
                "truncated checkpoint: need {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<CheckpointEntry>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).map_err(|_| Error::Format("bad checkpoint magic".into()))? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(alloc::format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = core::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .into();
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push(CheckpointEntry { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(alloc::format!(
            "checkpoint has {} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(entries)
}

/// Snapshot of every parameter of `model`, converted to `f32`.
pub fn module_entries<T: Scalar, M: Module<T>>(model: &M) -> Vec<CheckpointEntry> {
    let mut out = Vec::new();
    model.visit(&mut |p| {
        out.push(CheckpointEntry {
            name: p.name().into(),
            shape: p.shape().to_vec(),
            data: p.value().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect(),
        })
    });
    out
}

/// Loads parameters by name. Every parameter of `model` must be present with
/// an identical shape; unknown entries are an error too.
pub fn load_module<T: Scalar, M: Module<T>>(model: &mut M, entries: &[CheckpointEntry]) -> Result<()> {
    let mut err = None;
    let mut used = 0usize;
    model.visit_mut(&mut |p| {
        if err.is_some() {
            return;
        }
        match entries.iter().find(|e| e.name == p.name()) {
            None => err = Some(Error::Format(alloc::format!("checkpoint lacks parameter {}", p.name()))),
            Some(e) if e.shape != p.shape() => {
                err = Some(Error::Format(alloc::format!(
                    "parameter {} has shape {:?} in checkpoint, model expects {:?}",
                    p.name(),
                    e.shape,
                    p.shape()
                )))
            }
            Some(e) => {
                used += 1;
                let vals: Vec<T> = e.data.iter().map(|&v| T::c(v as f64)).collect();
                p.value_mut().copy_from_slice(&vals);
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if used != entries.len() {
        return Err(Error::Format(alloc::format!(
            "checkpoint has {} entries, model uses {used}",
            entries.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample() -> Vec<CheckpointEntry> {
        vec![
            CheckpointEntry { name: "embed/patch_b".into(), shape: vec![3], data: vec![1.0, -2.5, 3.25] },
            CheckpointEntry { name: "vq/tables".into(), shape: vec![2, 1, 2], data: vec![0.5, f32::MIN_POSITIVE, -0.0, 7.0] },
        ]
    }

    #[test]
    fn layout_is_bit_exact() {
        let bytes = encode_checkpoint(&sample()[..1]).unwrap();
        let mut expect = b"VTCK".to_vec();
        expect.extend_from_slice(&[1, 0, 1, 0, 0, 0, 13, 0]);
        expect.extend_from_slice(b"embed/patch_b");
        expect.extend_from_slice(&[1, 3, 0, 0, 0]);
        for v in [1.0f32, -2.5, 3.25] {
            expect.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(bytes, expect);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        assert_eq!(decode_checkpoint(&bytes).unwrap(), sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(m)) if m.contains("magic")));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(m)) if m.contains("version")));
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 1]), Err(Error::Format(m)) if m.contains("truncated")));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_checkpoint(&long), Err(Error::Format(m)) if m.contains("trailing")));
    }
}
