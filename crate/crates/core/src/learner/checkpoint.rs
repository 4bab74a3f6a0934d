//! Binary checkpoint format.
//!
//! ```text
//! "OSHT1"                          5 bytes
//! C, H, W, blocks                  u32 LE each
//! per block: N, C, kh, kw, padding, stride   u32 LE each
//! per block: kernel (N·C·kh·kw), bias (N)    f64 LE each, row-major
//! ```

use std::fs;
use std::path::Path;

use super::backbone::{BackboneParams, ConvBlock};
use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, Tensor4};

pub const MAGIC: &[u8; 5] = b"OSHT1";

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("dimension {v} exceeds u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(p: &BackboneParams) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(64 + 8 * p.num_params());
    buf.extend_from_slice(MAGIC);
    let (c, h, w) = p.input_dims();
    for v in [c, h, w, p.blocks().len()] {
        put_u32(&mut buf, v)?;
    }
    for b in p.blocks() {
        let [n, c, kh, kw] = b.kernel.dims();
        for v in [n, c, kh, kw, b.geometry.padding, b.geometry.stride] {
            put_u32(&mut buf, v)?;
        }
    }
    for b in p.blocks() {
        for v in b.kernel.data().iter().chain(&b.bias) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<BackboneParams> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not an OSHT1 checkpoint".into()));
    }
    let (c, h, w, nblocks) = (cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?);
    let mut shapes = Vec::with_capacity(nblocks.min(1024));
    for _ in 0..nblocks {
        let dims = [cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?];
        let geometry = ConvGeometry::new(cur.u32()?, cur.u32()?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        shapes.push((dims, geometry));
    }
    let mut blocks = Vec::with_capacity(shapes.len());
    for (dims, geometry) in shapes {
        let kernel = Tensor4::new(dims, cur.f64s(dims.iter().product())?)?;
        let bias = cur.f64s(dims[0])?;
        blocks.push(ConvBlock {
            kernel,
            bias,
            geometry,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after payload",
            bytes.len() - cur.pos
        )));
    }
    BackboneParams::from_blocks((c, h, w), blocks).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_checkpoint(p: &BackboneParams, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(p)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<BackboneParams> {
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
