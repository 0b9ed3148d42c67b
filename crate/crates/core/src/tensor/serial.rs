//! Flat binary tensor container.
//!
//! Layout: magic `MXAT`, version u32, rank u32, shape as u64s, then
//! little-endian IEEE-754 f32 values. Used for checkpoints and teacher-logit
//! caches; values round to f32 on write.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MXAT";
pub const VERSION: u32 = 1;

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.values() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse(format!("bad tensor magic {magic:?}, expected {MAGIC:?}")));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported tensor container version {version}")));
    }
    r.read_exact(&mut u32buf)?;
    let rank = u32::from_le_bytes(u32buf) as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut u64buf = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut u64buf)?;
        shape.push(u64::from_le_bytes(u64buf) as usize);
    }
    let n: usize = shape.iter().product();
    let mut values = Vec::with_capacity(n);
    let mut f32buf = [0u8; 4];
    for _ in 0..n {
        r.read_exact(&mut f32buf)?;
        values.push(f32::from_le_bytes(f32buf) as f64);
    }
    Tensor::new(shape, values)
}

pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let mut buf = Vec::new();
    write_tensor(&mut buf, t).expect("in-memory write cannot fail");
    buf
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    let mut cursor = bytes;
    read_tensor(&mut cursor)
}
