//! Flat named-tensor snapshot files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "RARCHWT1"
//! count    u32
//! repeated count times:
//!   name_len u32, name utf-8 bytes
//!   ndim     u32, dims u32 * ndim
//!   payload  f64 * product(dims)
//! ```

use super::{Tensor, TensorError};
use std::io::{Read, Write};

const MAGIC: &[u8; 8] = b"RARCHWT1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

pub fn write_snapshot<W: Write>(w: &mut W, tensors: &[NamedTensor]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.tensor.shape.len() as u32).to_le_bytes())?;
        for &d in &t.tensor.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &t.tensor.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Snapshot(msg.into())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, TensorError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| bad(e.to_string()))?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_snapshot<R: Read>(r: &mut R) -> Result<Vec<NamedTensor>, TensorError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
    if &magic != MAGIC {
        return Err(bad("not a rarch weights snapshot (bad magic)"));
    }
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf).map_err(|e| bad(e.to_string()))?;
        let name = String::from_utf8(name_buf).map_err(|_| bad("tensor name is not utf-8"))?;
        let ndim = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf).map_err(|e| bad(e.to_string()))?;
            values.push(f64::from_le_bytes(buf));
        }
        out.push(NamedTensor {
            name,
            tensor: Tensor { shape, values },
        });
    }
    Ok(out)
}
