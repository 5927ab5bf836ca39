//! Flat binary container for named parameter tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"TNSR"
//! u32    format version (1)
//! u32    tensor count
//! per tensor:
//!   u32      name length, then name bytes (utf-8)
//!   u32      rank, then rank x u64 dims
//!   f64 x N  data, N = product of dims
//! ```
//!
//! Reload is bit-exact: f64 payloads are written as raw IEEE bits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TNSR";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dimension(format!(
                "tensor shape {shape:?} implies {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(NamedTensor {
            name: name.into(),
            shape,
            data,
        })
    }
}

pub fn write_tensors(w: &mut impl Write, tensors: &[NamedTensor]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        let name = t.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in &t.data {
            w.write_all(&x.to_bits().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors(r: &mut impl Read) -> Result<Vec<NamedTensor>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Serialization("bad tensor container magic".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Serialization(format!(
            "unsupported tensor container version {version}"
        )));
    }
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::Serialization(format!("tensor name: {e}")))?;
        let rank = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_bits(u64::from_le_bytes(buf)));
        }
        out.push(NamedTensor { name, shape, data });
    }
    Ok(out)
}

pub fn write_tensors_to(path: impl AsRef<Path>, tensors: &[NamedTensor]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensors(&mut w, tensors)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensors_from(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensors(&mut r)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
