//! PGSC tensor files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"PGSC" | version: u32 | ndims: u32 | dims: u32 * ndims | data: f32 * prod(dims)
//! ```
//!
//! A checkpoint is several such records back to back, with a sidecar
//! `<file>.manifest` holding one `name<TAB>shape<TAB>offset` line per tensor,
//! where `shape` is `AxBxC` and `offset` is the byte position of the record.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PGSC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Format(format!("{} values for shape {:?}", data.len(), dims)));
        }
        Ok(Self { dims, data })
    }

    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Encoded size in bytes.
    pub fn byte_len(&self) -> usize {
        12 + 4 * self.dims.len() + 4 * self.data.len()
    }

    pub fn shape_string(&self) -> String {
        self.dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
    }
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&u32::try_from(t.dims.len()).map_err(|_| Error::Format("too many dims".into()))?.to_le_bytes())?;
    for &d in &t.dims {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in &t.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let ndims = read_u32(r)? as usize;
    if ndims > 16 {
        return Err(Error::Format(format!("implausible ndims {ndims}")));
    }
    let dims = (0..ndims).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let n: usize = dims.iter().product();
    let mut bytes = vec![0u8; 4 * n];
    r.read_exact(&mut bytes)?;
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Tensor::new(dims, data)
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

pub fn save_named(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut manifest = String::new();
    let mut offset = 0usize;
    for (name, t) in tensors {
        if name.contains(char::is_whitespace) || name.is_empty() {
            return Err(Error::Format(format!("invalid tensor name '{name}'")));
        }
        write_tensor(&mut w, t)?;
        manifest.push_str(&format!("{name}\t{}\t{offset}\n", t.shape_string()));
        offset += t.byte_len();
    }
    w.flush()?;
    std::fs::write(manifest_path(path), manifest)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_named`], checking every record
/// against its manifest line.
pub fn load_named(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let manifest = BufReader::new(File::open(manifest_path(path))?);
    let mut r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut offset = 0usize;
    for line in manifest.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, shape, off] = fields[..] else {
            return Err(Error::Format(format!("bad manifest line '{line}'")));
        };
        let off: usize = off.parse().map_err(|_| Error::Format(format!("bad offset in '{line}'")))?;
        if off != offset {
            return Err(Error::Format(format!("tensor '{name}' at {offset}, manifest says {off}")));
        }
        let t = read_tensor(&mut r)?;
        if t.shape_string() != shape {
            return Err(Error::Format(format!("tensor '{name}' has shape {}, manifest says {shape}", t.shape_string())));
        }
        offset += t.byte_len();
        out.push((name.to_string(), t));
    }
    Ok(out)
}
