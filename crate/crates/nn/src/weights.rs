//! Binary parameter container shared by every trained model.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            8 bytes  "BBWEIGHT"
//! format_version   u32
//! header_len       u32
//! header           header_len bytes of UTF-8 JSON (WeightsHeader)
//! tensor_count     u32
//! tensor_count × {
//!     name_len     u32
//!     name         name_len bytes UTF-8
//!     ndim         u32
//!     dims         ndim × u32
//!     data         product(dims) × f64
//! }
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{NnError, Result, Tensor};

pub const MAGIC: &[u8; 8] = b"BBWEIGHT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsHeader {
    pub format_version: u32,
    pub embedding_layout_version: u32,
    /// Model kind plus whatever hyperparameters are needed to rebuild it.
    pub architecture: serde_json::Value,
    pub class_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightsFile {
    pub header: WeightsHeader,
    pub tensors: Vec<(String, Tensor)>,
}

impl WeightsFile {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| NnError::Format(format!("missing tensor {name}")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header)
            .map_err(|e| NnError::Format(e.to_string()))?;
        w.write_all(MAGIC)?;
        write_u32(&mut w, self.header.format_version)?;
        write_u32(&mut w, len_u32(header.len())?)?;
        w.write_all(&header)?;
        write_u32(&mut w, len_u32(self.tensors.len())?)?;
        for (name, tensor) in &self.tensors {
            write_u32(&mut w, len_u32(name.len())?)?;
            w.write_all(name.as_bytes())?;
            write_u32(&mut w, len_u32(tensor.shape().len())?)?;
            for d in tensor.shape() {
                write_u32(&mut w, len_u32(*d)?)?;
            }
            for v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(NnError::Format(format!(
                "unsupported format version {version}"
            )));
        }
        let header_len = read_u32(&mut r)? as usize;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header)?;
        let header: WeightsHeader =
            serde_json::from_slice(&header).map_err(|e| NnError::Format(e.to_string()))?;
        if header.format_version != version {
            return Err(NnError::Format("header/format version disagree".into()));
        }
        let count = read_u32(&mut r)?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| NnError::Format(e.to_string()))?;
            let ndim = read_u32(&mut r)? as usize;
            let shape = (0..ndim)
                .map(|_| read_u32(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            let mut buf = [0u8; 8];
            for _ in 0..len {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            tensors.push((name, Tensor::from_vec(&shape, data)?));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| NnError::Format(format!("length {n} exceeds u32")))
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
