//! RLTK tensor files.
//!
//! Layout: the 4-byte magic `RLTK`, a little-endian `u32` header length, a
//! UTF-8 JSON header `{"dtype":"f32","shape":[..],"order":"row-major"}` and
//! the payload as little-endian `f32` values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RLTK";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub order: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: data.iter().map(|&v| v as f32).collect(),
        })
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            dtype: "f32".into(),
            shape: self.shape.clone(),
            order: "row-major".into(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + json.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("missing RLTK magic"));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = bytes
            .get(8..8 + hlen)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| bad(&format!("bad header: {e}")))?;
        if header.dtype != "f32" {
            return Err(bad(&format!("unsupported dtype {}", header.dtype)));
        }
        if header.order != "row-major" {
            return Err(bad(&format!("unsupported order {}", header.order)));
        }
        let payload = &bytes[8 + hlen..];
        let n: usize = header.shape.iter().product();
        if payload.len() != 4 * n {
            return Err(bad(&format!(
                "payload has {} bytes, shape {:?} needs {}",
                payload.len(),
                header.shape,
                4 * n
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor {
            shape: header.shape,
            data,
        })
    }
}

pub fn write(path: &Path, tensor: &Tensor) -> Result<()> {
    std::fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn write_f64(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    write(path, &Tensor::from_f64(shape, data)?)
}

pub fn read(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes, path)
}
