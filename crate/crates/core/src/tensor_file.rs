//! Minimal tensor container: one line of JSON header, a newline, then raw
//! little-endian `f32` payload in row-major order.
//!
//! ```text
//! {"shape":[2,3],"dtype":"f32","byte_order":"LE","name":"x"}\n<24 bytes>
//! ```
//!
//! The header never contains a newline (compact JSON), so readers in any
//! language split on the first `\n`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorHeader {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_order: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "tensor shape {shape:?} holds {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            shape,
            data,
        })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = TensorHeader {
            shape: self.shape.clone(),
            dtype: "f32".into(),
            byte_order: "LE".into(),
            name: self.name.clone(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.reserve(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mismatch = |detail: String| Error::HeaderMismatch {
            path: origin.to_path_buf(),
            detail,
        };
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| mismatch("no header terminator".into()))?;
        let header: TensorHeader = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| mismatch(format!("bad header json: {e}")))?;
        if header.dtype != "f32" {
            return Err(mismatch(format!("unsupported dtype {}", header.dtype)));
        }
        if header.byte_order != "LE" {
            return Err(mismatch(format!("unsupported byte order {}", header.byte_order)));
        }
        let payload = &bytes[nl + 1..];
        let numel: usize = header.shape.iter().product();
        if payload.len() != 4 * numel {
            return Err(mismatch(format!(
                "payload has {} bytes, shape {:?} needs {}",
                payload.len(),
                header.shape,
                4 * numel
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            name: header.name,
            shape: header.shape,
            data,
        })
    }
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes, path)
}
