//! Small dense matrices and the on-disk tensor format.
//!
//! A tensor file is a flat little-endian `f64` payload next to a JSON sidecar
//! (`<file>.json`) listing each tensor's name and shape in payload order,
//! plus a free-form `kind` and `config` describing the owner.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `self^T * y`.
    pub fn t_matvec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, self.row(r), &mut out);
            }
        }
        out
    }

    /// `self += a b^T`.
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!((a.len(), b.len()), (self.rows, self.cols));
        for (r, &ar) in a.iter().enumerate() {
            if ar != 0.0 {
                let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
                axpy(ar, b, row);
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub const TENSOR_FORMAT: &str = "spatialgrasp-tensors";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSidecar {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

/// A named list of tensors plus the metadata needed to rebuild the owner.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<(TensorEntry, Vec<f64>)>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl TensorFile {
    pub fn new(kind: &str, config: serde_json::Value) -> Self {
        Self {
            kind: kind.to_string(),
            config,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], values: &[f64]) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.tensors.push((
            TensorEntry {
                name: name.to_string(),
                shape: shape.to_vec(),
            },
            values.to_vec(),
        ));
    }

    pub fn get(&self, name: &str, shape: &[usize]) -> Result<&[f64]> {
        let (entry, values) = self
            .tensors
            .iter()
            .find(|(e, _)| e.name == name)
            .ok_or_else(|| Error::shape(format!("tensor `{name}` missing")))?;
        if entry.shape != shape {
            return Err(Error::shape(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                entry.shape
            )));
        }
        Ok(values)
    }

    pub fn encode(&self) -> Result<(Vec<u8>, String)> {
        let mut payload = Vec::new();
        for (_, values) in &self.tensors {
            for v in values {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sidecar = TensorSidecar {
            format: TENSOR_FORMAT.into(),
            version: 1,
            kind: self.kind.clone(),
            config: self.config.clone(),
            tensors: self.tensors.iter().map(|(e, _)| e.clone()).collect(),
        };
        let mut json = serde_json::to_string_pretty(&sidecar)?;
        json.push('\n');
        Ok((payload, json))
    }

    pub fn decode(payload: &[u8], sidecar: &str) -> Result<Self> {
        let meta: TensorSidecar = serde_json::from_str(sidecar)?;
        if meta.format != TENSOR_FORMAT || meta.version != 1 {
            return Err(Error::format(0, format!("unsupported tensor sidecar {} v{}", meta.format, meta.version)));
        }
        let total: usize = meta.tensors.iter().map(TensorEntry::len).sum();
        if payload.len() != total * 8 {
            return Err(Error::format(
                payload.len().min(total * 8),
                format!("payload has {} bytes, sidecar describes {}", payload.len(), total * 8),
            ));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let tensors = meta
            .tensors
            .into_iter()
            .map(|e| {
                let v: Vec<f64> = values.by_ref().take(e.len()).collect();
                (e, v)
            })
            .collect();
        Ok(Self {
            kind: meta.kind,
            config: meta.config,
            tensors,
        })
    }

    /// Writes the payload to `path` and the sidecar to `<path>.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (payload, json) = self.encode()?;
        fs::write(path, payload).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        fs::write(&side, json).map_err(|e| Error::io(side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let payload = fs::read(path).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let json = fs::read_to_string(&side).map_err(|e| Error::io(side, e))?;
        Self::decode(&payload, &json)
    }
}
