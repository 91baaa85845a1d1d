//! Row-major little-endian float32 tensors with a JSON shape sidecar:
//! `<name>.f32` holds the data and `<name>.json` holds `{"shape": [...], "dtype": "float32"}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub shape: Vec<usize>,
    #[serde(default = "default_dtype")]
    pub dtype: String,
}

fn default_dtype() -> String {
    "float32".into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    /// Interprets the tensor as a matrix: 1-D becomes a single row.
    pub fn rows_cols(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [d] => Ok((1, *d)),
            [r, c] => Ok((*r, *c)),
            s => Err(invalid(format!(
                "expected 1-D or 2-D tensor, got shape {s:?}"
            ))),
        }
    }
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Data file for a tensor stem. The suffix is appended, so stems may contain dots.
pub fn data_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".f32")
}

pub fn sidecar_path(stem: &Path) -> PathBuf {
    with_suffix(stem, ".json")
}

pub fn write_tensor(stem: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != data.len() {
        return Err(invalid(format!(
            "shape {shape:?} needs {expected} values, got {}",
            data.len()
        )));
    }
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    let dp = data_path(stem);
    fs::write(&dp, bytes).map_err(io_err(&dp))?;
    let sc = Sidecar {
        shape: shape.to_vec(),
        dtype: default_dtype(),
    };
    let sp = sidecar_path(stem);
    fs::write(&sp, serde_json::to_vec(&sc)?).map_err(io_err(&sp))?;
    Ok(())
}

pub fn read_tensor(stem: &Path) -> Result<Tensor> {
    let sp = sidecar_path(stem);
    let sc: Sidecar = serde_json::from_slice(&fs::read(&sp).map_err(io_err(&sp))?)?;
    if sc.dtype != "float32" {
        return Err(invalid(format!(
            "{}: unsupported dtype {}",
            sp.display(),
            sc.dtype
        )));
    }
    let dp = data_path(stem);
    let bytes = fs::read(&dp).map_err(io_err(&dp))?;
    let expected: usize = sc.shape.iter().product();
    if bytes.len() != expected * 4 {
        return Err(invalid(format!(
            "{}: {} bytes does not match shape {:?}",
            dp.display(),
            bytes.len(),
            sc.shape
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor {
        shape: sc.shape,
        data,
    })
}

/// Lists tensor stems (sorted) in a directory: every `*.f32` with a matching sidecar.
pub fn list_tensors(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let Some(id) = path
            .file_name()
            .and_then(|s| s.to_str())
            .and_then(|n| n.strip_suffix(".f32"))
        else {
            continue;
        };
        let stem = dir.join(id);
        if sidecar_path(&stem).exists() {
            out.push((id.to_string(), stem));
        }
    }
    out.sort();
    Ok(out)
}
