//! Small file-format helpers shared by every artifact writer.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Row-major little-endian f32.
pub fn write_f32_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(m.len() * 4);
    for row in m.rows() {
        for v in row {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    write_bytes(path, &bytes)
}

pub fn read_f32_matrix(path: &Path, ncols: usize) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if ncols == 0 || bytes.len() % (4 * ncols) != 0 {
        return Err(Error::data(format!(
            "{}: {} bytes is not a whole number of {ncols}-column f32 rows",
            path.display(),
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let nrows = values.len() / ncols;
    Array2::from_shape_vec((nrows, ncols), values).map_err(|e| Error::data(e.to_string()))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::data(e.to_string()))?;
    s.push('\n');
    write_text(path, &s)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}
