//! File formats: flat little-endian binaries with JSON sidecar headers.
//!
//! A stack file holds interleaved (re, im) 32-bit floats in
//! acquisition-major order; rasters hold 32-bit floats or integers,
//! plane-major. The sidecar lives next to the payload with the extension
//! swapped to `.json` and must describe the payload byte count exactly.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use s2s_core::stack::SlcStack;

pub const BYTE_ORDER_LITTLE: &str = "little";
pub const STACK_DTYPE: &str = "complex_f32";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: invalid header: {source}")]
    Header {
        path: String,
        source: serde_json::Error,
    },
    #[error("{path}: expected {expected} payload bytes, found {found}")]
    ByteCount {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("{path}: unsupported byte order {order:?}, only \"little\" is supported")]
    ByteOrder { path: String, order: String },
    #[error("{path}: dtype {got:?} does not match expected {want:?}")]
    Dtype {
        path: String,
        got: String,
        want: String,
    },
    #[error("{path}: header geometry {dims:?} is empty")]
    EmptyGeometry { path: String, dims: Vec<usize> },
}

fn io_err(path: &Path, source: std::io::Error) -> FormatError {
    FormatError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

/// Stack sidecar contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StackHeader {
    pub n_acquisitions: usize,
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub byte_order: String,
    /// Free-form origin note (seed, generating command, source).
    pub provenance: String,
}

/// Raster sidecar contents; `planes` is 1 for 2-D products.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RasterHeader {
    pub planes: usize,
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub byte_order: String,
    pub provenance: String,
}

fn write_header<H: Serialize>(path: &Path, header: &H) -> Result<(), FormatError> {
    let side = sidecar(path);
    let text = serde_json::to_string_pretty(header).expect("headers are plain data");
    fs::write(&side, text).map_err(|e| io_err(&side, e))
}

fn read_header<H: for<'de> Deserialize<'de>>(path: &Path) -> Result<H, FormatError> {
    let side = sidecar(path);
    let text = fs::read_to_string(&side).map_err(|e| io_err(&side, e))?;
    serde_json::from_str(&text).map_err(|e| FormatError::Header {
        path: side.display().to_string(),
        source: e,
    })
}

fn check_little(path: &Path, order: &str) -> Result<(), FormatError> {
    if order == BYTE_ORDER_LITTLE {
        Ok(())
    } else {
        Err(FormatError::ByteOrder {
            path: path.display().to_string(),
            order: order.to_string(),
        })
    }
}

fn check_dtype(path: &Path, got: &str, want: &str) -> Result<(), FormatError> {
    if got == want {
        Ok(())
    } else {
        Err(FormatError::Dtype {
            path: path.display().to_string(),
            got: got.to_string(),
            want: want.to_string(),
        })
    }
}

fn check_payload(path: &Path, expected: usize, found: usize) -> Result<(), FormatError> {
    if expected == found {
        Ok(())
    } else {
        Err(FormatError::ByteCount {
            path: path.display().to_string(),
            expected,
            found,
        })
    }
}

/// Writes the stack as interleaved f32 pairs plus its sidecar. Values are
/// quantized to f32; a read-back therefore reproduces the file bit for bit.
pub fn write_stack(path: &Path, stack: &SlcStack<f64>, provenance: &str) -> Result<(), FormatError> {
    let (n, rows, cols) = stack.data.dim();
    let mut bytes = Vec::with_capacity(n * rows * cols * 8);
    for a in 0..n {
        for r in 0..rows {
            for c in 0..cols {
                let v = stack.data[(a, r, c)];
                bytes.extend_from_slice(&(v.re as f32).to_le_bytes());
                bytes.extend_from_slice(&(v.im as f32).to_le_bytes());
            }
        }
    }
    fs::write(path, &bytes).map_err(|e| io_err(path, e))?;
    write_header(
        path,
        &StackHeader {
            n_acquisitions: n,
            rows,
            cols,
            dtype: STACK_DTYPE.to_string(),
            byte_order: BYTE_ORDER_LITTLE.to_string(),
            provenance: provenance.to_string(),
        },
    )
}

pub fn read_stack(path: &Path) -> Result<(SlcStack<f64>, StackHeader), FormatError> {
    let header: StackHeader = read_header(path)?;
    check_little(path, &header.byte_order)?;
    check_dtype(path, &header.dtype, STACK_DTYPE)?;
    let (n, rows, cols) = (header.n_acquisitions, header.rows, header.cols);
    if n == 0 || rows == 0 || cols == 0 {
        return Err(FormatError::EmptyGeometry {
            path: path.display().to_string(),
            dims: vec![n, rows, cols],
        });
    }
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    check_payload(path, n * rows * cols * 8, bytes.len())?;
    let mut stack = SlcStack::<f64>::zeros(n, rows, cols);
    let mut chunks = bytes.chunks_exact(4);
    for a in 0..n {
        for r in 0..rows {
            for c in 0..cols {
                let re = f32::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
                let im = f32::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
                stack.data[(a, r, c)] = Complex::new(f64::from(re), f64::from(im));
            }
        }
    }
    Ok((stack, header))
}

/// Writes a plane-major f32 raster (planes, rows, cols) with its sidecar.
pub fn write_f32_raster(path: &Path, data: &Array3<f32>, provenance: &str) -> Result<(), FormatError> {
    let (planes, rows, cols) = data.dim();
    let mut bytes = Vec::with_capacity(planes * rows * cols * 4);
    for p in 0..planes {
        for r in 0..rows {
            for c in 0..cols {
                bytes.extend_from_slice(&data[(p, r, c)].to_le_bytes());
            }
        }
    }
    fs::write(path, &bytes).map_err(|e| io_err(path, e))?;
    write_header(
        path,
        &RasterHeader {
            planes,
            rows,
            cols,
            dtype: "f32".to_string(),
            byte_order: BYTE_ORDER_LITTLE.to_string(),
            provenance: provenance.to_string(),
        },
    )
}

/// Single-plane convenience wrapper over [`write_f32_raster`].
pub fn write_f32_map(path: &Path, data: &Array2<f32>, provenance: &str) -> Result<(), FormatError> {
    let (rows, cols) = data.dim();
    let expanded = data
        .clone()
        .into_shape_with_order((1, rows, cols))
        .expect("reshape of owned raster");
    write_f32_raster(path, &expanded, provenance)
}

pub fn read_f32_raster(path: &Path) -> Result<(Array3<f32>, RasterHeader), FormatError> {
    let header: RasterHeader = read_header(path)?;
    check_little(path, &header.byte_order)?;
    check_dtype(path, &header.dtype, "f32")?;
    let (planes, rows, cols) = (header.planes, header.rows, header.cols);
    if planes == 0 || rows == 0 || cols == 0 {
        return Err(FormatError::EmptyGeometry {
            path: path.display().to_string(),
            dims: vec![planes, rows, cols],
        });
    }
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    check_payload(path, planes * rows * cols * 4, bytes.len())?;
    let mut data = Array3::<f32>::zeros((planes, rows, cols));
    let mut chunks = bytes.chunks_exact(4);
    for p in 0..planes {
        for r in 0..rows {
            for c in 0..cols {
                data[(p, r, c)] = f32::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
            }
        }
    }
    Ok((data, header))
}

pub fn write_i32_raster(path: &Path, data: &Array2<i32>, provenance: &str) -> Result<(), FormatError> {
    let (rows, cols) = data.dim();
    let mut bytes = Vec::with_capacity(rows * cols * 4);
    for r in 0..rows {
        for c in 0..cols {
            bytes.extend_from_slice(&data[(r, c)].to_le_bytes());
        }
    }
    fs::write(path, &bytes).map_err(|e| io_err(path, e))?;
    write_header(
        path,
        &RasterHeader {
            planes: 1,
            rows,
            cols,
            dtype: "i32".to_string(),
            byte_order: BYTE_ORDER_LITTLE.to_string(),
            provenance: provenance.to_string(),
        },
    )
}

pub fn read_i32_raster(path: &Path) -> Result<(Array2<i32>, RasterHeader), FormatError> {
    let header: RasterHeader = read_header(path)?;
    check_little(path, &header.byte_order)?;
    check_dtype(path, &header.dtype, "i32")?;
    let (rows, cols) = (header.rows, header.cols);
    if header.planes != 1 || rows == 0 || cols == 0 {
        return Err(FormatError::EmptyGeometry {
            path: path.display().to_string(),
            dims: vec![header.planes, rows, cols],
        });
    }
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    check_payload(path, rows * cols * 4, bytes.len())?;
    let mut data = Array2::<i32>::zeros((rows, cols));
    let mut chunks = bytes.chunks_exact(4);
    for r in 0..rows {
        for c in 0..cols {
            data[(r, c)] = i32::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
        }
    }
    Ok((data, header))
}

/// Writes a CSV with the given header line and pre-formatted rows.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<(), FormatError> {
    let mut text = String::with_capacity(header.len() + rows.iter().map(|r| r.len() + 1).sum::<usize>() + 1);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}
