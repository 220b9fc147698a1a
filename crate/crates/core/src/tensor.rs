//! Dense row-major matrices and the `LARG` binary tensor container.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic    "LARG"            4 bytes
//! version  u32
//! record*  dtype u32 | rank u64 | dims u64 × rank | payload
//! crc32    u32               over every preceding byte
//! ```
//!
//! dtype 1 is 32-bit float, dtype 2 is 32-bit unsigned integer. Most files
//! hold a single record; files that pair related arrays (keys and their
//! back-references, IVF centroids and assignments) hold several.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LARG";
pub const TENSOR_FORMAT_VERSION: u32 = 1;

const DTYPE_F32: u32 = 1;
const DTYPE_U32: u32 = 2;

/// Row-major `rows × cols` matrix of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows.saturating_mul(cols),
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Stacks equally sized rows. An empty input gives a `0 × cols` matrix.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} values, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::f32(vec![self.rows, self.cols], self.data.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U32(Vec<u32>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f32(dims: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self {
            dims,
            data: TensorData::F32(data),
        }
    }

    pub fn u32(dims: Vec<usize>, data: Vec<u32>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self {
            dims,
            data: TensorData::U32(data),
        }
    }

    /// Interprets a rank-2 f32 tensor as a matrix.
    pub fn into_matrix(self) -> Result<Matrix> {
        match (self.dims.as_slice(), self.data) {
            (&[rows, cols], TensorData::F32(data)) => Matrix::new(rows, cols, data),
            (dims, _) => Err(Error::DimensionMismatch(format!(
                "expected a rank-2 f32 tensor, got dims {dims:?}"
            ))),
        }
    }

    pub fn into_u32(self) -> Result<Vec<u32>> {
        match self.data {
            TensorData::U32(v) => Ok(v),
            TensorData::F32(_) => Err(Error::DimensionMismatch(
                "expected a u32 tensor, got f32".into(),
            )),
        }
    }
}

pub fn encode_tensors(tensors: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&TENSOR_FORMAT_VERSION.to_le_bytes());
    for t in tensors {
        let code = match t.data {
            TensorData::F32(_) => DTYPE_F32,
            TensorData::U32(_) => DTYPE_U32,
        };
        out.extend_from_slice(&code.to_le_bytes());
        out.extend_from_slice(&(t.dims.len() as u64).to_le_bytes());
        for &d in &t.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &t.data {
            TensorData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Decodes a container; `origin` only labels errors.
pub fn decode_tensors(bytes: &[u8], origin: &Path) -> Result<Vec<Tensor>> {
    if bytes.len() < 12 {
        return Err(Error::corrupt(origin, "file too short"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    if &body[..4] != MAGIC {
        return Err(Error::corrupt(origin, "bad magic"));
    }
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::corrupt(origin, "crc32 mismatch"));
    }
    let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
    if version != TENSOR_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: TENSOR_FORMAT_VERSION,
        });
    }

    let truncated = || Error::corrupt(origin, "truncated tensor record");
    let mut cur = Cursor { buf: body, pos: 8 };
    let mut tensors = Vec::new();
    while cur.pos < body.len() {
        let code = cur.u32().ok_or_else(truncated)?;
        let rank = cur.u64().ok_or_else(truncated)? as usize;
        if rank > 8 {
            return Err(Error::corrupt(origin, format!("implausible rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u64().ok_or_else(truncated)? as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::corrupt(origin, "dimension overflow"))?;
        let payload = cur
            .take(count.checked_mul(4).ok_or_else(truncated)?)
            .ok_or_else(truncated)?;
        let words = payload.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
        let data = match code {
            DTYPE_F32 => TensorData::F32(words.map(f32::from_le_bytes).collect()),
            DTYPE_U32 => TensorData::U32(words.map(u32::from_le_bytes).collect()),
            other => {
                return Err(Error::corrupt(
                    origin,
                    format!("unknown dtype code {other}"),
                ))
            }
        };
        debug_assert_eq!(data.len(), count);
        tensors.push(Tensor { dims, data });
    }
    Ok(tensors)
}

pub fn write_tensors(path: impl AsRef<Path>, tensors: &[Tensor]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensors(tensors)).map_err(|e| Error::io(path, e))
}

pub fn read_tensors(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    let path = path.as_ref();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::corrupt(path, "missing file"))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    decode_tensors(&bytes, path)
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    write_tensors(path, &[m.to_tensor()])
}

/// Reads a file holding exactly one rank-2 f32 tensor.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let mut tensors = read_tensors(path)?;
    if tensors.len() != 1 {
        return Err(Error::corrupt(
            path,
            format!("expected one tensor, found {}", tensors.len()),
        ));
    }
    tensors.pop().unwrap().into_matrix()
}
