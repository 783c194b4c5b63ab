//! Dense vector/matrix primitives and the numerically stable kernels every
//! other module builds on: L2 normalization, cosine similarity, batched
//! cosine, stable log-softmax and prefix truncation.
//!
//! All arithmetic is 64-bit. Reductions run in a fixed left-to-right order so
//! identical inputs always produce bit-identical outputs.

use crate::error::{Error, Result};

/// Norms below this are treated as zero vectors.
pub const ZERO_NORM_THRESHOLD: f64 = 1e-30;

/// A dense real vector; entries are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("vector"));
        }
        Ok(Self { data })
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Dot product with fixed summation order.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Euclidean norm with fixed summation order.
pub(crate) fn norm(xs: &[f64]) -> f64 {
    dot(xs, xs).sqrt()
}

pub(crate) fn l2_normalize_slice(xs: &[f64]) -> Result<Vec<f64>> {
    let n = norm(xs);
    if n < ZERO_NORM_THRESHOLD {
        return Err(Error::ZeroVector { norm: n });
    }
    Ok(xs.iter().map(|x| x / n).collect())
}

/// Rescales `v` to unit Euclidean norm, preserving direction.
pub fn l2_normalize(v: &Vector) -> Result<Vector> {
    Ok(Vector {
        data: l2_normalize_slice(v.as_slice())?,
    })
}

pub(crate) fn cosine_slices(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let nu = norm(u);
    if nu < ZERO_NORM_THRESHOLD {
        return Err(Error::ZeroVector { norm: nu });
    }
    let nv = norm(v);
    if nv < ZERO_NORM_THRESHOLD {
        return Err(Error::ZeroVector { norm: nv });
    }
    Ok(dot(u, v) / (nu * nv))
}

/// Cosine similarity of two nonzero vectors of equal dimension.
pub fn cosine(u: &Vector, v: &Vector) -> Result<f64> {
    cosine_slices(u.as_slice(), v.as_slice())
}

/// Log-softmax with max subtraction; exp of the result sums to 1.
pub fn log_softmax_stable(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if scores.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("log_softmax input"));
    }
    let mut max = scores[0];
    for &s in &scores[1..] {
        if s > max {
            max = s;
        }
    }
    let mut sum = 0.0;
    for &s in scores {
        sum += (s - max).exp();
    }
    let log_sum = sum.ln();
    Ok(scores.iter().map(|s| s - max - log_sum).collect())
}

pub(crate) fn truncate_renorm_slice(xs: &[f64], d: usize) -> Result<Vec<f64>> {
    if d == 0 || d > xs.len() {
        return Err(Error::BadDim { dim: d, max: xs.len() });
    }
    let prefix = &xs[..d];
    let n = norm(prefix);
    if n < ZERO_NORM_THRESHOLD {
        return Err(Error::ZeroPrefix { dim: d, norm: n });
    }
    Ok(prefix.iter().map(|x| x / n).collect())
}

/// First `d` coordinates of `v`, re-normalized to unit norm. For `d == v.dim()`
/// this is exactly `l2_normalize(v)` (same code path, bit for bit).
pub fn truncate_renorm(v: &Vector, d: usize) -> Result<Vector> {
    Ok(Vector {
        data: truncate_renorm_slice(v.as_slice(), d)?,
    })
}

/// Row-major dense matrix. Also serves as the gradient container for batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            data: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    pub fn from_vec(data: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { data, rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }
}

/// A batch of `k` embeddings of identical dimension, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    mat: Matrix,
}

impl EmbeddingBatch {
    pub fn from_matrix(mat: Matrix) -> Result<Self> {
        if mat.rows() == 0 {
            return Err(Error::BatchEmpty);
        }
        if mat.cols() == 0 {
            return Err(Error::EmptyInput);
        }
        if mat.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding batch"));
        }
        Ok(Self { mat })
    }

    pub fn from_rows(rows: Vec<Vector>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::BatchEmpty);
        }
        let dim = rows[0].dim();
        for r in &rows {
            if r.dim() != dim {
                return Err(Error::DimMismatch {
                    left: dim,
                    right: r.dim(),
                });
            }
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        let k = rows.len();
        for r in rows {
            data.extend_from_slice(r.as_slice());
        }
        Ok(Self {
            mat: Matrix::from_vec(data, k, dim)?,
        })
    }

    pub fn k(&self) -> usize {
        self.mat.rows()
    }

    pub fn dim(&self) -> usize {
        self.mat.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.mat.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.mat
    }

    /// Stacks batches vertically; all must share the embedding dimension.
    pub fn vstack(parts: &[&EmbeddingBatch]) -> Result<EmbeddingBatch> {
        if parts.is_empty() {
            return Err(Error::BatchEmpty);
        }
        let dim = parts[0].dim();
        let mut data = Vec::new();
        let mut k = 0;
        for p in parts {
            if p.dim() != dim {
                return Err(Error::DimMismatch {
                    left: dim,
                    right: p.dim(),
                });
            }
            data.extend_from_slice(p.mat.data());
            k += p.k();
        }
        EmbeddingBatch::from_matrix(Matrix::from_vec(data, k, dim)?)
    }

    /// Applies [`truncate_renorm`] to every row.
    pub fn truncate_renorm(&self, d: usize) -> Result<EmbeddingBatch> {
        let mut out = Matrix::zeros(self.k(), d);
        for i in 0..self.k() {
            let t = truncate_renorm_slice(self.row(i), d)?;
            out.row_mut(i).copy_from_slice(&t);
        }
        EmbeddingBatch::from_matrix(out)
    }
}

/// Entry (i, j) is `cosine(a.row(i), b.row(j))`; same float path as the
/// scalar kernel, so the two agree bit for bit.
pub fn pairwise_cosine(a: &EmbeddingBatch, b: &EmbeddingBatch) -> Result<Matrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let mut na = Vec::with_capacity(a.k());
    for i in 0..a.k() {
        let n = norm(a.row(i));
        if n < ZERO_NORM_THRESHOLD {
            return Err(Error::ZeroVector { norm: n });
        }
        na.push(n);
    }
    let mut nb = Vec::with_capacity(b.k());
    for j in 0..b.k() {
        let n = norm(b.row(j));
        if n < ZERO_NORM_THRESHOLD {
            return Err(Error::ZeroVector { norm: n });
        }
        nb.push(n);
    }
    let mut out = Matrix::zeros(a.k(), b.k());
    for i in 0..a.k() {
        let ra = a.row(i);
        for j in 0..b.k() {
            out.set(i, j, dot(ra, b.row(j)) / (na[i] * nb[j]));
        }
    }
    Ok(out)
}

/// A square grid of channel vectors (side x side x channels), row-major.
/// Holds positional grids (channels = hidden width) and image patch tensors
/// (channels = per-patch feature size).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    data: Vec<f64>,
    side: usize,
    channels: usize,
}

impl Grid {
    pub fn zeros(side: usize, channels: usize) -> Self {
        Self {
            data: vec![0.0; side * side * channels],
            side,
            channels,
        }
    }

    pub fn from_vec(data: Vec<f64>, side: usize, channels: usize) -> Result<Self> {
        if data.len() != side * side * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {side}x{side}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            data,
            side,
            channels,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.side + j) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn cell_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let start = (i * self.side + j) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}
