//! Dense vector and matrix primitives shared by every stage of the pipeline.
//!
//! All embeddings live on the unit sphere, so a dot product between two rows
//! is their cosine similarity.

use serde::{Deserialize, Serialize};

use crate::error::{IceError, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// One embedding per row.
pub type FeatureMatrix = Matrix;
/// Cosine similarities between the rows of two feature matrices.
pub type SimilarityMatrix = Matrix;

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(IceError::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(IceError::DimensionMismatch { expected: cols, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
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
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Gathers the given rows (repeats allowed) into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: indices.len(), cols: self.cols, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Normalizes every row to unit L2 norm in place.
    pub fn normalize_rows(&mut self) -> Result<()> {
        for i in 0..self.rows {
            normalize_in_place(self.row_mut(i))?;
        }
        Ok(())
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(IceError::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }
}

/// Embedding with unit L2 norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub(crate) fn normalize_in_place(v: &mut [f64]) -> Result<f64> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(IceError::DegenerateVector);
    }
    for x in v.iter_mut() {
        *x /= n;
    }
    Ok(n)
}

pub fn l2_normalize(v: &[f64]) -> Result<UnitVector> {
    let mut out = v.to_vec();
    normalize_in_place(&mut out)?;
    Ok(UnitVector(out))
}

pub fn cosine(a: &UnitVector, b: &UnitVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(IceError::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(dot(&a.0, &b.0))
}

/// Entry `(i, j)` is the cosine similarity of row `i` of `a` and row `j` of `b`.
/// Rows are assumed to be unit-normalized already.
pub fn pairwise_similarity(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<SimilarityMatrix> {
    if a.cols() != b.cols() {
        return Err(IceError::DimensionMismatch { expected: a.cols(), found: b.cols() });
    }
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ai = a.row(i);
        for (j, bj) in b.iter_rows().enumerate() {
            out.set(i, j, dot(ai, bj));
        }
    }
    Ok(out)
}

/// Temperature-scaled softmax with max-subtraction.
pub fn softmax_row(sims: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(IceError::InvalidTemperature(temperature));
    }
    if sims.is_empty() {
        return Err(IceError::ShapeMismatch("softmax over an empty row".into()));
    }
    Ok(softmax_unchecked(sims, temperature))
}

pub(crate) fn softmax_unchecked(sims: &[f64], temperature: f64) -> Vec<f64> {
    let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = sims.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let z: f64 = out.iter().sum();
    for p in &mut out {
        *p /= z;
    }
    out
}

/// `log(sum(exp(s / t)))`, stable for small temperatures.
pub fn log_sum_exp(sims: &[f64], temperature: f64) -> f64 {
    let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = sims.iter().map(|s| ((s - max) / temperature).exp()).sum();
    max / temperature + z.ln()
}
