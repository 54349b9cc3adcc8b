//! k-reciprocal Jaccard distance over unit-norm embeddings.
//!
//! Neighbor lists include the sample itself in first position, so
//! `knn(p, k)` holds `k + 1` indices. Ties in the original distance are broken
//! by ascending index.

use rayon::prelude::*;

use crate::error::{IceError, Result};
use crate::math::{dot, FeatureMatrix, Matrix};

/// Symmetric, zero-diagonal square matrix of pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(Matrix);

impl DistanceMatrix {
    /// Validates symmetry (to 1e-12) and a zero diagonal.
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(IceError::InvalidDistanceMatrix(format!("{}x{} is not square", m.rows(), m.cols())));
        }
        for i in 0..m.rows() {
            if m.get(i, i) != 0.0 {
                return Err(IceError::InvalidDistanceMatrix(format!("nonzero diagonal at {i}")));
            }
            for j in (i + 1)..m.rows() {
                let (a, b) = (m.get(i, j), m.get(j, i));
                if !a.is_finite() || (a - b).abs() > 1e-12 {
                    return Err(IceError::InvalidDistanceMatrix(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self(m))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }
}

/// `1 - cosine` between all pairs of rows.
pub fn cosine_distance(features: &FeatureMatrix) -> Matrix {
    let n = features.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (1.0 - dot(features.row(i), features.row(j))).max(0.0);
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    d
}

/// Every index ordered by distance from `i`, with `i` itself first.
pub(crate) fn ranking(dist: &Matrix, i: usize) -> Vec<usize> {
    let row = dist.row(i);
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| {
        (a != i)
            .cmp(&(b != i))
            .then(row[a].total_cmp(&row[b]))
            .then(a.cmp(&b))
    });
    idx
}

/// Sorted k-reciprocal set of `p` given full rankings.
fn reciprocal(ranks: &[Vec<usize>], p: usize, k: usize) -> Vec<usize> {
    let mut out: Vec<usize> = ranks[p][..=k]
        .iter()
        .copied()
        .filter(|&q| ranks[q][..=k].contains(&p))
        .collect();
    out.sort_unstable();
    out
}

fn sorted_intersection_len(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Sparse row: sorted column indices with their weights.
struct SparseRow {
    idx: Vec<usize>,
    val: Vec<f64>,
}

/// Pairwise k-reciprocal Jaccard distance.
///
/// `k1` sizes the reciprocal neighborhoods (halved, rounded down, for the
/// expansion candidates) and `k2` is the number of nearest neighbors, self
/// included, averaged during local query expansion.
pub fn jaccard_distance_matrix(features: &FeatureMatrix, k1: usize, k2: usize) -> Result<DistanceMatrix> {
    let n = features.rows();
    if k1 >= n {
        return Err(IceError::InsufficientSamples { n, k1 });
    }
    if k2 == 0 || k2 > n {
        return Err(IceError::InvalidConfig(format!("k2={k2} must lie in 1..={n}")));
    }
    let orig = cosine_distance(features);
    let ranks: Vec<Vec<usize>> = (0..n).into_par_iter().map(|i| ranking(&orig, i)).collect();

    let half = k1 / 2;
    let base: Vec<Vec<usize>> = (0..n).into_par_iter().map(|p| reciprocal(&ranks, p, k1)).collect();
    let half_sets: Vec<Vec<usize>> = (0..n).into_par_iter().map(|p| reciprocal(&ranks, p, half)).collect();

    let weights: Vec<SparseRow> = (0..n)
        .into_par_iter()
        .map(|p| {
            let mut expanded = base[p].clone();
            for &q in &base[p] {
                let cand = &half_sets[q];
                if 3 * sorted_intersection_len(cand, &base[p]) >= 2 * cand.len() {
                    expanded.extend_from_slice(cand);
                }
            }
            expanded.sort_unstable();
            expanded.dedup();
            let val = expanded.iter().map(|&q| (-orig.get(p, q)).exp()).collect();
            SparseRow { idx: expanded, val }
        })
        .collect();

    // Local query expansion: average each row over its k2 nearest neighbors.
    let expanded: Vec<SparseRow> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![0.0; n];
            for &j in &ranks[i][..k2] {
                for (&q, &w) in weights[j].idx.iter().zip(&weights[j].val) {
                    acc[q] += w;
                }
            }
            let mut row = SparseRow { idx: Vec::new(), val: Vec::new() };
            for (q, a) in acc.into_iter().enumerate() {
                if a != 0.0 {
                    row.idx.push(q);
                    row.val.push(a / k2 as f64);
                }
            }
            row
        })
        .collect();

    // Inverted index: for every column q, the rows with nonzero weight there.
    let mut postings: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, row) in expanded.iter().enumerate() {
        for (&q, &w) in row.idx.iter().zip(&row.val) {
            postings[q].push((i, w));
        }
    }
    let totals: Vec<f64> = expanded.iter().map(|r| r.val.iter().sum()).collect();

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut min_sum = vec![0.0; n];
            for (&q, &w) in expanded[i].idx.iter().zip(&expanded[i].val) {
                for &(j, wj) in &postings[q] {
                    min_sum[j] += w.min(wj);
                }
            }
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        let max_sum = totals[i] + totals[j] - min_sum[j];
                        (1.0 - min_sum[j] / max_sum).clamp(0.0, 1.0)
                    }
                })
                .collect()
        })
        .collect();

    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            out.set(i, j, rows[i][j]);
            out.set(j, i, rows[i][j]);
        }
    }
    Ok(DistanceMatrix(out))
}
