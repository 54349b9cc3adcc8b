//! Pseudo-label generation: DBSCAN over a precomputed k-reciprocal Jaccard
//! distance matrix.

use serde::{Deserialize, Serialize};

use crate::error::{IceError, Result};
use crate::math::FeatureMatrix;
use crate::rerank::{jaccard_distance_matrix, DistanceMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k1: usize,
    pub k2: usize,
    pub eps: f64,
    /// Neighborhood size for a core point, the point itself included.
    pub min_samples: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { k1: 30, k2: 6, eps: 0.55, min_samples: 4 }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k2 < 1 || self.k1 < self.k2 {
            return Err(IceError::InvalidConfig(format!("need k1 >= k2 >= 1, got k1={} k2={}", self.k1, self.k2)));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(IceError::InvalidConfig(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        if self.min_samples < 1 {
            return Err(IceError::InvalidConfig("min_samples must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PseudoLabel {
    Cluster(usize),
    Outlier,
}

impl PseudoLabel {
    pub fn cluster(self) -> Option<usize> {
        match self {
            PseudoLabel::Cluster(c) => Some(c),
            PseudoLabel::Outlier => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<PseudoLabel>,
    pub cluster_count: usize,
}

impl ClusterAssignment {
    pub fn all_outliers(n: usize) -> Self {
        Self { labels: vec![PseudoLabel::Outlier; n], cluster_count: 0 }
    }

    /// Builds an assignment from dense ids, e.g. ground-truth identities.
    pub fn from_ids(ids: &[usize]) -> Self {
        let mut remap = std::collections::BTreeMap::new();
        for &id in ids {
            let next = remap.len();
            remap.entry(id).or_insert(next);
        }
        let labels = ids.iter().map(|id| PseudoLabel::Cluster(remap[id])).collect();
        Self { labels, cluster_count: remap.len() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn outlier_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == PseudoLabel::Outlier).count()
    }

    /// Sample indices of each cluster, in index order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_count];
        for (i, l) in self.labels.iter().enumerate() {
            if let PseudoLabel::Cluster(c) = l {
                out[*c].push(i);
            }
        }
        out
    }
}

/// Density-based clustering over precomputed distances.
///
/// A point is core when at least `min_samples` points (itself included) lie
/// within `eps`. Points are visited in index order, cluster ids are assigned in
/// discovery order, and a border point joins the first cluster that reaches it.
pub fn dbscan(dist: &DistanceMatrix, eps: f64, min_samples: usize) -> ClusterAssignment {
    let n = dist.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist.get(i, j) <= eps).collect())
        .collect();
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_samples).collect();

    let mut labels = vec![PseudoLabel::Outlier; n];
    let mut cluster = 0;
    let mut queue = std::collections::VecDeque::new();
    for start in 0..n {
        if !is_core[start] || labels[start] != PseudoLabel::Outlier {
            continue;
        }
        labels[start] = PseudoLabel::Cluster(cluster);
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbors[p] {
                if labels[q] != PseudoLabel::Outlier {
                    continue;
                }
                labels[q] = PseudoLabel::Cluster(cluster);
                if is_core[q] {
                    queue.push_back(q);
                }
            }
        }
        cluster += 1;
    }
    ClusterAssignment { labels, cluster_count: cluster }
}

/// Jaccard re-ranking followed by DBSCAN.
pub fn generate_pseudo_labels(bank: &FeatureMatrix, config: &ClusterConfig) -> Result<ClusterAssignment> {
    config.validate()?;
    let n = bank.rows();
    if n < config.min_samples {
        return Ok(ClusterAssignment::all_outliers(n));
    }
    let dist = jaccard_distance_matrix(bank, config.k1, config.k2)?;
    Ok(dbscan(&dist, config.eps, config.min_samples))
}

/// Cluster and outlier counts for each `eps` on one bank, re-ranking once.
pub fn sweep_eps(bank: &FeatureMatrix, config: &ClusterConfig, eps_values: &[f64]) -> Result<Vec<(f64, usize, usize)>> {
    config.validate()?;
    for &eps in eps_values {
        ClusterConfig { eps, ..*config }.validate()?;
    }
    let n = bank.rows();
    if n < config.min_samples {
        return Ok(eps_values.iter().map(|&e| (e, 0, n)).collect());
    }
    let dist = jaccard_distance_matrix(bank, config.k1, config.k2)?;
    Ok(eps_values
        .iter()
        .map(|&eps| {
            let a = dbscan(&dist, eps, config.min_samples);
            (eps, a.cluster_count, a.outlier_count())
        })
        .collect())
}
