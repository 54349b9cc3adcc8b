//! Cluster and per-camera proxy memories, rebuilt from the momentum bank at the
//! start of each epoch and frozen until the next rebuild.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterAssignment, PseudoLabel};
use crate::error::{IceError, Result};
use crate::math::{dot, l2_normalize, FeatureMatrix, UnitVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MemoryMode {
    /// One proxy per cluster.
    Agnostic,
    /// Cluster proxies plus one proxy per (cluster, camera).
    Aware,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterProxy {
    pub cluster_id: usize,
    pub vector: UnitVector,
    pub member_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraProxy {
    pub cluster_id: usize,
    pub camera_id: usize,
    pub vector: UnitVector,
    pub member_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyMemory {
    pub mode: MemoryMode,
    /// Indexed by cluster id.
    pub clusters: Vec<ClusterProxy>,
    /// Sorted by (cluster, camera); empty in agnostic mode.
    pub cameras: Vec<CameraProxy>,
    pub epoch: usize,
    by_cluster: Vec<std::ops::Range<usize>>,
}

impl ProxyMemory {
    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster_proxy(&self, cluster: usize) -> Result<&ClusterProxy> {
        self.clusters.get(cluster).ok_or(IceError::ProxyNotFound(cluster))
    }

    /// Camera proxies of one cluster, ordered by camera id.
    pub fn camera_proxies_of(&self, cluster: usize) -> &[CameraProxy] {
        match self.by_cluster.get(cluster) {
            Some(r) => &self.cameras[r.clone()],
            None => &[],
        }
    }
}

fn mean_direction(bank: &FeatureMatrix, members: &[usize]) -> Result<UnitVector> {
    let mut acc = vec![0.0; bank.cols()];
    for &i in members {
        for (a, v) in acc.iter_mut().zip(bank.row(i)) {
            *a += v;
        }
    }
    let inv = 1.0 / members.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    l2_normalize(&acc)
}

/// Averages the momentum representations of each cluster (and, in aware mode,
/// of each cluster-camera pair) and renormalizes. Outliers are ignored.
pub fn build_proxies(
    bank: &FeatureMatrix,
    assignment: &ClusterAssignment,
    cameras: &[usize],
    mode: MemoryMode,
    epoch: usize,
) -> Result<ProxyMemory> {
    if assignment.len() != bank.rows() || cameras.len() != bank.rows() {
        return Err(IceError::ShapeMismatch(format!(
            "bank has {} rows, {} labels, {} camera ids",
            bank.rows(),
            assignment.len(),
            cameras.len()
        )));
    }
    if assignment.cluster_count == 0 {
        return Err(IceError::NoClustersFound);
    }
    let members = assignment.members();
    let mut clusters = Vec::with_capacity(members.len());
    for (c, m) in members.iter().enumerate() {
        if m.is_empty() {
            return Err(IceError::ProxyNotFound(c));
        }
        clusters.push(ClusterProxy { cluster_id: c, vector: mean_direction(bank, m)?, member_count: m.len() });
    }

    let mut camera_proxies = Vec::new();
    let mut by_cluster = Vec::new();
    if mode == MemoryMode::Aware {
        let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (i, l) in assignment.labels.iter().enumerate() {
            if let PseudoLabel::Cluster(c) = l {
                groups.entry((*c, cameras[i])).or_default().push(i);
            }
        }
        by_cluster = vec![0..0; members.len()];
        for ((c, cam), m) in groups {
            let start = if by_cluster[c].is_empty() { camera_proxies.len() } else { by_cluster[c].start };
            camera_proxies.push(CameraProxy {
                cluster_id: c,
                camera_id: cam,
                vector: mean_direction(bank, &m)?,
                member_count: m.len(),
            });
            by_cluster[c] = start..camera_proxies.len();
        }
    }
    Ok(ProxyMemory { mode, clusters, cameras: camera_proxies, epoch, by_cluster })
}

/// The `n_neg` camera proxies of other clusters most similar to `anchor`,
/// most similar first (ties by memory order).
pub fn nearest_negative_proxies<'m>(
    memory: &'m ProxyMemory,
    anchor: &[f64],
    own_cluster: usize,
    n_neg: usize,
) -> Result<Vec<&'m CameraProxy>> {
    if memory.mode != MemoryMode::Aware {
        return Err(IceError::ModeMismatch);
    }
    if n_neg == 0 {
        return Err(IceError::InvalidConfig("n_neg must be at least 1".into()));
    }
    let mut scored: Vec<(f64, usize)> = memory
        .cameras
        .iter()
        .enumerate()
        .filter(|(_, p)| p.cluster_id != own_cluster)
        .map(|(i, p)| (dot(anchor, p.vector.as_slice()), i))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.truncate(n_neg);
    Ok(scored.into_iter().map(|(_, i)| &memory.cameras[i]).collect())
}
