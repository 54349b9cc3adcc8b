//! Identity-balanced mini-batch sampling over clustered inliers, and the
//! feature-space perturbation used as the strong augmentation.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::error::{IceError, Result};
use crate::math::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    /// Pseudo identities per batch.
    pub identities: usize,
    /// Instances per identity.
    pub instances: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self { identities: 8, instances: 4 }
    }
}

impl BatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.identities < 2 || self.instances < 2 {
            return Err(IceError::InvalidConfig(format!(
                "batch needs at least 2 identities x 2 instances, got {}x{}",
                self.identities, self.instances
            )));
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.identities * self.instances
    }
}

/// Sample indices laid out identity-major: `instances` consecutive entries per
/// pseudo label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityBatch {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Draws `spec.identities` clusters without replacement, then `spec.instances`
/// members from each. A cluster with fewer members than needed contributes all
/// of them once and fills the rest by drawing with replacement.
pub fn sample_pk_batch(assignment: &ClusterAssignment, spec: BatchSpec, seed: u64) -> Result<IdentityBatch> {
    spec.validate()?;
    let members = assignment.members();
    if members.len() < spec.identities {
        return Err(IceError::InsufficientClusters { needed: spec.identities, found: members.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = index::sample(&mut rng, members.len(), spec.identities);
    let mut indices = Vec::with_capacity(spec.size());
    let mut labels = Vec::with_capacity(spec.size());
    for c in chosen.iter() {
        let pool = &members[c];
        if pool.len() >= spec.instances {
            indices.extend(index::sample(&mut rng, pool.len(), spec.instances).iter().map(|k| pool[k]));
        } else {
            let mut picks = pool.clone();
            picks.shuffle(&mut rng);
            while picks.len() < spec.instances {
                picks.push(pool[rng.random_range(0..pool.len())]);
            }
            indices.extend(picks);
        }
        labels.extend(std::iter::repeat_n(c, spec.instances));
    }
    Ok(IdentityBatch { indices, labels })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    /// Std of the isotropic Gaussian noise, per coordinate.
    pub noise_sigma: f64,
    /// Fraction of coordinates zeroed in every row.
    pub dropout: f64,
    /// Probability of swapping a row's camera style for a random camera's.
    pub restyle_prob: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self { noise_sigma: 0.1, dropout: 0.15, restyle_prob: 0.5 }
    }
}

impl PerturbationConfig {
    pub fn none() -> Self {
        Self { noise_sigma: 0.0, dropout: 0.0, restyle_prob: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) {
            return Err(IceError::InvalidConfig("noise sigma must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(IceError::InvalidConfig("dropout must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.restyle_prob) {
            return Err(IceError::InvalidConfig("restyle probability must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-camera style offsets estimated from unlabeled features: the camera's
/// mean feature minus the global mean.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraStyles {
    offsets: Vec<Vec<f64>>,
}

impl CameraStyles {
    pub fn estimate(features: &FeatureMatrix, cameras: &[usize]) -> Result<Self> {
        if cameras.len() != features.rows() {
            return Err(IceError::ShapeMismatch("one camera id per feature row".into()));
        }
        let d = features.cols();
        let n_cam = cameras.iter().max().map_or(0, |m| m + 1);
        let mut sums = vec![vec![0.0; d]; n_cam];
        let mut counts = vec![0usize; n_cam];
        let mut global = vec![0.0; d];
        for (row, &c) in features.iter_rows().zip(cameras) {
            counts[c] += 1;
            for k in 0..d {
                sums[c][k] += row[k];
                global[k] += row[k];
            }
        }
        global.iter_mut().for_each(|g| *g /= features.rows().max(1) as f64);
        let offsets = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &n)| {
                if n == 0 {
                    vec![0.0; d]
                } else {
                    s.iter().zip(&global).map(|(v, g)| v / n as f64 - g).collect()
                }
            })
            .collect();
        Ok(Self { offsets })
    }

    pub fn camera_count(&self) -> usize {
        self.offsets.len()
    }

    pub fn offset(&self, camera: usize) -> &[f64] {
        &self.offsets[camera]
    }
}

/// Strong augmentation in feature space. Per row, in order: camera restyle
/// (with probability `restyle_prob`, when `styles` is given), additive
/// Gaussian noise, then zeroing of `round(dropout * d)` random coordinates.
/// Output rows are not renormalized.
pub fn perturb(
    features: &FeatureMatrix,
    cameras: &[usize],
    styles: Option<&CameraStyles>,
    config: &PerturbationConfig,
    seed: u64,
) -> Result<FeatureMatrix> {
    config.validate()?;
    if cameras.len() != features.rows() {
        return Err(IceError::ShapeMismatch("one camera id per feature row".into()));
    }
    let mut out = features.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = features.cols();
    let n_drop = ((config.dropout * d as f64).round() as usize).min(d);
    let noise = Normal::new(0.0, config.noise_sigma).map_err(|e| IceError::InvalidConfig(e.to_string()))?;
    for (r, &cam) in cameras.iter().enumerate() {
        let row = out.row_mut(r);
        if let Some(st) = styles.filter(|s| s.camera_count() > 0 && config.restyle_prob > 0.0) {
            if rng.random_bool(config.restyle_prob) {
                let to = rng.random_range(0..st.camera_count());
                if cam < st.camera_count() {
                    for ((x, a), b) in row.iter_mut().zip(st.offset(to)).zip(st.offset(cam)) {
                        *x += a - b;
                    }
                }
            }
        }
        if config.noise_sigma > 0.0 {
            for x in row.iter_mut() {
                *x += noise.sample(&mut rng);
            }
        }
        if n_drop > 0 {
            for k in index::sample(&mut rng, d, n_drop).iter() {
                row[k] = 0.0;
            }
        }
    }
    Ok(out)
}
