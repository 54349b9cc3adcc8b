//! Embedding datasets: synthetic generation and the text file format.
//!
//! File layout:
//!
//! ```text
//! # ice-embedding-dataset v1
//! dim 4
//! records 2
//! cameras 2
//! s0 3 0 0.1 0.2 0.3 0.4
//! s1 ? 1 0.5 0.6 0.7 0.8
//! ```
//!
//! Each record line is: sample id, identity id or `?`, camera id, then `dim`
//! reals written in shortest round-trip form.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{IceError, Result};
use crate::math::{normalize_in_place, Matrix};

pub const FORMAT_HEADER: &str = "# ice-embedding-dataset v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    /// Only the evaluator and oracle-label training may read this.
    pub identity: Option<usize>,
    pub camera: usize,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    pub dim: usize,
    pub records: Vec<Record>,
}

impl EmbeddingDataset {
    /// Checks uniform dimension and unique ids.
    pub fn new(dim: usize, records: Vec<Record>) -> Result<Self> {
        if records.is_empty() {
            return Err(IceError::EmptyDataset);
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.features.len() != dim {
                return Err(IceError::DimensionMismatch { expected: dim, found: r.features.len() });
            }
            if !seen.insert(r.id.as_str()) {
                return Err(IceError::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self { dim, records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn features(&self) -> Matrix {
        let data = self.records.iter().flat_map(|r| r.features.iter().copied()).collect();
        Matrix::new(self.records.len(), self.dim, data).expect("uniform dimension")
    }

    pub fn cameras(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.camera).collect()
    }

    /// All identity ids, or `None` if any record lacks one.
    pub fn identities(&self) -> Option<Vec<usize>> {
        self.records.iter().map(|r| r.identity).collect()
    }

    pub fn camera_count(&self) -> usize {
        self.records.iter().map(|r| r.camera + 1).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub identities: usize,
    pub cameras: usize,
    pub samples_per_camera: usize,
    pub dim: usize,
    /// Norm of every identity center.
    pub center_scale: f64,
    /// Expected norm of the per-sample noise vector.
    pub sigma_id: f64,
    /// Expected norm of each camera offset vector.
    pub sigma_cam: f64,
    /// Identities held out for the query and gallery splits.
    pub test_identities: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            identities: 20,
            cameras: 4,
            samples_per_camera: 8,
            dim: 64,
            center_scale: 1.0,
            sigma_id: 0.5,
            sigma_cam: 0.8,
            test_identities: 20,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.identities == 0 || self.cameras == 0 || self.samples_per_camera == 0 || self.dim == 0 {
            return Err(IceError::InvalidConfig("synthetic counts must be at least 1".into()));
        }
        if !(self.center_scale >= 0.0 && self.sigma_id >= 0.0 && self.sigma_cam >= 0.0) {
            return Err(IceError::InvalidConfig("synthetic scales must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigWarning {
    SmallDimension(usize),
    NoTestIdentities,
}

impl fmt::Display for ConfigWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SmallDimension(d) => write!(f, "dim {d} is below 8; identities may not be separable"),
            Self::NoTestIdentities => write!(f, "no test identities; query and gallery are empty"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSplits {
    pub train: EmbeddingDataset,
    /// First sample of every (identity, camera) pair of the test identities.
    pub query: EmbeddingDataset,
    /// Remaining samples of the test identities.
    pub gallery: EmbeddingDataset,
    /// Identity centers, train identities first.
    pub centers: Matrix,
    pub warnings: Vec<ConfigWarning>,
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    let s = scale / (d as f64).sqrt();
    (0..d).map(|_| s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect()
}

/// Sample = identity center + camera offset + Gaussian noise. Centers lie on a
/// sphere of radius `center_scale`; camera offsets are shared by all identities.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticSplits> {
    spec.validate()?;
    let mut warnings = Vec::new();
    if spec.dim < 8 {
        warnings.push(ConfigWarning::SmallDimension(spec.dim));
    }
    if spec.test_identities == 0 {
        warnings.push(ConfigWarning::NoTestIdentities);
    }
    let d = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.identities + spec.test_identities;
    let mut centers = Matrix::zeros(total, d);
    for i in 0..total {
        let mut c = gaussian(&mut rng, d, 1.0);
        normalize_in_place(&mut c)?;
        for (dst, v) in centers.row_mut(i).iter_mut().zip(c) {
            *dst = spec.center_scale * v;
        }
    }
    let offsets: Vec<Vec<f64>> = (0..spec.cameras).map(|_| gaussian(&mut rng, d, spec.sigma_cam)).collect();

    let mut train = Vec::new();
    let mut query = Vec::new();
    let mut gallery = Vec::new();
    for id in 0..total {
        for (cam, offset) in offsets.iter().enumerate() {
            for k in 0..spec.samples_per_camera {
                let noise = gaussian(&mut rng, d, spec.sigma_id);
                let features: Vec<f64> =
                    centers.row(id).iter().zip(offset).zip(noise).map(|((c, o), n)| c + o + n).collect();
                let held_out = id >= spec.identities;
                let split = if !held_out { "train" } else if k == 0 { "query" } else { "gallery" };
                let record = Record { id: format!("{split}-{id:04}-c{cam}-{k}"), identity: Some(id), camera: cam, features };
                match split {
                    "train" => train.push(record),
                    "query" => query.push(record),
                    _ => gallery.push(record),
                }
            }
        }
    }
    let build = |records: Vec<Record>| -> Result<EmbeddingDataset> {
        if records.is_empty() {
            Ok(EmbeddingDataset { dim: d, records })
        } else {
            EmbeddingDataset::new(d, records)
        }
    };
    Ok(SyntheticSplits { train: build(train)?, query: build(query)?, gallery: build(gallery)?, centers, warnings })
}

pub fn write_dataset(dataset: &EmbeddingDataset) -> String {
    let mut out = String::new();
    let cameras = dataset.camera_count();
    let _ = writeln!(out, "{FORMAT_HEADER}\ndim {}\nrecords {}\ncameras {cameras}", dataset.dim, dataset.len());
    for r in &dataset.records {
        out.push_str(&r.id);
        match r.identity {
            Some(id) => {
                let _ = write!(out, " {id}");
            }
            None => out.push_str(" ?"),
        }
        let _ = write!(out, " {}", r.camera);
        for v in &r.features {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

pub fn save_dataset(dataset: &EmbeddingDataset, path: &Path) -> Result<()> {
    fs::write(path, write_dataset(dataset))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<EmbeddingDataset> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, path)
}

pub fn parse_dataset(text: &str, path: &Path) -> Result<EmbeddingDataset> {
    let err = |line: usize, msg: String| IceError::Parse { path: path.to_path_buf(), line, msg };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty());
    let Some((n, first)) = lines.next() else {
        return Err(IceError::EmptyDataset);
    };
    if first.trim() != FORMAT_HEADER {
        return Err(err(n, format!("expected header `{FORMAT_HEADER}`")));
    }
    let mut header = |key: &str| -> Result<usize> {
        let (n, line) = lines.next().ok_or_else(|| err(n + 1, format!("missing `{key}` line")))?;
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(v), None) if k == key => v.parse().map_err(|_| err(n, format!("bad `{key}` value `{v}`"))),
            _ => Err(err(n, format!("expected `{key} <count>`"))),
        }
    };
    let dim = header("dim")?;
    let count = header("records")?;
    let cameras = header("cameras")?;
    if count == 0 {
        return Err(IceError::EmptyDataset);
    }
    let mut records = Vec::with_capacity(count);
    let mut seen = HashSet::with_capacity(count);
    for (n, line) in lines {
        let mut parts = line.split_whitespace();
        let id = parts.next().expect("nonblank line").to_string();
        let identity = match parts.next() {
            Some("?") => None,
            Some(v) => Some(v.parse().map_err(|_| err(n, format!("bad identity `{v}`")))?),
            None => return Err(err(n, "missing identity".into())),
        };
        let camera: usize = match parts.next() {
            Some(v) => v.parse().map_err(|_| err(n, format!("bad camera `{v}`")))?,
            None => return Err(err(n, "missing camera".into())),
        };
        if camera >= cameras {
            return Err(err(n, format!("camera {camera} outside 0..{cameras}")));
        }
        let features = parts
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| err(n, format!("bad value `{v}`"))))
            .collect::<Result<Vec<f64>>>()?;
        if features.len() != dim {
            return Err(err(n, format!("expected {dim} values, found {}", features.len())));
        }
        if !seen.insert(id.clone()) {
            return Err(IceError::DuplicateId(id));
        }
        records.push(Record { id, identity, camera, features });
    }
    if records.len() != count {
        return Err(err(0, format!("header declares {count} records, found {}", records.len())));
    }
    EmbeddingDataset::new(dim, records)
}
