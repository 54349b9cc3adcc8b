//! Cross-camera retrieval metrics and training curves.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{IceError, Result};
use crate::math::{dot, FeatureMatrix};

/// Embeddings with their true identities and cameras.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: FeatureMatrix,
    pub identities: Vec<usize>,
    pub cameras: Vec<usize>,
}

impl LabeledSet {
    pub fn new(features: FeatureMatrix, identities: Vec<usize>, cameras: Vec<usize>) -> Result<Self> {
        if identities.len() != features.rows() || cameras.len() != features.rows() {
            return Err(IceError::ShapeMismatch("identities and cameras must align with rows".into()));
        }
        Ok(Self { features, identities, cameras })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub map: f64,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub valid_queries: usize,
    pub excluded_queries: usize,
}

/// AP of a ranked relevance list.
pub fn average_precision(ranked_relevance: &[bool]) -> Result<f64> {
    let total = ranked_relevance.iter().filter(|&&r| r).count();
    if total == 0 {
        return Err(IceError::NoRelevantItems);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, _) in ranked_relevance.iter().enumerate().filter(|(_, &r)| r) {
        hits += 1;
        sum += hits as f64 / (i + 1) as f64;
    }
    Ok(sum / total as f64)
}

/// Relevance list of the filtered gallery ranked for one query, or `None` if
/// no valid match remains.
fn ranked_relevance(query: &LabeledSet, q: usize, gallery: &LabeledSet) -> Option<Vec<bool>> {
    let (qid, qcam) = (query.identities[q], query.cameras[q]);
    let mut kept: Vec<(f64, usize)> = (0..gallery.len())
        .filter(|&g| !(gallery.identities[g] == qid && gallery.cameras[g] == qcam))
        .map(|g| (dot(query.features.row(q), gallery.features.row(g)), g))
        .collect();
    kept.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let rel: Vec<bool> = kept.iter().map(|&(_, g)| gallery.identities[g] == qid).collect();
    rel.iter().any(|&r| r).then_some(rel)
}

/// mAP and CMC under the cross-camera protocol: gallery items sharing both
/// identity and camera with the query are ignored, and queries left without a
/// match are excluded and counted.
pub fn evaluate(query: &LabeledSet, gallery: &LabeledSet) -> Result<EvalReport> {
    if query.is_empty() || gallery.is_empty() {
        return Err(IceError::EmptyEvaluation);
    }
    if query.features.cols() != gallery.features.cols() {
        return Err(IceError::DimensionMismatch { expected: query.features.cols(), found: gallery.features.cols() });
    }
    let per_query: Vec<Option<(f64, usize)>> = (0..query.len())
        .into_par_iter()
        .map(|q| {
            let rel = ranked_relevance(query, q, gallery)?;
            let first = rel.iter().position(|&r| r).expect("has a match");
            Some((average_precision(&rel).expect("has a match"), first))
        })
        .collect();
    let valid: Vec<(f64, usize)> = per_query.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(IceError::EmptyEvaluation);
    }
    let n = valid.len() as f64;
    let cmc = |k: usize| valid.iter().filter(|&&(_, first)| first < k).count() as f64 / n;
    Ok(EvalReport {
        map: valid.iter().map(|&(ap, _)| ap).sum::<f64>() / n,
        rank1: cmc(1),
        rank5: cmc(5),
        rank10: cmc(10),
        valid_queries: valid.len(),
        excluded_queries: query.len() - valid.len(),
    })
}

/// Per-epoch curves of cluster count and mean consistency divergence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curves {
    pub cluster_counts: Vec<(usize, usize)>,
    pub mean_kl: Vec<(usize, Option<f64>)>,
}

pub fn diagnostics(reports: &[crate::trainer::EpochReport]) -> Curves {
    Curves {
        cluster_counts: reports.iter().map(|r| (r.epoch, r.cluster_count)).collect(),
        mean_kl: reports.iter().map(|r| (r.epoch, r.losses.map(|l| l.mean_kl))).collect(),
    }
}
