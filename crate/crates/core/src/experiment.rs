//! Ablation grid and multi-seed summaries.

use serde::Serialize;

use crate::losses::LossWeights;
use crate::proxy::MemoryMode;
use crate::trainer::{TrainConfig, TrainOutcome};

/// One cell of the loss ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Variant {
    pub memory: MemoryMode,
    pub hard: bool,
    pub soft: bool,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match (self.hard, self.soft) {
            (false, false) => "baseline",
            (true, false) => "+hard",
            (false, true) => "+soft",
            (true, true) => "+both",
        }
    }

    pub fn memory_name(&self) -> &'static str {
        match self.memory {
            MemoryMode::Aware => "aware",
            MemoryMode::Agnostic => "agnostic",
        }
    }

    /// Base config with this memory mode and the disabled losses weighted 0.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            memory: self.memory,
            weights: LossWeights {
                hard: if self.hard { base.weights.hard } else { 0.0 },
                soft: if self.soft { base.weights.soft } else { 0.0 },
            },
            ..*base
        }
    }
}

/// Baseline, +hard, +soft, +both for the camera-aware then the agnostic memory.
pub fn ablation_grid() -> Vec<Variant> {
    [MemoryMode::Aware, MemoryMode::Agnostic]
        .into_iter()
        .flat_map(|memory| {
            [(false, false), (true, false), (false, true), (true, true)]
                .into_iter()
                .map(move |(hard, soft)| Variant { memory, hard, soft })
        })
        .collect()
}

/// Final-epoch figures of one run. Fields are NaN when unavailable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSummary {
    pub map: f64,
    pub rank1: f64,
    pub cluster_count: usize,
    pub mean_kl: f64,
}

impl RunSummary {
    pub fn of(outcome: &TrainOutcome) -> Self {
        let last = outcome.reports.last().expect("at least one epoch");
        Self {
            map: last.eval.map_or(f64::NAN, |e| e.map),
            rank1: last.eval.map_or(f64::NAN, |e| e.rank1),
            cluster_count: last.cluster_count,
            mean_kl: outcome.reports.iter().rev().find_map(|r| r.losses).map_or(f64::NAN, |l| l.mean_kl),
        }
    }
}

/// Median with the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}
