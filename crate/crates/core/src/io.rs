//! Metrics CSV and checkpoint files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IceError, Result};
use crate::trainer::{EpochReport, TrainState};

pub const METRICS_HEADER: &str =
    "epoch,n_clusters,n_outliers,L_agnostic,L_cross,L_h_ins,L_s_ins,L_total,mean_KL,mAP,rank1,rank5,rank10";

/// One CSV line without the trailing newline. Missing losses or evaluation
/// leave their columns blank.
pub fn metrics_row(r: &EpochReport) -> String {
    let mut row = format!("{},{},{}", r.epoch, r.cluster_count, r.outlier_count);
    match r.losses {
        Some(l) => {
            for v in [l.agnostic, l.cross, l.hard, l.soft, l.total, l.mean_kl] {
                let _ = write!(row, ",{v}");
            }
        }
        None => row.push_str(",,,,,,"),
    }
    match r.eval {
        Some(e) => {
            for v in [e.map, e.rank1, e.rank5, e.rank10] {
                let _ = write!(row, ",{v}");
            }
        }
        None => row.push_str(",,,,"),
    }
    row
}

pub fn metrics_csv(reports: &[EpochReport]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&metrics_row(r));
        out.push('\n');
    }
    out
}

const CHECKPOINT_FORMAT: &str = "ice-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    state: TrainState,
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let file = CheckpointFile { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, state: state.clone() };
    let text = serde_json::to_string(&file).map_err(|e| IceError::Checkpoint(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let text = fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| IceError::Checkpoint(e.to_string()))?;
    if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
        return Err(IceError::Checkpoint(format!("unsupported checkpoint {} v{}", file.format, file.version)));
    }
    if !file.state.pair.online.is_finite() || !file.state.pair.momentum.is_finite() {
        return Err(IceError::Checkpoint("non-finite parameters".into()));
    }
    Ok(file.state)
}
