//! Epoch loop: bank extraction, clustering, proxy refresh, then PK iterations
//! with three encoder passes, optimizer step and moving-average update.

use std::time::Instant;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::cluster::{generate_pseudo_labels, ClusterAssignment, ClusterConfig};
use crate::data::EmbeddingDataset;
use crate::encoder::{backward, forward, Activation, AdamConfig, EncoderPair, EncoderParams, EncoderShape, OptimizerState};
use crate::error::{IceError, Result};
use crate::eval::{evaluate, EvalReport, LabeledSet};
use crate::losses::{
    cross_camera_loss, hard_instance_loss, proxy_agnostic_loss, soft_instance_loss, total_loss, Divergence,
    LossComponents, LossWeights, NegativeSet, Temperatures,
};
use crate::math::FeatureMatrix;
use crate::proxy::{build_proxies, MemoryMode, ProxyMemory};
use crate::sampler::{perturb, sample_pk_batch, BatchSpec, CameraStyles, IdentityBatch, PerturbationConfig};

/// Where training targets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelMode {
    Pseudo,
    /// True identities replace pseudo labels and clustering is skipped.
    Oracle,
}

/// Target distribution of the consistency loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConsistencyVariant {
    /// KL against the momentum encoder on clean inputs.
    Kl,
    /// Squared error against the momentum encoder on clean inputs.
    SquaredError,
    /// KL against the momentum encoder on a second perturbed view.
    StrongStrong,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub iterations: usize,
    pub batch: BatchSpec,
    pub temperatures: Temperatures,
    pub weights: LossWeights,
    pub cluster: ClusterConfig,
    pub perturbation: PerturbationConfig,
    pub alpha: f64,
    pub optimizer: AdamConfig,
    pub memory: MemoryMode,
    pub negatives: NegativeSet,
    pub consistency: ConsistencyVariant,
    pub n_neg: usize,
    pub hidden: usize,
    pub d_out: usize,
    pub activation: Activation,
    pub labels: LabelMode,
    /// Evaluate every this many epochs (and after the last one); 0 evaluates
    /// only after the last epoch.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            iterations: 50,
            batch: BatchSpec::default(),
            temperatures: Temperatures::default(),
            weights: LossWeights::default(),
            cluster: ClusterConfig::default(),
            perturbation: PerturbationConfig::default(),
            alpha: 0.999,
            optimizer: AdamConfig::default(),
            memory: MemoryMode::Aware,
            negatives: NegativeSet::All,
            consistency: ConsistencyVariant::Kl,
            n_neg: 50,
            hidden: 128,
            d_out: 32,
            activation: Activation::Tanh,
            labels: LabelMode::Pseudo,
            eval_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(IceError::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(IceError::InvalidMomentum(self.alpha));
        }
        if self.n_neg == 0 {
            return bad("n_neg must be at least 1");
        }
        if self.hidden == 0 || self.d_out == 0 {
            return bad("encoder widths must be at least 1");
        }
        let o = &self.optimizer;
        if !(o.base_lr >= 0.0 && o.weight_decay >= 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2))
            || !(o.eps > 0.0)
        {
            return bad("optimizer settings out of range");
        }
        self.batch.validate()?;
        self.temperatures.validate()?;
        self.weights.validate()?;
        self.cluster.validate()?;
        self.perturbation.validate()
    }

    pub fn shape(&self, d_in: usize) -> EncoderShape {
        EncoderShape { d_in, hidden: self.hidden, d_out: self.d_out }
    }
}

/// Mean losses over the iterations that ran in an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossMeans {
    pub agnostic: f64,
    pub cross: f64,
    pub hard: f64,
    pub soft: f64,
    pub total: f64,
    pub mean_kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub cluster_count: usize,
    pub outlier_count: usize,
    pub iterations_run: usize,
    pub iterations_skipped: usize,
    /// `None` when no iteration ran.
    pub losses: Option<LossMeans>,
    pub eval: Option<EvalReport>,
    pub wall_time_secs: f64,
}

/// Query and gallery splits with true identities.
#[derive(Debug, Clone, Copy)]
pub struct EvalSplits<'a> {
    pub query: &'a EmbeddingDataset,
    pub gallery: &'a EmbeddingDataset,
}

/// Momentum-encoder forward over every sample, in dataset order.
pub fn extract_bank(pair: &EncoderPair, features: &FeatureMatrix) -> Result<FeatureMatrix> {
    if features.rows() == 0 {
        return Err(IceError::EmptyDataset);
    }
    forward(&pair.momentum, features)
}

/// Evaluates an encoder on labelled query and gallery splits.
pub fn evaluate_encoder(params: &EncoderParams, splits: EvalSplits<'_>) -> Result<EvalReport> {
    let embed = |d: &EmbeddingDataset| -> Result<LabeledSet> {
        let ids = d
            .identities()
            .ok_or_else(|| IceError::InvalidConfig("evaluation requires identity labels on every record".into()))?;
        LabeledSet::new(forward(params, &d.features())?, ids, d.cameras())
    };
    evaluate(&embed(splits.query)?, &embed(splits.gallery)?)
}

/// Seeds for independent random streams, mixed from the master seed and tags.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    tags.iter().fold(mix(master), |acc, &t| mix(acc ^ mix(t)))
}

const STREAM_INIT: u64 = 0;
const STREAM_BATCH: u64 = 1;
const STREAM_VIEW: u64 = 2;
const STREAM_TARGET_VIEW: u64 = 3;

/// Losses of one successful iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLosses {
    pub agnostic: f64,
    pub cross: f64,
    pub hard: f64,
    pub soft: f64,
    pub total: f64,
    pub mean_kl: f64,
}

/// Checkpointable training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: TrainConfig,
    pub pair: EncoderPair,
    pub optimizer: OptimizerState,
    /// Index of the next epoch to run.
    pub epoch: usize,
    pub empty_epochs: usize,
}

impl TrainState {
    pub fn new(config: TrainConfig, d_in: usize) -> Result<Self> {
        config.validate()?;
        let shape = config.shape(d_in);
        let online = EncoderParams::init(shape, config.activation, derive_seed(config.seed, &[STREAM_INIT]));
        Ok(Self {
            pair: EncoderPair::new(online, config.alpha)?,
            optimizer: OptimizerState::new(config.optimizer, shape),
            config,
            epoch: 0,
            empty_epochs: 0,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }
}

/// Per-epoch targets derived from the epoch-start momentum encoder.
pub struct EpochTargets {
    pub assignment: ClusterAssignment,
    pub proxies: Option<ProxyMemory>,
}

/// Inputs that stay fixed across epochs.
pub struct TrainData {
    pub features: FeatureMatrix,
    pub cameras: Vec<usize>,
    identities: Option<Vec<usize>>,
    styles: CameraStyles,
}

impl TrainData {
    pub fn new(dataset: &EmbeddingDataset, labels: LabelMode) -> Result<Self> {
        if dataset.records.is_empty() {
            return Err(IceError::EmptyDataset);
        }
        let features = dataset.features();
        let cameras = dataset.cameras();
        let identities = match labels {
            LabelMode::Pseudo => None,
            LabelMode::Oracle => Some(dataset.identities().ok_or_else(|| {
                IceError::InvalidConfig("oracle labels require identity ids on every training record".into())
            })?),
        };
        let styles = CameraStyles::estimate(&features, &cameras)?;
        Ok(Self { features, cameras, identities, styles })
    }
}

pub fn epoch_targets(state: &TrainState, data: &TrainData) -> Result<EpochTargets> {
    let config = &state.config;
    let bank = extract_bank(&state.pair, &data.features)?;
    let assignment = match &data.identities {
        Some(ids) => ClusterAssignment::from_ids(ids),
        None => generate_pseudo_labels(&bank, &config.cluster)?,
    };
    let proxies = if assignment.cluster_count == 0 {
        None
    } else {
        Some(build_proxies(&bank, &assignment, &data.cameras, config.memory, state.epoch)?)
    };
    Ok(EpochTargets { assignment, proxies })
}

/// One optimisation step on a PK batch.
pub fn train_iteration(
    state: &mut TrainState,
    data: &TrainData,
    proxies: &ProxyMemory,
    batch: &IdentityBatch,
    view_seed: u64,
    target_seed: u64,
) -> Result<IterationLosses> {
    let config = state.config;
    let clean = data.features.select_rows(&batch.indices);
    let cams: Vec<usize> = batch.indices.iter().map(|&i| data.cameras[i]).collect();
    let view = perturb(&clean, &cams, Some(&data.styles), &config.perturbation, view_seed)?;

    let f = forward(&state.pair.online, &view)?;
    let m_aug = forward(&state.pair.momentum, &view)?;
    let target = match config.consistency {
        ConsistencyVariant::StrongStrong => {
            let second = perturb(&clean, &cams, Some(&data.styles), &config.perturbation, target_seed)?;
            forward(&state.pair.momentum, &second)?
        }
        _ => forward(&state.pair.momentum, &clean)?,
    };

    let t = config.temperatures;
    let agnostic = proxy_agnostic_loss(&f, &batch.labels, proxies, t.agnostic)?;
    let cross = match config.memory {
        MemoryMode::Aware => Some(cross_camera_loss(&f, &batch.labels, &cams, proxies, t.cross, config.n_neg)?),
        MemoryMode::Agnostic => None,
    };
    let hard = hard_instance_loss(&f, &m_aug, &batch.labels, t.hard, config.negatives)?;
    let divergence = match config.consistency {
        ConsistencyVariant::SquaredError => Divergence::SquaredError,
        _ => Divergence::Kl,
    };
    let (soft, dists) = soft_instance_loss(&f, &m_aug, &target, t.soft, divergence)?;
    let mean_kl = crate::losses::mean_kl(&dists);
    let breakdown = total_loss(&LossComponents { agnostic, cross, hard, soft }, &config.weights)?;

    let grads = backward(&state.pair.online, &view, &breakdown.grad)?;
    state.optimizer.step(&mut state.pair.online, &grads, state.epoch)?;
    state.pair.ema_update()?;
    Ok(IterationLosses {
        agnostic: breakdown.agnostic,
        cross: breakdown.cross,
        hard: breakdown.hard,
        soft: breakdown.soft,
        total: breakdown.total,
        mean_kl,
    })
}

/// Runs the next epoch and advances `state.epoch`.
pub fn run_epoch(state: &mut TrainState, data: &TrainData, eval: Option<EvalSplits<'_>>) -> Result<EpochReport> {
    let start = Instant::now();
    let config = state.config;
    let epoch = state.epoch;
    let targets = epoch_targets(state, data)?;
    let cluster_count = targets.assignment.cluster_count;
    let outlier_count = targets.assignment.outlier_count();
    info!("epoch {epoch}: {cluster_count} clusters, {outlier_count} outliers");

    let mut run = Vec::with_capacity(config.iterations);
    let mut skipped = 0;
    match &targets.proxies {
        None => {
            state.empty_epochs += 1;
            skipped = config.iterations;
            warn!("epoch {epoch}: no clusters found");
            if state.empty_epochs > 3 {
                return Err(IceError::TrainingAborted(epoch));
            }
        }
        Some(proxies) => {
            state.empty_epochs = 0;
            for it in 0..config.iterations {
                let tag = [epoch as u64, it as u64];
                let step = sample_pk_batch(
                    &targets.assignment,
                    config.batch,
                    derive_seed(config.seed, &[STREAM_BATCH, tag[0], tag[1]]),
                )
                .and_then(|batch| {
                    train_iteration(
                        state,
                        data,
                        proxies,
                        &batch,
                        derive_seed(config.seed, &[STREAM_VIEW, tag[0], tag[1]]),
                        derive_seed(config.seed, &[STREAM_TARGET_VIEW, tag[0], tag[1]]),
                    )
                });
                match step {
                    Ok(l) => run.push(l),
                    Err(e @ (IceError::NoNegatives | IceError::InsufficientClusters { .. })) => {
                        debug!("epoch {epoch} iteration {it} skipped: {e}");
                        skipped += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }

    let losses = (!run.is_empty()).then(|| {
        let n = run.len() as f64;
        let mean = |f: fn(&IterationLosses) -> f64| run.iter().map(f).sum::<f64>() / n;
        LossMeans {
            agnostic: mean(|l| l.agnostic),
            cross: mean(|l| l.cross),
            hard: mean(|l| l.hard),
            soft: mean(|l| l.soft),
            total: mean(|l| l.total),
            mean_kl: mean(|l| l.mean_kl),
        }
    });
    state.epoch += 1;
    let due = state.is_finished() || (config.eval_every > 0 && state.epoch % config.eval_every == 0);
    let eval = match eval {
        Some(splits) if due => Some(evaluate_encoder(&state.pair.momentum, splits)?),
        _ => None,
    };
    Ok(EpochReport {
        epoch,
        cluster_count,
        outlier_count,
        iterations_run: run.len(),
        iterations_skipped: skipped,
        losses,
        eval,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Final state and per-epoch reports of a full run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub reports: Vec<EpochReport>,
}

impl TrainOutcome {
    /// The inference model.
    pub fn model(&self) -> &EncoderParams {
        &self.state.pair.momentum
    }
}

/// Trains from scratch, calling `on_epoch` after every epoch.
pub fn train_with<F>(
    config: TrainConfig,
    dataset: &EmbeddingDataset,
    eval: Option<EvalSplits<'_>>,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochReport, &TrainState) -> Result<()>,
{
    let data = TrainData::new(dataset, config.labels)?;
    let mut state = TrainState::new(config, dataset.dim)?;
    let mut reports = Vec::with_capacity(config.epochs);
    while !state.is_finished() {
        let report = run_epoch(&mut state, &data, eval)?;
        on_epoch(&report, &state)?;
        reports.push(report);
    }
    Ok(TrainOutcome { state, reports })
}

pub fn train(config: TrainConfig, dataset: &EmbeddingDataset, eval: Option<EvalSplits<'_>>) -> Result<TrainOutcome> {
    train_with(config, dataset, eval, |_, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn small_spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec { identities: 10, cameras: 3, samples_per_camera: 4, seed, ..SyntheticSpec::default() }
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            iterations: 3,
            batch: BatchSpec { identities: 4, instances: 4 },
            cluster: ClusterConfig { k1: 10, k2: 3, ..ClusterConfig::default() },
            hidden: 16,
            d_out: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { alpha: 1.5, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn seeds_differ_per_stream() {
        let a = derive_seed(7, &[STREAM_BATCH, 0, 0]);
        assert_ne!(a, derive_seed(7, &[STREAM_VIEW, 0, 0]));
        assert_ne!(a, derive_seed(7, &[STREAM_BATCH, 0, 1]));
        assert_ne!(a, derive_seed(8, &[STREAM_BATCH, 0, 0]));
        assert_eq!(a, derive_seed(7, &[STREAM_BATCH, 0, 0]));
    }

    #[test]
    fn bank_matches_per_sample_forward() {
        let splits = generate_synthetic(&small_spec(1)).unwrap();
        let state = TrainState::new(small_config(), splits.train.dim).unwrap();
        let x = splits.train.features();
        let bank = extract_bank(&state.pair, &x).unwrap();
        for i in [0, 7, 19] {
            let one = forward(&state.pair.momentum, &x.select_rows(&[i])).unwrap();
            assert_eq!(one.row(0), bank.row(i));
        }
        assert_eq!(bank, extract_bank(&state.pair, &x).unwrap());
    }

    #[test]
    fn zero_iterations_leave_parameters_unchanged() {
        let splits = generate_synthetic(&small_spec(2)).unwrap();
        let config = TrainConfig { epochs: 1, iterations: 0, ..small_config() };
        let out = train(config, &splits.train, None).unwrap();
        let fresh = TrainState::new(config, splits.train.dim).unwrap();
        assert_eq!(out.state.pair, fresh.pair);
        assert_eq!(out.reports.len(), 1);
        assert!(out.reports[0].losses.is_none());
    }

    #[test]
    fn frozen_momentum_with_unit_alpha() {
        let splits = generate_synthetic(&small_spec(3)).unwrap();
        let config = TrainConfig { alpha: 1.0, labels: LabelMode::Oracle, ..small_config() };
        let data = TrainData::new(&splits.train, config.labels).unwrap();
        let mut state = TrainState::new(config, splits.train.dim).unwrap();
        let before = state.pair.clone();
        let targets = epoch_targets(&state, &data).unwrap();
        let batch = sample_pk_batch(&targets.assignment, config.batch, 1).unwrap();
        train_iteration(&mut state, &data, targets.proxies.as_ref().unwrap(), &batch, 2, 3).unwrap();
        assert_eq!(state.pair.momentum, before.momentum);
        assert_ne!(state.pair.online, before.online);
    }

    #[test]
    fn momentum_stays_between_previous_and_online() {
        let splits = generate_synthetic(&small_spec(4)).unwrap();
        let config = TrainConfig { alpha: 0.9, labels: LabelMode::Oracle, ..small_config() };
        let data = TrainData::new(&splits.train, config.labels).unwrap();
        let mut state = TrainState::new(config, splits.train.dim).unwrap();
        let targets = epoch_targets(&state, &data).unwrap();
        for it in 0..3 {
            let prev = state.pair.momentum.clone();
            let batch = sample_pk_batch(&targets.assignment, config.batch, it).unwrap();
            train_iteration(&mut state, &data, targets.proxies.as_ref().unwrap(), &batch, it + 10, it + 20).unwrap();
            for ((m, p), o) in state.pair.momentum.values.iter().zip(&prev.values).zip(&state.pair.online.values) {
                assert!(*m >= p.min(*o) - 1e-15 && *m <= p.max(*o) + 1e-15);
            }
        }
    }

    #[test]
    fn fixed_seed_reports_are_identical() {
        let splits = generate_synthetic(&small_spec(5)).unwrap();
        let config = TrainConfig { labels: LabelMode::Oracle, ..small_config() };
        let strip = |mut r: Vec<EpochReport>| {
            r.iter_mut().for_each(|x| x.wall_time_secs = 0.0);
            r
        };
        let a = train(config, &splits.train, None).unwrap();
        let b = train(config, &splits.train, None).unwrap();
        assert_eq!(strip(a.reports), strip(b.reports));
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn insufficient_clusters_are_skipped_and_counted() {
        let splits = generate_synthetic(&small_spec(6)).unwrap();
        let config = TrainConfig {
            batch: BatchSpec { identities: 11, instances: 2 },
            labels: LabelMode::Oracle,
            ..small_config()
        };
        let out = train(config, &splits.train, None).unwrap();
        assert!(out.reports.iter().all(|r| r.iterations_skipped == 3 && r.iterations_run == 0));
    }

    #[test]
    fn aborts_after_repeated_empty_epochs() {
        let splits = generate_synthetic(&small_spec(7)).unwrap();
        let config = TrainConfig {
            epochs: 6,
            cluster: ClusterConfig { eps: 1e-9, ..small_config().cluster },
            ..small_config()
        };
        let r = train(config, &splits.train, None);
        assert!(matches!(r, Err(IceError::TrainingAborted(3))), "{:?}", r.map(|o| o.reports));
    }

    #[test]
    fn oracle_mode_needs_identities() {
        let mut splits = generate_synthetic(&small_spec(8)).unwrap();
        splits.train.records[0].identity = None;
        assert!(TrainData::new(&splits.train, LabelMode::Oracle).is_err());
        assert!(TrainData::new(&splits.train, LabelMode::Pseudo).is_ok());
    }

    #[test]
    fn evaluation_on_last_epoch() {
        let splits = generate_synthetic(&small_spec(9)).unwrap();
        let config = TrainConfig { eval_every: 0, labels: LabelMode::Oracle, ..small_config() };
        let eval = EvalSplits { query: &splits.query, gallery: &splits.gallery };
        let out = train(config, &splits.train, Some(eval)).unwrap();
        assert!(out.reports[0].eval.is_none());
        let r = out.reports[1].eval.unwrap();
        assert!((0.0..=1.0).contains(&r.map));
    }
}
