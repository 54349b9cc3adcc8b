//! `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys not listed in
//! [`KEYS`] are rejected unless the caller accepts them as extras.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::encoder::Activation;
use crate::error::{IceError, Result};
use crate::losses::NegativeSet;
use crate::proxy::MemoryMode;
use crate::trainer::{ConsistencyVariant, LabelMode, TrainConfig};

/// Environment variable that replaces the default master seed.
pub const SEED_ENV: &str = "ICE_SEED";

/// Every configuration key with a short description.
pub const KEYS: &[(&str, &str)] = &[
    ("epochs", "training epochs"),
    ("iterations", "iterations per epoch"),
    ("batch_identities", "pseudo identities per batch"),
    ("batch_instances", "instances per identity"),
    ("tau_agnostic", "temperature of the cluster proxy loss"),
    ("tau_cross", "temperature of the cross-camera proxy loss"),
    ("tau_hard", "temperature of the hard instance loss"),
    ("tau_soft", "temperature of the consistency distributions"),
    ("lambda_hard", "weight of the hard instance loss"),
    ("lambda_soft", "weight of the soft instance loss"),
    ("k1", "k-reciprocal neighbourhood size"),
    ("k2", "query expansion size"),
    ("eps", "DBSCAN radius on the Jaccard distance"),
    ("min_samples", "DBSCAN core size, self included"),
    ("noise_sigma", "feature noise std of the strong view"),
    ("dropout", "fraction of coordinates zeroed in the strong view"),
    ("restyle_prob", "probability of swapping the camera style"),
    ("alpha", "momentum encoder moving-average rate"),
    ("lr", "base learning rate"),
    ("warmup_epochs", "linear warmup epochs"),
    ("weight_decay", "decoupled weight decay"),
    ("beta1", "Adam first moment rate"),
    ("beta2", "Adam second moment rate"),
    ("adam_eps", "Adam denominator epsilon"),
    ("memory", "proxy memory: aware | agnostic"),
    ("negatives", "hard loss denominator: all | hardest"),
    ("consistency", "soft loss target: kl | mse | strong-strong"),
    ("n_neg", "negative camera proxies per positive"),
    ("hidden", "encoder hidden width"),
    ("d_out", "embedding dimension"),
    ("activation", "hidden activation: tanh | identity"),
    ("labels", "training targets: pseudo | oracle"),
    ("eval_every", "evaluate every N epochs (0 = last epoch only)"),
    ("seed", "master seed"),
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| IceError::InvalidConfig(format!("bad value `{value}` for `{key}`")))
}

fn choice<T: Copy>(key: &str, value: &str, options: &[(&str, T)]) -> Result<T> {
    options.iter().find(|(name, _)| *name == value).map(|&(_, v)| v).ok_or_else(|| {
        let names: Vec<_> = options.iter().map(|(n, _)| *n).collect();
        IceError::InvalidConfig(format!("`{key}` must be one of {}, got `{value}`", names.join(", ")))
    })
}

const MEMORY: &[(&str, MemoryMode)] = &[("aware", MemoryMode::Aware), ("agnostic", MemoryMode::Agnostic)];
const NEGATIVES: &[(&str, NegativeSet)] = &[("all", NegativeSet::All), ("hardest", NegativeSet::Hardest)];
const CONSISTENCY: &[(&str, ConsistencyVariant)] = &[
    ("kl", ConsistencyVariant::Kl),
    ("mse", ConsistencyVariant::SquaredError),
    ("strong-strong", ConsistencyVariant::StrongStrong),
];
const ACTIVATION: &[(&str, Activation)] = &[("tanh", Activation::Tanh), ("identity", Activation::Identity)];
const LABELS: &[(&str, LabelMode)] = &[("pseudo", LabelMode::Pseudo), ("oracle", LabelMode::Oracle)];

fn name_of<T: PartialEq>(options: &[(&'static str, T)], v: &T) -> &'static str {
    options.iter().find(|(_, o)| o == v).map(|(n, _)| *n).expect("every variant is named")
}

impl TrainConfig {
    /// Defaults, with the seed taken from `ICE_SEED` when set.
    pub fn from_env() -> Result<Self> {
        let mut c = Self::default();
        if let Ok(v) = std::env::var(SEED_ENV) {
            c.seed = parse_num(SEED_ENV, v.trim())?;
        }
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "epochs" => self.epochs = parse_num(key, v)?,
            "iterations" => self.iterations = parse_num(key, v)?,
            "batch_identities" => self.batch.identities = parse_num(key, v)?,
            "batch_instances" => self.batch.instances = parse_num(key, v)?,
            "tau_agnostic" => self.temperatures.agnostic = parse_num(key, v)?,
            "tau_cross" => self.temperatures.cross = parse_num(key, v)?,
            "tau_hard" => self.temperatures.hard = parse_num(key, v)?,
            "tau_soft" => self.temperatures.soft = parse_num(key, v)?,
            "lambda_hard" => self.weights.hard = parse_num(key, v)?,
            "lambda_soft" => self.weights.soft = parse_num(key, v)?,
            "k1" => self.cluster.k1 = parse_num(key, v)?,
            "k2" => self.cluster.k2 = parse_num(key, v)?,
            "eps" => self.cluster.eps = parse_num(key, v)?,
            "min_samples" => self.cluster.min_samples = parse_num(key, v)?,
            "noise_sigma" => self.perturbation.noise_sigma = parse_num(key, v)?,
            "dropout" => self.perturbation.dropout = parse_num(key, v)?,
            "restyle_prob" => self.perturbation.restyle_prob = parse_num(key, v)?,
            "alpha" => self.alpha = parse_num(key, v)?,
            "lr" => self.optimizer.base_lr = parse_num(key, v)?,
            "warmup_epochs" => self.optimizer.warmup_epochs = parse_num(key, v)?,
            "weight_decay" => self.optimizer.weight_decay = parse_num(key, v)?,
            "beta1" => self.optimizer.beta1 = parse_num(key, v)?,
            "beta2" => self.optimizer.beta2 = parse_num(key, v)?,
            "adam_eps" => self.optimizer.eps = parse_num(key, v)?,
            "memory" => self.memory = choice(key, v, MEMORY)?,
            "negatives" => self.negatives = choice(key, v, NEGATIVES)?,
            "consistency" => self.consistency = choice(key, v, CONSISTENCY)?,
            "n_neg" => self.n_neg = parse_num(key, v)?,
            "hidden" => self.hidden = parse_num(key, v)?,
            "d_out" => self.d_out = parse_num(key, v)?,
            "activation" => self.activation = choice(key, v, ACTIVATION)?,
            "labels" => self.labels = choice(key, v, LABELS)?,
            "eval_every" => self.eval_every = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            _ => return Err(IceError::InvalidConfig(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// `(key, value)` for every key in [`KEYS`] order. Reals use the shortest
    /// representation that parses back to the same value.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let c = self;
        KEYS.iter()
            .map(|&(k, _)| {
                let v = match k {
                    "epochs" => c.epochs.to_string(),
                    "iterations" => c.iterations.to_string(),
                    "batch_identities" => c.batch.identities.to_string(),
                    "batch_instances" => c.batch.instances.to_string(),
                    "tau_agnostic" => c.temperatures.agnostic.to_string(),
                    "tau_cross" => c.temperatures.cross.to_string(),
                    "tau_hard" => c.temperatures.hard.to_string(),
                    "tau_soft" => c.temperatures.soft.to_string(),
                    "lambda_hard" => c.weights.hard.to_string(),
                    "lambda_soft" => c.weights.soft.to_string(),
                    "k1" => c.cluster.k1.to_string(),
                    "k2" => c.cluster.k2.to_string(),
                    "eps" => c.cluster.eps.to_string(),
                    "min_samples" => c.cluster.min_samples.to_string(),
                    "noise_sigma" => c.perturbation.noise_sigma.to_string(),
                    "dropout" => c.perturbation.dropout.to_string(),
                    "restyle_prob" => c.perturbation.restyle_prob.to_string(),
                    "alpha" => c.alpha.to_string(),
                    "lr" => c.optimizer.base_lr.to_string(),
                    "warmup_epochs" => c.optimizer.warmup_epochs.to_string(),
                    "weight_decay" => c.optimizer.weight_decay.to_string(),
                    "beta1" => c.optimizer.beta1.to_string(),
                    "beta2" => c.optimizer.beta2.to_string(),
                    "adam_eps" => c.optimizer.eps.to_string(),
                    "memory" => name_of(MEMORY, &c.memory).into(),
                    "negatives" => name_of(NEGATIVES, &c.negatives).into(),
                    "consistency" => name_of(CONSISTENCY, &c.consistency).into(),
                    "n_neg" => c.n_neg.to_string(),
                    "hidden" => c.hidden.to_string(),
                    "d_out" => c.d_out.to_string(),
                    "activation" => name_of(ACTIVATION, &c.activation).into(),
                    "labels" => name_of(LABELS, &c.labels).into(),
                    "eval_every" => c.eval_every.to_string(),
                    "seed" => c.seed.to_string(),
                    _ => unreachable!("key table and match disagree"),
                };
                (k, v)
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Applies `key = value` lines from `text` on top of `self`; lines whose
    /// key is in `extra` are returned instead of applied.
    pub fn apply_text(&mut self, text: &str, path: &Path, extra: &[&str]) -> Result<Vec<(String, String)>> {
        let mut extras = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = parse_assignment(line).ok_or_else(|| IceError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected `key = value`".into(),
            })?;
            if extra.contains(&k) {
                extras.push((k.to_string(), v.to_string()));
            } else {
                self.set(k, v).map_err(|e| IceError::Parse { path: path.to_path_buf(), line: i + 1, msg: e.to_string() })?;
            }
        }
        Ok(extras)
    }
}

/// Splits `key=value` (spaces around `=` allowed).
pub fn parse_assignment(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    let k = k.trim();
    (!k.is_empty()).then_some((k, v.trim()))
}

/// Config plus the dataset paths of a run; replaying it reproduces the run.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub config: TrainConfig,
    pub data: PathBuf,
    pub query: Option<PathBuf>,
    pub gallery: Option<PathBuf>,
}

pub const MANIFEST_PATH_KEYS: &[&str] = &["data", "query", "gallery"];

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = String::from("# ice run manifest\n");
        let _ = writeln!(out, "data = {}", self.data.display());
        if let Some(q) = &self.query {
            let _ = writeln!(out, "query = {}", q.display());
        }
        if let Some(g) = &self.gallery {
            let _ = writeln!(out, "gallery = {}", g.display());
        }
        out.push_str(&self.config.to_text());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_all_keys() {
        let mut c = TrainConfig::default();
        c.set("memory", "agnostic").unwrap();
        c.set("consistency", "strong-strong").unwrap();
        c.set("tau_cross", "0.1").unwrap();
        c.set("seed", "123").unwrap();
        let mut back = TrainConfig::default();
        back.apply_text(&c.to_text(), Path::new("c"), &[]).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.entries().len(), KEYS.len());
    }

    #[test]
    fn defaults_text_contains_every_key() {
        let text = TrainConfig::default().to_text();
        for (k, _) in KEYS {
            assert!(text.contains(&format!("{k} = ")), "{k}");
        }
        assert!(text.contains("alpha = 0.999"));
        assert!(text.contains("lambda_soft = 10"));
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = TrainConfig::default();
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("epochs", "x").is_err());
        assert!(c.set("memory", "both").is_err());
        let err = c.apply_text("epochs = 3\njunk\n", Path::new("f"), &[]).unwrap_err();
        assert!(matches!(err, IceError::Parse { line: 2, .. }));
        assert_eq!(c.epochs, 3);
    }

    #[test]
    fn extras_are_returned() {
        let mut c = TrainConfig::default();
        let extras = c.apply_text("# comment\ndata = a.txt\nseed=4\n", Path::new("m"), MANIFEST_PATH_KEYS).unwrap();
        assert_eq!(extras, vec![("data".to_string(), "a.txt".to_string())]);
        assert_eq!(c.seed, 4);
    }

    #[test]
    fn manifest_text_replays() {
        let m = Manifest {
            config: TrainConfig { epochs: 3, ..TrainConfig::default() },
            data: "train.txt".into(),
            query: Some("q.txt".into()),
            gallery: None,
        };
        let mut c = TrainConfig::default();
        let extras = c.apply_text(&m.to_text(), Path::new("m"), MANIFEST_PATH_KEYS).unwrap();
        assert_eq!(c, m.config);
        assert_eq!(extras.len(), 2);
    }
}
