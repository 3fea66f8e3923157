//! JSON experiment configuration. Missing keys take the defaults below;
//! unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use fedgcc_core::aggregation::{StrategyConfig, StrategyKind};
use fedgcc_core::data::DEFAULT_WINDOW;
use fedgcc_core::federated::{Algorithm, RoundConfig};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub clients: usize,
    pub slots: usize,
    pub heterogeneity: f64,
    /// Generator seed; the experiment seed when absent.
    pub seed: Option<u64>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            clients: 8,
            slots: 2016,
            heterogeneity: 0.7,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: String,
    pub strategy: String,
    pub k: usize,
    pub delta: f64,
    pub normalize: bool,
    pub gamma: f64,
    pub tau: usize,
    pub batch_size: usize,
    pub epsilon: f64,
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    pub eta: f64,
    pub rounds: usize,
    pub participation: f64,
    pub mu: f64,
    pub seed: u64,
    pub window: usize,
    /// Training slots per client; seven weeks (or 7/8 of a shorter series)
    /// when absent.
    pub train_slots: Option<usize>,
    /// Traffic CSV. Synthetic data is generated when absent.
    pub data: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub out: PathBuf,
    /// Evaluate test RMSE every this many rounds (0 disables).
    pub eval_every: usize,
    /// Write the per-round correlation matrices as CSV.
    pub dump_correlation: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let round = RoundConfig::default();
        Self {
            algorithm: Algorithm::FedGcc.name().into(),
            strategy: round.strategy.kind.name().into(),
            k: round.strategy.k,
            delta: round.strategy.delta,
            normalize: round.strategy.normalize,
            gamma: round.gamma,
            tau: round.tau,
            batch_size: round.batch_size,
            epsilon: round.epsilon,
            milestones: round.milestones,
            lr_decay: round.lr_decay,
            eta: round.eta,
            rounds: round.rounds,
            participation: round.participation,
            mu: round.mu,
            seed: 0,
            window: DEFAULT_WINDOW,
            train_slots: None,
            data: None,
            synthetic: SyntheticSpec::default(),
            out: PathBuf::from("results"),
            eval_every: 0,
            dump_correlation: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| AppError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => AppError::MissingFile(path.to_path_buf()),
            _ => AppError::io(format!("cannot read {}", path.display()), e),
        })?;
        Self::from_json(&text)
    }

    pub fn algorithm(&self) -> Result<Algorithm> {
        Ok(self.algorithm.parse()?)
    }

    pub fn strategy_kind(&self) -> Result<StrategyKind> {
        Ok(self.strategy.parse()?)
    }

    pub fn round_config(&self) -> Result<RoundConfig> {
        let cfg = RoundConfig {
            tau: self.tau,
            batch_size: self.batch_size,
            epsilon: self.epsilon,
            milestones: self.milestones.clone(),
            lr_decay: self.lr_decay,
            eta: self.eta,
            gamma: self.gamma,
            strategy: StrategyConfig {
                kind: self.strategy_kind()?,
                k: self.k,
                delta: self.delta,
                normalize: self.normalize,
            },
            participation: self.participation,
            rounds: self.rounds,
            mu: self.mu,
            eval_every: self.eval_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without reading data.
    pub fn validate(&self) -> Result<()> {
        self.algorithm()?;
        self.round_config()?;
        if self.window == 0 {
            return Err(AppError::Config("window must be at least 1".into()));
        }
        if self.data.is_none() {
            let s = &self.synthetic;
            if s.clients < 2 {
                return Err(AppError::Config(format!(
                    "synthetic data needs at least 2 clients, got {}",
                    s.clients
                )));
            }
            if !(0.0..=1.0).contains(&s.heterogeneity) {
                return Err(AppError::Config(format!(
                    "heterogeneity must lie in [0, 1], got {}",
                    s.heterogeneity
                )));
            }
        }
        Ok(())
    }
}
