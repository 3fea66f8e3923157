//! Subcommand bodies, shared by the binary and the integration tests.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fedgcc_core::aggregation::StrategyKind;
use fedgcc_core::data::{generate_synthetic, prepare_client, SplitSpec};
use fedgcc_core::federated::{run_training, Algorithm, ClientData, ClientExecutor, TrainingRun};

use crate::config::{ExperimentConfig, SyntheticSpec};
use crate::dataset::{data_hash, load_csv, save_csv, SeriesMap};
use crate::error::{AppError, Result};
use crate::report::{self, ComparisonRow, Summary};

pub fn synthetic_series(spec: &SyntheticSpec, seed: u64) -> Result<SeriesMap> {
    if spec.clients < 2 {
        return Err(AppError::Config(format!(
            "need at least 2 clients, got {}",
            spec.clients
        )));
    }
    Ok(generate_synthetic(
        spec.clients,
        spec.slots,
        spec.seed.unwrap_or(seed),
        spec.heterogeneity,
    )?)
}

pub fn gen_data(spec: &SyntheticSpec, seed: u64, out: &Path) -> Result<SeriesMap> {
    let series = synthetic_series(spec, seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        report::ensure_dir(dir)?;
    }
    save_csv(out, &series)?;
    log::info!(
        "wrote {} clients x {} slots to {}",
        series.len(),
        spec.slots,
        out.display()
    );
    Ok(series)
}

/// The configured CSV, or synthetic data when none is given.
pub fn load_series(cfg: &ExperimentConfig) -> Result<SeriesMap> {
    match &cfg.data {
        Some(path) => load_csv(path),
        None => synthetic_series(&cfg.synthetic, cfg.seed),
    }
}

pub fn prepare(cfg: &ExperimentConfig, series: &SeriesMap) -> Result<Vec<ClientData>> {
    series
        .values()
        .map(|s| {
            let split = match cfg.train_slots {
                Some(n) => SplitSpec::new(n, s.slot_count())?,
                None => SplitSpec::default_for(s.slot_count())?,
            };
            let (train, test) = prepare_client(s, cfg.window, split)?;
            Ok(ClientData {
                client_id: s.client_id.clone(),
                train,
                test,
            })
        })
        .collect()
}

#[derive(Debug)]
pub struct RunOutput {
    pub summary: Summary,
    pub run: TrainingRun,
}

/// Trains on already loaded data and, when `out` is given, writes
/// `summary.json`, `history.csv` and the requested correlation dumps there.
pub fn run_experiment<E: ClientExecutor>(
    cfg: &ExperimentConfig,
    series: &SeriesMap,
    executor: &E,
    out: Option<&Path>,
) -> Result<RunOutput> {
    cfg.validate()?;
    let algorithm = cfg.algorithm()?;
    let round_cfg = cfg.round_config()?;
    let data = prepare(cfg, series)?;
    let ids: Vec<String> = data.iter().map(|c| c.client_id.clone()).collect();

    let corr_dir = match out {
        Some(dir) if cfg.dump_correlation => {
            let d = dir.join(report::CORRELATION_DIR);
            report::ensure_dir(&d)?;
            Some(d)
        }
        _ => None,
    };
    let mut dump_error = None;
    let total = round_cfg.rounds;
    let run = run_training(round_cfg, data, algorithm, cfg.seed, executor, |o| {
        let r = &o.record;
        if (r.round + 1) % 10 == 0 || r.round + 1 == total {
            log::info!(
                "round {}/{}: loss {:.5}, uplink {} B",
                r.round + 1,
                total,
                r.loss,
                r.cumulative_uplink
            );
        }
        if let (Some(dir), Some(rho), None) = (&corr_dir, &o.correlation, &dump_error) {
            let names: Vec<&str> = o.participants.iter().map(|&m| ids[m].as_str()).collect();
            if let Err(e) = report::write_correlation(dir, r.round, &names, rho) {
                dump_error = Some(e);
            }
        }
    })?;
    if let Some(e) = dump_error {
        return Err(e);
    }

    let summary = Summary::new(cfg, &run.metrics, run.uplink_bytes, run.downlink_bytes);
    if let Some(dir) = out {
        report::ensure_dir(dir)?;
        report::write_summary(&dir.join(report::SUMMARY_FILE), &summary)?;
        report::write_history_file(&dir.join(report::HISTORY_FILE), &run.history)?;
    }
    Ok(RunOutput { summary, run })
}

pub fn train<E: ClientExecutor>(cfg: &ExperimentConfig, executor: &E) -> Result<RunOutput> {
    cfg.validate()?;
    let series = load_series(cfg)?;
    let out = run_experiment(cfg, &series, executor, Some(&cfg.out))?;
    log::info!(
        "{}: rmse {:.4}, mae {:.4}, r2 {:.4}, uplink {} B",
        cfg.algorithm,
        out.summary.rmse,
        out.summary.mae,
        out.summary.r2,
        out.summary.uplink_bytes
    );
    Ok(out)
}

/// One entry of a comparison: `fedavg`, `fedprox[:mu=X]` or
/// `fedgcc[:strategy]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub algorithm: Algorithm,
    pub strategy: Option<StrategyKind>,
    pub mu: Option<f64>,
}

impl RunSpec {
    /// FedAvg, FedProx for three proximal weights and FedGCC with each
    /// correlation strategy.
    pub fn default_set() -> Vec<RunSpec> {
        let mut specs = vec![RunSpec {
            algorithm: Algorithm::FedAvg,
            strategy: None,
            mu: None,
        }];
        for mu in [0.01, 0.1, 1.0] {
            specs.push(RunSpec {
                algorithm: Algorithm::FedProx,
                strategy: None,
                mu: Some(mu),
            });
        }
        for kind in [
            StrategyKind::KRelevant,
            StrategyKind::DeltaThreshold,
            StrategyKind::AllCorrelated,
        ] {
            specs.push(RunSpec {
                algorithm: Algorithm::FedGcc,
                strategy: Some(kind),
                mu: None,
            });
        }
        specs
    }

    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.algorithm = self.algorithm.name().into();
        if let Some(kind) = self.strategy {
            cfg.strategy = kind.name().into();
        }
        if let Some(mu) = self.mu {
            cfg.mu = mu;
        }
        cfg
    }

    fn notes(&self, cfg: &ExperimentConfig) -> String {
        match self.algorithm {
            Algorithm::FedAvg => "-".into(),
            Algorithm::FedProx => format!("mu={}", cfg.mu),
            Algorithm::FedGcc => cfg.strategy.clone(),
        }
    }

    /// Directory name for this run's outputs.
    pub fn label(&self) -> String {
        self.to_string().replace([':', '='], "-")
    }
}

impl fmt::Display for RunSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.algorithm)?;
        if let Some(kind) = self.strategy {
            write!(f, ":{kind}")?;
        }
        if let Some(mu) = self.mu {
            write!(f, ":mu={mu}")?;
        }
        Ok(())
    }
}

impl FromStr for RunSpec {
    type Err = AppError;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let algorithm: Algorithm = parts.next().unwrap_or_default().parse()?;
        let mut spec = RunSpec {
            algorithm,
            strategy: None,
            mu: None,
        };
        for part in parts {
            match (algorithm, part.strip_prefix("mu=")) {
                (Algorithm::FedProx, Some(mu)) => {
                    spec.mu =
                        Some(mu.parse().map_err(|_| {
                            AppError::Config(format!("bad proximal weight in {s:?}"))
                        })?);
                }
                (Algorithm::FedGcc, None) if spec.strategy.is_none() => {
                    spec.strategy = Some(part.parse()?)
                }
                _ => return Err(AppError::Config(format!("cannot parse run {s:?}"))),
            }
        }
        Ok(spec)
    }
}

/// Runs every spec on the same data and seed. Each run writes its own
/// report into `out/<label>`, and the table goes to `out/comparison.csv`.
pub fn compare<E: ClientExecutor>(
    cfg: &ExperimentConfig,
    specs: &[RunSpec],
    executor: &E,
) -> Result<Vec<ComparisonRow>> {
    if specs.is_empty() {
        return Err(AppError::Config("nothing to compare".into()));
    }
    let configs: Vec<ExperimentConfig> = specs.iter().map(|s| s.apply(cfg)).collect();
    for c in &configs {
        c.validate()?;
    }
    let series = load_series(cfg)?;
    let hash = data_hash(&series)?;
    report::ensure_dir(&cfg.out)?;

    let mut rows = Vec::with_capacity(specs.len());
    for (spec, run_cfg) in specs.iter().zip(&configs) {
        log::info!("running {spec}");
        let dir: PathBuf = cfg.out.join(spec.label());
        let out = run_experiment(run_cfg, &series, executor, Some(&dir)).map_err(|e| {
            AppError::InRun {
                run: spec.to_string(),
                source: Box::new(e),
            }
        })?;
        rows.push(ComparisonRow {
            method: spec.algorithm.name().into(),
            notes: spec.notes(run_cfg),
            rmse: out.summary.rmse,
            mae: out.summary.mae,
            r2: out.summary.r2,
            uplink_bytes: out.summary.uplink_bytes,
            downlink_bytes: out.summary.downlink_bytes,
            seed: cfg.seed,
            data_hash: hash.clone(),
        });
    }
    report::write_comparison(&cfg.out.join(report::COMPARISON_FILE), &rows)?;
    Ok(rows)
}
