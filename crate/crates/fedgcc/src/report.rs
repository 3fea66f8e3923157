//! Result files: `summary.json`, `history.csv`, `comparison.csv` and
//! optional per-round correlation matrices.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use fedgcc_core::aggregation::CorrelationMatrix;
use fedgcc_core::federated::RoundRecord;
use fedgcc_core::metrics::MetricsSnapshot;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{AppError, Result};

pub const SUMMARY_FILE: &str = "summary.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const CORRELATION_DIR: &str = "correlation";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: String,
    pub strategy: String,
    pub gamma: f64,
    pub k: usize,
    pub delta: f64,
    pub seed: u64,
    pub rounds: usize,
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
}

impl Summary {
    pub fn new(
        cfg: &ExperimentConfig,
        metrics: &MetricsSnapshot,
        uplink_bytes: u64,
        downlink_bytes: u64,
    ) -> Self {
        // power-mean inequality, up to rounding
        debug_assert!(metrics.mae <= metrics.rmse * (1.0 + 1e-12));
        Self {
            algorithm: cfg.algorithm.clone(),
            strategy: cfg.strategy.clone(),
            gamma: cfg.gamma,
            k: cfg.k,
            delta: cfg.delta,
            seed: cfg.seed,
            rounds: cfg.rounds,
            rmse: metrics.rmse,
            mae: metrics.mae,
            r2: metrics.r2,
            uplink_bytes,
            downlink_bytes,
        }
    }
}

#[derive(Debug, Serialize)]
struct HistoryRow {
    round: usize,
    loss: f64,
    uplink_bytes: u64,
    downlink_bytes: u64,
    rmse: Option<f64>,
}

/// One row of a multi-run comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub notes: String,
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    pub seed: u64,
    pub data_hash: String,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| AppError::io(format!("cannot create {}", path.display()), e))
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> AppError + '_ {
    move |e| AppError::io(format!("cannot write {}", path.display()), e.into())
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, summary)?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| AppError::io(format!("cannot write {}", path.display()), e))
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::io(format!("cannot read {}", path.display()), e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Byte columns are cumulative; `rmse` is empty for rounds that were not
/// evaluated.
pub fn write_history<W: Write>(writer: W, history: &[RoundRecord]) -> csv::Result<()> {
    let mut w = csv_writer(writer);
    if history.is_empty() {
        w.write_record(["round", "loss", "uplink_bytes", "downlink_bytes", "rmse"])?;
    }
    for r in history {
        w.serialize(HistoryRow {
            round: r.round,
            loss: r.loss,
            uplink_bytes: r.cumulative_uplink,
            downlink_bytes: r.cumulative_downlink,
            rmse: r.rmse,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_history_file(path: &Path, history: &[RoundRecord]) -> Result<()> {
    write_history(create(path)?, history).map_err(csv_err(path))
}

/// `round_NNNN.csv` in `dir`: a header of client ids, then one row per client.
pub fn write_correlation(
    dir: &Path,
    round: usize,
    ids: &[&str],
    rho: &CorrelationMatrix,
) -> Result<()> {
    let path = dir.join(format!("round_{round:04}.csv"));
    let mut w = csv_writer(create(&path)?);
    let err = csv_err(&path);
    let mut header = vec!["client_id"];
    header.extend_from_slice(ids);
    w.write_record(&header).map_err(&err)?;
    for (m, id) in ids.iter().enumerate() {
        let mut row = vec![id.to_string()];
        row.extend(rho.row(m).iter().map(|r| r.to_string()));
        w.write_record(&row).map_err(&err)?;
    }
    w.flush()
        .map_err(|e| AppError::io(format!("cannot write {}", path.display()), e))
}

pub fn write_comparison(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv_writer(create(path)?);
    let err = csv_err(path);
    for r in rows {
        w.serialize(r).map_err(&err)?;
    }
    w.flush()
        .map_err(|e| AppError::io(format!("cannot write {}", path.display()), e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(format!("cannot create {}", dir.display()), e))
}

pub fn read_comparison<R: io::Read>(reader: R) -> csv::Result<Vec<ComparisonRow>> {
    csv::Reader::from_reader(reader).deserialize().collect()
}
