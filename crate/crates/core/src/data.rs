//! Traffic series, synthetic generation, standardization and windowing.
//!
//! Slots are 10-minute intervals: a day is 144 slots, a week 1008.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::numerics::{mean_std, RngStream};

pub const SLOTS_PER_DAY: usize = 144;
pub const SLOTS_PER_WEEK: usize = 7 * SLOTS_PER_DAY;
/// Default input window: one hour of history.
pub const DEFAULT_WINDOW: usize = 6;

const PARAM_STREAM: u64 = 0xDA7A_0000;
const NOISE_STREAM_BASE: u64 = 0xDA7A_1000;

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSeries {
    pub client_id: String,
    pub volumes: Vec<f64>,
}

impl TrafficSeries {
    pub fn new(client_id: impl Into<String>, volumes: Vec<f64>) -> Result<Self> {
        let client_id = client_id.into();
        if let Some(slot) = volumes.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "client {client_id} slot {slot}: volume must be finite and non-negative"
            )));
        }
        Ok(Self { client_id, volumes })
    }

    pub fn slot_count(&self) -> usize {
        self.volumes.len()
    }
}

/// Number of leading slots used for training; the rest is test data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_slots: usize,
}

impl SplitSpec {
    pub fn new(train_slots: usize, slot_count: usize) -> Result<Self> {
        if train_slots == 0 || train_slots >= slot_count {
            return Err(Error::InvalidArgument(format!(
                "train_slots must lie in (0, {slot_count}), got {train_slots}"
            )));
        }
        Ok(Self { train_slots })
    }

    /// Seven weeks of training data when the series is longer than that,
    /// otherwise the first 7/8 of the series.
    pub fn default_for(slot_count: usize) -> Result<Self> {
        let train = if slot_count > 7 * SLOTS_PER_WEEK {
            7 * SLOTS_PER_WEEK
        } else {
            slot_count * 7 / 8
        };
        Self::new(train, slot_count)
    }
}

/// Sliding-window samples of one client.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    /// Row-major `n x window`.
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub window: usize,
    /// Slot index of the first target.
    pub first_target_slot: usize,
    /// Standardization statistics `(mean, std)`.
    pub stats: (f64, f64),
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.window..(i + 1) * self.window]
    }

    /// `batch_size` samples drawn uniformly with replacement.
    pub fn sample_batch(&self, batch_size: usize, rng: &mut RngStream) -> Result<Batch> {
        if self.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot sample from an empty dataset".into(),
            ));
        }
        let mut inputs = Vec::with_capacity(batch_size * self.window);
        let mut targets = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let i = rng.next_index(self.len());
            inputs.extend_from_slice(self.row(i));
            targets.push(self.targets[i]);
        }
        Batch::new(inputs, targets, self.window)
    }

    /// The whole dataset as one batch.
    pub fn as_batch(&self) -> Result<Batch> {
        Batch::new(self.inputs.clone(), self.targets.clone(), self.window)
    }
}

/// Standardizes the whole series with statistics of its training slots.
pub fn standardize(series: &TrafficSeries, split: SplitSpec) -> Result<(Vec<f64>, f64, f64)> {
    if split.train_slots == 0 || split.train_slots > series.slot_count() {
        return Err(Error::InvalidArgument(format!(
            "train_slots {} outside series {} of length {}",
            split.train_slots,
            series.client_id,
            series.slot_count()
        )));
    }
    let (mean, std) = mean_std(&series.volumes[..split.train_slots])?;
    if std == 0.0 {
        return Err(Error::ZeroVarianceSeries {
            client: series.client_id.clone(),
        });
    }
    let out = series.volumes.iter().map(|v| (v - mean) / std).collect();
    Ok((out, mean, std))
}

fn windows_for(
    values: &[f64],
    window: usize,
    targets: core::ops::Range<usize>,
    stats: (f64, f64),
) -> WindowedDataset {
    let mut inputs = Vec::with_capacity(targets.len() * window);
    let mut ys = Vec::with_capacity(targets.len());
    for t in targets.clone() {
        inputs.extend_from_slice(&values[t - window..t]);
        ys.push(values[t]);
    }
    WindowedDataset {
        inputs,
        targets: ys,
        window,
        first_target_slot: targets.start,
        stats,
    }
}

/// Builds training and test windows from an already standardized series.
///
/// Training targets are the slots in `[window, train_slots)`. Test targets
/// are the slots in `[max(window, train_slots), len)`; their inputs may
/// reach back into the training region.
pub fn make_windows(
    values: &[f64],
    window: usize,
    split: SplitSpec,
    stats: (f64, f64),
) -> Result<(WindowedDataset, WindowedDataset)> {
    if window == 0 {
        return Err(Error::InvalidArgument(
            "window size must be positive".into(),
        ));
    }
    if values.len() < window + 1 {
        return Err(Error::SeriesTooShort {
            len: values.len(),
            needed: window + 1,
        });
    }
    let train_end = split.train_slots.min(values.len());
    let test_start = train_end.max(window);
    let train = windows_for(values, window, window..train_end.max(window), stats);
    let test = windows_for(values, window, test_start..values.len(), stats);
    Ok((train, test))
}

/// Standardize then window.
pub fn prepare_client(
    series: &TrafficSeries,
    window: usize,
    split: SplitSpec,
) -> Result<(WindowedDataset, WindowedDataset)> {
    let (values, mean, std) = standardize(series, split)?;
    make_windows(&values, window, split, (mean, std))
}

/// Synthetic diurnal/weekly traffic for `num_clients` cells.
///
/// Each series is
/// `base + A sin(2 pi s / 144 + phi) + B sin(2 pi s / 1008 + psi) + noise`,
/// clipped at zero. With `heterogeneity == 0` all clients share the same
/// parameters and differ only in their noise streams; larger values spread
/// the per-client level, amplitudes, phases and noise levels.
pub fn generate_synthetic(
    num_clients: usize,
    slot_count: usize,
    seed: u64,
    heterogeneity: f64,
) -> Result<BTreeMap<String, TrafficSeries>> {
    if num_clients < 2 {
        return Err(Error::InvalidArgument("need at least 2 clients".into()));
    }
    if slot_count < 2 * SLOTS_PER_DAY {
        return Err(Error::InvalidArgument(format!(
            "need at least {} slots (two days), got {slot_count}",
            2 * SLOTS_PER_DAY
        )));
    }
    if !(0.0..=1.0).contains(&heterogeneity) {
        return Err(Error::InvalidArgument(format!(
            "heterogeneity must lie in [0, 1], got {heterogeneity}"
        )));
    }
    let h = heterogeneity;
    let digits = format!("{}", num_clients - 1).len().max(2);
    let mut params = RngStream::new(seed, PARAM_STREAM);
    let mut out = BTreeMap::new();
    for m in 0..num_clients {
        // always six draws per client so parameters do not shift with h
        let mut u = [0.0; 6];
        for x in &mut u {
            *x = params.next_range(-1.0, 1.0);
        }
        let base = 10.0 * (1.0 + 0.9 * h * u[0]);
        let daily_amp = base * 0.4 * (1.0 + 0.5 * h * u[1]);
        let daily_phase = PI * h * u[2];
        let weekly_amp = base * 0.15 * (1.0 + 0.5 * h * u[3]);
        let weekly_phase = PI * h * u[4];
        let noise = base * 0.05 * (1.0 + 0.8 * h * u[5]);

        let mut rng = RngStream::new(seed, NOISE_STREAM_BASE + m as u64);
        let volumes = (0..slot_count)
            .map(|s| {
                let s = s as f64;
                let v = base
                    + daily_amp * libm::sin(2.0 * PI * s / SLOTS_PER_DAY as f64 + daily_phase)
                    + weekly_amp * libm::sin(2.0 * PI * s / SLOTS_PER_WEEK as f64 + weekly_phase)
                    + noise * rng.next_normal();
                v.max(0.0)
            })
            .collect();
        let id = format!("client_{m:0digits$}");
        out.insert(id.clone(), TrafficSeries::new(id, volumes)?);
    }
    Ok(out)
}
