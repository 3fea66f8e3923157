//! Server-side personalization of compressed gradients.
//!
//! The server correlates the densified uplink gradients of all participants
//! and then rebuilds a personalized gradient for each client from the
//! others, using one of three correlation-driven rules (k most relevant,
//! threshold, softmax-weighted) or the plain identity used by FedAvg.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use crate::compression::{add_scaled_into, densify, SparseGradient};
use crate::error::{check_len, Error, Result};
use crate::model::ParamVector;
use crate::numerics::{pearson, softmax};

/// Square Pearson matrix over client gradients, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    size: usize,
    rho: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn from_rows(size: usize, rho: Vec<f64>) -> Result<Self> {
        check_len(size * size, rho.len())?;
        if size == 0 {
            return Err(Error::InvalidArgument("empty correlation matrix".into()));
        }
        Ok(Self { size, rho })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, m: usize, s: usize) -> f64 {
        self.rho[m * self.size + s]
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.rho[m * self.size..(m + 1) * self.size]
    }

    /// Softmax of row `m`.
    pub fn softmax_row(&self, m: usize) -> Vec<f64> {
        softmax(self.row(m))
    }
}

/// Pearson correlation between every pair of densified gradients, with the
/// diagonal pinned to 1.
pub fn correlation_matrix(grads: &[SparseGradient]) -> Result<CorrelationMatrix> {
    let size = grads.len();
    if size == 0 {
        return Err(Error::InvalidArgument("no gradients to correlate".into()));
    }
    let dim = grads[0].dim();
    for g in grads {
        check_len(dim, g.dim())?;
    }
    let dense: Vec<ParamVector> = grads.iter().map(densify).collect();
    let mut rho = vec![0.0; size * size];
    for m in 0..size {
        rho[m * size + m] = 1.0;
        for s in m + 1..size {
            let r = pearson(&dense[m], &dense[s])?;
            rho[m * size + s] = r;
            rho[s * size + m] = r;
        }
    }
    CorrelationMatrix::from_rows(size, rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    /// Each client keeps its own gradient (FedAvg-style averaging).
    Mean,
    KRelevant,
    DeltaThreshold,
    AllCorrelated,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Mean => "mean",
            StrategyKind::KRelevant => "k-relevant",
            StrategyKind::DeltaThreshold => "delta-threshold",
            StrategyKind::AllCorrelated => "all-correlated",
        }
    }

    pub fn needs_correlation(self) -> bool {
        !matches!(self, StrategyKind::Mean)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(StrategyKind::Mean),
            "k-relevant" => Ok(StrategyKind::KRelevant),
            "delta-threshold" => Ok(StrategyKind::DeltaThreshold),
            "all-correlated" => Ok(StrategyKind::AllCorrelated),
            other => Err(Error::InvalidArgument(alloc::format!(
                "unknown strategy {other:?} (expected mean, k-relevant, delta-threshold or all-correlated)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub k: usize,
    pub delta: f64,
    /// Divide k-relevant and threshold sums by the number of selected
    /// clients. Off by default; the unnormalized sum is the reference rule.
    pub normalize: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::KRelevant,
            k: 4,
            delta: 0.5,
            normalize: false,
        }
    }
}

impl StrategyConfig {
    pub fn mean() -> Self {
        Self {
            kind: StrategyKind::Mean,
            ..Self::default()
        }
    }

    pub fn with_kind(kind: StrategyKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == StrategyKind::KRelevant && self.k == 0 {
            return Err(Error::InvalidK { k: 0, size: 0 });
        }
        if !(-1.0..=1.0).contains(&self.delta) {
            return Err(Error::InvalidArgument(alloc::format!(
                "delta must lie in [-1, 1], got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

fn check_inputs(rho: &CorrelationMatrix, grads: &[SparseGradient], m: usize) -> Result<usize> {
    check_len(rho.size(), grads.len())?;
    if m >= rho.size() {
        return Err(Error::InvalidArgument(alloc::format!(
            "client {m} outside correlation matrix of size {}",
            rho.size()
        )));
    }
    let dim = grads[0].dim();
    for g in grads {
        check_len(dim, g.dim())?;
    }
    Ok(dim)
}

fn sum_selected(grads: &[SparseGradient], selected: impl Iterator<Item = usize>) -> ParamVector {
    let mut out = ParamVector::zeros(grads[0].dim());
    for s in selected {
        // dims were checked by the caller
        let _ = add_scaled_into(&mut out, 1.0, &grads[s]);
    }
    out
}

/// Clients ordered by decreasing correlation with `m`; `m` itself wins
/// ties, remaining ties go to the smaller index.
pub fn relevance_order(rho: &CorrelationMatrix, m: usize) -> Vec<usize> {
    let row = rho.row(m);
    let mut order: Vec<usize> = (0..rho.size()).collect();
    order.sort_by(|&a, &b| {
        row[b]
            .total_cmp(&row[a])
            .then_with(|| match (a == m, b == m) {
                (true, false) => Ordering::Less,
                (false, true) => Ordering::Greater,
                _ => a.cmp(&b),
            })
    });
    order
}

/// Sum of the densified gradients of the `k` clients most correlated with
/// `m` (client `m` included).
pub fn aggregate_k_relevant(
    rho: &CorrelationMatrix,
    grads: &[SparseGradient],
    m: usize,
    k: usize,
) -> Result<ParamVector> {
    check_inputs(rho, grads, m)?;
    if k == 0 || k > rho.size() {
        return Err(Error::InvalidK {
            k,
            size: rho.size(),
        });
    }
    let mut chosen = relevance_order(rho, m);
    chosen.truncate(k);
    chosen.sort_unstable();
    Ok(sum_selected(grads, chosen.into_iter()))
}

/// Sum of the densified gradients of every client whose correlation with
/// `m` is at least `delta`.
pub fn aggregate_threshold(
    rho: &CorrelationMatrix,
    grads: &[SparseGradient],
    m: usize,
    delta: f64,
) -> Result<ParamVector> {
    check_inputs(rho, grads, m)?;
    let row = rho.row(m);
    Ok(sum_selected(
        grads,
        (0..rho.size()).filter(|&s| row[s] >= delta),
    ))
}

/// Softmax-of-correlation weighted average of all densified gradients.
pub fn aggregate_all_correlated(
    rho: &CorrelationMatrix,
    grads: &[SparseGradient],
    m: usize,
) -> Result<ParamVector> {
    check_inputs(rho, grads, m)?;
    let weights = rho.softmax_row(m);
    let mut out = ParamVector::zeros(grads[0].dim());
    for (w, g) in weights.iter().zip(grads) {
        add_scaled_into(&mut out, *w, g)?;
    }
    Ok(out)
}

/// Personalized gradient for client `m` under `cfg`, plus the number of
/// client gradients that contributed to it.
///
/// `rho` may be `None` only for [`StrategyKind::Mean`].
pub fn personalize(
    cfg: &StrategyConfig,
    rho: Option<&CorrelationMatrix>,
    grads: &[SparseGradient],
    m: usize,
) -> Result<(ParamVector, usize)> {
    let need_rho =
        || rho.ok_or_else(|| Error::InvalidArgument("strategy needs a correlation matrix".into()));
    let (mut out, count) = match cfg.kind {
        StrategyKind::Mean => {
            let g = grads.get(m).ok_or_else(|| {
                Error::InvalidArgument(alloc::format!("client {m} has no gradient"))
            })?;
            (densify(g), 1)
        }
        StrategyKind::KRelevant => {
            let k = cfg.k.min(grads.len());
            (aggregate_k_relevant(need_rho()?, grads, m, k)?, k)
        }
        StrategyKind::DeltaThreshold => {
            let rho = need_rho()?;
            let count = rho.row(m).iter().filter(|&&r| r >= cfg.delta).count();
            (aggregate_threshold(rho, grads, m, cfg.delta)?, count)
        }
        StrategyKind::AllCorrelated => (
            aggregate_all_correlated(need_rho()?, grads, m)?,
            grads.len(),
        ),
    };
    if cfg.normalize
        && count > 1
        && matches!(
            cfg.kind,
            StrategyKind::KRelevant | StrategyKind::DeltaThreshold
        )
    {
        let inv = 1.0 / count as f64;
        for v in out.iter_mut() {
            *v *= inv;
        }
    }
    Ok((out, count))
}

/// Mean of the personalized gradients.
///
/// Evaluated as `x_0 + (1/M) * sum_m (x_m - x_0)`, which returns `x_0`
/// exactly when all inputs are equal.
pub fn server_average(personalized: &[ParamVector]) -> Result<ParamVector> {
    let first = personalized
        .first()
        .ok_or_else(|| Error::InvalidArgument("no gradients to average".into()))?;
    for p in personalized {
        check_len(first.dim(), p.dim())?;
    }
    let inv = 1.0 / personalized.len() as f64;
    let mut acc = ParamVector::zeros(first.dim());
    for p in &personalized[1..] {
        for ((a, x), x0) in acc.iter_mut().zip(p.iter()).zip(first.iter()) {
            *a += x - x0;
        }
    }
    for (a, x0) in acc.iter_mut().zip(first.iter()) {
        *a = x0 + inv * *a;
    }
    Ok(acc)
}
