//! Round orchestration for FedGCC and the FedAvg / FedProx baselines.
//!
//! One round of FedGCC:
//!
//! 1. sample the participating clients;
//! 2. each participant runs `tau` local SGD steps on the corrected gradient
//!    `e + grad - h`, then uploads the top-k sparsified accumulated gradient
//!    `(w_t - w_{t,tau}) / eps`;
//! 3. the server correlates the uploads, personalizes one gradient per
//!    client, averages them into `g_t` and broadcasts `g_t`;
//! 4. every participant folds the dropped mass into its error feedback,
//!    moves its tracking vector by `(phi(g) - g_t) / tau`, and applies the
//!    same global step as the server.
//!
//! Accumulated gradients are in per-step gradient units, so both the server
//! and the clients move the global model by `eta * eps_t * g_t`; with a
//! single client and no compression this is exactly the local SGD
//! displacement.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::aggregation::{
    correlation_matrix, personalize, server_average, CorrelationMatrix, StrategyConfig,
    StrategyKind,
};
use crate::compression::{
    dense_wire_bytes, densify, kept_count, sparsify_topk, wire_bytes, ErrorFeedback, SparseGradient,
};
use crate::data::WindowedDataset;
use crate::error::{check_len, Error, Result};
use crate::metrics::{evaluate, MetricsSnapshot};
use crate::model::{loss_and_gradient, MlpModel, MlpShape, ParamVector};
use crate::numerics::{all_finite, RngStream};

/// Stream ids derived from the experiment seed.
pub const INIT_STREAM: u64 = 0;
pub const SAMPLER_STREAM: u64 = 1;
pub const CLIENT_STREAM_BASE: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    FedGcc,
    FedAvg,
    FedProx,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedGcc => "fedgcc",
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx => "fedprox",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedgcc" => Ok(Algorithm::FedGcc),
            "fedavg" => Ok(Algorithm::FedAvg),
            "fedprox" => Ok(Algorithm::FedProx),
            other => Err(Error::InvalidArgument(format!(
                "unknown algorithm {other:?} (expected fedgcc, fedavg or fedprox)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig {
    /// Local SGD steps per round.
    pub tau: usize,
    pub batch_size: usize,
    /// Initial local learning rate.
    pub epsilon: f64,
    /// Rounds at which the local learning rate is multiplied by `lr_decay`.
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    /// Server learning rate.
    pub eta: f64,
    /// Fraction of gradient coordinates uploaded.
    pub gamma: f64,
    pub strategy: StrategyConfig,
    pub participation: f64,
    pub rounds: usize,
    /// FedProx proximal weight.
    pub mu: f64,
    /// Record pooled test RMSE every this many rounds (0 disables).
    pub eval_every: usize,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            tau: 5,
            batch_size: 20,
            epsilon: 0.1,
            milestones: alloc::vec![100, 150],
            lr_decay: 0.1,
            eta: 1.0,
            gamma: 0.01,
            strategy: StrategyConfig::default(),
            participation: 1.0,
            rounds: 200,
            mu: 0.0,
            eval_every: 0,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.tau == 0 {
            return bad("tau must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return bad(format!("lr decay must be positive, got {}", self.lr_decay));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return bad(format!(
                "participation must lie in (0, 1], got {}",
                self.participation
            ));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad(format!("mu must be non-negative, got {}", self.mu));
        }
        kept_count(1, self.gamma)?;
        self.strategy.validate()
    }

    /// Local learning rate in round `t`.
    pub fn epsilon_at(&self, round: usize) -> f64 {
        let decays = self.milestones.iter().filter(|&&m| round >= m).count();
        let mut lr = self.epsilon;
        for _ in 0..decays {
            lr *= self.lr_decay;
        }
        lr
    }

    pub fn sampled_count(&self, num_clients: usize) -> usize {
        let k = libm::ceil(self.participation * num_clients as f64) as usize;
        k.clamp(1, num_clients.max(1))
    }
}

/// Everything a client keeps between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub client_id: String,
    /// Client copy of the global model.
    pub w_local: ParamVector,
    pub error_feedback: ErrorFeedback,
    /// Gradient-tracking vector.
    pub h: ParamVector,
    pub train: WindowedDataset,
    pub rng: RngStream,
}

impl ClientState {
    pub fn new(
        client_id: impl Into<String>,
        w: ParamVector,
        train: WindowedDataset,
        rng: RngStream,
    ) -> Self {
        let dim = w.dim();
        Self {
            client_id: client_id.into(),
            w_local: w,
            error_feedback: ErrorFeedback::zeros(dim),
            h: ParamVector::zeros(dim),
            train,
            rng,
        }
    }
}

/// Result of one client's local work in a round.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub phi_g: SparseGradient,
    /// Accumulated gradient `(w_t - w_tau) / epsilon`; the compressor input.
    pub g_raw: ParamVector,
    /// What the residual absorbs this round: the summed local gradients
    /// plus the tracking correction on transmitted coordinates. The
    /// correction on dropped coordinates is not carried over, since `h` is
    /// refreshed from what was actually sent.
    pub g_fresh: ParamVector,
    /// Mean of the batch losses seen during the local steps.
    pub loss: f64,
}

/// `tau` corrected local SGD steps from `w_t`, then compression.
///
/// Only the client RNG advances; `e`, `h` and `w_local` are left untouched.
pub fn local_round(
    client: &mut ClientState,
    shape: &MlpShape,
    w_t: &[f64],
    cfg: &RoundConfig,
    algorithm: Algorithm,
    epsilon: f64,
) -> Result<LocalUpdate> {
    check_len(w_t.len(), client.w_local.dim())?;
    if client.w_local.as_slice() != w_t {
        return Err(Error::InvalidArgument(format!(
            "client {} does not hold the current global model",
            client.client_id
        )));
    }
    if client.train.is_empty() {
        return Err(Error::EmptyDataset {
            client: client.client_id.clone(),
        });
    }
    let mut w = w_t.to_vec();
    let mut loss_sum = 0.0;
    // The residual is spread over the local steps so that the accumulated
    // gradient replays it exactly once.
    let inv_tau = 1.0 / cfg.tau as f64;
    for _ in 0..cfg.tau {
        let batch = client.train.sample_batch(cfg.batch_size, &mut client.rng)?;
        let (loss, mut grad) = loss_and_gradient(shape, &w, &batch)?;
        loss_sum += loss;
        match algorithm {
            Algorithm::FedGcc => {
                let e = &client.error_feedback.e;
                for ((g, ei), hi) in grad.iter_mut().zip(e.iter()).zip(client.h.iter()) {
                    *g = (inv_tau * ei + *g) - hi;
                }
            }
            Algorithm::FedProx if cfg.mu != 0.0 => {
                for ((g, wi), w0) in grad.iter_mut().zip(&w).zip(w_t) {
                    *g += cfg.mu * (wi - w0);
                }
            }
            Algorithm::FedProx | Algorithm::FedAvg => {}
        }
        for (wi, g) in w.iter_mut().zip(grad.iter()) {
            *wi -= epsilon * g;
        }
    }
    let g_raw: ParamVector = w_t
        .iter()
        .zip(&w)
        .map(|(a, b)| (a - b) / epsilon)
        .collect::<Vec<_>>()
        .into();
    let gamma = match algorithm {
        Algorithm::FedGcc => cfg.gamma,
        Algorithm::FedAvg | Algorithm::FedProx => 1.0,
    };
    let phi_g = sparsify_topk(&g_raw, gamma)?;
    let g_fresh = match algorithm {
        Algorithm::FedGcc => residual_increment(&g_raw, client, &phi_g, cfg.tau),
        Algorithm::FedAvg | Algorithm::FedProx => g_raw.clone(),
    };
    Ok(LocalUpdate {
        phi_g,
        g_raw,
        g_fresh,
        loss: loss_sum / cfg.tau as f64,
    })
}

/// `g_raw - e + tau * h` on dropped coordinates, `g_raw - e` on kept ones.
fn residual_increment(
    g_raw: &[f64],
    client: &ClientState,
    phi_g: &SparseGradient,
    tau: usize,
) -> ParamVector {
    let tau = tau as f64;
    let mut out: Vec<f64> = g_raw
        .iter()
        .zip(client.error_feedback.e.iter())
        .zip(client.h.iter())
        .map(|((g, e), h)| (g - e) + tau * h)
        .collect();
    for &i in phi_g.indices() {
        let i = i as usize;
        out[i] = g_raw[i] - client.error_feedback.e[i];
    }
    out.into()
}

/// Applies the broadcast `g_t`: error feedback, gradient tracking and the
/// global step on the client copy.
pub fn finish_round_client(
    client: &mut ClientState,
    update: &LocalUpdate,
    g_t: &[f64],
    cfg: &RoundConfig,
    algorithm: Algorithm,
    epsilon: f64,
) -> Result<()> {
    check_len(client.w_local.dim(), g_t.len())?;
    check_len(client.w_local.dim(), update.g_raw.dim())?;
    if algorithm == Algorithm::FedGcc {
        client
            .error_feedback
            .update(&update.g_fresh, &update.phi_g)?;
        let sent = densify(&update.phi_g);
        let inv_tau = 1.0 / cfg.tau as f64;
        for ((h, s), g) in client.h.iter_mut().zip(sent.iter()).zip(g_t) {
            *h += inv_tau * (s - g);
        }
    }
    apply_global_step(&mut client.w_local, g_t, cfg.eta * epsilon);
    Ok(())
}

fn apply_global_step(w: &mut [f64], g_t: &[f64], step: f64) {
    for (wi, g) in w.iter_mut().zip(g_t) {
        *wi -= step * g;
    }
}

/// `ceil(participation * M)` distinct clients, ascending. Full
/// participation returns every client without consuming randomness.
pub fn sample_clients(num_clients: usize, participation: f64, rng: &mut RngStream) -> Vec<usize> {
    let mut all: Vec<usize> = (0..num_clients).collect();
    if num_clients == 0 || participation >= 1.0 {
        return all;
    }
    let k = (libm::ceil(participation * num_clients as f64) as usize).clamp(1, num_clients);
    for i in 0..k {
        let j = i + rng.next_index(num_clients - i);
        all.swap(i, j);
    }
    all.truncate(k);
    all.sort_unstable();
    all
}

/// Runs per-client work, possibly in parallel. Implementations must return
/// results in input order.
pub trait ClientExecutor {
    fn map_clients<T, F>(&self, clients: &mut [&mut ClientState], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&mut ClientState) -> T + Sync;
}

/// In-order, single-threaded executor.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl ClientExecutor for Sequential {
    fn map_clients<T, F>(&self, clients: &mut [&mut ClientState], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&mut ClientState) -> T + Sync,
    {
        clients.iter_mut().map(|c| f(c)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Mean training loss over participants and local steps.
    pub loss: f64,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    pub cumulative_uplink: u64,
    pub cumulative_downlink: u64,
    /// Pooled test RMSE after the round, when evaluated.
    pub rmse: Option<f64>,
    /// Average number of client gradients combined per personalized gradient.
    pub mean_selected: f64,
}

/// Per-round output handed to observers.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub record: RoundRecord,
    pub participants: Vec<usize>,
    pub correlation: Option<CorrelationMatrix>,
    pub g_t: ParamVector,
    /// Local updates of the participants, in `participants` order.
    pub updates: Vec<LocalUpdate>,
}

/// Training and test windows of one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub client_id: String,
    pub train: WindowedDataset,
    pub test: WindowedDataset,
}

/// Server plus client states for one run.
#[derive(Debug, Clone)]
pub struct Federation {
    algorithm: Algorithm,
    cfg: RoundConfig,
    shape: MlpShape,
    server: ParamVector,
    clients: Vec<ClientState>,
    tests: Vec<WindowedDataset>,
    sampler: RngStream,
    round: usize,
    uplink_total: u64,
    downlink_total: u64,
}

impl Federation {
    /// Validates the configuration and initializes the global model from
    /// stream [`INIT_STREAM`] of `seed`.
    pub fn new(
        cfg: RoundConfig,
        data: Vec<ClientData>,
        algorithm: Algorithm,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::InvalidArgument("no clients".into()));
        }
        let window = data[0].train.window;
        for c in &data {
            if c.train.window != window || c.test.window != window {
                return Err(Error::InvalidArgument(format!(
                    "client {} uses a different window size",
                    c.client_id
                )));
            }
            if c.train.is_empty() {
                return Err(Error::EmptyDataset {
                    client: c.client_id.clone(),
                });
            }
        }
        if algorithm == Algorithm::FedGcc && cfg.strategy.kind == StrategyKind::KRelevant {
            let size = cfg.sampled_count(data.len());
            if cfg.strategy.k > size {
                return Err(Error::InvalidK {
                    k: cfg.strategy.k,
                    size,
                });
            }
        }
        let shape = MlpShape::traffic(window)?;
        let model = MlpModel::glorot(shape.clone(), &mut RngStream::new(seed, INIT_STREAM));
        let server = model.flatten();
        let mut clients = Vec::with_capacity(data.len());
        let mut tests = Vec::with_capacity(data.len());
        for (m, c) in data.into_iter().enumerate() {
            let rng = RngStream::new(seed, CLIENT_STREAM_BASE + m as u64);
            clients.push(ClientState::new(c.client_id, server.clone(), c.train, rng));
            tests.push(c.test);
        }
        Ok(Self {
            algorithm,
            cfg,
            shape,
            server,
            clients,
            tests,
            sampler: RngStream::new(seed, SAMPLER_STREAM),
            round: 0,
            uplink_total: 0,
            downlink_total: 0,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn config(&self) -> &RoundConfig {
        &self.cfg
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    pub fn server(&self) -> &ParamVector {
        &self.server
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn model(&self) -> MlpModel {
        // dims always match
        MlpModel::unflatten(self.shape.clone(), self.server.clone())
            .expect("server vector matches shape")
    }

    pub fn evaluate(&self) -> Result<MetricsSnapshot> {
        let sets: Vec<&WindowedDataset> = self.tests.iter().collect();
        evaluate(&self.model(), &sets)
    }

    /// Runs one communication round.
    pub fn step<E: ClientExecutor>(&mut self, executor: &E) -> Result<RoundOutcome> {
        let t = self.round;
        let cfg = &self.cfg;
        let algorithm = self.algorithm;
        let epsilon = cfg.epsilon_at(t);
        let participants = sample_clients(self.clients.len(), cfg.participation, &mut self.sampler);

        let mut selected: Vec<&mut ClientState> = {
            let mut mask = alloc::vec![false; self.clients.len()];
            for &p in &participants {
                mask[p] = true;
            }
            self.clients
                .iter_mut()
                .zip(mask)
                .filter_map(|(c, keep)| keep.then_some(c))
                .collect()
        };

        // a client that sat out earlier rounds starts from the current model
        for c in selected.iter_mut() {
            if c.w_local != self.server {
                c.w_local.clone_from(&self.server);
            }
        }
        let shape = &self.shape;
        let w_t = self.server.as_slice();
        let updates = executor
            .map_clients(&mut selected, |c| {
                local_round(c, shape, w_t, cfg, algorithm, epsilon)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;

        let grads: Vec<SparseGradient> = updates.iter().map(|u| u.phi_g.clone()).collect();
        let uplink: u64 = grads.iter().map(wire_bytes).sum();

        let strategy = match algorithm {
            Algorithm::FedGcc => cfg.strategy,
            Algorithm::FedAvg | Algorithm::FedProx => StrategyConfig::mean(),
        };
        let correlation = if strategy.kind.needs_correlation() {
            Some(correlation_matrix(&grads)?)
        } else {
            None
        };
        let mut personalized = Vec::with_capacity(grads.len());
        let mut selected_total = 0usize;
        for m in 0..grads.len() {
            let (p, count) = personalize(&strategy, correlation.as_ref(), &grads, m)?;
            selected_total += count;
            personalized.push(p);
        }
        let mean_selected = selected_total as f64 / grads.len() as f64;
        if !strategy.normalize
            && matches!(
                strategy.kind,
                StrategyKind::KRelevant | StrategyKind::DeltaThreshold
            )
        {
            log::debug!(
                "round {t}: personalized sums combine {mean_selected:.2} gradients on average"
            );
        }
        let g_t = server_average(&personalized)?;

        apply_global_step(&mut self.server, &g_t, cfg.eta * epsilon);
        for (c, u) in selected.iter_mut().zip(&updates) {
            finish_round_client(c, u, &g_t, cfg, algorithm, epsilon)?;
        }
        if !all_finite(&self.server) {
            return Err(Error::NonFinite { round: t });
        }

        let downlink = dense_wire_bytes(self.server.dim()) * participants.len() as u64;
        self.uplink_total += uplink;
        self.downlink_total += downlink;
        let loss = updates.iter().map(|u| u.loss).sum::<f64>() / updates.len() as f64;
        self.round += 1;

        let rmse = if cfg.eval_every > 0 && self.round.is_multiple_of(cfg.eval_every) {
            Some(self.evaluate()?.rmse)
        } else {
            None
        };
        Ok(RoundOutcome {
            record: RoundRecord {
                round: t,
                loss,
                uplink_bytes: uplink,
                downlink_bytes: downlink,
                cumulative_uplink: self.uplink_total,
                cumulative_downlink: self.downlink_total,
                rmse,
                mean_selected,
            },
            participants,
            correlation,
            g_t,
            updates,
        })
    }
}

/// Output of [`run_training`].
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub model: MlpModel,
    pub history: Vec<RoundRecord>,
    pub metrics: MetricsSnapshot,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
}

/// Runs `cfg.rounds` rounds and evaluates the final model on the pooled
/// test sets. `observe` sees every round as it completes.
pub fn run_training<E, F>(
    cfg: RoundConfig,
    data: Vec<ClientData>,
    algorithm: Algorithm,
    seed: u64,
    executor: &E,
    mut observe: F,
) -> Result<TrainingRun>
where
    E: ClientExecutor,
    F: FnMut(&RoundOutcome),
{
    let rounds = cfg.rounds;
    let mut fed = Federation::new(cfg, data, algorithm, seed)?;
    let mut history = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let outcome = fed.step(executor)?;
        observe(&outcome);
        history.push(outcome.record);
    }
    let metrics = fed.evaluate()?;
    Ok(TrainingRun {
        model: fed.model(),
        history,
        metrics,
        uplink_bytes: fed.uplink_total,
        downlink_bytes: fed.downlink_total,
    })
}
