use fedgcc_core::aggregation::{StrategyConfig, StrategyKind};
use fedgcc_core::compression::{densify, kept_count};
use fedgcc_core::data::{generate_synthetic, prepare_client, SplitSpec};
use fedgcc_core::federated::{
    run_training, Algorithm, ClientData, Federation, RoundConfig, RoundRecord, Sequential,
    CLIENT_STREAM_BASE,
};
use fedgcc_core::model::{loss_and_gradient, MlpModel, MlpShape};
use fedgcc_core::RngStream;

fn clients(n: usize, slots: usize, seed: u64) -> Vec<ClientData> {
    generate_synthetic(n.max(2), slots, seed, 0.7)
        .unwrap()
        .values()
        .take(n)
        .map(|s| {
            let split = SplitSpec::default_for(s.slot_count()).unwrap();
            let (train, test) = prepare_client(s, 6, split).unwrap();
            ClientData {
                client_id: s.client_id.clone(),
                train,
                test,
            }
        })
        .collect()
}

fn cfg(gamma: f64, kind: StrategyKind, rounds: usize) -> RoundConfig {
    RoundConfig {
        gamma,
        rounds,
        // the raw sums are unstable over more than a few rounds
        strategy: StrategyConfig {
            k: 2,
            normalize: true,
            ..StrategyConfig::with_kind(kind)
        },
        ..RoundConfig::default()
    }
}

#[test]
fn clients_track_the_server_model() {
    for kind in [
        StrategyKind::Mean,
        StrategyKind::KRelevant,
        StrategyKind::DeltaThreshold,
        StrategyKind::AllCorrelated,
    ] {
        let mut fed =
            Federation::new(cfg(0.05, kind, 0), clients(4, 432, 1), Algorithm::FedGcc, 3).unwrap();
        for _ in 0..6 {
            fed.step(&Sequential).unwrap();
            for c in fed.clients() {
                assert_eq!(c.w_local, *fed.server(), "{kind:?}");
            }
        }
    }
}

#[test]
fn tracking_vectors_sum_to_zero_under_mean() {
    let mut fed = Federation::new(
        cfg(0.05, StrategyKind::Mean, 0),
        clients(5, 432, 2),
        Algorithm::FedGcc,
        4,
    )
    .unwrap();
    for _ in 0..15 {
        fed.step(&Sequential).unwrap();
        let d = fed.server().dim();
        for i in 0..d {
            let s: f64 = fed.clients().iter().map(|c| c.h[i]).sum();
            assert!(s.abs() < 1e-9, "coordinate {i}: {s}");
        }
    }
}

#[test]
fn residual_conserves_gradient_mass() {
    let mut fed = Federation::new(
        cfg(0.01, StrategyKind::KRelevant, 0),
        clients(4, 432, 5),
        Algorithm::FedGcc,
        6,
    )
    .unwrap();
    let d = fed.server().dim();
    let mut sent = vec![vec![0.0; d]; 4];
    let mut produced = vec![vec![0.0; d]; 4];
    for _ in 0..30 {
        let out = fed.step(&Sequential).unwrap();
        for (&m, u) in out.participants.iter().zip(&out.updates) {
            for (s, x) in sent[m].iter_mut().zip(densify(&u.phi_g).iter()) {
                *s += x;
            }
            for (p, x) in produced[m].iter_mut().zip(u.g_fresh.iter()) {
                *p += x;
            }
        }
    }
    for (m, c) in fed.clients().iter().enumerate() {
        for i in 0..d {
            let lhs = sent[m][i] + c.error_feedback.e[i];
            assert!(
                (lhs - produced[m][i]).abs() < 1e-9,
                "client {m} coordinate {i}"
            );
        }
    }
}

#[test]
fn byte_counters_follow_the_wire_model() {
    let rounds = 7;
    let run = run_training(
        cfg(0.01, StrategyKind::AllCorrelated, rounds),
        clients(3, 432, 1),
        Algorithm::FedGcc,
        1,
        &Sequential,
        |_| {},
    )
    .unwrap();
    let d = MlpShape::traffic(6).unwrap().param_count() as u64;
    let per_round = 3 * 8 * kept_count(d as usize, 0.01).unwrap() as u64;
    assert_eq!(run.uplink_bytes, rounds as u64 * per_round);
    assert_eq!(run.downlink_bytes, rounds as u64 * 3 * 4 * d);
    let mut prev = 0;
    for r in &run.history {
        assert_eq!(r.uplink_bytes, per_round);
        assert!(r.cumulative_uplink > prev);
        prev = r.cumulative_uplink;
    }

    let dense = run_training(
        cfg(1.0, StrategyKind::Mean, 2),
        clients(3, 432, 1),
        Algorithm::FedAvg,
        1,
        &Sequential,
        |_| {},
    )
    .unwrap();
    assert_eq!(dense.uplink_bytes, 2 * 3 * 4 * d);
}

fn history_of(algorithm: Algorithm, c: RoundConfig, seed: u64) -> (Vec<RoundRecord>, f64) {
    let run = run_training(c, clients(3, 432, 9), algorithm, seed, &Sequential, |_| {}).unwrap();
    (run.history, run.metrics.rmse)
}

#[test]
fn runs_are_deterministic() {
    let c = RoundConfig {
        participation: 0.67,
        ..cfg(0.05, StrategyKind::DeltaThreshold, 8)
    };
    let a = history_of(Algorithm::FedGcc, c.clone(), 2);
    let b = history_of(Algorithm::FedGcc, c.clone(), 2);
    assert_eq!(a.0, b.0);
    assert_eq!(a.1.to_bits(), b.1.to_bits());
    let other = history_of(Algorithm::FedGcc, c, 3);
    assert_ne!(a.0, other.0);
}

#[test]
fn fedprox_without_proximal_term_is_fedavg() {
    let c = cfg(0.05, StrategyKind::Mean, 6);
    let avg = history_of(Algorithm::FedAvg, c.clone(), 1);
    let prox = history_of(Algorithm::FedProx, c.clone(), 1);
    assert_eq!(avg.0, prox.0);
    assert_eq!(avg.1.to_bits(), prox.1.to_bits());
    let pulled = history_of(Algorithm::FedProx, RoundConfig { mu: 0.5, ..c }, 1);
    assert_ne!(avg.0, pulled.0);
}

#[test]
fn zero_rounds_returns_initial_model() {
    let run = run_training(
        cfg(0.05, StrategyKind::Mean, 0),
        clients(2, 432, 1),
        Algorithm::FedGcc,
        8,
        &Sequential,
        |_| {},
    )
    .unwrap();
    assert!(run.history.is_empty());
    let init = MlpModel::glorot(MlpShape::traffic(6).unwrap(), &mut RngStream::new(8, 0));
    assert_eq!(run.model, init);
}

#[test]
fn single_client_is_plain_sgd() {
    let seed = 12;
    let c = RoundConfig {
        gamma: 1.0,
        rounds: 20,
        strategy: StrategyConfig::mean(),
        milestones: vec![5, 12],
        ..RoundConfig::default()
    };
    let data = clients(1, 432, 3);
    let train = data[0].train.clone();
    let mut fed = Federation::new(c.clone(), data, Algorithm::FedGcc, seed).unwrap();

    let shape = MlpShape::traffic(6).unwrap();
    let mut w = MlpModel::glorot(shape.clone(), &mut RngStream::new(seed, 0))
        .flatten()
        .into_inner();
    let mut rng = RngStream::new(seed, CLIENT_STREAM_BASE);
    for t in 0..c.rounds {
        let eps = c.epsilon_at(t);
        let start = w.clone();
        for _ in 0..c.tau {
            let batch = train.sample_batch(c.batch_size, &mut rng).unwrap();
            let (_, g) = loss_and_gradient(&shape, &w, &batch).unwrap();
            for (wi, gi) in w.iter_mut().zip(g.iter()) {
                *wi -= eps * gi;
            }
        }
        let pure = w.clone();
        // the server replays the displacement through (w_t - w_tau) / eps
        for (wi, s) in w.iter_mut().zip(&start) {
            let g = (s - *wi) / eps;
            *wi = s - c.eta * eps * g;
        }
        fed.step(&Sequential).unwrap();
        assert_eq!(fed.server().as_slice(), w.as_slice(), "round {t}");
        for (a, b) in w.iter().zip(&pure) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}

#[test]
fn non_participants_are_frozen() {
    let c = RoundConfig {
        participation: 0.5,
        ..cfg(0.05, StrategyKind::Mean, 0)
    };
    let mut fed = Federation::new(c, clients(4, 432, 1), Algorithm::FedGcc, 2).unwrap();
    for _ in 0..5 {
        let before = fed.clients().to_vec();
        let out = fed.step(&Sequential).unwrap();
        assert_eq!(out.participants.len(), 2);
        for (m, c) in fed.clients().iter().enumerate() {
            if !out.participants.contains(&m) {
                assert_eq!(*c, before[m]);
            } else {
                assert_eq!(c.w_local, *fed.server());
            }
        }
    }
}

#[test]
fn k_larger_than_sample_is_rejected() {
    let c = RoundConfig {
        strategy: StrategyConfig {
            k: 5,
            ..StrategyConfig::default()
        },
        ..RoundConfig::default()
    };
    assert!(Federation::new(c, clients(4, 432, 1), Algorithm::FedGcc, 1).is_err());
}

#[test]
fn raw_sums_blow_up() {
    let c = RoundConfig {
        strategy: StrategyConfig {
            k: 4,
            ..StrategyConfig::default()
        },
        gamma: 0.1,
        rounds: 40,
        ..RoundConfig::default()
    };
    let err = run_training(
        c,
        clients(4, 432, 1),
        Algorithm::FedGcc,
        1,
        &Sequential,
        |_| {},
    )
    .unwrap_err();
    assert!(matches!(err, fedgcc_core::Error::NonFinite { .. }), "{err}");
}
