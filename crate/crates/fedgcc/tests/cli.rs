use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fedgcc::report::{read_comparison, read_summary};

fn fedgcc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedgcc"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_line(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).expect("error line is JSON")
}

const SMALL: &[&str] = &["--clients", "3", "--slots", "432", "--rounds", "4"];

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "gen-data",
        "--clients",
        "8",
        "--slots",
        "2016",
        "--seed",
        "1",
        "--heterogeneity",
        "0.5",
        "--out",
    ];
    ok(&fedgcc(dir.path(), &[&args[..], &["a.csv"]].concat()));
    ok(&fedgcc(dir.path(), &[&args[..], &["b.csv"]].concat()));
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.csv")).unwrap());
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 1 + 8 * 2016);
}

#[test]
fn gen_data_needs_two_clients() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedgcc(
        dir.path(),
        &["gen-data", "--clients", "1", "--out", "x.csv"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "invalid-config");
}

#[test]
fn train_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    ok(&fedgcc(
        dir.path(),
        &[
            &["train"],
            SMALL,
            &[
                "--strategy",
                "all-correlated",
                "--gamma",
                "0.1",
                "--out",
                "run",
            ],
        ]
        .concat(),
    ));
    let summary = read_summary(&dir.path().join("run/summary.json")).unwrap();
    assert_eq!(summary.rounds, 4);
    assert_eq!(summary.strategy, "all-correlated");
    let history = fs::read_to_string(dir.path().join("run/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 5);
    assert!(history.starts_with("round,loss,uplink_bytes,downlink_bytes,rmse\n"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"rounds": 3, "gamma": 0.5, "k": 2, "synthetic": {"clients": 3, "slots": 432}, "out": "from_file"}"#,
    )
    .unwrap();
    ok(&fedgcc(
        dir.path(),
        &[
            "train",
            "--config",
            "cfg.json",
            "--gamma",
            "0.2",
            "--normalize",
        ],
    ));
    let s = read_summary(&dir.path().join("from_file/summary.json")).unwrap();
    assert_eq!((s.rounds, s.gamma, s.k), (3, 0.2, 2));

    ok(&fedgcc(
        dir.path(),
        &[
            "train", "--config", "cfg.json", "--rounds", "2", "--out", "flag_dir",
        ],
    ));
    let s = read_summary(&dir.path().join("flag_dir/summary.json")).unwrap();
    assert_eq!((s.rounds, s.gamma), (2, 0.5));
}

#[test]
fn unknown_config_keys_fail_validation() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), r#"{"roundz": 3}"#).unwrap();
    let out = fedgcc(dir.path(), &["train", "--config", "cfg.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "invalid-config");
}

#[test]
fn invalid_gamma_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedgcc(dir.path(), &["train", "--gamma", "1.5", "--out", "never"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("never").exists());
}

#[test]
fn data_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.csv"),
        "slot,client_id,volume\n0,a,1\n1,a,abc\n",
    )
    .unwrap();
    let out = fedgcc(dir.path(), &["train", "--data", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_line(&out);
    assert_eq!(err["error"], "malformed-row");
    assert!(err["message"].as_str().unwrap().contains("line 3"));

    let out = fedgcc(dir.path(), &["train", "--data", "missing.csv"]);
    assert_eq!(error_line(&out)["error"], "missing-file");
}

#[test]
fn divergence_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedgcc(
        dir.path(),
        &[
            "train",
            "--clients",
            "4",
            "--slots",
            "432",
            "--rounds",
            "30",
            "--gamma",
            "0.1",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"], "diverged");
}

#[test]
fn fedprox_without_proximal_term_matches_fedavg() {
    let dir = tempfile::tempdir().unwrap();
    ok(&fedgcc(
        dir.path(),
        &[
            &["train"],
            SMALL,
            &["--algorithm", "fedavg", "--out", "avg"],
        ]
        .concat(),
    ));
    ok(&fedgcc(
        dir.path(),
        &[
            &["train"],
            SMALL,
            &["--algorithm", "fedprox", "--mu", "0", "--out", "prox"],
        ]
        .concat(),
    ));
    let avg = read_summary(&dir.path().join("avg/summary.json")).unwrap();
    let prox = read_summary(&dir.path().join("prox/summary.json")).unwrap();
    assert_eq!((avg.rmse, avg.mae, avg.r2), (prox.rmse, prox.mae, prox.r2));
    assert_eq!(
        fs::read(dir.path().join("avg/history.csv")).unwrap(),
        fs::read(dir.path().join("prox/history.csv")).unwrap()
    );
}

#[test]
fn compare_shares_seed_and_data() {
    let dir = tempfile::tempdir().unwrap();
    let runs = "fedavg,fedgcc:k-relevant,fedgcc:all-correlated";
    ok(&fedgcc(
        dir.path(),
        &[
            &["compare"],
            SMALL,
            &[
                "--gamma",
                "0.1",
                "--k",
                "2",
                "--normalize",
                "--seed",
                "5",
                "--out",
                "cmp",
                "--runs",
                runs,
            ],
        ]
        .concat(),
    ));
    let rows =
        read_comparison(fs::File::open(dir.path().join("cmp/comparison.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows
        .iter()
        .all(|r| r.seed == 5 && r.data_hash == rows[0].data_hash));
    assert_eq!(rows[1].notes, "k-relevant");
    // sparse uploads cost 8 bytes per kept entry against 4 per dense entry
    let ratio = rows[1].uplink_bytes as f64 / rows[0].uplink_bytes as f64;
    assert!((ratio - 2.0 * 0.1).abs() < 1e-3, "{ratio}");
    assert!(dir
        .path()
        .join("cmp/fedgcc-all-correlated/summary.json")
        .exists());
}

#[test]
fn compare_rejects_bad_run_names() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedgcc(dir.path(), &["compare", "--runs", "fedavg,fedsgd"]);
    assert_eq!(out.status.code(), Some(2));
}
