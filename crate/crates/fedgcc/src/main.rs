use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedgcc::commands::{self, RunSpec};
use fedgcc::config::{ExperimentConfig, SyntheticSpec};
use fedgcc::executor::Threaded;
use fedgcc::{AppError, Result};

#[derive(Parser)]
#[command(
    name = "fedgcc",
    version,
    about = "Federated traffic forecasting with compressed, correlation-aware aggregation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic traffic as `slot,client_id,volume` CSV.
    GenData(GenDataArgs),
    /// Train one configuration and write summary.json and history.csv.
    Train(ExperimentArgs),
    /// Train several algorithms on the same data and write comparison.csv.
    Compare {
        #[command(flatten)]
        args: ExperimentArgs,
        /// Comma-separated runs such as `fedavg,fedprox:mu=0.1,fedgcc:all-correlated`.
        #[arg(long, value_delimiter = ',')]
        runs: Vec<String>,
    },
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 8)]
    clients: usize,
    #[arg(long, default_value_t = 2016)]
    slots: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.7)]
    heterogeneity: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Every flag overrides the corresponding config-file value.
#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algorithm: Option<String>,
    /// mean, k-relevant, delta-threshold or all-correlated
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    /// Divide k-relevant and threshold sums by the number of selected clients.
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    participation: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    train_slots: Option<usize>,
    /// Traffic CSV; synthetic data is generated when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    heterogeneity: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    dump_correlation: bool,
}

impl ExperimentArgs {
    fn resolve(self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        set!(
            algorithm,
            strategy,
            gamma,
            k,
            delta,
            tau,
            batch_size,
            epsilon,
            eta,
            rounds,
            participation,
            mu,
            seed,
            window,
            out,
            eval_every
        );
        if self.train_slots.is_some() {
            cfg.train_slots = self.train_slots;
        }
        if self.data.is_some() {
            cfg.data = self.data;
        }
        if let Some(v) = self.clients {
            cfg.synthetic.clients = v;
        }
        if let Some(v) = self.slots {
            cfg.synthetic.slots = v;
        }
        if let Some(v) = self.heterogeneity {
            cfg.synthetic.heterogeneity = v;
        }
        cfg.normalize |= self.normalize;
        cfg.dump_correlation |= self.dump_correlation;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let spec = SyntheticSpec {
                clients: a.clients,
                slots: a.slots,
                heterogeneity: a.heterogeneity,
                seed: None,
            };
            commands::gen_data(&spec, a.seed, &a.out)?;
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let executor = Threaded::from_env()?;
            let out = commands::train(&cfg, &executor)?;
            println!("{}", serde_json::to_string(&out.summary)?);
        }
        Command::Compare { args, runs } => {
            let cfg = args.resolve()?;
            let specs = if runs.is_empty() {
                RunSpec::default_set()
            } else {
                runs.iter()
                    .map(|r| r.parse())
                    .collect::<Result<Vec<RunSpec>>>()?
            };
            let executor = Threaded::from_env()?;
            for row in commands::compare(&cfg, &specs, &executor)? {
                println!("{}", serde_json::to_string(&row)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// One JSON object on stderr.
fn report_error(e: &AppError) {
    let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
    eprintln!("{line}");
}
