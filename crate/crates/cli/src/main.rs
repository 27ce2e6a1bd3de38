//! `ucfed`: command-line driver for the federated recommender simulator.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ucfed_core::experiment::{self, ExperimentConfig, SweepParam, UtilityReport};
use ucfed_core::{AttackReport, Error};

#[derive(Parser, Debug)]
#[command(name = "ucfed", version, about = "User-consented federated recommender simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Upper bound on concurrently trained clients. Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Disable LDP noise (clipping still applies). For testing only.
    #[arg(long, global = true)]
    no_noise: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the dataset, split it and persist it with its fingerprint.
    Ingest,
    /// Federated training on the persisted dataset (ingesting first if needed).
    Train,
    /// HR/NDCG of the saved checkpoint, overall and per privacy group.
    Evaluate,
    /// Attribute-inference attack on the saved user embeddings.
    Attack,
    /// Central protection of selected users against the saved filters.
    Protect {
        /// One `user_id, attribute, cap, tolerance` request per line.
        #[arg(long, value_name = "PATH")]
        requests: PathBuf,
    },
    /// One full experiment per value of a parameter.
    Sweep {
        /// beta, alpha or epsilon.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
    },
    /// Ingest, train, evaluate and attack in one go.
    Run,
}

fn load_config(c: &Common) -> Result<ExperimentConfig, Error> {
    let path = c
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(seed) = c.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    if let Some(w) = c.workers {
        cfg.fed.workers = w;
    }
    if c.no_noise {
        cfg.fed.noise = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn noise_banner(cfg: &ExperimentConfig) {
    if !cfg.fed.noise {
        let line = "*".repeat(64);
        println!("{line}\n*  LDP NOISE DISABLED: uploads are clipped but not perturbed  *\n{line}");
        eprintln!("warning: LDP noise disabled; results carry no privacy guarantee");
    }
}

fn print_utility(r: &UtilityReport, k: usize) {
    println!("hr@{k} = {:.4}  ndcg@{k} = {:.4}  ({} users)", r.all.hr, r.all.ndcg, r.all.users);
    for (name, m) in [("private", &r.private), ("non-private", &r.non_private)] {
        if let Some(m) = m {
            println!("  {name:<11} hr@{k} = {:.4}  ndcg@{k} = {:.4}  ({} users)", m.hr, m.ndcg, m.users);
        }
    }
}

fn print_attacks(reports: &[AttackReport]) {
    for a in reports {
        println!("attack {:<12} {} = {:.4}  ({} targets)", a.attribute, a.metric, a.value, a.n_targets);
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = load_config(&cli.common)?;
    noise_banner(&cfg);
    match cli.command {
        Command::Ingest => {
            let (ds, _) = experiment::run_stage(&cfg, || experiment::ingest(&cfg))?;
            println!("ingested {} users, {} items into {}", ds.num_users(), ds.num_items(), cfg.out.display());
        }
        Command::Train => {
            let server = experiment::run_stage(&cfg, || {
                let (ds, profiles) = experiment::load_or_ingest(&cfg)?;
                experiment::train_stage(&cfg, &ds, &profiles)
            })?;
            println!("trained {} rounds; state {}", server.round(), server.state_hash());
        }
        Command::Evaluate => {
            let report = experiment::run_stage(&cfg, || {
                let (ds, profiles) = experiment::load_or_ingest(&cfg)?;
                let ck = experiment::saved_model(&cfg)?;
                experiment::evaluate_stage(&cfg, &ck.model, &ds, &profiles)
            })?;
            print_utility(&report, cfg.k);
        }
        Command::Attack => {
            let reports = experiment::run_stage(&cfg, || {
                let (_, profiles) = experiment::load_or_ingest(&cfg)?;
                let ck = experiment::saved_model(&cfg)?;
                experiment::attack_stage(&cfg, &ck.model, &profiles)
            })?;
            print_attacks(&reports);
        }
        Command::Protect { requests } => {
            let traces = experiment::run_stage(&cfg, || experiment::protect_stage(&cfg, &requests))?;
            for t in &traces {
                println!(
                    "user {} attribute {}: loss {:.6} -> {:.6} in {} iterations ({:?})",
                    t.request.user,
                    t.request.attribute,
                    t.initial_loss(),
                    t.final_loss(),
                    t.iterations(),
                    t.stop
                );
            }
        }
        Command::Sweep { param, values } => {
            let param: SweepParam = param.parse()?;
            let rows = experiment::sweep(&cfg, param, &values)?;
            println!("{} rows written to {}", rows.len(), cfg.out_path(experiment::SWEEP_FILE).display());
        }
        Command::Run => {
            let s = experiment::run_experiment(&cfg)?;
            println!("trained {} rounds", s.rounds);
            print_utility(&s.utility, cfg.k);
            print_attacks(&s.attacks);
        }
    }
    noise_banner(&cfg);
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config_error() {
        2
    } else if e.is_data_error() {
        3
    } else {
        4
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
