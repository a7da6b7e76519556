use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use fqe_select::bench::{
    emit_results, method_key, parse_results_csv, rate_check, run_experiment, summarize,
    ExperimentConfig, RateOutcome,
};
use fqe_select::data::{sample_dataset, split_dataset, TransitionDataset};
use fqe_select::data::{fit_feature_normalization, FeatureMap};
use fqe_select::kernel::Kernel;
use fqe_select::mdp::{greedy_expert, mix_policies, HorizonSpec, Policy};
use fqe_select::ops::OperatorContext;
use fqe_select::select::{
    select_klm, select_klm_fp, select_rm, select_rm_fp, FixedPointConfig,
};
use fqe_select::FqeError;

/// Hyperparameter selection for fitted Q-evaluation: dataset generation,
/// single selections, seeded sweeps, rate checks and report summaries.
#[derive(Parser)]
#[command(name = "fqe-select", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a transition dataset from the configured environment.
    Generate {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Number of transitions.
        #[arg(long)]
        n: usize,
        /// Sampling seed.
        #[arg(long)]
        seed: u64,
        /// Output dataset path (line-delimited JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one selection method on a previously generated dataset.
    Select {
        #[arg(long)]
        config: PathBuf,
        /// Dataset produced by `generate`.
        #[arg(long)]
        data: PathBuf,
        /// One of: rm, klm, rm-fp, klm-fp.
        #[arg(long)]
        method: String,
        /// Kernel spec for the kernel methods, e.g. "exp:p=1:sigma=0.1".
        #[arg(long)]
        kernel: Option<String>,
        /// Finite horizon length (rm/klm).
        #[arg(long, default_value_t = 10)]
        horizon: usize,
        /// Discount factor; overrides the first configured horizon point.
        #[arg(long)]
        gamma: Option<f64>,
        /// Evaluation-policy mixture weight on the uniform policy.
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        /// Averaging steps for the fixed-point methods; defaults to
        /// ceil(n^(1/4)).
        #[arg(long)]
        h_star: Option<usize>,
    },
    /// Run the full configured sweep and emit result artifacts.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for results.csv, summary.json and plot data.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the log-log convergence rate of one method from a results file.
    RateCheck {
        /// Path to a results.csv emitted by `sweep`.
        #[arg(long)]
        results: PathBuf,
        /// Method key, e.g. "RM" or "KLM(exp:p=1:sigma=0.1)".
        #[arg(long)]
        method: String,
    },
    /// Print per-method aggregates from a results file.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, FqeError> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_json(&text)
}

fn run(cli: Cli) -> Result<u8, FqeError> {
    match cli.command {
        Command::Generate { config, n, seed, out } => {
            let cfg = load_config(&config)?;
            let mdp = cfg.env.build()?;
            let mu = cfg.behavior.resolve(&mdp)?;
            let d = sample_dataset(&mdp, &mu, n, seed)?;
            let file = File::create(&out)?;
            d.write_to(BufWriter::new(file))?;
            eprintln!("wrote {} transitions to {}", d.len(), out.display());
            Ok(0)
        }
        Command::Select { config, data, method, kernel, horizon, gamma, eps, h_star } => {
            let cfg = load_config(&config)?;
            let mdp = cfg.env.build()?;
            let d = TransitionDataset::read_from(BufReader::new(File::open(&data)?))?;
            let gamma = gamma.unwrap_or(cfg.horizons[0].gamma);
            let finite = HorizonSpec::finite(horizon, gamma)?;
            let uniform = Policy::uniform(mdp.n_states, mdp.n_actions);
            let expert = greedy_expert(&mdp, &finite);
            let policy = mix_policies(&uniform, &expert, eps)?;
            let (train, valid) = split_dataset(&d, cfg.train_fraction, d.seed)?;
            let cset =
                fqe_select::bench::build_candidate_set(&cfg.candidates.resolve()?, &train, &mdp)?;
            let kernel = match kernel {
                Some(spec) => {
                    let embedding = fit_feature_normalization(
                        &FeatureMap::one_hot(mdp.n_states, mdp.n_actions),
                        &train,
                    )?;
                    Some(Kernel::parse(&spec, embedding)?)
                }
                None => None,
            };
            let fp_cfg = match h_star {
                Some(h) => FixedPointConfig::with_steps(h)?,
                None => FixedPointConfig::for_dataset_size(valid.len()),
            };
            let report = match method.as_str() {
                "rm" => {
                    let ctx = OperatorContext::new(&mdp, &policy, &finite);
                    select_rm(&cset, &valid, &ctx)?
                }
                "klm" => {
                    let k = kernel.ok_or_else(|| {
                        FqeError::Config("klm requires --kernel".into())
                    })?;
                    let ctx = OperatorContext::new(&mdp, &policy, &finite);
                    select_klm(&cset, &k, &valid, &ctx)?
                }
                "rm-fp" => {
                    let inf = HorizonSpec::infinite(gamma)?;
                    let ctx = OperatorContext::new(&mdp, &policy, &inf);
                    select_rm_fp(&cset, &fp_cfg, &valid, &ctx)?
                }
                "klm-fp" => {
                    let k = kernel.ok_or_else(|| {
                        FqeError::Config("klm-fp requires --kernel".into())
                    })?;
                    let inf = HorizonSpec::infinite(gamma)?;
                    let ctx = OperatorContext::new(&mdp, &policy, &inf);
                    select_klm_fp(&cset, &k, &fp_cfg, &valid, &ctx)?
                }
                other => {
                    return Err(FqeError::Config(format!(
                        "unknown method '{other}'; use rm, klm, rm-fp or klm-fp"
                    )))
                }
            };
            println!("{report}");
            Ok(0)
        }
        Command::Sweep { config, out } => {
            let cfg = load_config(&config)?;
            let started = Instant::now();
            let rows = run_experiment(&cfg)?;
            let elapsed = started.elapsed();
            emit_results(&rows, &out)?;
            eprintln!(
                "sweep: {} rows in {:.1}s -> {}",
                rows.len(),
                elapsed.as_secs_f64(),
                out.display()
            );
            if !rows.is_empty() && rows.iter().all(|r| !r.is_ok()) {
                eprintln!("every row failed its assumptions; see the status column");
                return Ok(3);
            }
            Ok(0)
        }
        Command::RateCheck { results, method } => {
            let rows = parse_results_csv(&std::fs::read_to_string(&results)?)?;
            match rate_check(&rows, &method)? {
                RateOutcome::Slope(s) => println!("{method}: slope {s}"),
                RateOutcome::Floor => println!("{method}: floor"),
            }
            Ok(0)
        }
        Command::Report { results } => {
            let rows = parse_results_csv(&std::fs::read_to_string(&results)?)?;
            let keys: std::collections::BTreeSet<String> =
                rows.iter().map(method_key).collect();
            eprintln!("{} rows across {} method keys", rows.len(), keys.len());
            println!("{}", serde_json::to_string_pretty(&summarize(&rows))?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                FqeError::Config(_) | FqeError::Json(_) => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
