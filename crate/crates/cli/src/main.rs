//! `vrfrbs` command line: experiment runs, summaries, estimator checks, data generation.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical divergence, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use vrfrbs_core::estimators::EstimatorKind;
use vrfrbs_core::harness::{self, ExperimentConfig, RunOptions};
use vrfrbs_core::problems::{self, io};
use vrfrbs_core::verification::{self, VerifyConfig};
use vrfrbs_core::{Error, Execution};

#[derive(Parser)]
#[command(name = "vrfrbs", version, about = "Variance-reduced forward-reflected-backward splitting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment matrix from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; falls back to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker count for (algorithm, seed) cells.
        #[arg(long)]
        jobs: Option<usize>,
        /// Run every loop sequentially.
        #[arg(long)]
        sequential: bool,
    },
    /// Rebuild summary.csv from runs.csv.
    Summarize {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Check an estimator's defining identity and variance recursion.
    Verify {
        /// Estimator kind, or `all`.
        #[arg(long)]
        estimator: String,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = verification::DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Write a synthetic dataset in the text format.
    GenData {
        #[arg(long, value_enum)]
        family: DataFamily,
        #[arg(long)]
        out: PathBuf,
        /// Samples (auc) or transitions (mdp).
        #[arg(long)]
        n: Option<usize>,
        /// Feature dimension.
        #[arg(long)]
        d: Option<usize>,
        #[arg(long, default_value_t = 0.1)]
        p_pos: f64,
        #[arg(long, default_value_t = 0.1)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 100)]
        states: usize,
        #[arg(long, default_value_t = 10)]
        actions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DataFamily {
    Auc,
    Mdp,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Infeasible(_) => 2,
        Error::Divergence { .. } => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            out,
            jobs,
            sequential,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))?;
            if jobs == Some(0) {
                return Err(Error::Config("--jobs must be at least 1".into()));
            }
            let exec = if sequential {
                Execution::Sequential
            } else {
                Execution::Parallel
            };
            let res = harness::run_experiment(&cfg, &out, RunOptions { jobs, exec })?;
            for (algo, mean) in harness::final_means(&res.cells) {
                println!("{algo}: final mean rel_residual {mean:.6e}");
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Summarize { dir } => {
            let rows = harness::summarize(&dir)?;
            println!("wrote {} rows to {}", rows.len(), dir.join("summary.csv").display());
            Ok(())
        }
        Command::Verify {
            estimator,
            trials,
            seed,
            threshold,
        } => {
            let kinds: Vec<EstimatorKind> = if estimator == "all" {
                EstimatorKind::ALL.to_vec()
            } else {
                vec![estimator
                    .parse()
                    .map_err(|e: Error| Error::Config(e.to_string()))?]
            };
            let cfg = VerifyConfig {
                trials,
                seed,
                threshold,
                ..VerifyConfig::default()
            };
            let mut failed = 0;
            for kind in kinds {
                for r in verification::standard_suite(kind, &cfg)? {
                    println!("{}", r.to_line());
                    failed += usize::from(!r.pass);
                }
            }
            if failed > 0 {
                return Err(Error::InvalidArgument(format!("{failed} check(s) failed")));
            }
            Ok(())
        }
        Command::GenData {
            family,
            out,
            n,
            d,
            p_pos,
            noise_sigma,
            states,
            actions,
            seed,
        } => {
            match family {
                DataFamily::Auc => {
                    let ds = problems::gen_auc_dataset(n.unwrap_or(5000), d.unwrap_or(50), p_pos, noise_sigma, seed)?;
                    io::write_auc(&out, &ds)?;
                }
                DataFamily::Mdp => {
                    let d = d.unwrap_or(21);
                    let mdp = problems::gen_random_mdp(states, actions, seed)?;
                    let features = problems::random_features(states, d, seed)?;
                    let ts = problems::sample_transitions(&mdp, n.unwrap_or(2000), &features, seed)?;
                    io::write_transitions(&out, &ts)?;
                }
            }
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
