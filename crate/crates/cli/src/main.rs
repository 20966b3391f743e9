use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use diffrep_core::harness::{
    self, compare_batches, load_batch, oracle_check, CheckStatus, RunConfig, RunOptions,
};
use diffrep_core::metrics::{mean_pairwise_distance, shell_stats};
use diffrep_core::score::{StubBackend, StubServer};

/// Sample differentiable representations by pulling the probability-flow
/// ODE back to parameter space.
#[derive(Debug, Parser)]
#[command(name = "diffrep-flow", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the separated-noise sampler and write a run directory.
    Sample(RunArgs),
    /// Run the gradient-ascent baseline (SDS or SJC) and write a run directory.
    Baseline(RunArgs),
    /// Check derivatives, pullback optimality and view consistency for the configured representation.
    OracleCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize one sample batch or compare two (run directories or batch JSON files).
    Metrics {
        #[arg(required = true, num_args = 1..=2)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 200)]
        permutations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the noise-prediction protocol on loopback for tests.
    ServeStub {
        /// Serve the analytic target of this config; zeros when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dimension for the zero predictor.
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value = "127.0.0.1:0")]
        addr: String,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base address of a remote noise predictor.
    #[arg(long)]
    endpoint: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

impl RunArgs {
    fn options(&self) -> RunOptions {
        RunOptions {
            seed: self.seed,
            out: self.out.clone(),
            endpoint: self.endpoint.clone(),
            jobs: self.jobs,
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample(args) => {
            let cfg = load_config(&args.config)?;
            let summary = harness::run_sample(&cfg, &args.options())?;
            log::info!("wrote {}", summary.out_dir.display());
            print_json(&summary.metrics)
        }
        Command::Baseline(args) => {
            let cfg = load_config(&args.config)?;
            let summary = harness::run_baseline(&cfg, &args.options())?;
            log::info!("wrote {}", summary.out_dir.display());
            print_json(&summary.metrics)
        }
        Command::OracleCheck { config, seed } => {
            let cfg = load_config(&config)?;
            let checks = oracle_check(&cfg, seed.unwrap_or(cfg.seed))?;
            let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
            let mut failed = 0;
            for c in &checks {
                let tag = match c.status {
                    CheckStatus::Pass => "PASS",
                    CheckStatus::Fail => {
                        failed += 1;
                        "FAIL"
                    }
                    CheckStatus::Skip => "SKIP",
                };
                println!("{tag}  {:<width$}  {}", c.name, c.detail);
            }
            if failed > 0 {
                bail!("{failed} oracle check(s) failed");
            }
            Ok(())
        }
        Command::Metrics {
            inputs,
            permutations,
            seed,
            out,
        } => {
            let batches = inputs
                .iter()
                .map(|p| load_batch(p).with_context(|| format!("loading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let report = match batches.as_slice() {
                [a] => serde_json::json!({
                    "tag": a.tag,
                    "n": a.len(),
                    "shell": shell_stats(&a.samples)?,
                    "mean_pairwise_distance": mean_pairwise_distance(&a.samples)?,
                    "version": harness::VERSION,
                }),
                [a, b] => compare_batches(a, b, permutations, seed)?,
                _ => unreachable!("clap limits inputs to one or two"),
            };
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            print_json(&report)
        }
        Command::ServeStub { config, dim, addr } => {
            let backend = match config {
                Some(path) => StubBackend::Analytic(load_config(&path)?.target.analytic_model()?),
                None => StubBackend::Zeros { dim },
            };
            let server = StubServer::spawn(&addr, backend)?;
            // first stdout line is the endpoint so callers can connect
            println!("{}", server.endpoint());
            std::io::stdout().flush()?;
            log::info!("serving on {}; close stdin to stop", server.endpoint());
            // serve until stdin closes
            for line in std::io::stdin().lock().lines() {
                line?;
            }
            drop(server);
            Ok(())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DIFFREP_FLOW_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
