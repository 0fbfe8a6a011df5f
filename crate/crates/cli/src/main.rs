use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use cellfree::evaluation::{self, run_campaign, run_sweep, write_outputs, write_sweep};
use cellfree::orchestrator::RunOptions;
use cellfree::{AlgorithmId, ScenarioConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cellfree", version, about = "Cell-free MIMO precoding simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo campaign; writes CSV tables and a manifest.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// One campaign per value of a config key; writes sweep_<param>.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Config key to vary (any numeric key, or `noise_dbm` for both noise levels).
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Runs the numerical property checks; exits nonzero on any failure.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// TOML scenario file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated scheme names; all schemes when omitted.
    #[arg(long, value_delimiter = ',')]
    algorithms: Vec<AlgorithmId>,
    #[arg(long)]
    drops: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also record the rate with the UEs' trained combiners.
    #[arg(long)]
    trained_rate: bool,
}

impl Common {
    fn config(&self) -> anyhow::Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ScenarioConfig::default(),
        };
        if let Some(d) = self.drops {
            cfg.drops = d;
        }
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        Ok(cfg)
    }

    fn algorithms(&self) -> Vec<AlgorithmId> {
        if self.algorithms.is_empty() {
            AlgorithmId::ALL.to_vec()
        } else {
            self.algorithms.clone()
        }
    }

    fn run_options(&self) -> RunOptions {
        RunOptions {
            trained_rate: self.trained_rate,
            ..RunOptions::default()
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Simulate { common } => {
            let cfg = common.config()?;
            let scenario = cfg.build()?;
            let algorithms = common.algorithms();
            let report = run_campaign(&scenario, &algorithms, &common.run_options())?;
            let manifest = write_outputs(&common.out, &cfg, &scenario, &algorithms, &report)?;
            for &a in &algorithms {
                let (mean, ci) = evaluation::mean_ci95(&report.final_rates(a));
                println!("{:<24} {mean:8.3} ± {ci:.3} bps/Hz  ({} drops)", a.name(), report.drop_count(a));
            }
            println!("wrote {} files to {}", manifest.files.len(), common.out.display());
            Ok(true)
        }
        Command::Sweep { common, param, values } => {
            let cfg = common.config()?;
            let algorithms = common.algorithms();
            let points = run_sweep(&cfg, &param, &values, &algorithms, &common.run_options())?;
            for p in &points {
                for &a in &algorithms {
                    let (mean, _) = evaluation::mean_ci95(&p.report.final_rates(a));
                    println!("{param}={:<10} {:<24} {mean:8.3}", p.value, a.name());
                }
            }
            let path = write_sweep(&common.out, &param, &algorithms, &points)?;
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::Verify { seed } => {
            let outcomes = evaluation::verify::run_all(seed)?;
            for o in &outcomes {
                println!("[{}] {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
            }
            Ok(outcomes.iter().all(|o| o.passed))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

