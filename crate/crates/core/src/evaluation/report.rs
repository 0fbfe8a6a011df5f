use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::evaluation::campaign::{run_campaign, FailedDrop, RateReport};
use crate::evaluation::metrics::{mean_ci95, per_ue_cdf};
use crate::orchestrator::{AlgorithmId, RunOptions};
use crate::scenario::{Scenario, ScenarioConfig};
use crate::{Error, Result};

/// Scheduling-block lengths (frames) written to the effective-rate table.
pub const EFFECTIVE_FRAMES: [f64; 4] = [1.0, 2.0, 5.0, 10.0];
/// Spacing of the per-UE rate CDF grid, bps/Hz.
pub const CDF_STEP: f64 = 0.1;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub version: &'static str,
    pub config: ScenarioConfig,
    pub algorithms: Vec<AlgorithmId>,
    pub master_seed: u64,
    pub drops: usize,
    pub failed_drops: Vec<FailedDrop>,
    /// SHA-256 of the canonical config text and algorithm list.
    pub input_hash: String,
    pub files: Vec<String>,
}

pub fn input_hash(config: &ScenarioConfig, algorithms: &[AlgorithmId]) -> String {
    let mut h = Sha256::new();
    h.update(config.to_toml_string().as_bytes());
    for a in algorithms {
        h.update(b"\n");
        h.update(a.name().as_bytes());
    }
    hex::encode(h.finalize())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(csv_err)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes `rate_vs_iteration.csv`, `ue_rate_cdf.csv`, `effective_rate.csv`
/// and `manifest.json` into `dir`.
pub fn write_outputs(
    dir: &Path,
    config: &ScenarioConfig,
    scenario: &Scenario,
    algorithms: &[AlgorithmId],
    report: &RateReport,
) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();

    let path = dir.join("rate_vs_iteration.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["algorithm", "iteration", "mean_rate", "ci95", "drops", "mean_trained_rate"])
        .map_err(csv_err)?;
    for &a in algorithms {
        let trained = report.mean_trained_curve(a);
        for (i, (mean, ci)) in report.mean_curve(a).iter().enumerate() {
            w.write_record([
                a.name().to_string(),
                (i + 1).to_string(),
                format!("{mean:.6}"),
                format!("{ci:.6}"),
                report.drop_count(a).to_string(),
                trained[i].map_or(String::new(), |t| format!("{t:.6}")),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    files.push(file_name(&path));

    let path = dir.join("ue_rate_cdf.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["algorithm", "rate", "cdf"]).map_err(csv_err)?;
    let top = algorithms
        .iter()
        .flat_map(|&a| report.final_per_ue(a))
        .fold(0.0, f64::max);
    let grid: Vec<f64> = (0..=((top / CDF_STEP).ceil() as usize + 1))
        .map(|i| i as f64 * CDF_STEP)
        .collect();
    for &a in algorithms {
        let cdf = per_ue_cdf(&report.final_per_ue(a), &grid);
        for (x, p) in grid.iter().zip(cdf) {
            w.write_record([a.name().to_string(), format!("{x:.3}"), format!("{p:.6}")])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    files.push(file_name(&path));

    let path = dir.join("effective_rate.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["algorithm", "frames", "iteration", "mean_effective_rate"])
        .map_err(csv_err)?;
    let mut frames: Vec<f64> = EFFECTIVE_FRAMES.to_vec();
    if !frames.contains(&scenario.overhead.frames) {
        frames.push(scenario.overhead.frames);
    }
    for &a in algorithms.iter().filter(|a| a.is_iterative()) {
        for &t in &frames {
            for (i, r) in report.effective_curve(a, t, scenario) {
                w.write_record([a.name().to_string(), t.to_string(), i.to_string(), format!("{r:.6}")])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    files.push(file_name(&path));

    files.push("manifest.json".into());
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config: config.clone(),
        algorithms: algorithms.to_vec(),
        master_seed: config.master_seed,
        drops: report.total_drops,
        failed_drops: report.failed.clone(),
        input_hash: input_hash(config, algorithms),
        files,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Keys whose values are integers in the config file.
const INTEGER_KEYS: [&str; 12] = [
    "num_bs",
    "antennas_per_bs",
    "num_ue",
    "antennas_per_ue",
    "pilot_length",
    "max_iter",
    "drops",
    "master_seed",
    "alternations",
    "backhaul_delay",
    "bisection_steps",
    "dual_sweeps",
];

/// Returns a copy of `config` with `param` set to `value`. The pseudo-key
/// `noise_dbm` sets both noise powers.
pub fn apply_param(config: &ScenarioConfig, param: &str, value: f64) -> Result<ScenarioConfig> {
    let text = config.to_toml_string();
    let mut table: toml::Table = toml::from_str(&text)?;
    let keys: Vec<&str> = match param {
        "noise_dbm" => vec!["bs_noise_dbm", "ue_noise_dbm"],
        p => vec![p],
    };
    for key in keys {
        let v = if INTEGER_KEYS.contains(&key) {
            if value.fract() != 0.0 || value < 0.0 {
                return Err(Error::Config(format!("{key} needs a non-negative integer, got {value}")));
            }
            toml::Value::Integer(value as i64)
        } else {
            toml::Value::Float(value)
        };
        table.insert(key.to_string(), v);
    }
    Ok(toml::from_str(&toml::to_string(&table).expect("table serializes"))?)
}

#[derive(Debug)]
pub struct SweepPoint {
    pub value: f64,
    pub report: RateReport,
}

/// Runs one campaign per value of `param`.
pub fn run_sweep(
    config: &ScenarioConfig,
    param: &str,
    values: &[f64],
    algorithms: &[AlgorithmId],
    opts: &RunOptions,
) -> Result<Vec<SweepPoint>> {
    values
        .iter()
        .map(|&value| {
            let cfg = apply_param(config, param, value)?;
            let scenario = cfg.build()?;
            log::info!("sweep {param} = {value}");
            Ok(SweepPoint {
                value,
                report: run_campaign(&scenario, algorithms, opts)?,
            })
        })
        .collect()
}

/// Writes `sweep_<param>.csv` with the final mean rate of every scheme.
pub fn write_sweep(dir: &Path, param: &str, algorithms: &[AlgorithmId], points: &[SweepPoint]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("sweep_{param}.csv"));
    let mut w = csv_writer(&path)?;
    w.write_record(["param", "value", "algorithm", "mean_final_rate", "ci95", "drops"])
        .map_err(csv_err)?;
    for p in points {
        for &a in algorithms {
            let (mean, ci) = mean_ci95(&p.report.final_rates(a));
            w.write_record([
                param.to_string(),
                p.value.to_string(),
                a.name().to_string(),
                format!("{mean:.6}"),
                format!("{ci:.6}"),
                p.report.drop_count(a).to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(path)
}
