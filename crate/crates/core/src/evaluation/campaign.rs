use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evaluation::metrics::{effective_rate, mean_ci95};
use crate::orchestrator::{self, AlgorithmId, DropInput, IterationTrace, RunOptions};
use crate::pilots::{build_pilots, PilotBook};
use crate::precoding::PrecoderSet;
use crate::scenario::{derive_seed, draw_channels, generate_topology, ChannelSet, Scenario, Stream, Topology};
use crate::{Error, Result};

/// Largest tolerated fraction of failed drops.
pub const MAX_FAILURE_RATE: f64 = 0.01;

/// Everything random about one drop, shared by all schemes.
pub struct DropData {
    pub index: usize,
    pub topology: Topology,
    pub channels: ChannelSet,
    pub pilots: PilotBook,
    pub init: PrecoderSet,
    pub noise_seed: u64,
}

impl DropData {
    pub fn generate(scenario: &Scenario, index: usize) -> Result<Self> {
        let (master, d) = (scenario.master_seed, index as u64);
        let topology = generate_topology(scenario, derive_seed(master, d, Stream::Topology))?;
        let channels = draw_channels(&topology, scenario.dims, derive_seed(master, d, Stream::Channels))?;
        let pilots = build_pilots(
            scenario.pilot_mode,
            scenario.dims.num_ue,
            scenario.dims.ue_antennas,
            scenario.tau,
            derive_seed(master, d, Stream::Pilots),
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master, d, Stream::Init));
        let init = PrecoderSet::random_init(scenario.dims, scenario.rho_bs, &mut rng);
        Ok(Self {
            index,
            topology,
            channels,
            pilots,
            init,
            noise_seed: derive_seed(master, d, Stream::Noise(0)),
        })
    }

    pub fn input<'a>(&'a self, scenario: &'a Scenario) -> DropInput<'a> {
        DropInput {
            scenario,
            channels: &self.channels,
            pilots: &self.pilots,
            init: &self.init,
            noise_seed: self.noise_seed,
        }
    }
}

/// Condensed result of one scheme on one drop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropCurve {
    pub drop: usize,
    /// Genie sum rate per iteration, as recorded (not padded).
    pub rates: Vec<f64>,
    pub trained_rates: Vec<f64>,
    pub final_per_ue: Vec<f64>,
    pub max_bs_power_ratio: f64,
    pub max_ue_power_ratio: f64,
}

impl DropCurve {
    pub fn from_trace(drop: usize, trace: &IterationTrace) -> Self {
        Self {
            drop,
            rates: trace.records.iter().map(|r| r.sum_rate).collect(),
            trained_rates: trace.records.iter().filter_map(|r| r.trained_rate).collect(),
            final_per_ue: trace.records.last().map(|r| r.per_ue_rates.clone()).unwrap_or_default(),
            max_bs_power_ratio: trace.records.iter().map(|r| r.bs_power_ratio).fold(0.0, f64::max),
            max_ue_power_ratio: trace.records.iter().map(|r| r.ue_power_ratio).fold(0.0, f64::max),
        }
    }

    /// Rate at iteration `i` (1-based); a stopped run holds its last value.
    pub fn rate_at(&self, i: usize) -> f64 {
        match self.rates.len() {
            0 => 0.0,
            n => self.rates[i.clamp(1, n) - 1],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlgorithmCurves {
    pub algorithm: AlgorithmId,
    /// One entry per successful drop, in drop order.
    pub drops: Vec<DropCurve>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FailedDrop {
    pub drop: usize,
    pub error: String,
}

/// Aggregated Monte-Carlo results.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateReport {
    pub iterations: usize,
    pub curves: Vec<AlgorithmCurves>,
    pub failed: Vec<FailedDrop>,
    pub total_drops: usize,
}

impl RateReport {
    pub fn curves(&self, algorithm: AlgorithmId) -> Option<&AlgorithmCurves> {
        self.curves.iter().find(|c| c.algorithm == algorithm)
    }

    fn drops_of(&self, algorithm: AlgorithmId) -> &[DropCurve] {
        self.curves(algorithm).map_or(&[], |c| c.drops.as_slice())
    }

    pub fn drop_count(&self, algorithm: AlgorithmId) -> usize {
        self.drops_of(algorithm).len()
    }

    /// Per-drop rates at iteration `i`.
    pub fn rates_at(&self, algorithm: AlgorithmId, i: usize) -> Vec<f64> {
        self.drops_of(algorithm).iter().map(|d| d.rate_at(i)).collect()
    }

    pub fn final_rates(&self, algorithm: AlgorithmId) -> Vec<f64> {
        self.rates_at(algorithm, self.iterations)
    }

    /// Mean rate and 95 % half-width at every iteration `1..=iterations`.
    pub fn mean_curve(&self, algorithm: AlgorithmId) -> Vec<(f64, f64)> {
        (1..=self.iterations)
            .map(|i| mean_ci95(&self.rates_at(algorithm, i)))
            .collect()
    }

    /// Mean trained-combiner rate per iteration where it was recorded.
    pub fn mean_trained_curve(&self, algorithm: AlgorithmId) -> Vec<Option<f64>> {
        let drops = self.drops_of(algorithm);
        (1..=self.iterations)
            .map(|i| {
                let vals: Vec<f64> = drops
                    .iter()
                    .filter(|d| !d.trained_rates.is_empty())
                    .map(|d| d.trained_rates[i.min(d.trained_rates.len()) - 1])
                    .collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect()
    }

    /// Final per-UE rates pooled over drops.
    pub fn final_per_ue(&self, algorithm: AlgorithmId) -> Vec<f64> {
        self.drops_of(algorithm)
            .iter()
            .flat_map(|d| d.final_per_ue.iter().copied())
            .collect()
    }

    /// Mean effective rate at every iteration for a block of `frames` frames.
    /// Iterations whose overhead exceeds the block are omitted.
    pub fn effective_curve(&self, algorithm: AlgorithmId, frames: f64, scenario: &Scenario) -> Vec<(usize, f64)> {
        self.mean_curve(algorithm)
            .iter()
            .enumerate()
            .filter_map(|(idx, (mean, _))| {
                effective_rate(*mean, idx + 1, frames, &scenario.overhead)
                    .ok()
                    .map(|r| (idx + 1, r))
            })
            .collect()
    }

    pub fn max_power_ratios(&self) -> (f64, f64) {
        self.curves
            .iter()
            .flat_map(|c| c.drops.iter())
            .fold((0.0, 0.0), |(b, u), d| {
                (f64::max(b, d.max_bs_power_ratio), f64::max(u, d.max_ue_power_ratio))
            })
    }
}

/// Runs every scheme on one drop.
pub fn run_drop(scenario: &Scenario, index: usize, algorithms: &[AlgorithmId], opts: &RunOptions) -> Result<Vec<IterationTrace>> {
    let data = DropData::generate(scenario, index)?;
    let input = data.input(scenario);
    algorithms.iter().map(|&a| orchestrator::run(a, &input, opts)).collect()
}

/// Monte-Carlo campaign over `scenario.drops` independent drops in parallel.
///
/// Drops that fail are logged and excluded; more than 1 % failures fail the
/// whole campaign.
pub fn run_campaign(scenario: &Scenario, algorithms: &[AlgorithmId], opts: &RunOptions) -> Result<RateReport> {
    let outcomes: Vec<(usize, Result<Vec<DropCurve>>)> = (0..scenario.drops)
        .into_par_iter()
        .map(|d| {
            let res = run_drop(scenario, d, algorithms, opts)
                .map(|traces| traces.iter().map(|t| DropCurve::from_trace(d, t)).collect());
            (d, res)
        })
        .collect();

    let mut curves: Vec<AlgorithmCurves> = algorithms
        .iter()
        .map(|&algorithm| AlgorithmCurves { algorithm, drops: Vec::new() })
        .collect();
    let mut failed = Vec::new();
    for (d, res) in outcomes {
        match res {
            Ok(per_alg) => {
                for (c, curve) in curves.iter_mut().zip(per_alg) {
                    c.drops.push(curve);
                }
            }
            Err(e) => {
                log::warn!("drop {d} failed and is excluded: {e}");
                failed.push(FailedDrop { drop: d, error: e.to_string() });
            }
        }
    }
    if failed.len() as f64 > MAX_FAILURE_RATE * scenario.drops as f64 {
        return Err(Error::Campaign { failed: failed.len(), total: scenario.drops });
    }
    Ok(RateReport {
        iterations: scenario.termination.max_iter,
        curves,
        failed,
        total_drops: scenario.drops,
    })
}
