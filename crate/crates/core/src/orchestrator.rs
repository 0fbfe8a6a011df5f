//! End-to-end training loops for every precoding scheme.
//!
//! Each run consumes one drop (channels, pilots, initial precoders and a
//! noise seed) and returns an [`IterationTrace`]. The signaling phases that
//! each scheme executes are logged per iteration so phase order can be
//! asserted from the outside.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::airlink::{self, compute_power_scaling};
use crate::evaluation::metrics::{genie_per_ue_rates, sum_rate};
use crate::linalg::{scale, CMatrix};
use crate::pilots::PilotBook;
use crate::precoding::{
    backhaul_term, centralized_precoder_oneshot, centralized_precoder_perfect,
    centralized_precoder_trained, damped_update, distributed_precoder_step_backhaul,
    distributed_precoder_step_ota, distributed_precoder_step_perfect, effective_uplink,
    mmse_combiners_perfect, mmse_combiners_trained, perfect_cross_terms, BsLocalSignals,
    CombinerSet, PrecoderSet,
};
use crate::scenario::{ChannelSet, Scenario, Termination};
use crate::{Error, Result};

/// Relative slack on the per-BS power check.
const BS_POWER_SLACK: f64 = 1e-9;
/// Offset separating the evaluation noise stream from the training stream.
const EVAL_STREAM: u64 = 0x5EED_E7A1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmId {
    LocalMmse,
    Centralized,
    CentralizedIterative,
    DistributedBackhaul,
    DistributedOta,
    PerfectCentralized,
    PerfectDistributed,
}

impl AlgorithmId {
    pub const ALL: [AlgorithmId; 7] = [
        AlgorithmId::LocalMmse,
        AlgorithmId::Centralized,
        AlgorithmId::CentralizedIterative,
        AlgorithmId::DistributedBackhaul,
        AlgorithmId::DistributedOta,
        AlgorithmId::PerfectCentralized,
        AlgorithmId::PerfectDistributed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmId::LocalMmse => "local-mmse",
            AlgorithmId::Centralized => "centralized",
            AlgorithmId::CentralizedIterative => "centralized-iterative",
            AlgorithmId::DistributedBackhaul => "distributed-backhaul",
            AlgorithmId::DistributedOta => "distributed-ota",
            AlgorithmId::PerfectCentralized => "perfect-centralized",
            AlgorithmId::PerfectDistributed => "perfect-distributed",
        }
    }

    /// Whether the scheme iterates bi-directional training.
    pub fn is_iterative(self) -> bool {
        self != AlgorithmId::Centralized
    }
}

impl fmt::Display for AlgorithmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlgorithmId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        AlgorithmId::ALL
            .into_iter()
            .find(|a| a.name() == norm)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown algorithm '{s}', expected one of: {}",
                    AlgorithmId::ALL.map(|a| a.name()).join(", ")
                ))
            })
    }
}

/// Signaling phases, in the order they occur within an iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Downlink precoded pilots.
    Dl,
    /// Uplink combined pilots.
    Ul1,
    /// Uplink full pilot matrices.
    Ul,
    /// Uplink re-transmission of the downlink signal.
    Ul2,
    /// Any backhaul transfer (BS to BS or BS to CPU and back).
    Backhaul,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Sum rate with MMSE combiners on the true channels.
    pub sum_rate: f64,
    /// Sum rate with combiners the UEs train from a fresh downlink phase.
    pub trained_rate: Option<f64>,
    pub per_ue_rates: Vec<f64>,
    pub lambda: Vec<f64>,
    /// max_b P_b / ρ_BS.
    pub bs_power_ratio: f64,
    /// Largest UE transmit power over this iteration's phases, over ρ_UE.
    pub ue_power_ratio: f64,
    /// ‖W^(i) − W^(i−1)‖²_F.
    pub precoder_change: f64,
}

#[derive(Clone, Debug)]
pub struct IterationTrace {
    pub algorithm: AlgorithmId,
    pub records: Vec<IterationRecord>,
    pub phases: Vec<Vec<Phase>>,
    /// `W^(1), W^(2), …` when requested.
    pub snapshots: Vec<PrecoderSet>,
    pub final_precoders: PrecoderSet,
}

impl IterationTrace {
    pub fn final_rate(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.sum_rate)
    }

    /// Rate at iteration `i` (1-based), holding the last value once the run
    /// has stopped.
    pub fn rate_at(&self, i: usize) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let idx = i.clamp(1, usize::MAX).min(self.records.len()) - 1;
        self.records[idx].sum_rate
    }
}

/// One Monte-Carlo drop as seen by a training loop.
pub struct DropInput<'a> {
    pub scenario: &'a Scenario,
    pub channels: &'a ChannelSet,
    pub pilots: &'a PilotBook,
    pub init: &'a PrecoderSet,
    pub noise_seed: u64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub keep_precoders: bool,
    /// Record the trained-combiner rate (costs one extra downlink phase).
    pub trained_rate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    RatePlateau,
    PrecoderPlateau,
}

/// Stop decision after the latest record, or `None` to keep iterating.
pub fn check_termination(records: &[IterationRecord], term: &Termination) -> Option<StopReason> {
    let last = records.last()?;
    if last.iteration >= term.max_iter {
        return Some(StopReason::MaxIterations);
    }
    if let (Some(tol), [.., prev, _]) = (term.rate_tol, records) {
        if (last.sum_rate - prev.sum_rate).abs() <= tol {
            return Some(StopReason::RatePlateau);
        }
    }
    if let Some(tol) = term.precoder_tol {
        if last.precoder_change <= tol {
            return Some(StopReason::PrecoderPlateau);
        }
    }
    None
}

pub fn run(algorithm: AlgorithmId, input: &DropInput<'_>, opts: &RunOptions) -> Result<IterationTrace> {
    match algorithm {
        AlgorithmId::LocalMmse => run_local_mmse(input, opts),
        AlgorithmId::Centralized => run_centralized_oneshot(input, opts),
        AlgorithmId::CentralizedIterative => run_centralized_iterative(input, opts),
        AlgorithmId::DistributedBackhaul => run_distributed_backhaul(input, opts),
        AlgorithmId::DistributedOta => run_distributed_ota(input, opts),
        AlgorithmId::PerfectCentralized => run_perfect_reference(input, Reference::Centralized, opts),
        AlgorithmId::PerfectDistributed => run_perfect_reference(input, Reference::Distributed, opts),
    }
}

struct Recorder<'a> {
    input: &'a DropInput<'a>,
    opts: RunOptions,
    eval_rng: ChaCha8Rng,
    trace: IterationTrace,
}

impl<'a> Recorder<'a> {
    fn new(algorithm: AlgorithmId, input: &'a DropInput<'a>, opts: &RunOptions) -> Self {
        Self {
            input,
            opts: *opts,
            eval_rng: ChaCha8Rng::seed_from_u64(input.noise_seed ^ EVAL_STREAM),
            trace: IterationTrace {
                algorithm,
                records: Vec::new(),
                phases: Vec::new(),
                snapshots: Vec::new(),
                final_precoders: input.init.clone(),
            },
        }
    }

    fn record(
        &mut self,
        w: &PrecoderSet,
        prev: &PrecoderSet,
        lambda: Vec<f64>,
        ue_power: f64,
        phases: Vec<Phase>,
    ) -> Result<Option<StopReason>> {
        let s = self.input.scenario;
        let ratio = w.max_power_ratio(s.rho_bs);
        if !(ratio <= 1.0 + BS_POWER_SLACK) {
            return Err(Error::Numerical(format!(
                "{} iteration {}: per-BS power ratio {ratio:.12}",
                self.trace.algorithm,
                self.trace.records.len() + 1
            )));
        }
        let per_ue_rates = genie_per_ue_rates(self.input.channels, w, s.ue_noise);
        let sum: f64 = per_ue_rates.iter().sum();
        if !sum.is_finite() {
            return Err(Error::Numerical("sum rate is not finite".into()));
        }
        let trained_rate = if self.opts.trained_rate {
            let y = airlink::dl_phase(self.input.channels, w, self.input.pilots, s.ue_noise, &mut self.eval_rng);
            let v = mmse_combiners_trained(&y, self.input.pilots);
            Some(sum_rate(self.input.channels, w, &v, s.ue_noise))
        } else {
            None
        };
        self.trace.records.push(IterationRecord {
            iteration: self.trace.records.len() + 1,
            sum_rate: sum,
            trained_rate,
            per_ue_rates,
            lambda,
            bs_power_ratio: ratio,
            ue_power_ratio: ue_power / s.rho_ue,
            precoder_change: w.distance_sq(prev),
        });
        self.trace.phases.push(phases);
        if self.opts.keep_precoders {
            self.trace.snapshots.push(w.clone());
        }
        self.trace.final_precoders = w.clone();
        Ok(check_termination(&self.trace.records, &s.termination))
    }

    fn finish(self) -> IterationTrace {
        self.trace
    }
}

fn noise_rng(input: &DropInput<'_>) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(input.noise_seed)
}

/// Downlink training followed by the UEs' trained combiners.
fn dl_and_combiners(input: &DropInput<'_>, w: &PrecoderSet, rng: &mut ChaCha8Rng) -> (Vec<CMatrix>, CombinerSet) {
    let y = airlink::dl_phase(input.channels, w, input.pilots, input.scenario.ue_noise, rng);
    let v = mmse_combiners_trained(&y, input.pilots);
    (y, v)
}

/// One full-pilot uplink, CPU alternation on estimated channels,
/// one downlink so the UEs can train their combiners.
pub fn run_centralized_oneshot(input: &DropInput<'_>, opts: &RunOptions) -> Result<IterationTrace> {
    let s = input.scenario;
    let dims = s.dims;
    let mut rng = noise_rng(input);
    let mut rec = Recorder::new(AlgorithmId::Centralized, input, opts);

    let (y_ul, ue_power) = airlink::ul_full_phase(input.channels, input.pilots, s.rho_ue, s.bs_noise, &mut rng)?;
    let beta_ul = s.rho_ue / dims.ue_antennas as f64;
    let mut blocks = Vec::with_capacity(dims.num_bs * dims.num_ue);
    for y in &y_ul {
        for k in 0..dims.num_ue {
            blocks.push(airlink::ls_full_channel(y, input.pilots, beta_ul, k));
        }
    }
    let estimates = ChannelSet::from_blocks(dims, blocks)?;
    let res = centralized_precoder_oneshot(
        &estimates,
        input.init,
        s.ue_noise,
        s.rho_bs,
        s.alternations,
        s.alternation_tol,
        &s.solver,
    )?;
    // The UEs train their combiners from this phase for data reception.
    let _ = dl_and_combiners(input, &res.precoders, &mut rng);
    rec.record(
        &res.precoders,
        input.init,
        res.duals.lambda,
        ue_power,
        vec![Phase::Ul, Phase::Backhaul, Phase::Dl],
    )?;
    Ok(rec.finish())
}

/// Distributed updates with cross terms exchanged over the
/// backhaul, arriving `backhaul_delay` iterations late.
pub fn run_distributed_backhaul(input: &DropInput<'_>, opts: &RunOptions) -> Result<IterationTrace> {
    let s = input.scenario;
    let dims = s.dims;
    let b_count = dims.num_bs;
    let delay = s.backhaul_delay;
    let mut rng = noise_rng(input);
    let mut rec = Recorder::new(AlgorithmId::DistributedBackhaul, input, opts);
    let mut w = input.init.clone();
    // terms[j][b] = Y_b^(j)H W_b^(j−1) / √β^(j), for iteration j (1-based).
    let mut terms: Vec<Vec<CMatrix>> = Vec::new();

    for i in 1.. {
        let (_, v) = dl_and_combiners(input, &w, &mut rng);
        let beta = compute_power_scaling(&v, None, s.rho_ue, dims.ue_antennas, s.tau)?.beta_ul1;
        let (y1, ue_power) = airlink::ul1_phase(input.channels, &v, input.pilots, beta, s.rho_ue, s.bs_noise, &mut rng)?;
        let root = beta.sqrt();
        terms.push(
            (0..b_count)
                .map(|b| backhaul_term(&y1[b], &w.block(b)) / scale(root))
                .collect(),
        );
        let source = (i > delay).then(|| &terms[i - 1 - delay]);
        let mut next = w.clone();
        let mut lambda = vec![0.0; b_count];
        for b in 0..b_count {
            let mut exchanged = CMatrix::zeros(s.tau, dims.num_ue);
            if let Some(src) = source {
                for (bb, t) in src.iter().enumerate() {
                    if bb != b {
                        exchanged += t;
                    }
                }
                exchanged *= scale(root);
            }
            let (wb, sol) = distributed_precoder_step_backhaul(&y1[b], input.pilots, beta, &exchanged, s.bs_noise, s.rho_bs, &s.solver)?;
            next.set_block(b, &damped_update(&w.block(b), &wb, s.step_size));
            lambda[b] = sol.lambda;
        }
        let stop = rec.record(&next, &w, lambda, ue_power, vec![Phase::Dl, Phase::Ul1, Phase::Backhaul])?;
        w = next;
        if stop.is_some() {
            break;
        }
    }
    Ok(rec.finish())
}

/// The CPU solves the stacked problem from all UL-1 signals.
pub fn run_centralized_iterative(input: &DropInput<'_>, opts: &RunOptions) -> Result<IterationTrace> {
    let s = input.scenario;
    let dims = s.dims;
    let mut rng = noise_rng(input);
    let mut rec = Recorder::new(AlgorithmId::CentralizedIterative, input, opts);
    let mut w = input.init.clone();
    let mut lambda: Option<Vec<f64>> = None;
    loop {
        let (_, v) = dl_and_combiners(input, &w, &mut rng);
        let beta = compute_power_scaling(&v, None, s.rho_ue, dims.ue_antennas, s.tau)?.beta_ul1;
        let (y1, ue_power) = airlink::ul1_phase(input.channels, &v, input.pilots, beta, s.rho_ue, s.bs_noise, &mut rng)?;
        let (next, duals) = centralized_precoder_trained(&y1, input.pilots, beta, s.bs_noise, s.rho_bs, lambda.as_deref(), &s.solver)?;
        lambda = Some(duals.lambda.clone());
        let stop = rec.record(&next, &w, duals.lambda, ue_power, vec![Phase::Dl, Phase::Ul1, Phase::Backhaul])?;
        w = next;
        if stop.is_some() {
            break;
        }
    }
    Ok(rec.finish())
}

/// Distributed updates with cross terms recovered over the air.
/// Each BS's update sees only its own receive signals and precoders.
pub fn run_distributed_ota(input: &DropInput<'_>, opts: &RunOptions) -> Result<IterationTrace> {
    let s = input.scenario;
    let dims = s.dims;
    let mut rng = noise_rng(input);
    let mut rec = Recorder::new(AlgorithmId::DistributedOta, input, opts);
    let mut w = input.init.clone();
    loop {
        let (y_dl, v) = dl_and_combiners(input, &w, &mut rng);
        let scaling = compute_power_scaling(&v, Some(&y_dl), s.rho_ue, dims.ue_antennas, s.tau)?;
        let beta1 = scaling.beta_ul1;
        let beta2 = scaling.beta_ul2.expect("downlink signals were supplied");
        let (y1, p1) = airlink::ul1_phase(input.channels, &v, input.pilots, beta1, s.rho_ue, s.bs_noise, &mut rng)?;
        let (y2, p2) = airlink::ul2_phase(input.channels, &v, &y_dl, input.pilots, beta2, s.rho_ue, s.bs_noise, &mut rng)?;
        let mut next = w.clone();
        let mut lambda = vec![0.0; dims.num_bs];
        for b in 0..dims.num_bs {
            let w_prev = w.block(b);
            let local = BsLocalSignals {
                y_ul1: &y1[b],
                y_ul2: &y2[b],
                w_prev: &w_prev,
            };
            let (wb, sol) = distributed_precoder_step_ota(&local, input.pilots, beta1, beta2, s.bs_noise, s.rho_bs, &s.solver)?;
            next.set_block(b, &damped_update(&w_prev, &wb, s.step_size));
            lambda[b] = sol.lambda;
        }
        let stop = rec.record(&next, &w, lambda, p1.max(p2), vec![Phase::Dl, Phase::Ul1, Phase::Ul2])?;
        w = next;
        if stop.is_some() {
            break;
        }
    }
    Ok(rec.finish())
}

/// Distributed loop with the cross terms forced to zero. Uses trained CSI
/// unless the scenario asks for true channels.
pub fn run_local_mmse(input: &DropInput<'_>, opts: &RunOptions) -> Result<IterationTrace> {
    let s = input.scenario;
    let dims = s.dims;
    let mut rng = noise_rng(input);
    let mut rec = Recorder::new(AlgorithmId::LocalMmse, input, opts);
    let mut w = input.init.clone();
    let zero_exchange = CMatrix::zeros(s.tau, dims.num_ue);
    let zero_xi = CMatrix::zeros(dims.bs_antennas, dims.num_ue);
    loop {
        let mut next = w.clone();
        let mut lambda = vec![0.0; dims.num_bs];
        let (ue_power, phases) = if s.local_mmse_trained {
            let (_, v) = dl_and_combiners(input, &w, &mut rng);
            let beta = compute_power_scaling(&v, None, s.rho_ue, dims.ue_antennas, s.tau)?.beta_ul1;
            let (y1, p) = airlink::ul1_phase(input.channels, &v, input.pilots, beta, s.rho_ue, s.bs_noise, &mut rng)?;
            for b in 0..dims.num_bs {
                let (wb, sol) = distributed_precoder_step_backhaul(&y1[b], input.pilots, beta, &zero_exchange, s.bs_noise, s.rho_bs, &s.solver)?;
                next.set_block(b, &damped_update(&w.block(b), &wb, s.step_size));
                lambda[b] = sol.lambda;
            }
            (p, vec![Phase::Dl, Phase::Ul1])
        } else {
            let v = mmse_combiners_perfect(input.channels, &w, s.ue_noise);
            let h = effective_uplink(input.channels, &v);
            for b in 0..dims.num_bs {
                let (wb, sol) = distributed_precoder_step_perfect(&h, &s.weights, &zero_xi, b, dims.bs_antennas, s.rho_bs, &s.solver)?;
                next.set_block(b, &damped_update(&w.block(b), &wb, s.step_size));
                lambda[b] = sol.lambda;
            }
            (0.0, Vec::new())
        };
        let stop = rec.record(&next, &w, lambda, ue_power, phases)?;
        w = next;
        if stop.is_some() {
            break;
        }
    }
    Ok(rec.finish())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reference {
    Centralized,
    Distributed,
}

/// Alternating optimization on the true channels with the configured UE
/// weights. No signaling phases are simulated.
pub fn run_perfect_reference(input: &DropInput<'_>, which: Reference, opts: &RunOptions) -> Result<IterationTrace> {
    let s = input.scenario;
    let dims = s.dims;
    let id = match which {
        Reference::Centralized => AlgorithmId::PerfectCentralized,
        Reference::Distributed => AlgorithmId::PerfectDistributed,
    };
    let mut rec = Recorder::new(id, input, opts);
    let mut w = input.init.clone();
    let mut warm: Option<Vec<f64>> = None;
    loop {
        let v = mmse_combiners_perfect(input.channels, &w, s.ue_noise);
        let (next, lambda) = match which {
            Reference::Centralized => {
                let (next, duals) = centralized_precoder_perfect(input.channels, &v, &s.weights, s.rho_bs, warm.as_deref(), &s.solver)?;
                warm = Some(duals.lambda.clone());
                (next, duals.lambda)
            }
            Reference::Distributed => {
                let h = effective_uplink(input.channels, &v);
                let mut next = w.clone();
                let mut lambda = vec![0.0; dims.num_bs];
                for b in 0..dims.num_bs {
                    let xi = perfect_cross_terms(&h, &s.weights, &w, b);
                    let (wb, sol) = distributed_precoder_step_perfect(&h, &s.weights, &xi, b, dims.bs_antennas, s.rho_bs, &s.solver)?;
                    next.set_block(b, &damped_update(&w.block(b), &wb, s.step_size));
                    lambda[b] = sol.lambda;
                }
                (next, lambda)
            }
        };
        let stop = rec.record(&next, &w, lambda, 0.0, Vec::new())?;
        w = next;
        if stop.is_some() {
            break;
        }
    }
    Ok(rec.finish())
}
