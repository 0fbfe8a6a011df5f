//! Deterministic property checks: exactness of the OTA scheme without noise,
//! the block-inverse identity behind the distributed form, KKT stationarity
//! and the algebraic equivalence of the two OTA update forms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::linalg::{complex_gaussian, frobenius_sq, hpd_inverse, hpd_solve, rel_diff, scale, CMatrix};
use crate::orchestrator::{self, AlgorithmId, DropInput, RunOptions};
use crate::pilots::{orthogonal_pilots, random_pilots};
use crate::precoding::{
    centralized_precoder_perfect, distributed_precoder_step_ota, effective_uplink, lagrangian_gradient,
    mmse_combiners_perfect, ota_cross_terms, phi_block, phi_matrix, precoder_from_cross_terms_trained,
    weighted_sum_mse, BsLocalSignals, CombinerSet, PrecoderSet,
};
use crate::scenario::{ChannelSet, Dims, Scenario, ScenarioConfig, SolverOptions};
use crate::evaluation::campaign::DropData;
use crate::Result;

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn tight() -> SolverOptions {
    SolverOptions {
        tol: 1e-10,
        ..SolverOptions::default()
    }
}

fn random_channels<R: Rng>(dims: Dims, rng: &mut R) -> ChannelSet {
    let blocks = (0..dims.num_bs * dims.num_ue)
        .map(|_| complex_gaussian(dims.bs_antennas, dims.ue_antennas, 1.0, rng))
        .collect();
    ChannelSet::from_blocks(dims, blocks).expect("shapes are consistent")
}

/// Small noiseless scenario used by the trajectory check. With `B·M = K`
/// the centralized solution stays unique even without noise.
pub fn noiseless_scenario(max_iter: usize) -> Result<Scenario> {
    let mut s = ScenarioConfig {
        num_bs: 4,
        antennas_per_bs: 1,
        num_ue: 4,
        antennas_per_ue: 2,
        max_iter,
        drops: 1,
        ..ScenarioConfig::default()
    }
    .build()?;
    s.bs_noise = 0.0;
    s.ue_noise = 0.0;
    s.solver = tight();
    Ok(s)
}

/// Without noise and with orthogonal pilots the OTA trajectory equals the
/// perfect-CSI distributed one, and the common limit is a fixed point of the
/// centralized precoder for its own combiners.
pub fn noiseless_equivalence(max_iter: usize, seed: u64) -> Result<CheckOutcome> {
    let mut s = noiseless_scenario(max_iter)?;
    s.master_seed = seed;
    let data = DropData::generate(&s, 0)?;
    let input: DropInput<'_> = data.input(&s);
    let opts = RunOptions {
        keep_precoders: true,
        trained_rate: false,
    };
    let ota = orchestrator::run(AlgorithmId::DistributedOta, &input, &opts)?;
    let perfect = orchestrator::run(AlgorithmId::PerfectDistributed, &input, &opts)?;
    let worst_traj = ota
        .snapshots
        .iter()
        .zip(&perfect.snapshots)
        .map(|(a, b)| rel_diff(a.matrix(), b.matrix()))
        .fold(0.0, f64::max);

    let gap_to_centralized = |trace: &orchestrator::IterationTrace| -> Result<f64> {
        let w = &trace.final_precoders;
        let v = mmse_combiners_perfect(&data.channels, w, s.ue_noise);
        let (wc, _) = centralized_precoder_perfect(&data.channels, &v, &s.weights, s.rho_bs, None, &tight())?;
        Ok(rel_diff(w.matrix(), wc.matrix()))
    };
    let gap_ota = gap_to_centralized(&ota)?;
    let gap_perfect = gap_to_centralized(&perfect)?;
    let passed = ota.snapshots.len() == perfect.snapshots.len()
        && worst_traj <= 1e-8
        && gap_ota <= 1e-4
        && gap_perfect <= 1e-4;
    Ok(CheckOutcome {
        name: "noiseless OTA equivalence",
        passed,
        detail: format!(
            "{} iterations, worst trajectory gap {worst_traj:.2e}, centralized gap {gap_ota:.2e} (OTA) / {gap_perfect:.2e} (perfect)",
            ota.snapshots.len()
        ),
    })
}

/// For two BSs and fixed duals the stacked solution equals the per-BS
/// Schur-complement form.
pub fn schur_identity(instances: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims::new(2, 3, 4, 2);
    let m = dims.bs_antennas;
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..instances {
        let h = random_channels(dims, &mut rng);
        let w0 = PrecoderSet::random_init(dims, 1.0, &mut rng);
        let v = mmse_combiners_perfect(&h, &w0, 0.1);
        let weights: Vec<f64> = (0..dims.num_ue).map(|_| rng.random_range(0.5..2.0)).collect();
        let lambda = [rng.random_range(0.01..1.0), rng.random_range(0.01..1.0)];
        let he = effective_uplink(&h, &v);
        let mut rhs = he.clone();
        for (k, &w) in weights.iter().enumerate() {
            rhs.column_mut(k).scale_mut(w);
        }
        let mut a = phi_matrix(&he, &weights);
        for b in 0..2 {
            for i in 0..m {
                a[(b * m + i, b * m + i)] += scale(lambda[b]);
            }
        }
        let Ok(stacked) = hpd_solve(&a, &rhs) else {
            failures += 1;
            continue;
        };
        let eye = CMatrix::identity(m, m);
        let blk = |b, bb| phi_block(&he, &weights, b, bb, m);
        let a11 = blk(0, 0) + &eye * scale(lambda[0]);
        let a22 = blk(1, 1) + &eye * scale(lambda[1]);
        let a12 = blk(0, 1);
        let a21 = blk(1, 0);
        let (r1, r2) = (rhs.rows(0, m).into_owned(), rhs.rows(m, m).into_owned());
        let per_bs = (|| -> Result<(CMatrix, CMatrix)> {
            let i11 = hpd_inverse(&a11)?;
            let i22 = hpd_inverse(&a22)?;
            let s1 = &a11 - &a12 * &i22 * &a21;
            let s2 = &a22 - &a21 * &i11 * &a12;
            let w1 = hpd_solve(&s1, &(&r1 - &a12 * &i22 * &r2))?;
            let w2 = hpd_solve(&s2, &(&r2 - &a21 * &i11 * &r1))?;
            Ok((w1, w2))
        })();
        let Ok((w1, w2)) = per_bs else {
            failures += 1;
            continue;
        };
        let mut schur = CMatrix::zeros(2 * m, dims.num_ue);
        schur.rows_mut(0, m).copy_from(&w1);
        schur.rows_mut(m, m).copy_from(&w2);
        worst = worst.max(rel_diff(&schur, &stacked));
    }
    CheckOutcome {
        name: "two-BS block-inverse identity",
        passed: failures == 0 && worst <= 1e-10,
        detail: format!("{instances} instances, worst relative gap {worst:.2e}, {failures} factorization failures"),
    }
}

/// Real gradient of the Lagrangian by central differences, laid out as
/// `[Re w_00, Im w_00, Re w_10, …]` in column-major order.
#[allow(clippy::too_many_arguments)]
fn finite_difference_gradient(
    h: &ChannelSet,
    v: &CombinerSet,
    w: &PrecoderSet,
    weights: &[f64],
    lambda: &[f64],
    noise: f64,
    rho: f64,
    step: f64,
) -> Vec<f64> {
    let lagrangian = |wm: &CMatrix| -> f64 {
        let p = PrecoderSet::from_matrix(w.num_bs(), w.bs_antennas(), wm.clone()).expect("shape");
        let powers = p.per_bs_power();
        weighted_sum_mse(h, &p, v, weights, noise)
            + lambda.iter().zip(&powers).map(|(l, pb)| l * (pb - rho)).sum::<f64>()
    };
    let base = w.matrix();
    let mut out = Vec::with_capacity(base.len() * 2);
    for idx in 0..base.len() {
        for imag in [false, true] {
            let delta = if imag { crate::linalg::C64::new(0.0, step) } else { scale(step) };
            let mut plus = base.clone();
            plus[idx] += delta;
            let mut minus = base.clone();
            minus[idx] -= delta;
            out.push((lagrangian(&plus) - lagrangian(&minus)) / (2.0 * step));
        }
    }
    out
}

/// Stationarity of the centralized solution, agreement of the analytic
/// Lagrangian gradient with finite differences, and transmit-power
/// compliance of every scheme on a few noisy drops.
pub fn kkt_suite(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims::new(3, 2, 4, 2);
    let (noise, rho) = (0.1, 0.05);
    let mut worst_stationarity: f64 = 0.0;
    let mut worst_slackness: f64 = 0.0;
    let mut worst_fd: f64 = 0.0;
    let mut worst_power: f64 = 0.0;
    for _ in 0..instances {
        let h = random_channels(dims, &mut rng);
        let w0 = PrecoderSet::random_init(dims, rho, &mut rng);
        let v = mmse_combiners_perfect(&h, &w0, noise);
        let weights: Vec<f64> = (0..dims.num_ue).map(|_| rng.random_range(0.5..2.0)).collect();
        let (w, duals) = centralized_precoder_perfect(&h, &v, &weights, rho, None, &tight())?;
        let grad = lagrangian_gradient(&h, &v, &w, &weights, &duals.lambda);
        worst_stationarity = worst_stationarity.max(frobenius_sq(&grad).sqrt() / frobenius_sq(w.matrix()).sqrt());
        worst_slackness = worst_slackness.max(duals.slackness(&w.per_bs_power(), rho));
        worst_power = worst_power.max(w.max_power_ratio(rho));

        // Gradient check away from the optimum, where it is not small.
        let probe = PrecoderSet::random_init(dims, rho, &mut rng);
        let analytic = lagrangian_gradient(&h, &v, &probe, &weights, &duals.lambda);
        let an: Vec<f64> = analytic.iter().flat_map(|z| [2.0 * z.re, 2.0 * z.im]).collect();
        let fd = finite_difference_gradient(&h, &v, &probe, &weights, &duals.lambda, noise, rho, 1e-6);
        let num: f64 = an.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = an.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst_fd = worst_fd.max(num / den);
    }

    let (bs_ratio, ue_ratio, records) = power_compliance_sweep(seed)?;
    let passed = worst_stationarity <= 1e-6
        && worst_slackness <= 1e-6
        && worst_fd <= 1e-4
        && worst_power <= 1.0 + 1e-9
        && bs_ratio <= 1.0 + 1e-9
        && ue_ratio <= 1.0 + 1e-9;
    Ok(CheckOutcome {
        name: "KKT and gradient suite",
        passed,
        detail: format!(
            "stationarity {worst_stationarity:.2e}, slackness {worst_slackness:.2e}, finite-difference gap {worst_fd:.2e}, \
             max BS/UE power ratio {:.12}/{:.12} over {records} records",
            bs_ratio.max(worst_power),
            ue_ratio
        ),
    })
}

/// Runs every scheme on a few small noisy drops and returns the largest
/// per-BS and per-UE power ratios and the number of records inspected.
pub fn power_compliance_sweep(seed: u64) -> Result<(f64, f64, usize)> {
    let s = ScenarioConfig {
        num_bs: 4,
        antennas_per_bs: 2,
        num_ue: 4,
        antennas_per_ue: 2,
        max_iter: 8,
        drops: 3,
        master_seed: seed,
        ..ScenarioConfig::default()
    }
    .build()?;
    let (mut bs, mut ue, mut n) = (0.0f64, 0.0f64, 0);
    for d in 0..s.drops {
        let data = DropData::generate(&s, d)?;
        let input = data.input(&s);
        for a in AlgorithmId::ALL {
            let t = orchestrator::run(a, &input, &RunOptions::default())?;
            for r in &t.records {
                bs = bs.max(r.bs_power_ratio);
                ue = ue.max(r.ue_power_ratio);
                n += 1;
            }
        }
    }
    Ok((bs, ue, n))
}

/// The OTA closed form equals the distributed form evaluated at the OTA
/// cross-term estimate, on arbitrary noisy inputs.
pub fn ota_identity(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let opts = SolverOptions::default();
    for i in 0..instances {
        let (m, k, n) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..3));
        let tau = k * n + rng.random_range(0..4);
        let pilots = if i % 2 == 0 {
            orthogonal_pilots(k, n, tau)?
        } else {
            random_pilots(k, n, tau, rng.random())?
        };
        let y1 = complex_gaussian(m, tau, rng.random_range(0.1..10.0), &mut rng);
        let y2 = complex_gaussian(m, tau, rng.random_range(0.1..10.0), &mut rng);
        let w_prev = complex_gaussian(m, k, rng.random_range(0.01..1.0), &mut rng);
        let beta1 = rng.random_range(0.1..10.0);
        let beta2 = rng.random_range(0.1..10.0);
        let sigma = rng.random_range(0.0..0.5);
        let rho = rng.random_range(0.01..10.0);
        let local = BsLocalSignals {
            y_ul1: &y1,
            y_ul2: &y2,
            w_prev: &w_prev,
        };
        let (direct, _) = distributed_precoder_step_ota(&local, &pilots, beta1, beta2, sigma, rho, &opts)?;
        let xi = ota_cross_terms(&local, &pilots, beta1, beta2, sigma);
        let (via_xi, _) = precoder_from_cross_terms_trained(&y1, &pilots, beta1, &xi, sigma, rho, &opts)?;
        worst = worst.max(rel_diff(&direct, &via_xi));
    }
    Ok(CheckOutcome {
        name: "OTA closed-form identity",
        passed: worst <= 1e-10,
        detail: format!("{instances} instances, worst relative gap {worst:.2e}"),
    })
}

/// All property checks with their default sizes.
pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        noiseless_equivalence(NOISELESS_ITERATIONS, seed)?,
        schur_identity(100, seed),
        kkt_suite(5, seed)?,
        ota_identity(100, seed)?,
    ])
}

/// Iterations of the noiseless trajectory check.
pub const NOISELESS_ITERATIONS: usize = 2000;
