use crate::linalg::{real_trace, scale, CMatrix};
use crate::pilots::PilotBook;
use crate::precoding::combiner::mmse_combiners_perfect;
use crate::precoding::duals::{solve_coupled_duals, CoupledProblem};
use crate::precoding::objective::{effective_uplink, phi_matrix, weighted_sum_mse};
use crate::precoding::{CombinerSet, DualState, PrecoderSet};
use crate::scenario::{ChannelSet, SolverOptions};
use crate::{Error, Result};

/// `w_k = ω_k (Φ + Σ_b λ_b E_b^H E_b)^{-1} h_k` with jointly solved duals.
pub fn centralized_precoder_perfect(
    channels: &ChannelSet,
    combiners: &CombinerSet,
    weights: &[f64],
    rho_bs: f64,
    warm: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<(PrecoderSet, DualState)> {
    let dims = channels.dims();
    let h = effective_uplink(channels, combiners);
    let phi = phi_matrix(&h, weights);
    let mut rhs = h;
    for (k, &w) in weights.iter().enumerate() {
        rhs.column_mut(k).scale_mut(w);
    }
    let problem = CoupledProblem {
        q: &phi,
        reg_scale: 1.0,
        rhs: &rhs,
        block: dims.bs_antennas,
        reference: real_trace(&phi),
    };
    let (w, duals) = solve_coupled_duals(&problem, rho_bs, warm, opts)?;
    Ok((PrecoderSet::from_matrix(dims.num_bs, dims.bs_antennas, w)?, duals))
}

#[derive(Clone, Debug)]
pub struct OneShotResult {
    pub precoders: PrecoderSet,
    /// CPU-side combiners; the UEs never see these.
    pub combiners: CombinerSet,
    pub duals: DualState,
    /// Sum MSE on the estimated channels after every precoder update.
    pub mse_history: Vec<f64>,
}

/// Alternates MMSE combiners and centralized precoders on estimated channels,
/// starting from `init`, for at most `alternations` rounds or until the
/// relative sum-MSE change drops below `tol`.
pub fn centralized_precoder_oneshot(
    estimates: &ChannelSet,
    init: &PrecoderSet,
    ue_noise: f64,
    rho_bs: f64,
    alternations: usize,
    tol: f64,
    opts: &SolverOptions,
) -> Result<OneShotResult> {
    let ones = vec![1.0; estimates.dims().num_ue];
    let mut w = init.clone();
    let mut v = mmse_combiners_perfect(estimates, &w, ue_noise);
    let mut duals: Option<DualState> = None;
    let mut history = Vec::with_capacity(alternations);
    for round in 0..alternations.max(1) {
        if round > 0 {
            v = mmse_combiners_perfect(estimates, &w, ue_noise);
        }
        let warm = duals.as_ref().map(|d| d.lambda.as_slice());
        let (next, d) = centralized_precoder_perfect(estimates, &v, &ones, rho_bs, warm, opts)?;
        w = next;
        duals = Some(d);
        let mse = weighted_sum_mse(estimates, &w, &v, &ones, ue_noise);
        if !mse.is_finite() {
            return Err(Error::Numerical("sum MSE is not finite".into()));
        }
        let done = history
            .last()
            .is_some_and(|&prev: &f64| (prev - mse).abs() <= tol * prev.abs());
        history.push(mse);
        if done {
            break;
        }
    }
    Ok(OneShotResult {
        precoders: w,
        combiners: v,
        duals: duals.unwrap_or_default(),
        mse_history: history,
    })
}

/// CPU solution from the stacked UL-1 signals `Y = [Y_1; …; Y_B]`:
/// `w_k = √β (Y Y^H + τ Σ_b (β λ_b − σ²) E_b^H E_b)^{-1} Y p_k`.
#[allow(clippy::too_many_arguments)]
pub fn centralized_precoder_trained(
    y_ul1: &[CMatrix],
    pilots: &PilotBook,
    beta_ul1: f64,
    bs_noise: f64,
    rho_bs: f64,
    warm: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<(PrecoderSet, DualState)> {
    let num_bs = y_ul1.len();
    let m = y_ul1.first().map_or(0, |y| y.nrows());
    let tau = pilots.tau() as f64;
    let mut y = CMatrix::zeros(num_bs * m, pilots.tau());
    for (b, yb) in y_ul1.iter().enumerate() {
        y.rows_mut(b * m, m).copy_from(yb);
    }
    let n = num_bs * m;
    let gram = &y * y.adjoint();
    let reference = real_trace(&gram);
    let q = gram - CMatrix::identity(n, n) * scale(tau * bs_noise);
    let rhs = &y * pilots.sequences() * scale(beta_ul1.sqrt());
    let problem = CoupledProblem {
        q: &q,
        reg_scale: tau * beta_ul1,
        rhs: &rhs,
        block: m,
        reference,
    };
    let (w, duals) = solve_coupled_duals(&problem, rho_bs, warm, opts)?;
    Ok((PrecoderSet::from_matrix(num_bs, m, w)?, duals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airlink;
    use crate::linalg::{complex_gaussian, rel_diff, C64};
    use crate::pilots::orthogonal_pilots;
    use crate::precoding::lagrangian_gradient;
    use crate::scenario::Dims;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(dims: Dims, seed: u64) -> (ChannelSet, PrecoderSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (0..dims.num_bs * dims.num_ue)
            .map(|_| complex_gaussian(dims.bs_antennas, dims.ue_antennas, 1.0, &mut rng))
            .collect();
        let h = ChannelSet::from_blocks(dims, blocks).unwrap();
        let w = PrecoderSet::random_init(dims, 1.0, &mut rng);
        (h, w)
    }

    fn tight() -> SolverOptions {
        SolverOptions {
            tol: 1e-12,
            ..SolverOptions::default()
        }
    }

    #[test]
    fn single_user_unconstrained_is_stationary() {
        let dims = Dims::new(2, 2, 1, 2);
        let (h, w) = instance(dims, 1);
        let v = mmse_combiners_perfect(&h, &w, 0.2);
        // Rank-one Φ: the PD floor keeps the system solvable.
        let (wc, duals) = centralized_precoder_perfect(&h, &v, &[1.0], 1e9, None, &tight()).unwrap();
        let grad = lagrangian_gradient(&h, &v, &wc, &[1.0], &duals.lambda);
        let he = effective_uplink(&h, &v);
        assert!(grad.norm() <= 1e-8 * he.norm());
        // Single user: precoder aligns with the effective channel.
        let c = he.column(0).dotc(&wc.aggregated(0));
        assert!((c.norm() - he.norm() * wc.matrix().norm()).abs() <= 1e-8 * c.norm());
    }

    #[test]
    fn single_bs_matches_local_bisection() {
        let dims = Dims::new(1, 3, 4, 2);
        let (h, w) = instance(dims, 2);
        let v = mmse_combiners_perfect(&h, &w, 0.1);
        let ones = [1.0; 4];
        let (wc, duals) = centralized_precoder_perfect(&h, &v, &ones, 0.05, None, &tight()).unwrap();
        let he = effective_uplink(&h, &v);
        let (wd, sol) = crate::precoding::distributed_precoder_step_perfect(
            &he, &ones, &CMatrix::zeros(3, 4), 0, 3, 0.05, &tight(),
        )
        .unwrap();
        assert!(rel_diff(wc.matrix(), &wd) < 1e-8);
        assert!((duals.lambda[0] - sol.lambda).abs() <= 1e-8 * sol.lambda);
    }

    #[test]
    fn oneshot_with_exact_channels_matches_perfect_alternation() {
        let dims = Dims::new(2, 2, 3, 2);
        let (h, w0) = instance(dims, 3);
        let res = centralized_precoder_oneshot(&h, &w0, 0.1, 0.5, 1, 0.0, &tight()).unwrap();
        let v = mmse_combiners_perfect(&h, &w0, 0.1);
        let (wp, _) = centralized_precoder_perfect(&h, &v, &[1.0; 3], 0.5, None, &tight()).unwrap();
        assert!(rel_diff(res.precoders.matrix(), wp.matrix()) < 1e-9);
    }

    #[test]
    fn oneshot_sum_mse_is_non_increasing() {
        let dims = Dims::new(4, 2, 4, 2);
        let (h, w0) = instance(dims, 4);
        let res = centralized_precoder_oneshot(&h, &w0, 0.05, 0.3, 20, 0.0, &tight()).unwrap();
        assert_eq!(res.mse_history.len(), 20);
        for pair in res.mse_history.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-9), "{pair:?}");
        }
    }

    #[test]
    fn scalar_oneshot_reaches_fixed_point() {
        let dims = Dims::new(1, 1, 1, 1);
        let h = ChannelSet::from_blocks(dims, vec![CMatrix::from_element(1, 1, C64::new(2.0, 0.0))]).unwrap();
        let w0 = PrecoderSet::from_matrix(1, 1, CMatrix::from_element(1, 1, C64::new(1.0, 0.0))).unwrap();
        // Without a binding budget w ← w + 1/(4w) diverges; ρ = 4 caps it at 2.
        let res = centralized_precoder_oneshot(&h, &w0, 1.0, 4.0, 200, 1e-15, &tight()).unwrap();
        let v = res.combiners.v(0)[0];
        let w = res.precoders.matrix()[(0, 0)];
        assert!((w - C64::new(2.0, 0.0)).norm() <= 1e-8);
        assert!((v - C64::new(4.0 / 17.0, 0.0)).norm() <= 1e-8);
        let lambda = res.duals.lambda[0];
        let hv = C64::new(2.0, 0.0) * v;
        assert!(lambda > 0.0);
        assert!((w - hv / (hv.norm_sqr() + lambda)).norm() <= 1e-8);
    }

    #[test]
    fn noiseless_trained_matches_perfect() {
        let dims = Dims::new(3, 2, 4, 2);
        let (h, w) = instance(dims, 5);
        let v = mmse_combiners_perfect(&h, &w, 0.1);
        let pilots = orthogonal_pilots(4, 2, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = airlink::compute_power_scaling(&v, None, 1.0, 2, 8).unwrap();
        let (y1, _) = airlink::ul1_phase(&h, &v, &pilots, s.beta_ul1, 1.0, 0.0, &mut rng).unwrap();
        let (wt, dt) = centralized_precoder_trained(&y1, &pilots, s.beta_ul1, 0.0, 0.3, None, &tight()).unwrap();
        let (wp, dp) = centralized_precoder_perfect(&h, &v, &[1.0; 4], 0.3, None, &tight()).unwrap();
        assert!(rel_diff(wt.matrix(), wp.matrix()) < 1e-8);
        for (a, b) in dt.lambda.iter().zip(&dp.lambda) {
            assert!((a - b).abs() <= 1e-6 * b.max(1e-12));
        }
    }
}
