use crate::linalg::{real_trace, scale, CMatrix, CVector};
use crate::pilots::PilotBook;
use crate::precoding::duals::{DualSolution, LocalProblem};
use crate::precoding::objective::phi_block;
use crate::precoding::PrecoderSet;
use crate::scenario::SolverOptions;
use crate::Result;

/// Exact cross terms of BS `b`: column `k` is `Σ_{b̄≠b} Φ_{b b̄} w_{b̄,k}`.
pub fn perfect_cross_terms(
    h_eff: &CMatrix,
    weights: &[f64],
    precoders: &PrecoderSet,
    b: usize,
) -> CMatrix {
    let m = precoders.bs_antennas();
    let mut hb = h_eff.rows(b * m, m).into_owned();
    for (k, &w) in weights.iter().enumerate() {
        hb.column_mut(k).scale_mut(w);
    }
    // Φ_{b,·} W minus the own-block contribution.
    let all = &hb * (h_eff.adjoint() * precoders.matrix());
    all - phi_block(h_eff, weights, b, b, m) * precoders.block(b)
}

/// Per-BS update `w_{b,k} = (Φ_bb + λ_b I)^{-1}(ω_k h_{b,k} − ξ_{b,k})`.
pub fn distributed_precoder_step_perfect(
    h_eff: &CMatrix,
    weights: &[f64],
    cross_terms: &CMatrix,
    b: usize,
    bs_antennas: usize,
    rho_bs: f64,
    opts: &SolverOptions,
) -> Result<(CMatrix, DualSolution)> {
    let m = bs_antennas;
    let phi_bb = phi_block(h_eff, weights, b, b, m);
    let mut rhs = h_eff.rows(b * m, m).into_owned();
    for (k, &w) in weights.iter().enumerate() {
        rhs.column_mut(k).scale_mut(w);
    }
    rhs -= cross_terms;
    let reference = real_trace(&phi_bb);
    LocalProblem::new(&phi_bb, 1.0, &rhs, reference).solve(rho_bs, opts)
}

/// `w^{(i)} = (1 − α) w^{(i−1)} + α w`.
pub fn damped_update(w_prev: &CMatrix, w_new: &CMatrix, alpha: f64) -> CMatrix {
    w_prev * scale(1.0 - alpha) + w_new * scale(alpha)
}

/// Term BS `b` shares over the backhaul: `Y_b^H W_b` (τ × K).
pub fn backhaul_term(y_ul1_b: &CMatrix, w_b: &CMatrix) -> CMatrix {
    y_ul1_b.adjoint() * w_b
}

/// Trained per-BS update with backhaul exchange:
/// `w_{b,k} = (Y Y^H + τ(β λ − σ²) I)^{-1} Y (√β p_k − s_k)` where `s_k` is
/// column `k` of the summed terms received from the other BSs.
#[allow(clippy::too_many_arguments)]
pub fn distributed_precoder_step_backhaul(
    y_ul1_b: &CMatrix,
    pilots: &PilotBook,
    beta_ul1: f64,
    exchanged: &CMatrix,
    bs_noise: f64,
    rho_bs: f64,
    opts: &SolverOptions,
) -> Result<(CMatrix, DualSolution)> {
    let tau = pilots.tau() as f64;
    let m = y_ul1_b.nrows();
    let gram = y_ul1_b * y_ul1_b.adjoint();
    let reference = real_trace(&gram);
    let q = gram - CMatrix::identity(m, m) * scale(tau * bs_noise);
    let rhs = y_ul1_b * (pilots.sequences() * scale(beta_ul1.sqrt()) - exchanged);
    LocalProblem::new(&q, tau * beta_ul1, &rhs, reference).solve(rho_bs, opts)
}

/// Everything one BS holds in an OTA iteration: its own receive signals and
/// previous precoders. No other BS's data is reachable from here.
pub struct BsLocalSignals<'a> {
    pub y_ul1: &'a CMatrix,
    pub y_ul2: &'a CMatrix,
    pub w_prev: &'a CMatrix,
}

/// Cross-term estimate `(1/τ)[Y2 p_k/√β₂ − (Y1 Y1^H − τσ² I) w_{b,k}/β₁]`.
pub fn ota_cross_term(
    local: &BsLocalSignals<'_>,
    pilots: &PilotBook,
    beta_ul1: f64,
    beta_ul2: f64,
    bs_noise: f64,
    k: usize,
) -> CVector {
    ota_cross_terms(local, pilots, beta_ul1, beta_ul2, bs_noise)
        .column(k)
        .into_owned()
}

/// All K cross-term estimates of one BS side by side (M × K).
pub fn ota_cross_terms(
    local: &BsLocalSignals<'_>,
    pilots: &PilotBook,
    beta_ul1: f64,
    beta_ul2: f64,
    bs_noise: f64,
) -> CMatrix {
    let tau = pilots.tau() as f64;
    let m = local.y_ul1.nrows();
    let q = local.y_ul1 * local.y_ul1.adjoint() - CMatrix::identity(m, m) * scale(tau * bs_noise);
    let received = local.y_ul2 * pilots.sequences() * scale(1.0 / beta_ul2.sqrt());
    (received - q * local.w_prev * scale(1.0 / beta_ul1)) * scale(1.0 / tau)
}

/// Trained per-BS update from explicit cross terms, in the perfect-CSI form
/// with `Φ̂_bb = (Y Y^H − τσ² I)/(τβ)` and `ĥ_{b,k} = Y p_k/(τ√β)`.
pub fn precoder_from_cross_terms_trained(
    y_ul1_b: &CMatrix,
    pilots: &PilotBook,
    beta_ul1: f64,
    cross_terms: &CMatrix,
    bs_noise: f64,
    rho_bs: f64,
    opts: &SolverOptions,
) -> Result<(CMatrix, DualSolution)> {
    let tau = pilots.tau() as f64;
    let m = y_ul1_b.nrows();
    let gram = y_ul1_b * y_ul1_b.adjoint();
    let reference = real_trace(&gram) / (tau * beta_ul1);
    let phi = (gram - CMatrix::identity(m, m) * scale(tau * bs_noise)) * scale(1.0 / (tau * beta_ul1));
    let h = y_ul1_b * pilots.sequences() * scale(1.0 / (tau * beta_ul1.sqrt()));
    LocalProblem::new(&phi, 1.0, &(h - cross_terms), reference).solve(rho_bs, opts)
}

/// OTA per-BS update in closed form:
/// `(Y1 Y1^H + τ(β₁λ − σ²) I)^{-1} (Y1(√β₁ p_k + Y1^H w_k) − (β₁/√β₂) Y2 p_k − τσ² w_k)`
/// with `w_k` the BS's previous precoder.
pub fn distributed_precoder_step_ota(
    local: &BsLocalSignals<'_>,
    pilots: &PilotBook,
    beta_ul1: f64,
    beta_ul2: f64,
    bs_noise: f64,
    rho_bs: f64,
    opts: &SolverOptions,
) -> Result<(CMatrix, DualSolution)> {
    let tau = pilots.tau() as f64;
    let y1 = local.y_ul1;
    let m = y1.nrows();
    let gram = y1 * y1.adjoint();
    let reference = real_trace(&gram);
    let q = &gram - CMatrix::identity(m, m) * scale(tau * bs_noise);
    let p = pilots.sequences();
    let rhs = y1 * (p * scale(beta_ul1.sqrt()) + y1.adjoint() * local.w_prev)
        - local.y_ul2 * p * scale(beta_ul1 / beta_ul2.sqrt())
        - local.w_prev * scale(tau * bs_noise);
    LocalProblem::new(&q, tau * beta_ul1, &rhs, reference).solve(rho_bs, opts)
}
