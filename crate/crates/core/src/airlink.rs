//! Over-the-air signaling phases and least-squares estimators.
//!
//! Every phase returns the noisy receive matrices (one per BS for uplink
//! phases, one per UE for the downlink). UE transmit power is measured per
//! channel use, `‖X‖²_F / τ`, and checked against ρ_UE before transmission.

use rand::Rng;

use crate::linalg::{complex_gaussian, frobenius_sq, scale, CMatrix, CVector};
use crate::pilots::PilotBook;
use crate::precoding::{effective_uplink, CombinerSet, PrecoderSet};
use crate::scenario::ChannelSet;
use crate::{Error, Result};

/// Relative slack on the UE power check, to absorb rounding in β.
const POWER_SLACK: f64 = 1e-9;

/// Receive signals of one training iteration; phases not run are `None`.
#[derive(Clone, Debug, Default)]
pub struct RxSignals {
    pub ul1: Option<Vec<CMatrix>>,
    pub ul: Option<Vec<CMatrix>>,
    pub dl: Option<Vec<CMatrix>>,
    pub ul2: Option<Vec<CMatrix>>,
}

/// UE-side power scale factors, common to all UEs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerScaling {
    pub beta_ul1: f64,
    /// Only available once the downlink signals are known.
    pub beta_ul2: Option<f64>,
    pub beta_ul: f64,
}

/// Max-rule scaling: the strongest UE transmits at exactly ρ_UE.
pub fn compute_power_scaling(
    combiners: &CombinerSet,
    y_dl: Option<&[CMatrix]>,
    rho_ue: f64,
    ue_antennas: usize,
    tau: usize,
) -> Result<PowerScaling> {
    let max_v = (0..combiners.num_ue())
        .map(|k| combiners.v(k).norm_squared())
        .fold(0.0, f64::max);
    if !(max_v > 0.0) || !max_v.is_finite() {
        return Err(Error::Scaling(format!(
            "largest combiner power is {max_v:.3e}"
        )));
    }
    let beta_ul2 = match y_dl {
        None => None,
        Some(y) => {
            let max_x = (0..combiners.num_ue())
                .map(|k| frobenius_sq(&ul2_precoded(&combiners.v(k), &y[k])))
                .fold(0.0, f64::max);
            if !(max_x > 0.0) || !max_x.is_finite() {
                return Err(Error::Scaling(format!(
                    "largest UL-2 signal energy is {max_x:.3e}"
                )));
            }
            Some(rho_ue * tau as f64 / max_x)
        }
    };
    Ok(PowerScaling {
        beta_ul1: rho_ue / max_v,
        beta_ul2,
        beta_ul: rho_ue / ue_antennas as f64,
    })
}

fn check_power(phase: &'static str, ue: usize, power: f64, limit: f64) -> Result<()> {
    if power > limit * (1.0 + POWER_SLACK) || !power.is_finite() {
        return Err(Error::UePowerViolation {
            phase,
            ue,
            power,
            limit,
        });
    }
    Ok(())
}

// `v v^H Y` without forming the rank-one matrix.
fn ul2_precoded(v: &CVector, y_dl: &CMatrix) -> CMatrix {
    v * (v.adjoint() * y_dl)
}

fn split_rows(stacked: &CMatrix, num_bs: usize, m: usize) -> Vec<CMatrix> {
    (0..num_bs)
        .map(|b| stacked.rows(b * m, m).into_owned())
        .collect()
}

fn add_noise<R: Rng + ?Sized>(signals: &mut [CMatrix], noise: f64, rng: &mut R) {
    for y in signals {
        let (r, c) = y.shape();
        *y += complex_gaussian(r, c, noise, rng);
    }
}

/// UL-1: UE `k` sends `√β v_k p_k^H`; returns `Y_b` (M × τ) per BS.
///
/// Returns the largest per-UE transmit power alongside the signals.
pub fn ul1_phase<R: Rng + ?Sized>(
    channels: &ChannelSet,
    combiners: &CombinerSet,
    pilots: &PilotBook,
    beta_ul1: f64,
    rho_ue: f64,
    bs_noise: f64,
    rng: &mut R,
) -> Result<(Vec<CMatrix>, f64)> {
    let dims = channels.dims();
    let tau = pilots.tau() as f64;
    let mut max_power: f64 = 0.0;
    for k in 0..dims.num_ue {
        let power = beta_ul1 * combiners.v(k).norm_squared() * pilots.sequence(k).norm_squared() / tau;
        check_power("UL-1", k, power, rho_ue)?;
        max_power = max_power.max(power);
    }
    let h = effective_uplink(channels, combiners);
    let stacked = h * pilots.sequences().adjoint() * scale(beta_ul1.sqrt());
    let mut y = split_rows(&stacked, dims.num_bs, dims.bs_antennas);
    add_noise(&mut y, bs_noise, rng);
    Ok((y, max_power))
}

/// Uplink with full pilot matrices: UE `k` sends `√(ρ_UE/N) P_k^H`.
pub fn ul_full_phase<R: Rng + ?Sized>(
    channels: &ChannelSet,
    pilots: &PilotBook,
    rho_ue: f64,
    bs_noise: f64,
    rng: &mut R,
) -> Result<(Vec<CMatrix>, f64)> {
    let dims = channels.dims();
    let beta = rho_ue / dims.ue_antennas as f64;
    let tau = pilots.tau() as f64;
    let mut stacked = CMatrix::zeros(dims.total_bs_antennas(), pilots.tau());
    let mut max_power: f64 = 0.0;
    for k in 0..dims.num_ue {
        let power = beta * frobenius_sq(pilots.matrix(k)) / tau;
        check_power("UL", k, power, rho_ue)?;
        max_power = max_power.max(power);
        stacked += channels.stacked(k) * pilots.matrix(k).adjoint();
    }
    stacked *= scale(beta.sqrt());
    let mut y = split_rows(&stacked, dims.num_bs, dims.bs_antennas);
    add_noise(&mut y, bs_noise, rng);
    Ok((y, max_power))
}

/// DL: BS `b` sends `Σ_k w_{b,k} p_k^H`; returns `Y_k` (N × τ) per UE.
pub fn dl_phase<R: Rng + ?Sized>(
    channels: &ChannelSet,
    precoders: &PrecoderSet,
    pilots: &PilotBook,
    ue_noise: f64,
    rng: &mut R,
) -> Vec<CMatrix> {
    let x = precoders.matrix() * pilots.sequences().adjoint();
    let mut y: Vec<CMatrix> = (0..channels.dims().num_ue)
        .map(|k| channels.stacked(k).adjoint() * &x)
        .collect();
    add_noise(&mut y, ue_noise, rng);
    y
}

/// UL-2: UE `k` sends `√β v_k v_k^H Y_k^DL`; returns `Y_b` (M × τ) per BS.
#[allow(clippy::too_many_arguments)]
pub fn ul2_phase<R: Rng + ?Sized>(
    channels: &ChannelSet,
    combiners: &CombinerSet,
    y_dl: &[CMatrix],
    pilots: &PilotBook,
    beta_ul2: f64,
    rho_ue: f64,
    bs_noise: f64,
    rng: &mut R,
) -> Result<(Vec<CMatrix>, f64)> {
    let dims = channels.dims();
    let tau = pilots.tau() as f64;
    let mut stacked = CMatrix::zeros(dims.total_bs_antennas(), pilots.tau());
    let mut max_power: f64 = 0.0;
    for k in 0..dims.num_ue {
        let x = ul2_precoded(&combiners.v(k), &y_dl[k]) * scale(beta_ul2.sqrt());
        let power = frobenius_sq(&x) / tau;
        check_power("UL-2", k, power, rho_ue)?;
        max_power = max_power.max(power);
        stacked += channels.stacked(k) * x;
    }
    let mut y = split_rows(&stacked, dims.num_bs, dims.bs_antennas);
    add_noise(&mut y, bs_noise, rng);
    Ok((y, max_power))
}

/// `ĥ_{b,k} = Y_b p_k / (τ √β)`.
pub fn ls_effective_channel(y_ul1: &CMatrix, pilots: &PilotBook, beta_ul1: f64, k: usize) -> CVector {
    y_ul1 * pilots.sequence(k) / scale(pilots.tau() as f64 * beta_ul1.sqrt())
}

/// `Ĥ_{b,k} = Y_b P_k / (τ √β)` with `β = ρ_UE / N`.
pub fn ls_full_channel(y_ul: &CMatrix, pilots: &PilotBook, beta_ul: f64, k: usize) -> CMatrix {
    y_ul * pilots.matrix(k) / scale(pilots.tau() as f64 * beta_ul.sqrt())
}

/// `ĝ_k = Y_k p_k / τ`.
pub fn ls_effective_dl(y_dl: &CMatrix, pilots: &PilotBook, k: usize) -> CVector {
    y_dl * pilots.sequence(k) / scale(pilots.tau() as f64)
}
