//! Combiner and precoder updates for weighted sum-MSE minimization.
//!
//! For fixed combiners the precoder problem is a convex QCQP with one power
//! constraint per BS. The centralized designs solve it jointly through the
//! aggregated `B·M × B·M` system with coupled duals; the distributed designs
//! solve `M × M` local problems per BS given a cross term `ξ_{b,k}` that
//! summarizes the other BSs' precoders seen through the channel correlation.

mod centralized;
mod combiner;
mod distributed;
mod duals;
mod objective;

pub use centralized::{
    centralized_precoder_oneshot, centralized_precoder_perfect, centralized_precoder_trained,
    OneShotResult,
};
pub use combiner::{
    mmse_combiner_perfect, mmse_combiners_perfect, mmse_combiner_trained, mmse_combiners_trained,
    trained_mse,
};
pub use distributed::{
    backhaul_term, damped_update, distributed_precoder_step_backhaul,
    distributed_precoder_step_ota, distributed_precoder_step_perfect, ota_cross_term,
    ota_cross_terms, perfect_cross_terms, precoder_from_cross_terms_trained, BsLocalSignals,
};
pub use duals::{
    solve_coupled_duals, solve_dual_bisection, CoupledProblem, DualSolution, LocalProblem,
};
pub use objective::{
    effective_uplink, lagrangian_gradient, phi_block, phi_matrix, ue_mse, weighted_sum_mse,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{complex_gaussian, frobenius_sq, scale, CMatrix, CVector};
use crate::scenario::Dims;
use crate::{Error, Result};

/// Precoders `w_{b,k}` stored as the aggregated `W` (B·M × K); rows
/// `b·M .. (b+1)·M` are BS `b`'s block.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecoderSet {
    num_bs: usize,
    bs_antennas: usize,
    w: CMatrix,
}

impl PrecoderSet {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            num_bs: dims.num_bs,
            bs_antennas: dims.bs_antennas,
            w: CMatrix::zeros(dims.total_bs_antennas(), dims.num_ue),
        }
    }

    pub fn from_matrix(num_bs: usize, bs_antennas: usize, w: CMatrix) -> Result<Self> {
        if w.nrows() != num_bs * bs_antennas {
            return Err(Error::Config(format!(
                "precoder matrix has {} rows, expected {}",
                w.nrows(),
                num_bs * bs_antennas
            )));
        }
        Ok(Self {
            num_bs,
            bs_antennas,
            w,
        })
    }

    /// Random complex Gaussian directions, each `w_{b,k}` with power ρ/K.
    pub fn random_init<R: Rng + ?Sized>(dims: Dims, rho_bs: f64, rng: &mut R) -> Self {
        let mut set = Self::zeros(dims);
        let per_ue = (rho_bs / dims.num_ue as f64).sqrt();
        for b in 0..dims.num_bs {
            for k in 0..dims.num_ue {
                let mut v = complex_gaussian(dims.bs_antennas, 1, 1.0, rng);
                let norm = frobenius_sq(&v).sqrt();
                v *= scale(per_ue / norm);
                set.w
                    .view_mut((b * dims.bs_antennas, k), (dims.bs_antennas, 1))
                    .copy_from(&v);
            }
        }
        set
    }

    pub fn num_bs(&self) -> usize {
        self.num_bs
    }

    pub fn bs_antennas(&self) -> usize {
        self.bs_antennas
    }

    pub fn num_ue(&self) -> usize {
        self.w.ncols()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.w
    }

    pub fn into_matrix(self) -> CMatrix {
        self.w
    }

    /// BS `b`'s precoders `[w_{b,1}, …, w_{b,K}]` (M × K).
    pub fn block(&self, b: usize) -> CMatrix {
        self.w.rows(b * self.bs_antennas, self.bs_antennas).into_owned()
    }

    pub fn set_block(&mut self, b: usize, block: &CMatrix) {
        self.w
            .rows_mut(b * self.bs_antennas, self.bs_antennas)
            .copy_from(block);
    }

    pub fn w(&self, b: usize, k: usize) -> CVector {
        self.w
            .view((b * self.bs_antennas, k), (self.bs_antennas, 1))
            .column(0)
            .into_owned()
    }

    /// Aggregated precoder `w_k` (B·M).
    pub fn aggregated(&self, k: usize) -> CVector {
        self.w.column(k).into_owned()
    }

    /// Σ_k ‖w_{b,k}‖² for every BS.
    pub fn per_bs_power(&self) -> Vec<f64> {
        (0..self.num_bs)
            .map(|b| {
                self.w
                    .rows(b * self.bs_antennas, self.bs_antennas)
                    .iter()
                    .map(|z| z.norm_sqr())
                    .sum()
            })
            .collect()
    }

    pub fn max_power_ratio(&self, rho_bs: f64) -> f64 {
        self.per_bs_power()
            .into_iter()
            .fold(0.0, |acc, p| acc.max(p / rho_bs))
    }

    /// ‖W − other‖²_F.
    pub fn distance_sq(&self, other: &Self) -> f64 {
        frobenius_sq(&(&self.w - &other.w))
    }
}

/// Combiners `v_k` stored column-wise (N × K).
#[derive(Clone, Debug, PartialEq)]
pub struct CombinerSet {
    v: CMatrix,
}

impl CombinerSet {
    pub fn new(v: CMatrix) -> Self {
        Self { v }
    }

    pub fn from_columns(cols: &[CVector]) -> Self {
        Self {
            v: CMatrix::from_columns(cols),
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.v
    }

    pub fn v(&self, k: usize) -> CVector {
        self.v.column(k).into_owned()
    }

    pub fn num_ue(&self) -> usize {
        self.v.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Per-BS duals λ_b and solver diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: Vec<f64>,
    /// Bisection steps (local) or Newton steps (coupled) used.
    pub steps: usize,
    /// Largest relative power residual over constrained BSs.
    pub residual: f64,
}

impl DualState {
    /// max_b |λ_b (P_b − ρ)| / ρ.
    pub fn slackness(&self, powers: &[f64], rho_bs: f64) -> f64 {
        self.lambda
            .iter()
            .zip(powers)
            .map(|(l, p)| (l * (p - rho_bs)).abs() / rho_bs)
            .fold(0.0, f64::max)
    }
}
