//! Pilot sequences `p_k` and pilot matrices `P_k`.
//!
//! Every UE owns a τ×N pilot matrix with `P_k^H P_k = τ I_N`; its first column
//! doubles as the UE's pilot sequence for the effective-channel phases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{complex_gaussian, scale, CMatrix, CVector, C64};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotMode {
    #[default]
    Orthogonal,
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PilotBook {
    mode: PilotMode,
    tau: usize,
    matrices: Vec<CMatrix>,
    sequences: CMatrix,
}

impl PilotBook {
    fn from_matrices(mode: PilotMode, tau: usize, matrices: Vec<CMatrix>) -> Self {
        let k = matrices.len();
        let mut sequences = CMatrix::zeros(tau, k);
        for (j, p) in matrices.iter().enumerate() {
            sequences.set_column(j, &p.column(0));
        }
        Self {
            mode,
            tau,
            matrices,
            sequences,
        }
    }

    pub fn mode(&self) -> PilotMode {
        self.mode
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn num_ue(&self) -> usize {
        self.matrices.len()
    }

    /// Pilot matrix `P_k` (τ × N).
    pub fn matrix(&self, k: usize) -> &CMatrix {
        &self.matrices[k]
    }

    /// Pilot sequence `p_k`, the first column of `P_k`.
    pub fn sequence(&self, k: usize) -> CVector {
        self.sequences.column(k).into_owned()
    }

    /// All sequences side by side, `P = [p_1, …, p_K]` (τ × K).
    pub fn sequences(&self) -> &CMatrix {
        &self.sequences
    }
}

/// Builds a book of pairwise-orthogonal pilots from the columns of a scaled
/// DFT matrix. Column `k·N + n` is antenna `n` of UE `k`.
pub fn orthogonal_pilots(num_ue: usize, ue_antennas: usize, tau: usize) -> Result<PilotBook> {
    if tau < num_ue * ue_antennas {
        return Err(Error::Config(format!(
            "orthogonal pilots need tau >= K*N = {}, got {tau}",
            num_ue * ue_antennas
        )));
    }
    let dft = |t: usize, j: usize| {
        let phase = -2.0 * std::f64::consts::PI * ((t * j) % tau) as f64 / tau as f64;
        C64::from_polar(1.0, phase)
    };
    let matrices = (0..num_ue)
        .map(|k| CMatrix::from_fn(tau, ue_antennas, |t, n| dft(t, k * ue_antennas + n)))
        .collect();
    Ok(PilotBook::from_matrices(PilotMode::Orthogonal, tau, matrices))
}

/// Draws independent random pilot matrices: Gaussian entries, columns
/// orthonormalized and scaled by √τ. Pilots of different UEs are correlated.
pub fn random_pilots(num_ue: usize, ue_antennas: usize, tau: usize, seed: u64) -> Result<PilotBook> {
    if tau < ue_antennas {
        return Err(Error::Config(format!(
            "random pilots need tau >= N = {ue_antennas}, got {tau}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root = (tau as f64).sqrt();
    let matrices = (0..num_ue)
        .map(|_| {
            let g = complex_gaussian(tau, ue_antennas, 1.0, &mut rng);
            let mut q = gram_schmidt(g);
            q *= scale(root);
            q
        })
        .collect();
    Ok(PilotBook::from_matrices(PilotMode::Random, tau, matrices))
}

pub fn build_pilots(
    mode: PilotMode,
    num_ue: usize,
    ue_antennas: usize,
    tau: usize,
    seed: u64,
) -> Result<PilotBook> {
    match mode {
        PilotMode::Orthogonal => orthogonal_pilots(num_ue, ue_antennas, tau),
        PilotMode::Random => random_pilots(num_ue, ue_antennas, tau, seed),
    }
}

// Modified Gram-Schmidt, run twice for orthogonality at machine precision.
fn gram_schmidt(mut a: CMatrix) -> CMatrix {
    for _pass in 0..2 {
        for j in 0..a.ncols() {
            for i in 0..j {
                let qi = a.column(i).into_owned();
                let proj = qi.dotc(&a.column(j));
                let mut cj = a.column_mut(j);
                cj -= qi * proj;
            }
            let norm = a.column(j).norm();
            a.column_mut(j).scale_mut(1.0 / norm);
        }
    }
    a
}
