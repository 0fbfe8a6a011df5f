use crate::linalg::{real_trace, scale, CMatrix, CVector, HermitianEigen};
use crate::pilots::PilotBook;
use crate::precoding::{CombinerSet, PrecoderSet};
use crate::scenario::ChannelSet;

const MAX_CONDITION: f64 = 1e12;
const RIDGE: f64 = 1e-12;

/// Solves `gram · x = rhs` for a small Hermitian PSD `gram`, adding a ridge of
/// `1e-12 · tr/N` when the condition number exceeds 1e12. An all-zero `gram`
/// yields the zero vector.
fn regularized_solve(gram: &CMatrix, rhs: &CVector) -> CVector {
    let n = gram.nrows();
    let eig = HermitianEigen::new(gram);
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) {
        return CVector::zeros(n);
    }
    let ridge = if lo <= 0.0 || hi / lo > MAX_CONDITION {
        RIDGE * real_trace(gram) / n as f64
    } else {
        0.0
    };
    let coeffs = eig.vectors.adjoint() * rhs;
    let scaled = CVector::from_iterator(
        n,
        coeffs
            .iter()
            .zip(&eig.values)
            .map(|(c, &e)| c / scale((e + ridge).max(f64::MIN_POSITIVE))),
    );
    &eig.vectors * scaled
}

/// MMSE combiner `v_k = (Ψ_k + σ_k² I)^{-1} g_k` from true channels.
pub fn mmse_combiner_perfect(
    channels: &ChannelSet,
    precoders: &PrecoderSet,
    k: usize,
    ue_noise: f64,
) -> CVector {
    // Column k̄ of `gains` is Σ_b H_{b,k}^H w_{b,k̄}.
    let gains = channels.stacked(k).adjoint() * precoders.matrix();
    let n = gains.nrows();
    let psi = &gains * gains.adjoint() + CMatrix::identity(n, n) * scale(ue_noise);
    regularized_solve(&psi, &gains.column(k).into_owned())
}

pub fn mmse_combiners_perfect(
    channels: &ChannelSet,
    precoders: &PrecoderSet,
    ue_noise: f64,
) -> CombinerSet {
    let cols: Vec<_> = (0..channels.dims().num_ue)
        .map(|k| mmse_combiner_perfect(channels, precoders, k, ue_noise))
        .collect();
    CombinerSet::from_columns(&cols)
}

/// Trained combiner `v_k = (Y Y^H)^{-1} Y p_k` from the downlink receive
/// signal of UE `k` alone.
pub fn mmse_combiner_trained(y_dl: &CMatrix, pilots: &PilotBook, k: usize) -> CVector {
    let gram = y_dl * y_dl.adjoint();
    regularized_solve(&gram, &(y_dl * pilots.sequence(k)))
}

pub fn mmse_combiners_trained(y_dl: &[CMatrix], pilots: &PilotBook) -> CombinerSet {
    let cols: Vec<_> = y_dl
        .iter()
        .enumerate()
        .map(|(k, y)| mmse_combiner_trained(y, pilots, k))
        .collect();
    CombinerSet::from_columns(&cols)
}

/// MSE estimate built from the downlink receive signal only.
pub fn trained_mse(y_dl: &CMatrix, pilots: &PilotBook, k: usize, v: &CVector) -> f64 {
    let tau = pilots.tau() as f64;
    let yhv = y_dl.adjoint() * v;
    let quad = yhv.norm_squared() / tau;
    let lin = v.dotc(&(y_dl * pilots.sequence(k))).re / tau;
    quad - 2.0 * lin + 1.0
}
