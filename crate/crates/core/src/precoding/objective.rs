use crate::linalg::{scale, CMatrix, C64};
use crate::precoding::{CombinerSet, PrecoderSet};
use crate::scenario::ChannelSet;

/// Effective uplink channels stacked column-wise: column `k` is
/// `h_k = H_k v_k` (B·M), with block `b` equal to `h_{b,k} = H_{b,k} v_k`.
pub fn effective_uplink(channels: &ChannelSet, combiners: &CombinerSet) -> CMatrix {
    let dims = channels.dims();
    let mut h = CMatrix::zeros(dims.total_bs_antennas(), dims.num_ue);
    for k in 0..dims.num_ue {
        h.set_column(k, &(channels.stacked(k) * combiners.v(k)));
    }
    h
}

/// `Φ = Σ_k ω_k h_k h_k^H`.
pub fn phi_matrix(h_eff: &CMatrix, weights: &[f64]) -> CMatrix {
    let mut scaled = h_eff.clone();
    for (k, &w) in weights.iter().enumerate() {
        scaled.column_mut(k).scale_mut(w);
    }
    scaled * h_eff.adjoint()
}

/// `Φ_{b b̄} = Σ_k ω_k h_{b,k} h_{b̄,k}^H`.
pub fn phi_block(h_eff: &CMatrix, weights: &[f64], b: usize, bbar: usize, m: usize) -> CMatrix {
    let hb = h_eff.rows(b * m, m);
    let hbb = h_eff.rows(bbar * m, m);
    let mut scaled = hb.into_owned();
    for (k, &w) in weights.iter().enumerate() {
        scaled.column_mut(k).scale_mut(w);
    }
    scaled * hbb.adjoint()
}

/// MSE of UE `k`, evaluated term by term from the per-BS channels.
pub fn ue_mse(
    channels: &ChannelSet,
    precoders: &PrecoderSet,
    combiners: &CombinerSet,
    k: usize,
    ue_noise: f64,
) -> f64 {
    let dims = channels.dims();
    let v = combiners.v(k);
    let mut total = 0.0;
    let mut desired = C64::new(0.0, 0.0);
    for kbar in 0..dims.num_ue {
        let mut s = C64::new(0.0, 0.0);
        for b in 0..dims.num_bs {
            let hv = channels.get(b, k) * &v;
            s += hv.dotc(&precoders.w(b, kbar));
        }
        total += s.norm_sqr();
        if kbar == k {
            desired = s;
        }
    }
    total - 2.0 * desired.re + ue_noise * v.norm_squared() + 1.0
}

pub fn weighted_sum_mse(
    channels: &ChannelSet,
    precoders: &PrecoderSet,
    combiners: &CombinerSet,
    weights: &[f64],
    ue_noise: f64,
) -> f64 {
    weights
        .iter()
        .enumerate()
        .map(|(k, w)| w * ue_mse(channels, precoders, combiners, k, ue_noise))
        .sum()
}

/// Conjugate (Wirtinger) gradient of the Lagrangian with respect to `W`:
/// `(Φ + Σ_b λ_b E_b^H E_b) W − H Ω`. The gradient with respect to the real
/// and imaginary parts of an entry is twice its real and imaginary part.
pub fn lagrangian_gradient(
    channels: &ChannelSet,
    combiners: &CombinerSet,
    precoders: &PrecoderSet,
    weights: &[f64],
    lambda: &[f64],
) -> CMatrix {
    let m = channels.dims().bs_antennas;
    let h = effective_uplink(channels, combiners);
    let mut grad = phi_matrix(&h, weights) * precoders.matrix();
    for (b, &l) in lambda.iter().enumerate() {
        let wb = precoders.matrix().rows(b * m, m).into_owned();
        let mut gb = grad.rows_mut(b * m, m);
        gb += wb * scale(l);
    }
    for (k, &w) in weights.iter().enumerate() {
        let mut col = grad.column_mut(k);
        col -= h.column(k) * scale(w);
    }
    grad
}
