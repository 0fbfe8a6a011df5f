use crate::linalg::CVector;
use crate::precoding::{mmse_combiner_perfect, CombinerSet, PrecoderSet};
use crate::scenario::{ChannelSet, Overhead};
use crate::{Error, Result};

// Row vector of received gains v_k^H H_k^H w_k̄ over all k̄.
fn gains(channels: &ChannelSet, precoders: &PrecoderSet, v: &CVector, k: usize) -> Vec<f64> {
    let hv = channels.stacked(k) * v;
    let row = hv.adjoint() * precoders.matrix();
    row.iter().map(|z| z.norm_sqr()).collect()
}

fn sinr_of(channels: &ChannelSet, precoders: &PrecoderSet, v: &CVector, k: usize, ue_noise: f64) -> f64 {
    let vn = v.norm_squared();
    if vn == 0.0 {
        return 0.0;
    }
    let g = gains(channels, precoders, v, k);
    let interference: f64 = g.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, x)| x).sum();
    let den = interference + ue_noise * vn;
    if den == 0.0 {
        return if g[k] > 0.0 { f64::INFINITY } else { 0.0 };
    }
    g[k] / den
}

/// SINR of UE `k`; zero for a zero combiner.
pub fn sinr(
    channels: &ChannelSet,
    precoders: &PrecoderSet,
    combiners: &CombinerSet,
    k: usize,
    ue_noise: f64,
) -> f64 {
    sinr_of(channels, precoders, &combiners.v(k), k, ue_noise)
}

/// `log2(1 + SINR_k)` for every UE.
pub fn per_ue_rates(
    channels: &ChannelSet,
    precoders: &PrecoderSet,
    combiners: &CombinerSet,
    ue_noise: f64,
) -> Vec<f64> {
    (0..channels.dims().num_ue)
        .map(|k| (1.0 + sinr(channels, precoders, combiners, k, ue_noise)).log2())
        .collect()
}

/// Sum rate in bps/Hz.
pub fn sum_rate(
    channels: &ChannelSet,
    precoders: &PrecoderSet,
    combiners: &CombinerSet,
    ue_noise: f64,
) -> f64 {
    per_ue_rates(channels, precoders, combiners, ue_noise).iter().sum()
}

/// Per-UE rates with MMSE combiners computed from the true channels.
pub fn genie_per_ue_rates(channels: &ChannelSet, precoders: &PrecoderSet, ue_noise: f64) -> Vec<f64> {
    (0..channels.dims().num_ue)
        .map(|k| {
            let v = mmse_combiner_perfect(channels, precoders, k, ue_noise);
            (1.0 + sinr_of(channels, precoders, &v, k, ue_noise)).log2()
        })
        .collect()
}

pub fn genie_rate(channels: &ChannelSet, precoders: &PrecoderSet, ue_noise: f64) -> f64 {
    genie_per_ue_rates(channels, precoders, ue_noise).iter().sum()
}

/// Rate left after `iterations` training rounds of overhead over `frames`
/// frames: `(1 − s·i / (F·T)) R`.
pub fn effective_rate(rate: f64, iterations: usize, frames: f64, overhead: &Overhead) -> Result<f64> {
    let used = overhead.symbols_per_iteration * iterations as f64;
    let available = overhead.symbols_per_frame * frames;
    if used > available {
        return Err(Error::Domain(format!(
            "{iterations} iterations need {used} symbols but the block has {available}"
        )));
    }
    Ok((1.0 - used / available) * rate)
}

/// Empirical CDF of `samples` evaluated at every point of `grid`.
pub fn per_ue_cdf(samples: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len().max(1) as f64;
    grid.iter()
        .map(|&x| sorted.partition_point(|&s| s <= x) as f64 / n)
        .collect()
}

/// Fraction of samples strictly above `threshold`.
pub fn exceedance(samples: &[f64], threshold: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|&&s| s > threshold).count() as f64 / samples.len() as f64
}

/// Sample mean and the half-width of its normal 95 % confidence interval.
pub fn mean_ci95(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{complex_gaussian, scale, CMatrix, C64};
    use crate::precoding::mmse_combiners_perfect;
    use crate::scenario::Dims;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar() -> (ChannelSet, PrecoderSet, CombinerSet) {
        let dims = Dims::new(1, 1, 1, 1);
        let one = CMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        (
            ChannelSet::from_blocks(dims, vec![one.clone()]).unwrap(),
            PrecoderSet::from_matrix(1, 1, one.clone()).unwrap(),
            CombinerSet::new(one),
        )
    }

    fn instance(dims: Dims, seed: u64) -> (ChannelSet, PrecoderSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (0..dims.num_bs * dims.num_ue)
            .map(|_| complex_gaussian(dims.bs_antennas, dims.ue_antennas, 1.0, &mut rng))
            .collect();
        let h = ChannelSet::from_blocks(dims, blocks).unwrap();
        let w = PrecoderSet::random_init(dims, 1.0, &mut rng);
        (h, w)
    }

    #[test]
    fn scalar_single_user() {
        let (h, w, v) = scalar();
        assert_eq!(sinr(&h, &w, &v, 0, 1.0), 1.0);
        assert_eq!(sum_rate(&h, &w, &v, 1.0), 1.0);
    }

    #[test]
    fn zero_combiner_and_precoder() {
        let (h, w, _) = scalar();
        let zero_v = CombinerSet::new(CMatrix::zeros(1, 1));
        assert_eq!(sinr(&h, &w, &zero_v, 0, 1.0), 0.0);
        let zero_w = PrecoderSet::from_matrix(1, 1, CMatrix::zeros(1, 1)).unwrap();
        assert_eq!(genie_rate(&h, &zero_w, 1.0), 0.0);
    }

    #[test]
    fn sinr_is_scale_invariant() {
        let dims = Dims::new(2, 2, 3, 2);
        let (h, w) = instance(dims, 1);
        let v = mmse_combiners_perfect(&h, &w, 0.3);
        let scaled = CombinerSet::new(v.matrix() * C64::new(-2.5, 1.0));
        for k in 0..3 {
            let a = sinr(&h, &w, &v, k, 0.3);
            let b = sinr(&h, &w, &scaled, k, 0.3);
            assert!((a - b).abs() <= 1e-12 * a);
        }
    }

    #[test]
    fn two_symmetric_users() {
        // Single antenna everywhere, UE k hears gs from its own stream and gi
        // from the other.
        let dims = Dims::new(1, 2, 2, 1);
        let h0 = CMatrix::from_column_slice(2, 1, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let h1 = CMatrix::from_column_slice(2, 1, &[C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
        let h = ChannelSet::from_blocks(dims, vec![h0, h1]).unwrap();
        let (gs, gi) = (C64::new(0.8, 0.2), C64::new(0.3, -0.1));
        let w = CMatrix::from_row_slice(2, 2, &[gs.conj(), gi.conj(), gi.conj(), gs.conj()]);
        let w = PrecoderSet::from_matrix(1, 2, w).unwrap();
        let v = CombinerSet::new(CMatrix::from_element(1, 2, C64::new(1.0, 0.0)));
        let expected = gs.norm_sqr() / (gi.norm_sqr() + 0.5);
        for k in 0..2 {
            assert!((sinr(&h, &w, &v, k, 0.5) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn block_diagonal_groups_add_up() {
        let dims = Dims::new(2, 2, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = complex_gaussian(2, 1, 1.0, &mut rng);
        let b = complex_gaussian(2, 1, 1.0, &mut rng);
        let z = CMatrix::zeros(2, 1);
        // BS 0 only reaches UE 0, BS 1 only reaches UE 1.
        let h = ChannelSet::from_blocks(dims, vec![a.clone(), z.clone(), z.clone(), b.clone()]).unwrap();
        let mut wm = CMatrix::zeros(4, 2);
        wm.view_mut((0, 0), (2, 1)).copy_from(&complex_gaussian(2, 1, 1.0, &mut rng));
        wm.view_mut((2, 1), (2, 1)).copy_from(&complex_gaussian(2, 1, 1.0, &mut rng));
        let w = PrecoderSet::from_matrix(2, 2, wm.clone()).unwrap();
        let total = genie_rate(&h, &w, 0.2);

        let single = Dims::new(1, 2, 1, 1);
        let r0 = genie_rate(
            &ChannelSet::from_blocks(single, vec![a]).unwrap(),
            &PrecoderSet::from_matrix(1, 2, wm.view((0, 0), (2, 1)).into_owned()).unwrap(),
            0.2,
        );
        let r1 = genie_rate(
            &ChannelSet::from_blocks(single, vec![b]).unwrap(),
            &PrecoderSet::from_matrix(1, 2, wm.view((2, 1), (2, 1)).into_owned()).unwrap(),
            0.2,
        );
        assert!((total - r0 - r1).abs() < 1e-12);
    }

    #[test]
    fn genie_rate_dominates_other_combiners() {
        let dims = Dims::new(2, 2, 3, 2);
        let (h, w) = instance(dims, 7);
        let genie = genie_rate(&h, &w, 0.1);
        let v = mmse_combiners_perfect(&h, &w, 0.1);
        assert!((sum_rate(&h, &w, &v, 0.1) - genie).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let other = CombinerSet::new(complex_gaussian(2, 3, 1.0, &mut rng));
            assert!(sum_rate(&h, &w, &other, 0.1) <= genie + 1e-12);
        }
        let rescaled = CombinerSet::new(v.matrix() * scale(3.0));
        assert!((sum_rate(&h, &w, &rescaled, 0.1) - genie).abs() < 1e-12);
    }

    #[test]
    fn effective_rate_examples() {
        let o = Overhead { frames: 1.0, symbols_per_frame: 1120.0, symbols_per_iteration: 4.67 };
        assert_eq!(effective_rate(100.0, 0, 1.0, &o).unwrap(), 100.0);
        let r = effective_rate(100.0, 19, 1.0, &o).unwrap();
        assert!((r - 92.0776785714).abs() < 1e-8);
        assert!(effective_rate(100.0, 240, 1.0, &o).is_err());
        // Linear in R, decreasing in i.
        let a = effective_rate(30.0, 7, 2.0, &o).unwrap();
        assert!((effective_rate(60.0, 7, 2.0, &o).unwrap() - 2.0 * a).abs() < 1e-12);
        assert!(effective_rate(30.0, 8, 2.0, &o).unwrap() < a);
    }

    #[test]
    fn cdf_properties() {
        let cdf = per_ue_cdf(&[3.0; 5], &[2.9, 3.0, 3.1]);
        assert_eq!(cdf, vec![0.0, 1.0, 1.0]);
        let samples = [5.0, 1.0, 4.0, 2.0, 3.0];
        let grid: Vec<f64> = (0..=12).map(|i| i as f64 * 0.5).collect();
        let cdf = per_ue_cdf(&samples, &grid);
        assert!(cdf.windows(2).all(|p| p[0] <= p[1]));
        assert_eq!(*cdf.last().unwrap(), 1.0);
        // Sorted-sample oracle: F(x_(j)) = j / n.
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        for (j, x) in sorted.iter().enumerate() {
            assert_eq!(per_ue_cdf(&samples, &[*x])[0], (j + 1) as f64 / 5.0);
        }
        assert_eq!(exceedance(&samples, 3.0), 0.4);
    }

    #[test]
    fn mean_ci() {
        let (m, ci) = mean_ci95(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((ci - 1.96 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(mean_ci95(&[4.0]), (4.0, 0.0));
    }
}
