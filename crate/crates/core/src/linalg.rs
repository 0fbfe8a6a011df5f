//! Complex linear-algebra aliases and small helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Matrix with i.i.d. CN(0, `variance`) entries.
///
/// A zero variance returns zeros without touching the generator.
pub fn complex_gaussian<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    variance: f64,
    rng: &mut R,
) -> CMatrix {
    if variance == 0.0 {
        return CMatrix::zeros(rows, cols);
    }
    let sd = (variance / 2.0).sqrt();
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(sd * re, sd * im)
    })
}

/// Eigendecomposition of a Hermitian matrix; eigenvalues are real.
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn new(m: &CMatrix) -> Self {
        // Symmetrize first so rounding noise in the imaginary diagonal is gone.
        let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(herm);
        Self {
            values: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Inverse of a Hermitian positive-definite matrix via Cholesky.
pub fn hpd_inverse(m: &CMatrix) -> Result<CMatrix> {
    hpd_cholesky(m).map(|c| c.inverse())
}

/// Cholesky factor that also rejects non-positive pivots; the complex
/// square root would otherwise accept them.
pub fn hpd_cholesky(m: &CMatrix) -> Result<Cholesky<C64, Dyn>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?;
    let ok = chol
        .l_dirty()
        .diagonal()
        .iter()
        .all(|d| d.re > 0.0 && d.im.abs() <= 1e-8 * d.re);
    if ok {
        Ok(chol)
    } else {
        Err(Error::Numerical("matrix is not positive definite".into()))
    }
}

/// Solves `m x = rhs` for Hermitian positive-definite `m`.
pub fn hpd_solve(m: &CMatrix, rhs: &CMatrix) -> Result<CMatrix> {
    hpd_cholesky(m).map(|c| c.solve(rhs))
}

pub fn frobenius_sq(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn real_trace(m: &CMatrix) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

pub fn scale(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Largest relative deviation `‖a - b‖_F / max(‖b‖_F, tiny)`.
pub fn rel_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    let num = frobenius_sq(&(a - b)).sqrt();
    let den = frobenius_sq(b).sqrt().max(f64::MIN_POSITIVE);
    num / den
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
