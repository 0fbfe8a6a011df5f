//! Dual-variable solvers for the per-BS power constraints.
//!
//! Every precoder solution has the form `W(λ) = (Q + c Σ_b λ_b E_b^H E_b)^{-1} R`
//! whose per-BS power is non-increasing in λ_b. The local (single-BS) problem
//! is diagonalized once so that bisection costs `O(M K)` per probe. The
//! coupled problem is solved by projected Newton steps on the concave dual,
//! whose Hessian is only `B × B`.

use crate::linalg::{hpd_cholesky, real_trace, scale, CMatrix, HermitianEigen};
use crate::precoding::DualState;
use crate::scenario::SolverOptions;
use crate::{Error, Result};

/// Upper bound on bracket doublings/halvings; 2^±1100 spans all finite f64.
const MAX_BRACKET_MOVES: usize = 1100;
/// Minimum eigenvalue of a regularized matrix, relative to its mean eigenvalue.
const EIG_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualSolution {
    pub lambda: f64,
    pub power: f64,
    pub steps: usize,
}

/// Finds the smallest λ ≥ `floor` with `power(λ) ≤ budget`.
///
/// Returns `floor` itself when the constraint is inactive there. Otherwise the
/// root is bracketed starting from `floor + scale_hint` and bisected for at
/// most `opts.max_steps` steps; the feasible (upper) end is returned.
pub fn solve_dual_bisection<F: FnMut(f64) -> f64>(
    mut power: F,
    budget: f64,
    floor: f64,
    scale_hint: f64,
    opts: &SolverOptions,
) -> Result<DualSolution> {
    let base = floor.max(0.0);
    let p_base = power(base);
    if p_base.is_nan() {
        return Err(Error::DualSolver("power is NaN at the dual floor".into()));
    }
    if p_base <= budget {
        return Ok(DualSolution {
            lambda: base,
            power: p_base,
            steps: 0,
        });
    }

    let mut width = if scale_hint.is_finite() && scale_hint > 0.0 {
        scale_hint
    } else {
        1.0
    };
    let mut p_hi = power(base + width);
    let mut moves = 0;
    while !(p_hi <= budget) {
        width *= 2.0;
        p_hi = power(base + width);
        moves += 1;
        if moves > MAX_BRACKET_MOVES || !width.is_finite() {
            return Err(Error::DualSolver(format!(
                "could not bracket the dual root (power {p_hi:.3e} > budget {budget:.3e})"
            )));
        }
    }
    let (mut lo, mut p_lo) = (base, p_base);
    // Tighten from above so the bracket is within a factor of two of the root.
    for _ in 0..MAX_BRACKET_MOVES {
        let mid = base + width / 2.0;
        if mid <= base {
            break;
        }
        let pm = power(mid);
        if pm <= budget {
            width /= 2.0;
            p_hi = pm;
        } else {
            lo = mid;
            p_lo = pm;
            break;
        }
    }
    let mut hi = base + width;
    if p_lo < p_hi {
        return Err(Error::DualSolver(format!(
            "power is not monotone on [{lo:.3e}, {hi:.3e}]: {p_lo:.3e} < {p_hi:.3e}"
        )));
    }

    let mut steps = 0;
    while steps < opts.max_steps && hi - lo > 4.0 * f64::EPSILON * hi {
        let mid = 0.5 * (lo + hi);
        let pm = power(mid);
        if pm > budget {
            lo = mid;
        } else {
            hi = mid;
            p_hi = pm;
        }
        steps += 1;
    }
    if (budget - p_hi) > opts.tol * budget {
        log::debug!(
            "bisection stopped {:.2e} below budget after {steps} steps",
            (budget - p_hi) / budget
        );
    }
    Ok(DualSolution {
        lambda: hi,
        power: p_hi,
        steps,
    })
}

/// `W(λ) = (Q + c λ I)^{-1} R` for one BS, diagonalized once.
pub struct LocalProblem {
    values: Vec<f64>,
    vectors: CMatrix,
    coeffs: CMatrix,
    row_power: Vec<f64>,
    reg_scale: f64,
    floor: f64,
    hint: f64,
}

impl LocalProblem {
    /// `reference` is the trace of the uncorrected Gram matrix; it sets the
    /// scale of the eigenvalue floor `1e-9 · reference / M`.
    pub fn new(q: &CMatrix, reg_scale: f64, rhs: &CMatrix, reference: f64) -> Self {
        let m = q.nrows() as f64;
        let eig = HermitianEigen::new(q);
        let coeffs = eig.vectors.adjoint() * rhs;
        let row_power = (0..coeffs.nrows())
            .map(|i| coeffs.row(i).iter().map(|z| z.norm_sqr()).sum())
            .collect();
        let mean_eig = if reference > 0.0 {
            reference / m
        } else {
            real_trace(q).abs().max(f64::MIN_POSITIVE) / m
        };
        let eps = (EIG_FLOOR * mean_eig).max(f64::MIN_POSITIVE);
        let floor = ((eps - eig.min()) / reg_scale).max(0.0);
        Self {
            values: eig.values,
            vectors: eig.vectors,
            coeffs,
            row_power,
            reg_scale,
            floor,
            hint: mean_eig / reg_scale,
        }
    }

    /// Smallest admissible λ keeping the regularized matrix positive definite.
    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn power(&self, lambda: f64) -> f64 {
        self.values
            .iter()
            .zip(&self.row_power)
            .map(|(e, p)| p / (e + self.reg_scale * lambda).powi(2))
            .sum()
    }

    pub fn precoders(&self, lambda: f64) -> CMatrix {
        let mut scaled = self.coeffs.clone();
        for (i, e) in self.values.iter().enumerate() {
            scaled
                .row_mut(i)
                .scale_mut(1.0 / (e + self.reg_scale * lambda));
        }
        &self.vectors * scaled
    }

    pub fn solve(&self, budget: f64, opts: &SolverOptions) -> Result<(CMatrix, DualSolution)> {
        let sol = solve_dual_bisection(|l| self.power(l), budget, self.floor, self.hint, opts)?;
        Ok((self.precoders(sol.lambda), sol))
    }
}

/// Joint problem `W = (Q + c Σ_b λ_b E_b^H E_b)^{-1} R` over `B` blocks of
/// size `M`.
pub struct CoupledProblem<'a> {
    pub q: &'a CMatrix,
    pub reg_scale: f64,
    pub rhs: &'a CMatrix,
    pub block: usize,
    /// Trace of the uncorrected Gram matrix, as for [`LocalProblem::new`].
    pub reference: f64,
}

fn assemble(problem: &CoupledProblem<'_>, lambda: &[f64]) -> CMatrix {
    let mut a = problem.q.clone();
    let m = problem.block;
    for (b, &l) in lambda.iter().enumerate() {
        for i in 0..m {
            a[(b * m + i, b * m + i)] += scale(problem.reg_scale * l);
        }
    }
    // Keep A exactly Hermitian for the Cholesky factorization.
    (&a + a.adjoint()) * scale(0.5)
}

fn block_powers(w: &CMatrix, m: usize, num_blocks: usize) -> Vec<f64> {
    (0..num_blocks)
        .map(|b| w.rows(b * m, m).iter().map(|z| z.norm_sqr()).sum())
        .collect()
}

struct CoupledEval {
    w: CMatrix,
    g: CMatrix,
    powers: Vec<f64>,
    /// Negated dual function, `Re tr(R^H W) + c ρ Σ λ_b`.
    objective: f64,
}

fn evaluate(problem: &CoupledProblem<'_>, lambda: &[f64], budget: f64) -> Option<CoupledEval> {
    let chol = hpd_cholesky(&assemble(problem, lambda)).ok()?;
    let w = chol.solve(problem.rhs);
    let g = chol.inverse();
    let powers = block_powers(&w, problem.block, lambda.len());
    let fit: f64 = problem.rhs.iter().zip(w.iter()).map(|(r, x)| (r.conj() * x).re).sum();
    let objective = fit + problem.reg_scale * budget * lambda.iter().sum::<f64>();
    (objective.is_finite() && powers.iter().all(|p| p.is_finite()))
        .then_some(CoupledEval { w, g, powers, objective })
}

/// Hessian of the negated dual, `2 c² Re tr(W_b^H G_bb' W_b')`.
fn dual_hessian(e: &CoupledEval, m: usize, c: f64) -> Vec<Vec<f64>> {
    let num_blocks = e.powers.len();
    let mut h = vec![vec![0.0; num_blocks]; num_blocks];
    for j in 0..num_blocks {
        let t = e.g.columns(j * m, m) * e.w.rows(j * m, m);
        for (i, row) in h.iter_mut().enumerate() {
            let wb = e.w.rows(i * m, m);
            let tb = t.rows(i * m, m);
            let v: f64 = wb.iter().zip(tb.iter()).map(|(a, b)| (a.conj() * b).re).sum();
            row[j] = 2.0 * c * c * v;
        }
    }
    h
}

/// Relative power residuals: two-sided above the floor, excess only at it.
fn residuals(powers: &[f64], lambda: &[f64], lower: f64, budget: f64) -> Vec<f64> {
    powers
        .iter()
        .zip(lambda)
        .map(|(p, l)| {
            let rel = (p - budget) / budget;
            if *l <= lower {
                rel.max(0.0)
            } else {
                rel
            }
        })
        .collect()
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Solves the coupled per-BS duals by projected Newton steps on the dual.
///
/// Converged when every BS either meets its budget within `tol` (active) or
/// sits at its lower λ bound with power at most `budget (1 + tol)`. Steps are
/// damped on the power residuals. Any block left above the budget by the
/// final tolerance is scaled onto it.
pub fn solve_coupled_duals(
    problem: &CoupledProblem<'_>,
    budget: f64,
    warm: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<(CMatrix, DualState)> {
    let n = problem.q.nrows();
    let m = problem.block;
    if m == 0 || !n.is_multiple_of(m) {
        return Err(Error::DualSolver(format!(
            "matrix size {n} is not a multiple of block size {m}"
        )));
    }
    let num_blocks = n / m;
    let c = problem.reg_scale;
    let mean_eig = if problem.reference > 0.0 {
        problem.reference / n as f64
    } else {
        (real_trace(problem.q).abs() / n as f64).max(f64::MIN_POSITIVE)
    };
    let hint = mean_eig / c;
    // Common floor keeping every eigenvalue of the regularized matrix above
    // 1e-9 · mean; directions of Q below it are not resolvable.
    let eps = (EIG_FLOOR * mean_eig).max(f64::MIN_POSITIVE);
    let lower = ((eps - HermitianEigen::new(problem.q).min()) / c).max(0.0);

    let mut lambda: Vec<f64> = match warm {
        Some(l) if l.len() == num_blocks => l.iter().map(|x| x.max(lower)).collect(),
        _ => vec![lower + hint; num_blocks],
    };
    let mut cur = None;
    for _ in 0..200 {
        match evaluate(problem, &lambda, budget) {
            Some(e) => {
                cur = Some(e);
                break;
            }
            None => lambda.iter_mut().for_each(|l| *l = lower + 4.0 * (*l - lower).max(hint)),
        }
    }
    let mut cur = cur.ok_or_else(|| {
        Error::DualSolver("could not find positive-definite starting duals".into())
    })?;

    for iter in 0..=opts.max_sweeps {
        let res = residuals(&cur.powers, &lambda, lower, budget);
        let worst = res.iter().fold(0.0f64, |a, r| a.max(r.abs()));
        if worst <= opts.tol {
            let mut w = cur.w;
            for (b, p) in cur.powers.iter().enumerate() {
                if *p > budget {
                    w.rows_mut(b * m, m).scale_mut((budget / p).sqrt());
                }
            }
            return Ok((
                w,
                DualState {
                    lambda,
                    steps: iter,
                    residual: worst,
                },
            ));
        }
        if iter == opts.max_sweeps {
            break;
        }

        // ∂P_b/∂λ_b' = -hess / c; blocks at the floor with spare power stay there.
        let hess = dual_hessian(&cur, m, c);
        let free: Vec<usize> = (0..num_blocks)
            .filter(|&b| !(lambda[b] <= lower && cur.powers[b] <= budget))
            .collect();
        let mut dir = vec![0.0; num_blocks];
        if !free.is_empty() {
            let k = free.len();
            let trace: f64 = free.iter().map(|&b| hess[b][b]).sum();
            let ridge = 1e-14 * trace / k as f64;
            let hf = nalgebra::DMatrix::from_fn(k, k, |i, j| {
                hess[free[i]][free[j]] + if i == j { ridge } else { 0.0 }
            });
            let rhs = nalgebra::DVector::from_fn(k, |i, _| c * (cur.powers[free[i]] - budget));
            let step = match hf.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => nalgebra::DVector::from_fn(k, |i, _| rhs[i] / hf[(i, i)].max(f64::MIN_POSITIVE)),
            };
            for (i, &b) in free.iter().enumerate() {
                dir[b] = step[i];
            }
        }

        let merit = sq_norm(&res);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = lambda
                .iter()
                .zip(&dir)
                .map(|(l, d)| (l + t * d).max(lower))
                .collect();
            if let Some(e) = evaluate(problem, &trial, budget) {
                // Armijo on the dual or on the residual norm; the dual alone
                // loses resolution when A is nearly singular.
                let slope: f64 = trial
                    .iter()
                    .zip(&lambda)
                    .zip(&cur.powers)
                    .map(|((a, b), p)| c * (budget - p) * (a - b))
                    .sum();
                let dual_ok = e.objective <= cur.objective + 1e-4 * slope && slope < 0.0;
                let r = residuals(&e.powers, &trial, lower, budget);
                let merit_ok = sq_norm(&r) <= (1.0 - 1e-4 * t) * merit;
                if dual_ok || merit_ok {
                    accepted = Some((trial, e));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((l, e)) => {
                lambda = l;
                cur = e;
            }
            None => {
                return Err(Error::DualSolver(format!(
                    "coupled dual line search stalled after {iter} steps; relative power residuals {res:?}"
                )))
            }
        }
    }
    Err(Error::DualSolver(format!(
        "coupled duals did not converge in {} Newton steps; relative power residuals {:?}",
        opts.max_sweeps,
        cur.powers
            .iter()
            .map(|p| (p - budget) / budget)
            .collect::<Vec<_>>()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{complex_gaussian, hpd_solve, rel_diff, C64};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn scalar_root_is_one() {
        // w = 1/(1+λ), power = (1+λ)^{-2} = 1/4.
        let sol = solve_dual_bisection(|l| (1.0 + l).powi(-2), 0.25, 0.0, 1.0, &opts()).unwrap();
        assert!((sol.lambda - 1.0).abs() < 1e-12, "{}", sol.lambda);
        assert!(sol.power <= 0.25);
    }

    #[test]
    fn inactive_constraint_gives_zero() {
        let sol = solve_dual_bisection(|l| (1.0 + l).powi(-2), 2.0, 0.0, 1.0, &opts()).unwrap();
        assert_eq!(sol.lambda, 0.0);
        assert_eq!(sol.steps, 0);
    }

    #[test]
    fn bisection_handles_extreme_scales() {
        for root in [1e-14, 1e-6, 1.0, 1e8, 1e15] {
            let f = |l: f64| (root / (root + l)).powi(2) * 4.0;
            let sol = solve_dual_bisection(f, 1.0, 0.0, 1.0, &opts()).unwrap();
            assert!((sol.lambda - root).abs() <= 1e-12 * root, "{root}: {}", sol.lambda);
        }
    }

    #[test]
    fn increasing_power_is_reported() {
        let err = solve_dual_bisection(|l| 2.0 + l, 1.0, 0.0, 1.0, &opts());
        assert!(err.is_err());
    }

    #[test]
    fn local_problem_meets_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = complex_gaussian(4, 6, 1.0, &mut rng);
        let q = &a * a.adjoint();
        let r = complex_gaussian(4, 3, 1.0, &mut rng);
        let p = LocalProblem::new(&q, 1.0, &r, crate::linalg::real_trace(&q));
        let (w, sol) = p.solve(0.01, &opts()).unwrap();
        let power: f64 = w.iter().map(|z| z.norm_sqr()).sum();
        assert!(power <= 0.01 && power > 0.01 * (1.0 - 1e-9));
        let direct = hpd_solve(&(q + CMatrix::identity(4, 4) * scale(sol.lambda)), &r).unwrap();
        assert!(rel_diff(&w, &direct) < 1e-10);
    }

    #[test]
    fn local_problem_floor_on_indefinite_matrix() {
        let q = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            C64::new(2.0, 0.0),
            C64::new(-1.0, 0.0),
        ]));
        let r = CMatrix::from_element(2, 1, C64::new(1.0, 0.0));
        let p = LocalProblem::new(&q, 1.0, &r, 2.0);
        assert!(p.floor() > 1.0);
        let (_, sol) = p.solve(1e6, &opts()).unwrap();
        assert!(sol.lambda >= p.floor());
    }

    #[test]
    fn single_block_coupled_matches_local() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = complex_gaussian(3, 5, 1.0, &mut rng);
        let q = &a * a.adjoint();
        let r = complex_gaussian(3, 2, 1.0, &mut rng);
        let local = LocalProblem::new(&q, 1.0, &r, crate::linalg::real_trace(&q));
        let (wl, sl) = local.solve(0.05, &opts()).unwrap();
        let problem = CoupledProblem {
            q: &q,
            reg_scale: 1.0,
            rhs: &r,
            block: 3,
            reference: crate::linalg::real_trace(&q),
        };
        let (wc, dual) = solve_coupled_duals(&problem, 0.05, None, &opts()).unwrap();
        assert!((dual.lambda[0] - sl.lambda).abs() <= 1e-5 * sl.lambda);
        assert!(rel_diff(&wc, &wl) < 1e-5);
    }

    #[test]
    fn symmetric_blocks_get_equal_duals() {
        // Swapping the two blocks maps the problem to itself.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h1 = complex_gaussian(2, 3, 1.0, &mut rng);
        let mut h = CMatrix::zeros(4, 6);
        h.view_mut((0, 0), (2, 3)).copy_from(&h1);
        h.view_mut((2, 3), (2, 3)).copy_from(&h1);
        h.view_mut((0, 3), (2, 3)).copy_from(&(h1.clone() * scale(0.3)));
        h.view_mut((2, 0), (2, 3)).copy_from(&(h1 * scale(0.3)));
        let q = &h * h.adjoint();
        let tight = SolverOptions {
            tol: 1e-10,
            ..opts()
        };
        let problem = CoupledProblem {
            q: &q,
            reg_scale: 1.0,
            rhs: &h,
            block: 2,
            reference: crate::linalg::real_trace(&q),
        };
        let (_, dual) = solve_coupled_duals(&problem, 0.1, None, &tight).unwrap();
        assert!((dual.lambda[0] - dual.lambda[1]).abs() <= 1e-6 * dual.lambda[0].max(1e-300));
    }

    #[test]
    fn dual_hessian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = complex_gaussian(6, 4, 1.0, &mut rng);
        let q = &h * h.adjoint();
        let problem = CoupledProblem {
            q: &q,
            reg_scale: 0.7,
            rhs: &h,
            block: 2,
            reference: 0.0,
        };
        let lambda = [0.3, 0.8, 0.5];
        let e = evaluate(&problem, &lambda, 1.0).unwrap();
        let hess = dual_hessian(&e, 2, 0.7);
        let d = 1e-6;
        for j in 0..3 {
            let mut up = lambda;
            up[j] += d;
            let mut dn = lambda;
            dn[j] -= d;
            let pu = evaluate(&problem, &up, 1.0).unwrap();
            let pd = evaluate(&problem, &dn, 1.0).unwrap();
            let fd_obj = (pu.objective - pd.objective) / (2.0 * d);
            assert!((fd_obj - 0.7 * (1.0 - e.powers[j])).abs() < 1e-6, "grad {j}");
            for i in 0..3 {
                let fd = -0.7 * (pu.powers[i] - pd.powers[i]) / (2.0 * d);
                assert!((fd - hess[i][j]).abs() <= 1e-5 * hess[i][j].abs().max(1e-3), "{i}{j}: {fd} vs {}", hess[i][j]);
            }
        }
    }
}
