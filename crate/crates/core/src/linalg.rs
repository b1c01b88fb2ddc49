//! Small dense linear-algebra helpers with a shared condition-number guard.
//!
//! Every "inverse times vector" in the crate goes through a factorized solve
//! here; explicit inverses are materialized only for the tiny `rho * V^{-1}`
//! blocks, and those too are built from solves.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Condition-number ceiling shared by all inversions.
pub const COND_LIMIT: f64 = 1e12;

/// 2-norm condition number via singular values.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// LU factorization wrapper that remembers the condition number.
pub struct GuardedLu {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    pub cond: f64,
}

impl GuardedLu {
    pub fn new(a: &DMatrix<f64>, context: &'static str) -> Result<Self> {
        let cond = condition_number(a);
        if !cond.is_finite() || cond > COND_LIMIT {
            return Err(Error::SingularMatrix {
                context,
                cond,
                limit: COND_LIMIT,
            });
        }
        Ok(Self {
            lu: a.clone().lu(),
            cond,
        })
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.lu.solve(b).ok_or(Error::SingularMatrix {
            context: "lu solve",
            cond: self.cond,
            limit: COND_LIMIT,
        })
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.lu.solve(b).ok_or(Error::SingularMatrix {
            context: "lu solve",
            cond: self.cond,
            limit: COND_LIMIT,
        })
    }
}

/// Solves `a x = b` for a vector right-hand side under the condition guard.
pub fn solve_guarded(a: &DMatrix<f64>, b: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    GuardedLu::new(a, context)?.solve_vec(b)
}

/// Solves `a X = B` for a matrix right-hand side under the condition guard.
pub fn solve_guarded_mat(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    context: &'static str,
) -> Result<DMatrix<f64>> {
    GuardedLu::new(a, context)?.solve_mat(b)
}

/// Minimum-norm least-squares solve via SVD with relative rank cutoff.
///
/// Used only by the overlap-invariance check, where the appended redundancy
/// rows can make the augmented system exactly rank-deficient.
pub fn solve_min_norm(a: &DMatrix<f64>, b: &DVector<f64>, rank_tol: f64) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = rank_tol * smax.max(f64::MIN_POSITIVE);
    svd.solve(b, eps)
        .map_err(|e| Error::Invalid(format!("svd solve failed: {e}")))
}

/// Maximum absolute asymmetry `max |a_ij - a_ji|`.
pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Validates symmetry (<= `tol` asymmetry) and strict positive definiteness.
pub fn check_spd(a: &DMatrix<f64>, tol: f64, context: &'static str) -> Result<()> {
    let asym = max_asymmetry(a);
    if asym > tol {
        return Err(Error::NotSymmetric {
            asym,
            tol,
            context,
        });
    }
    let sym = symmetrize(a);
    let min_eig = sym.symmetric_eigen().eigenvalues.min();
    if min_eig <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eig, context });
    }
    Ok(())
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Clips slightly negative eigenvalues of a nominally-PSD covariance to zero.
///
/// Eigenvalues in `[-1e-10 * trace, 0)` are treated as rounding noise; anything
/// more negative signals an assembly bug and is an error.
pub fn repair_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrize(a);
    let eig = sym.symmetric_eigen();
    let trace = sym.trace().abs().max(f64::MIN_POSITIVE);
    let floor = -1e-10 * trace;
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < floor {
            return Err(Error::IndefiniteCovariance { eig: *v });
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let q = eig.eigenvectors;
    Ok(&q * DMatrix::from_diagonal(&vals) * q.transpose())
}

/// Central-difference Jacobian of `f` at `x` with per-coordinate step
/// `rel_step * (1 + |x_j|)`.
pub fn finite_diff_jacobian<F>(f: F, x: &DVector<f64>, rel_step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let s = x.len();
    let f0 = f(x);
    let t = f0.len();
    let mut jac = DMatrix::zeros(t, s);
    let mut xp = x.clone();
    for j in 0..s {
        let h = rel_step * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        if fp.iter().chain(fm.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEvaluation);
        }
        for i in 0..t {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fd_jacobian_identity() {
        let x = DVector::from_vec(vec![0.3, -1.2, 4.0]);
        let j = finite_diff_jacobian(|v| v.clone(), &x, 1e-6).unwrap();
        assert_abs_diff_eq!(j, DMatrix::identity(3, 3), epsilon = 1e-10);
    }

    #[test]
    fn fd_jacobian_polynomial() {
        // f(x) = (x1^2, x1 x2) at (1,1) -> [[2,0],[1,1]]
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let j = finite_diff_jacobian(
            |v| DVector::from_vec(vec![v[0] * v[0], v[0] * v[1]]),
            &x,
            1e-6,
        )
        .unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]);
        assert_abs_diff_eq!(j, want, epsilon = 1e-8);
    }

    #[test]
    fn fd_jacobian_expit_at_zero() {
        let x = DVector::from_vec(vec![0.0]);
        let j = finite_diff_jacobian(
            |v| DVector::from_vec(vec![1.0 / (1.0 + (-v[0]).exp())]),
            &x,
            1e-6,
        )
        .unwrap();
        assert_abs_diff_eq!(j[(0, 0)], 0.25, epsilon = 1e-8);
    }

    #[test]
    fn fd_jacobian_rejects_non_finite() {
        let x = DVector::from_vec(vec![0.0]);
        let err = finite_diff_jacobian(|v| DVector::from_vec(vec![v[0].ln()]), &x, 1e-6);
        assert!(matches!(err, Err(Error::NonFiniteEvaluation)));
    }

    #[test]
    fn psd_repair_clips_noise_and_rejects_real_negatives() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-12]);
        let r = repair_psd(&a).unwrap();
        assert!(r.symmetric_eigen().eigenvalues.min() >= 0.0);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(repair_psd(&bad).is_err());
    }

    #[test]
    fn guard_rejects_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(GuardedLu::new(&a, "test").is_err());
    }
}
