//! External-study summaries: the estimate beta~, its sample size N, and a
//! covariance specification (explicit Sigma_0 or a sandwich built from the
//! internal data), plus an optional V override for the penalty weight.

use crate::data::InternalDataset;
use crate::error::{Error, Result};
use crate::linalg::{check_spd, solve_guarded, GuardedLu};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// An estimating function `F(X; params)` whose root defines the external
/// estimator, with its analytic parameter Jacobian.
///
/// `params` may carry nuisance coordinates alongside the shared beta
/// components (reduced-model intercepts, say); `beta_indices` selects the
/// components matching the constraint set's beta ordering.
pub trait EstimatingFunction: Send + Sync {
    /// Total parameter count (= number of rows of F; exactly identified).
    fn dim(&self) -> usize;

    /// Positions of the beta components within the parameter vector.
    fn beta_indices(&self) -> Vec<usize>;

    /// F(X_i; params), length `dim()`.
    fn eval(&self, data: &InternalDataset, i: usize, params: &DVector<f64>) -> DVector<f64>;

    /// dF/dparams at row i, `dim() x dim()`.
    fn jac(&self, data: &InternalDataset, i: usize, params: &DVector<f64>) -> DMatrix<f64>;

    /// Solves `E_n F = 0` on the given data.
    fn fit(&self, data: &InternalDataset) -> Result<DVector<f64>>;
}

/// Covariance specification for `sqrt(N) (beta~ - beta_0)`.
#[derive(Clone)]
pub enum CovarianceSpec {
    /// Known asymptotic covariance Sigma_0.
    Explicit(DMatrix<f64>),
    /// Sandwich J^{-1} K J^{-T} of the given estimating function, evaluated on
    /// the internal data.
    SandwichFromInternal(Arc<dyn EstimatingFunction>),
}

impl std::fmt::Debug for CovarianceSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CovarianceSpec::Explicit(m) => write!(f, "Explicit({}x{})", m.nrows(), m.ncols()),
            CovarianceSpec::SandwichFromInternal(_) => write!(f, "SandwichFromInternal"),
        }
    }
}

/// One external study's summary information.
#[derive(Debug, Clone)]
pub struct ExternalSummary {
    /// The external estimate beta~ (length r).
    pub beta_hat: DVector<f64>,
    /// External sample size N.
    pub n_ext: usize,
    pub cov: CovarianceSpec,
    /// Optional override of the penalty weight V (default V = Sigma_0).
    pub v_matrix: Option<DMatrix<f64>>,
}

const SYM_TOL: f64 = 1e-10;

impl ExternalSummary {
    pub fn new(beta_hat: DVector<f64>, n_ext: usize, cov: CovarianceSpec) -> Result<Self> {
        if n_ext == 0 {
            return Err(Error::Invalid("external sample size must be >= 1".into()));
        }
        if beta_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "external estimate",
            });
        }
        if let CovarianceSpec::Explicit(s) = &cov {
            if s.nrows() != beta_hat.len() || s.ncols() != beta_hat.len() {
                return Err(Error::DimMismatch {
                    expected: beta_hat.len(),
                    got: s.nrows(),
                });
            }
            check_spd(s, SYM_TOL, "Sigma_0")?;
        }
        Ok(Self {
            beta_hat,
            n_ext,
            cov,
            v_matrix: None,
        })
    }

    pub fn with_v(mut self, v: DMatrix<f64>) -> Result<Self> {
        check_spd(&v, SYM_TOL, "V")?;
        if v.nrows() != self.beta_hat.len() {
            return Err(Error::DimMismatch {
                expected: self.beta_hat.len(),
                got: v.nrows(),
            });
        }
        self.v_matrix = Some(v);
        Ok(self)
    }

    pub fn r(&self) -> usize {
        self.beta_hat.len()
    }

    /// Resolves Sigma_0 (explicit, or sandwich on the internal data).
    pub fn sigma0(&self, data: &InternalDataset) -> Result<DMatrix<f64>> {
        match &self.cov {
            CovarianceSpec::Explicit(s) => Ok(s.clone()),
            CovarianceSpec::SandwichFromInternal(f) => {
                let sw = sandwich_sigma0(f.as_ref(), data)?;
                Ok(sw.sigma_beta)
            }
        }
    }

    /// The V used in the update: explicit override, else Sigma_0.
    pub fn v(&self, data: &InternalDataset) -> Result<DMatrix<f64>> {
        match &self.v_matrix {
            Some(v) => Ok(v.clone()),
            None => self.sigma0(data),
        }
    }
}

/// Output of the sandwich construction.
#[derive(Debug, Clone)]
pub struct Sandwich {
    /// Parameters solving `E_n F = 0` on the internal data.
    pub params: DVector<f64>,
    /// Full J^{-1} K J^{-T} over all parameters of F.
    pub sigma_full: DMatrix<f64>,
    /// Sub-block for the beta components (the Sigma_0 estimate).
    pub sigma_beta: DMatrix<f64>,
}

/// Sandwich estimator `J^{-1} K J^{-T}` with `J = E_n dF/dparams` and
/// `K = E_n F F^T`, evaluated on internal data at the internally re-fitted
/// parameters.
pub fn sandwich_sigma0(f: &dyn EstimatingFunction, data: &InternalDataset) -> Result<Sandwich> {
    let params = f.fit(data)?;
    let m = f.dim();
    let nf = data.n() as f64;
    let mut j = DMatrix::zeros(m, m);
    let mut k = DMatrix::zeros(m, m);
    for i in 0..data.n() {
        j += f.jac(data, i, &params);
        let fi = f.eval(data, i, &params);
        k += &fi * fi.transpose();
    }
    j /= nf;
    k /= nf;
    let lu = GuardedLu::new(&j, "sandwich J").map_err(|_| Error::SingularJ)?;
    // J^{-1} K J^{-T} = (J \ K) J^{-T}; solve twice rather than invert.
    let jk = lu.solve_mat(&k)?;
    let sigma_full = lu.solve_mat(&jk.transpose())?.transpose();
    let idx = f.beta_indices();
    let mut sigma_beta = DMatrix::zeros(idx.len(), idx.len());
    for (a, &ia) in idx.iter().enumerate() {
        for (b, &ib) in idx.iter().enumerate() {
            sigma_beta[(a, b)] = sigma_full[(ia, ib)];
        }
    }
    // Exact symmetry by construction up to roundoff; enforce it.
    sigma_beta = crate::linalg::symmetrize(&sigma_beta);
    Ok(Sandwich {
        params,
        sigma_full,
        sigma_beta,
    })
}

/// Mean-estimation function F(X; beta) = y - beta, the simplest sandwich case.
#[derive(Debug, Clone)]
pub struct MeanEstimatingFunction;

impl EstimatingFunction for MeanEstimatingFunction {
    fn dim(&self) -> usize {
        1
    }

    fn beta_indices(&self) -> Vec<usize> {
        vec![0]
    }

    fn eval(&self, data: &InternalDataset, i: usize, params: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, data.y(i) - params[0])
    }

    fn jac(&self, _data: &InternalDataset, _i: usize, _params: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, -1.0)
    }

    fn fit(&self, data: &InternalDataset) -> Result<DVector<f64>> {
        let mean = data.responses().mean();
        Ok(DVector::from_element(1, mean))
    }
}

/// Solves a tiny exactly-identified system `E_n F = 0` by Newton with the
/// analytic Jacobian; shared by the reduced-model fitters.
pub(crate) fn newton_root_estimating(
    f: &dyn EstimatingFunction,
    data: &InternalDataset,
    start: DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    let m = f.dim();
    let nf = data.n() as f64;
    let mut params = start;
    for _ in 0..max_iter {
        let mut mean_f = DVector::zeros(m);
        let mut mean_j = DMatrix::zeros(m, m);
        for i in 0..data.n() {
            mean_f += f.eval(data, i, &params);
            mean_j += f.jac(data, i, &params);
        }
        mean_f /= nf;
        mean_j /= nf;
        if mean_f.amax() <= tol {
            return Ok(params);
        }
        let step = solve_guarded(&mean_j, &mean_f, "estimating function Newton")?;
        params -= step;
    }
    Err(Error::NoConvergence {
        iters: max_iter,
        context: "estimating function Newton",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mean_sandwich_is_sample_variance() {
        // F(X; beta) = X - beta: J = -1, K = s^2, so Sigma_0 = s^2.
        let y = DVector::from_vec(vec![1.0, 2.0, 4.0, 7.0, 11.0]);
        let data = InternalDataset::regression(y.clone(), DMatrix::zeros(5, 0)).unwrap();
        let sw = sandwich_sigma0(&MeanEstimatingFunction, &data).unwrap();
        let mean = y.mean();
        let s2 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
        assert_abs_diff_eq!(sw.sigma_beta[(0, 0)], s2, epsilon = 1e-12);
        assert_abs_diff_eq!(sw.params[0], mean, epsilon = 1e-12);
    }

    #[test]
    fn explicit_sigma_must_be_spd() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = ExternalSummary::new(DVector::zeros(2), 10, CovarianceSpec::Explicit(bad));
        assert!(err.is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 1e-3, 0.0, 1.0]);
        assert!(
            ExternalSummary::new(DVector::zeros(2), 10, CovarianceSpec::Explicit(asym)).is_err()
        );
    }
}
