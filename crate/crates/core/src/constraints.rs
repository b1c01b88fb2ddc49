//! Linkage constraint sets: the q-vector moment function g(X; theta, eta, pi, beta)
//! tying internal parameters to the external ones, with its derivatives.
//!
//! Built-in models register analytic Jacobians. User-supplied sets may rely on
//! the finite-difference defaults (central differences, relative step 1e-6,
//! with the documented accuracy loss).

use crate::data::InternalDataset;
use crate::linalg::finite_diff_jacobian;
use crate::model::{EvalParams, Nuisance};
use nalgebra::{DMatrix, DVector};

/// Dimensions of a constraint set: p = theta, v = pi, q = g rows, r = beta.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstraintDims {
    pub p: usize,
    pub v: usize,
    pub q: usize,
    pub r: usize,
}

pub const FD_REL_STEP: f64 = 1e-6;

pub trait ConstraintSet: Send + Sync {
    fn dims(&self) -> ConstraintDims;

    /// Indices (in [0, q)) of the v rows forming g*; defaults to the first v.
    fn g_star_rows(&self) -> Vec<usize> {
        (0..self.dims().v).collect()
    }

    /// Per-row constraint value, length q.
    fn eval(&self, data: &InternalDataset, i: usize, at: &EvalParams) -> DVector<f64>;

    /// q x p Jacobian in theta; finite differences unless overridden.
    fn jac_theta(&self, data: &InternalDataset, i: usize, at: &EvalParams) -> DMatrix<f64> {
        finite_diff_jacobian(
            |th| {
                self.eval(
                    data,
                    i,
                    &EvalParams {
                        theta: th,
                        ..*at
                    },
                )
            },
            at.theta,
            FD_REL_STEP,
        )
        .expect("finite differences of constraint in theta")
    }

    /// q x v Jacobian in pi.
    fn jac_pi(&self, data: &InternalDataset, i: usize, at: &EvalParams) -> DMatrix<f64> {
        let dims = self.dims();
        if dims.v == 0 {
            return DMatrix::zeros(dims.q, 0);
        }
        finite_diff_jacobian(
            |pi| self.eval(data, i, &EvalParams { pi, ..*at }),
            at.pi,
            FD_REL_STEP,
        )
        .expect("finite differences of constraint in pi")
    }

    /// q x r Jacobian in beta.
    fn jac_beta(&self, data: &InternalDataset, i: usize, at: &EvalParams) -> DMatrix<f64> {
        finite_diff_jacobian(
            |beta| self.eval(data, i, &EvalParams { beta, ..*at }),
            at.beta,
            FD_REL_STEP,
        )
        .expect("finite differences of constraint in beta")
    }

    /// q x k Jacobian in the nuisance jump coordinates; `None` when g does not
    /// depend on eta.
    fn jac_eta(
        &self,
        _data: &InternalDataset,
        _i: usize,
        _at: &EvalParams,
    ) -> Option<DMatrix<f64>> {
        None
    }

    /// Hard data-dependent checks (e.g. empty subgroups).
    fn validate(&self, _data: &InternalDataset) -> crate::error::Result<()> {
        Ok(())
    }

    /// Soft diagnostics surfaced on fusion results.
    fn warnings(&self, _data: &InternalDataset, _eta: Nuisance) -> Vec<String> {
        Vec::new()
    }
}

/// Constraint rows of the form `theta_j - beta_k` (an external study estimates
/// components of theta directly). `pairs[k] = j` maps beta component k to the
/// theta component it estimates.
#[derive(Debug, Clone)]
pub struct ThetaComponentConstraint {
    pub p: usize,
    pub pairs: Vec<usize>,
}

impl ThetaComponentConstraint {
    pub fn new(p: usize, pairs: Vec<usize>) -> Self {
        assert!(pairs.iter().all(|&j| j < p), "theta index out of range");
        Self { p, pairs }
    }
}

impl ConstraintSet for ThetaComponentConstraint {
    fn dims(&self) -> ConstraintDims {
        ConstraintDims {
            p: self.p,
            v: 0,
            q: self.pairs.len(),
            r: self.pairs.len(),
        }
    }

    fn eval(&self, _data: &InternalDataset, _i: usize, at: &EvalParams) -> DVector<f64> {
        DVector::from_iterator(
            self.pairs.len(),
            self.pairs
                .iter()
                .enumerate()
                .map(|(k, &j)| at.theta[j] - at.beta[k]),
        )
    }

    fn jac_theta(&self, _data: &InternalDataset, _i: usize, _at: &EvalParams) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.pairs.len(), self.p);
        for (k, &j) in self.pairs.iter().enumerate() {
            jac[(k, j)] = 1.0;
        }
        jac
    }

    fn jac_pi(&self, _data: &InternalDataset, _i: usize, _at: &EvalParams) -> DMatrix<f64> {
        DMatrix::zeros(self.pairs.len(), 0)
    }

    fn jac_beta(&self, _data: &InternalDataset, _i: usize, _at: &EvalParams) -> DMatrix<f64> {
        -DMatrix::identity(self.pairs.len(), self.pairs.len())
    }
}

/// Convenience for tests and examples: evaluates g over all rows into an n x q matrix.
pub fn eval_all_rows(
    set: &dyn ConstraintSet,
    data: &InternalDataset,
    at: &EvalParams,
) -> DMatrix<f64> {
    let q = set.dims().q;
    let mut out = DMatrix::zeros(data.n(), q);
    for i in 0..data.n() {
        out.row_mut(i).copy_from(&set.eval(data, i, at).transpose());
    }
    out
}

/// Helper shared by parametric models without nuisance: a no-op eta view.
pub const NO_ETA: Nuisance<'static> = Nuisance::None;
