//! Built-in linear and logistic regression models, their MLE fitters, and the
//! reduced-model constraint sets and sandwich pieces.
//!
//! The linear criterion is the Gaussian log-likelihood with sigma = 1 fixed;
//! the error variance is not estimated. Reduced models regress the response on
//! a single covariate each: `E(Y|Z_k) = pi_k + Z_k beta_k` (or its expit
//! analogue), contributing one intercept row and one slope row to g. The
//! intercept rows come first, so the default g* = first v rows picks them.

use crate::constraints::{ConstraintDims, ConstraintSet};
use crate::data::InternalDataset;
use crate::error::{Error, Result};
use crate::external::{newton_root_estimating, EstimatingFunction};
use crate::linalg::solve_guarded;
use crate::model::{EtaOwned, EvalParams, FitOutput, Nuisance, SemiparametricModel};
use nalgebra::{DMatrix, DVector};

const LN_2PI: f64 = 1.8378770664093453;

pub fn expit(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Intercept-first design value: x = (1, z_i); returns x^T theta.
fn design_dot(data: &InternalDataset, i: usize, theta: &DVector<f64>) -> f64 {
    let mut acc = theta[0];
    for j in 0..data.dim() {
        acc += data.z(i, j) * theta[j + 1];
    }
    acc
}

/// acc += alpha * (1, z_i).
fn design_axpy(data: &InternalDataset, i: usize, alpha: f64, acc: &mut DVector<f64>) {
    acc[0] += alpha;
    for j in 0..data.dim() {
        acc[j + 1] += alpha * data.z(i, j);
    }
}

fn design_outer_add(data: &InternalDataset, i: usize, w: f64, acc: &mut DMatrix<f64>) {
    let d = data.dim();
    let x = |j: usize| if j == 0 { 1.0 } else { data.z(i, j - 1) };
    for a in 0..=d {
        for b in 0..=d {
            acc[(a, b)] += w * x(a) * x(b);
        }
    }
}

fn check_response_varies(data: &InternalDataset) -> Result<()> {
    let y0 = data.y(0);
    if (1..data.n()).all(|i| data.y(i) == y0) {
        return Err(Error::ConstantResponse);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Linear regression, sigma = 1
// ---------------------------------------------------------------------------

/// Gaussian linear regression with intercept and known unit error variance.
/// `p = d + 1` (intercept first).
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub p: usize,
}

impl LinearModel {
    /// Model for data with covariate dimension `d`.
    pub fn for_dim(d: usize) -> Self {
        Self { p: d + 1 }
    }
}

impl SemiparametricModel for LinearModel {
    fn dim_theta(&self) -> usize {
        self.p
    }

    fn criterion(
        &self,
        data: &InternalDataset,
        i: usize,
        theta: &DVector<f64>,
        _eta: Nuisance,
    ) -> f64 {
        let r = data.y(i) - design_dot(data, i, theta);
        -0.5 * r * r - 0.5 * LN_2PI
    }

    fn score(
        &self,
        data: &InternalDataset,
        i: usize,
        theta: &DVector<f64>,
        _eta: Nuisance,
    ) -> DVector<f64> {
        let r = data.y(i) - design_dot(data, i, theta);
        let mut s = DVector::zeros(theta.len());
        design_axpy(data, i, r, &mut s);
        s
    }

    fn hessian(
        &self,
        data: &InternalDataset,
        i: usize,
        theta: &DVector<f64>,
        _eta: Nuisance,
    ) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(theta.len(), theta.len());
        design_outer_add(data, i, -1.0, &mut h);
        h
    }

    fn fit(&self, data: &InternalDataset) -> Result<FitOutput> {
        fit_linear(data)
    }
}

/// Solves the normal equations; the empirical score at theta~ is zero to
/// solver precision.
pub fn fit_linear(data: &InternalDataset) -> Result<FitOutput> {
    check_response_varies(data)?;
    let p = data.dim() + 1;
    let nf = data.n() as f64;
    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = DVector::zeros(p);
    for i in 0..data.n() {
        design_outer_add(data, i, 1.0, &mut xtx);
        design_axpy(data, i, data.y(i), &mut xty);
    }
    xtx /= nf;
    xty /= nf;
    let theta = solve_guarded(&xtx, &xty, "linear design").map_err(|_| Error::SingularDesign)?;
    let model = LinearModel::for_dim(data.dim());
    let crit = (0..data.n())
        .map(|i| model.criterion(data, i, &theta, Nuisance::None))
        .sum();
    Ok(FitOutput {
        theta,
        eta: EtaOwned::None,
        criterion: crit,
    })
}

// ---------------------------------------------------------------------------
// Logistic regression
// ---------------------------------------------------------------------------

/// Logistic regression with intercept. `p = d + 1`.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    pub p: usize,
}

impl LogisticModel {
    pub fn for_dim(d: usize) -> Self {
        Self { p: d + 1 }
    }
}

impl SemiparametricModel for LogisticModel {
    fn dim_theta(&self) -> usize {
        self.p
    }

    fn criterion(
        &self,
        data: &InternalDataset,
        i: usize,
        theta: &DVector<f64>,
        _eta: Nuisance,
    ) -> f64 {
        let u = design_dot(data, i, theta);
        // y*u - log(1 + e^u), stable for large |u|
        let log1pe = if u > 0.0 { u + (-u).exp().ln_1p() } else { u.exp().ln_1p() };
        data.y(i) * u - log1pe
    }

    fn score(
        &self,
        data: &InternalDataset,
        i: usize,
        theta: &DVector<f64>,
        _eta: Nuisance,
    ) -> DVector<f64> {
        let resid = data.y(i) - expit(design_dot(data, i, theta));
        let mut s = DVector::zeros(theta.len());
        design_axpy(data, i, resid, &mut s);
        s
    }

    fn hessian(
        &self,
        data: &InternalDataset,
        i: usize,
        theta: &DVector<f64>,
        _eta: Nuisance,
    ) -> DMatrix<f64> {
        let e = expit(design_dot(data, i, theta));
        let mut h = DMatrix::zeros(theta.len(), theta.len());
        design_outer_add(data, i, -(e * (1.0 - e)), &mut h);
        h
    }

    fn fit(&self, data: &InternalDataset) -> Result<FitOutput> {
        fit_logistic(data)
    }
}

const SEPARATION_NORM: f64 = 50.0;
const SCORE_TOL: f64 = 1e-8;
const MAX_NEWTON: usize = 100;

/// Newton-Raphson with step-halving on the log-likelihood.
pub fn fit_logistic(data: &InternalDataset) -> Result<FitOutput> {
    let has0 = (0..data.n()).any(|i| data.y(i) == 0.0);
    let has1 = (0..data.n()).any(|i| data.y(i) == 1.0);
    if !has0 || !has1 {
        return Err(Error::OneClassOnly);
    }
    let p = data.dim() + 1;
    let nf = data.n() as f64;
    let model = LogisticModel::for_dim(data.dim());
    let mut theta = DVector::zeros(p);
    let loglik = |th: &DVector<f64>| -> f64 {
        (0..data.n())
            .map(|i| model.criterion(data, i, th, Nuisance::None))
            .sum()
    };
    let mut ll = loglik(&theta);
    for _ in 0..MAX_NEWTON {
        let mut score = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        for i in 0..data.n() {
            score += model.score(data, i, &theta, Nuisance::None);
            hess += model.hessian(data, i, &theta, Nuisance::None);
        }
        if score.amax() / nf <= SCORE_TOL {
            return Ok(FitOutput {
                theta,
                eta: EtaOwned::None,
                criterion: ll,
            });
        }
        let step = solve_guarded(&(-&hess), &score, "logistic Newton")?;
        // Step-halving: never decrease the criterion.
        let mut lambda = 1.0;
        loop {
            let cand = &theta + lambda * &step;
            let cand_ll = loglik(&cand);
            if cand_ll >= ll - 1e-12 {
                theta = cand;
                ll = cand_ll;
                break;
            }
            lambda *= 0.5;
            if lambda < 1e-10 {
                return Err(Error::NoConvergence {
                    iters: MAX_NEWTON,
                    context: "logistic step-halving",
                });
            }
        }
        if theta.norm() > SEPARATION_NORM {
            return Err(Error::Separation);
        }
    }
    Err(Error::NoConvergence {
        iters: MAX_NEWTON,
        context: "logistic Newton",
    })
}

// ---------------------------------------------------------------------------
// Reduced-model constraint sets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Linear,
    Logistic,
}

/// Constraints tying the full-model theta to reduced-model coefficients.
///
/// `which[m]` is the (0-based) covariate index of reduced model m. Rows are
/// ordered intercept rows first, then slope rows, so g* = the intercept rows.
#[derive(Debug, Clone)]
pub struct ReducedModelConstraint {
    pub family: Family,
    /// Full-model covariate dimension d (theta has length d+1).
    pub d: usize,
    pub which: Vec<usize>,
}

impl ReducedModelConstraint {
    pub fn new(family: Family, d: usize, which: Vec<usize>) -> Result<Self> {
        if which.is_empty() {
            return Err(Error::Invalid("at least one reduced model required".into()));
        }
        if which.iter().any(|&k| k >= d) {
            return Err(Error::Invalid("reduced-model covariate out of range".into()));
        }
        Ok(Self { family, d, which })
    }

    fn m(&self) -> usize {
        self.which.len()
    }
}

impl ConstraintSet for ReducedModelConstraint {
    fn dims(&self) -> ConstraintDims {
        ConstraintDims {
            p: self.d + 1,
            v: self.m(),
            q: 2 * self.m(),
            r: self.m(),
        }
    }

    fn eval(&self, data: &InternalDataset, i: usize, at: &EvalParams) -> DVector<f64> {
        let m = self.m();
        let mut g = DVector::zeros(2 * m);
        let u_full = design_dot(data, i, at.theta);
        for (mm, &k) in self.which.iter().enumerate() {
            let zk = data.z(i, k);
            let base = match self.family {
                Family::Linear => u_full - at.pi[mm] - at.beta[mm] * zk,
                Family::Logistic => expit(at.pi[mm] + at.beta[mm] * zk) - expit(u_full),
            };
            g[mm] = base;
            g[m + mm] = base * zk;
        }
        g
    }

    fn jac_theta(&self, data: &InternalDataset, i: usize, at: &EvalParams) -> DMatrix<f64> {
        let m = self.m();
        let p = self.d + 1;
        let mut jac = DMatrix::zeros(2 * m, p);
        let x = |j: usize| if j == 0 { 1.0 } else { data.z(i, j - 1) };
        let scale = match self.family {
            Family::Linear => 1.0,
            Family::Logistic => {
                let e = expit(design_dot(data, i, at.theta));
                -(e * (1.0 - e))
            }
        };
        for (mm, &k) in self.which.iter().enumerate() {
            let zk = data.z(i, k);
            for j in 0..p {
                jac[(mm, j)] = scale * x(j);
                jac[(m + mm, j)] = scale * x(j) * zk;
            }
        }
        jac
    }

    fn jac_pi(&self, data: &InternalDataset, i: usize, at: &EvalParams) -> DMatrix<f64> {
        let m = self.m();
        let mut jac = DMatrix::zeros(2 * m, m);
        for (mm, &k) in self.which.iter().enumerate() {
            let zk = data.z(i, k);
            let dpi = match self.family {
                Family::Linear => -1.0,
                Family::Logistic => {
                    let e = expit(at.pi[mm] + at.beta[mm] * zk);
                    e * (1.0 - e)
                }
            };
            jac[(mm, mm)] = dpi;
            jac[(m + mm, mm)] = dpi * zk;
        }
        jac
    }

    fn jac_beta(&self, data: &InternalDataset, i: usize, at: &EvalParams) -> DMatrix<f64> {
        let m = self.m();
        let mut jac = DMatrix::zeros(2 * m, m);
        for (mm, &k) in self.which.iter().enumerate() {
            let zk = data.z(i, k);
            let dbeta = match self.family {
                Family::Linear => -zk,
                Family::Logistic => {
                    let e = expit(at.pi[mm] + at.beta[mm] * zk);
                    e * (1.0 - e) * zk
                }
            };
            jac[(mm, mm)] = dbeta;
            jac[(m + mm, mm)] = dbeta * zk;
        }
        jac
    }
}

/// Builds the linear reduced-model constraint set.
pub fn linear_reduced_constraints(d: usize, which: Vec<usize>) -> Result<ReducedModelConstraint> {
    ReducedModelConstraint::new(Family::Linear, d, which)
}

/// Builds the logistic reduced-model constraint set.
pub fn logistic_reduced_constraints(d: usize, which: Vec<usize>) -> Result<ReducedModelConstraint> {
    ReducedModelConstraint::new(Family::Logistic, d, which)
}

// ---------------------------------------------------------------------------
// Reduced-model estimating functions (for the sandwich Sigma_0)
// ---------------------------------------------------------------------------

/// Stacked reduced-model score rows, parameters (pi_1, beta_1, pi_2, beta_2, ...).
///
/// For the linear family row block m is `(y - pi_m - beta_m z_k)(1, z_k)^T`;
/// logistic replaces the fitted mean by `expit(pi_m + beta_m z_k)`.
#[derive(Debug, Clone)]
pub struct ReducedModelScore {
    pub family: Family,
    pub which: Vec<usize>,
}

/// Estimating function for the reduced models of `which` (the F fed to the
/// sandwich when the external study reports reduced-model slopes).
pub fn reduced_model_sandwich_fn(family: Family, which: Vec<usize>) -> ReducedModelScore {
    ReducedModelScore { family, which }
}

impl EstimatingFunction for ReducedModelScore {
    fn dim(&self) -> usize {
        2 * self.which.len()
    }

    fn beta_indices(&self) -> Vec<usize> {
        (0..self.which.len()).map(|m| 2 * m + 1).collect()
    }

    fn eval(&self, data: &InternalDataset, i: usize, params: &DVector<f64>) -> DVector<f64> {
        let mut f = DVector::zeros(self.dim());
        for (m, &k) in self.which.iter().enumerate() {
            let (pi, beta) = (params[2 * m], params[2 * m + 1]);
            let zk = data.z(i, k);
            let resid = match self.family {
                Family::Linear => data.y(i) - pi - beta * zk,
                Family::Logistic => data.y(i) - expit(pi + beta * zk),
            };
            f[2 * m] = resid;
            f[2 * m + 1] = resid * zk;
        }
        f
    }

    fn jac(&self, data: &InternalDataset, i: usize, params: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.dim(), self.dim());
        for (m, &k) in self.which.iter().enumerate() {
            let zk = data.z(i, k);
            let w = match self.family {
                Family::Linear => 1.0,
                Family::Logistic => {
                    let e = expit(params[2 * m] + params[2 * m + 1] * zk);
                    e * (1.0 - e)
                }
            };
            j[(2 * m, 2 * m)] = -w;
            j[(2 * m, 2 * m + 1)] = -w * zk;
            j[(2 * m + 1, 2 * m)] = -w * zk;
            j[(2 * m + 1, 2 * m + 1)] = -w * zk * zk;
        }
        j
    }

    fn fit(&self, data: &InternalDataset) -> Result<DVector<f64>> {
        match self.family {
            Family::Linear => {
                // Per-model OLS on (1, z_k): closed form via a 2x2 solve.
                let mut params = DVector::zeros(self.dim());
                let nf = data.n() as f64;
                for (m, &k) in self.which.iter().enumerate() {
                    let (mut sz, mut szz, mut sy, mut szy) = (0.0, 0.0, 0.0, 0.0);
                    for i in 0..data.n() {
                        let z = data.z(i, k);
                        sz += z;
                        szz += z * z;
                        sy += data.y(i);
                        szy += z * data.y(i);
                    }
                    let a = DMatrix::from_row_slice(2, 2, &[nf, sz, sz, szz]);
                    let b = DVector::from_vec(vec![sy, szy]);
                    let sol =
                        solve_guarded(&a, &b, "reduced OLS").map_err(|_| Error::SingularDesign)?;
                    params[2 * m] = sol[0];
                    params[2 * m + 1] = sol[1];
                }
                Ok(params)
            }
            Family::Logistic => {
                newton_root_estimating(self, data, DVector::zeros(self.dim()), 1e-10, 100)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy_linear() -> InternalDataset {
        // Exact interpolation: theta = (0, 1, 2), zero residuals.
        let y = DVector::from_vec(vec![0.0, 1.0, 2.0]);
        let z = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        InternalDataset::regression(y, z).unwrap()
    }

    #[test]
    fn linear_exact_interpolation() {
        let fit = fit_linear(&toy_linear()).unwrap();
        let want = DVector::from_vec(vec![0.0, 1.0, 2.0]);
        assert_abs_diff_eq!(fit.theta, want, epsilon = 1e-12);
    }

    #[test]
    fn linear_matches_bruteforce_normal_equations() {
        // Independent oracle: explicit 3x3 accumulation and solve.
        let mut y = Vec::new();
        let mut zf = Vec::new();
        let mut state = 42u64;
        let mut unif = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        };
        for _ in 0..40 {
            let (z1, z2) = (unif() * 2.0, unif() * 3.0);
            zf.push(z1);
            zf.push(z2);
            y.push(0.1 + 0.1 * z1 + 0.2 * z2 + unif());
        }
        let data = InternalDataset::regression(
            DVector::from_vec(y.clone()),
            DMatrix::from_row_slice(40, 2, &zf),
        )
        .unwrap();
        let fit = fit_linear(&data).unwrap();

        let mut a = [[0.0; 3]; 3];
        let mut b = [0.0; 3];
        for i in 0..40 {
            let x = [1.0, zf[2 * i], zf[2 * i + 1]];
            for r in 0..3 {
                b[r] += x[r] * y[i];
                for c in 0..3 {
                    a[r][c] += x[r] * x[c];
                }
            }
        }
        // Cramer-free manual Gaussian elimination on the 3x3 system.
        let mut aug = [[0.0; 4]; 3];
        for r in 0..3 {
            aug[r][..3].copy_from_slice(&a[r]);
            aug[r][3] = b[r];
        }
        for col in 0..3 {
            let piv = (col..3).max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs())).unwrap();
            aug.swap(col, piv);
            for r in 0..3 {
                if r != col {
                    let f = aug[r][col] / aug[col][col];
                    for c in col..4 {
                        aug[r][c] -= f * aug[col][c];
                    }
                }
            }
        }
        for r in 0..3 {
            let oracle = aug[r][3] / aug[r][r];
            assert_abs_diff_eq!(fit.theta[r], oracle, epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_score_zero_at_fit() {
        let data = toy_linear();
        let fit = fit_linear(&data).unwrap();
        let model = LinearModel::for_dim(data.dim());
        let mut s = DVector::zeros(3);
        for i in 0..data.n() {
            s += model.score(&data, i, &fit.theta, Nuisance::None);
        }
        assert!(s.amax() / data.n() as f64 <= 1e-10);
    }

    #[test]
    fn linear_rejects_constant_response() {
        let y = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let z = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let data = InternalDataset::regression(y, z).unwrap();
        assert!(matches!(fit_linear(&data), Err(Error::ConstantResponse)));
    }

    #[test]
    fn logistic_balanced_intercept_only() {
        let y = DVector::from_vec(vec![0.0, 1.0]);
        let data = InternalDataset::regression(y, DMatrix::zeros(2, 0)).unwrap();
        let fit = fit_logistic(&data).unwrap();
        assert_abs_diff_eq!(fit.theta[0], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn logistic_one_class_rejected() {
        let y = DVector::from_vec(vec![1.0, 1.0]);
        let data = InternalDataset::regression(y, DMatrix::zeros(2, 0)).unwrap();
        assert!(matches!(fit_logistic(&data), Err(Error::OneClassOnly)));
    }

    #[test]
    fn logistic_separation_detected() {
        let y = DVector::from_vec(vec![0.0, 0.0, 1.0, 1.0]);
        let z = DMatrix::from_row_slice(4, 1, &[-2.0, -1.0, 1.0, 2.0]);
        let data = InternalDataset::regression(y, z).unwrap();
        assert!(matches!(fit_logistic(&data), Err(Error::Separation)));
    }

    #[test]
    fn logistic_matches_gradient_ascent_oracle() {
        // Slow-but-sure backtracking ascent on the same log-likelihood.
        let y = DVector::from_vec(vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let z = DMatrix::from_row_slice(
            10,
            1,
            &[-1.2, 0.8, -0.4, 1.5, 0.3, -2.0, 0.9, -0.7, 1.1, 0.2],
        );
        let data = InternalDataset::regression(y, z).unwrap();
        let fit = fit_logistic(&data).unwrap();

        let model = LogisticModel::for_dim(data.dim());
        let ll = |th: &DVector<f64>| -> f64 {
            (0..10).map(|i| model.criterion(&data, i, th, Nuisance::None)).sum()
        };
        let mut th = DVector::zeros(2);
        let mut cur = ll(&th);
        for _ in 0..200 {
            let mut grad = DVector::zeros(2);
            for i in 0..10 {
                grad += model.score(&data, i, &th, Nuisance::None);
            }
            let mut step = 1.0;
            loop {
                let cand = &th + step * &grad;
                let cand_ll = ll(&cand);
                if cand_ll > cur {
                    th = cand;
                    cur = cand_ll;
                    break;
                }
                step *= 0.5;
                if step < 1e-14 {
                    break;
                }
            }
        }
        assert_abs_diff_eq!(fit.theta, th, epsilon = 1e-6);
    }

    #[test]
    fn logistic_newton_monotone_loglik() {
        let y = DVector::from_vec(vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let z = DMatrix::from_row_slice(6, 1, &[-1.0, 0.5, -0.2, 1.0, 0.1, -1.5]);
        let data = InternalDataset::regression(y, z).unwrap();
        // fit_logistic enforces non-decrease internally; verify the fit beats theta = 0.
        let fit = fit_logistic(&data).unwrap();
        let model = LogisticModel::for_dim(data.dim());
        let ll0: f64 = (0..6)
            .map(|i| model.criterion(&data, i, &DVector::zeros(2), Nuisance::None))
            .sum();
        assert!(fit.criterion >= ll0);
    }

    #[test]
    fn reduced_constraints_zero_parameters() {
        let data = toy_linear();
        let set = linear_reduced_constraints(2, vec![0, 1]).unwrap();
        let zeros3 = DVector::zeros(3);
        let zeros2 = DVector::zeros(2);
        let at = EvalParams {
            theta: &zeros3,
            eta: Nuisance::None,
            pi: &zeros2,
            beta: &zeros2,
        };
        for i in 0..data.n() {
            assert_abs_diff_eq!(set.eval(&data, i, &at).amax(), 0.0, epsilon = 0.0);
        }

        let lset = logistic_reduced_constraints(2, vec![0, 1]).unwrap();
        for i in 0..data.n() {
            assert_abs_diff_eq!(lset.eval(&data, i, &at).amax(), 0.0, epsilon = 0.0);
        }
    }

    #[test]
    fn reduced_jac_theta_reads_off_coefficients() {
        // Model-2 rows only, at row (z1, z2) = (1, 2): [[1,1,2],[2,2,4]].
        let y = DVector::from_vec(vec![0.0, 0.0]);
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 0.0]);
        let data = InternalDataset::regression(y, z).unwrap();
        let set = linear_reduced_constraints(2, vec![1]).unwrap();
        let theta = DVector::zeros(3);
        let pi = DVector::zeros(1);
        let beta = DVector::zeros(1);
        let at = EvalParams {
            theta: &theta,
            eta: Nuisance::None,
            pi: &pi,
            beta: &beta,
        };
        let jac = set.jac_theta(&data, 0, &at);
        let want = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 2.0, 2.0, 2.0, 4.0]);
        assert_abs_diff_eq!(jac, want, epsilon = 1e-14);
    }

    #[test]
    fn sandwich_j_block_matches_display() {
        // Linear model-1 J at a row with covariate z1: [[-1, -z1], [-z1, -z1^2]].
        let y = DVector::from_vec(vec![0.0, 0.0]);
        let z = DMatrix::from_row_slice(2, 1, &[1.7, 0.0]);
        let data = InternalDataset::regression(y, z).unwrap();
        let f = reduced_model_sandwich_fn(Family::Linear, vec![0]);
        let j = f.jac(&data, 0, &DVector::zeros(2));
        let want = DMatrix::from_row_slice(2, 2, &[-1.0, -1.7, -1.7, -1.7 * 1.7]);
        assert_abs_diff_eq!(j, want, epsilon = 1e-14);
    }

    #[test]
    fn zero_residual_rows_give_zero_f() {
        let y = DVector::from_vec(vec![0.5 + 0.3 * 2.0, 0.5 - 0.3]);
        let z = DMatrix::from_row_slice(2, 1, &[2.0, -1.0]);
        let data = InternalDataset::regression(y, z).unwrap();
        let f = reduced_model_sandwich_fn(Family::Linear, vec![0]);
        let params = DVector::from_vec(vec![0.5, 0.3]);
        for i in 0..2 {
            assert_abs_diff_eq!(f.eval(&data, i, &params).amax(), 0.0, epsilon = 1e-15);
        }
    }
}
