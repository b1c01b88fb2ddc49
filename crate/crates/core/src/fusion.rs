//! The one-step fusion engine: initial-pi solve, block-system assembly
//! (A, l, W), the non-iterative update, the fused covariance DWD'/n, and
//! multi-study stacking.
//!
//! Layout of the square system (side p + v + q + r + r):
//!
//! ```text
//!        theta    pi      t        beta     betatilde
//!  p  [  -M       0       Gt'      0        0      ]
//!  v  [   0       0       Gp'      0        0      ]
//!  q  [  -Gt     -Gp      Gmat    -Gb       0      ]
//!  r  [   0       0       Gb'      rV^-1   -rV^-1  ]
//!  r  [   0       0       0        0        I      ]
//! ```
//!
//! `l = (sqrt(n) E_n m~_th, 0, sqrt(n) E_n g~, 0, 0)`: the external slot is
//! zero because beta is evaluated at beta~ itself. With several studies the
//! `rV^-1` block is Diag(rho_m V_m^{-1}), rho_m = N_m / n, which is what the
//! stacked penalty sum_m N_m (b~_m - b_m)' V_m^{-1} (b~_m - b_m) / 2 induces.

use crate::constraints::{ConstraintDims, ConstraintSet};
use crate::data::InternalDataset;
use crate::error::{Error, Result};
use crate::external::ExternalSummary;
use crate::linalg::{repair_psd, solve_guarded, solve_min_norm, GuardedLu, COND_LIMIT};
use crate::model::{
    profile_nuisance, EtaOwned, EvalParams, Nuisance, ProfiledDerivatives, SemiparametricModel,
};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// One external study: its constraint block and its summary.
#[derive(Clone)]
pub struct StudyBlock {
    pub constraints: Arc<dyn ConstraintSet>,
    pub summary: ExternalSummary,
}

/// A fitted internal model joined with M >= 1 external studies.
#[derive(Clone)]
pub struct FusionProblem {
    pub model: Arc<dyn SemiparametricModel>,
    pub data: Arc<InternalDataset>,
    pub studies: Vec<StudyBlock>,
}

/// Per-study offsets into the stacked (pi, g, beta) coordinates.
#[derive(Debug, Clone)]
pub struct StackedLayout {
    pub p: usize,
    pub v_off: Vec<usize>,
    pub q_off: Vec<usize>,
    pub r_off: Vec<usize>,
    pub v: usize,
    pub q: usize,
    pub r: usize,
}

impl StackedLayout {
    fn of(p: usize, dims: &[ConstraintDims]) -> Self {
        let mut v_off = Vec::with_capacity(dims.len());
        let mut q_off = Vec::with_capacity(dims.len());
        let mut r_off = Vec::with_capacity(dims.len());
        let (mut v, mut q, mut r) = (0, 0, 0);
        for d in dims {
            v_off.push(v);
            q_off.push(q);
            r_off.push(r);
            v += d.v;
            q += d.q;
            r += d.r;
        }
        Self {
            p,
            v_off,
            q_off,
            r_off,
            v,
            q,
            r,
        }
    }
}

/// Stacks per-study constraint blocks into one ConstraintSet.
pub struct StackedConstraints<'a> {
    studies: &'a [StudyBlock],
    layout: StackedLayout,
}

impl<'a> StackedConstraints<'a> {
    fn new(p: usize, studies: &'a [StudyBlock]) -> Self {
        let dims: Vec<ConstraintDims> = studies.iter().map(|s| s.constraints.dims()).collect();
        Self {
            studies,
            layout: StackedLayout::of(p, &dims),
        }
    }

    fn study_params<'b>(
        &self,
        m: usize,
        at: &EvalParams<'b>,
        pi_m: &'b DVector<f64>,
        beta_m: &'b DVector<f64>,
    ) -> EvalParams<'b> {
        let _ = m;
        EvalParams {
            theta: at.theta,
            eta: at.eta,
            pi: pi_m,
            beta: beta_m,
        }
    }
}

impl ConstraintSet for StackedConstraints<'_> {
    fn dims(&self) -> ConstraintDims {
        ConstraintDims {
            p: self.layout.p,
            v: self.layout.v,
            q: self.layout.q,
            r: self.layout.r,
        }
    }

    fn g_star_rows(&self) -> Vec<usize> {
        let mut rows = Vec::new();
        for (m, s) in self.studies.iter().enumerate() {
            for r in s.constraints.g_star_rows() {
                rows.push(self.layout.q_off[m] + r);
            }
        }
        rows
    }

    fn eval(&self, data: &InternalDataset, i: usize, at: &EvalParams) -> DVector<f64> {
        let mut g = DVector::zeros(self.layout.q);
        for (m, s) in self.studies.iter().enumerate() {
            let d = s.constraints.dims();
            let pi_m = at.pi.rows(self.layout.v_off[m], d.v).into_owned();
            let beta_m = at.beta.rows(self.layout.r_off[m], d.r).into_owned();
            let local = self.study_params(m, at, &pi_m, &beta_m);
            let gm = s.constraints.eval(data, i, &local);
            g.rows_mut(self.layout.q_off[m], d.q).copy_from(&gm);
        }
        g
    }

    fn jac_theta(&self, data: &InternalDataset, i: usize, at: &EvalParams) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.layout.q, self.layout.p);
        for (m, s) in self.studies.iter().enumerate() {
            let d = s.constraints.dims();
            let pi_m = at.pi.rows(self.layout.v_off[m], d.v).into_owned();
            let beta_m = at.beta.rows(self.layout.r_off[m], d.r).into_owned();
            let local = self.study_params(m, at, &pi_m, &beta_m);
            let jm = s.constraints.jac_theta(data, i, &local);
            jac.view_mut((self.layout.q_off[m], 0), (d.q, self.layout.p))
                .copy_from(&jm);
        }
        jac
    }

    fn jac_pi(&self, data: &InternalDataset, i: usize, at: &EvalParams) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.layout.q, self.layout.v);
        for (m, s) in self.studies.iter().enumerate() {
            let d = s.constraints.dims();
            if d.v == 0 {
                continue;
            }
            let pi_m = at.pi.rows(self.layout.v_off[m], d.v).into_owned();
            let beta_m = at.beta.rows(self.layout.r_off[m], d.r).into_owned();
            let local = self.study_params(m, at, &pi_m, &beta_m);
            let jm = s.constraints.jac_pi(data, i, &local);
            jac.view_mut((self.layout.q_off[m], self.layout.v_off[m]), (d.q, d.v))
                .copy_from(&jm);
        }
        jac
    }

    fn jac_beta(&self, data: &InternalDataset, i: usize, at: &EvalParams) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.layout.q, self.layout.r);
        for (m, s) in self.studies.iter().enumerate() {
            let d = s.constraints.dims();
            let pi_m = at.pi.rows(self.layout.v_off[m], d.v).into_owned();
            let beta_m = at.beta.rows(self.layout.r_off[m], d.r).into_owned();
            let local = self.study_params(m, at, &pi_m, &beta_m);
            let jm = s.constraints.jac_beta(data, i, &local);
            jac.view_mut((self.layout.q_off[m], self.layout.r_off[m]), (d.q, d.r))
                .copy_from(&jm);
        }
        jac
    }

    fn jac_eta(&self, data: &InternalDataset, i: usize, at: &EvalParams) -> Option<DMatrix<f64>> {
        let k = at.eta.dim();
        if k == 0 {
            return None;
        }
        let mut jac = DMatrix::zeros(self.layout.q, k);
        let mut any = false;
        for (m, s) in self.studies.iter().enumerate() {
            let d = s.constraints.dims();
            let pi_m = at.pi.rows(self.layout.v_off[m], d.v).into_owned();
            let beta_m = at.beta.rows(self.layout.r_off[m], d.r).into_owned();
            let local = self.study_params(m, at, &pi_m, &beta_m);
            if let Some(jm) = s.constraints.jac_eta(data, i, &local) {
                jac.view_mut((self.layout.q_off[m], 0), (d.q, k)).copy_from(&jm);
                any = true;
            }
        }
        any.then_some(jac)
    }
}

impl FusionProblem {
    pub fn layout(&self) -> StackedLayout {
        let dims: Vec<ConstraintDims> = self.studies.iter().map(|s| s.constraints.dims()).collect();
        StackedLayout::of(self.model.dim_theta(), &dims)
    }

    pub fn stacked(&self) -> StackedConstraints<'_> {
        StackedConstraints::new(self.model.dim_theta(), &self.studies)
    }

    /// Sum of external sizes over internal size.
    pub fn rho(&self) -> f64 {
        let total: usize = self.studies.iter().map(|s| s.summary.n_ext).sum();
        total as f64 / self.data.n() as f64
    }

    /// Stacked external estimate (beta~_1', ..., beta~_M')'.
    pub fn beta_tilde(&self) -> DVector<f64> {
        let layout = self.layout();
        let mut beta = DVector::zeros(layout.r);
        for (m, s) in self.studies.iter().enumerate() {
            beta.rows_mut(layout.r_off[m], s.summary.r())
                .copy_from(&s.summary.beta_hat);
        }
        beta
    }

    /// Effective stacked V with block Diag(V_m / c_m), c_m = N_m / sum N,
    /// so that rho V^{-1} = Diag(rho_m V_m^{-1}).
    pub fn effective_v(&self) -> Result<DMatrix<f64>> {
        let layout = self.layout();
        let total: usize = self.studies.iter().map(|s| s.summary.n_ext).sum();
        let mut v = DMatrix::zeros(layout.r, layout.r);
        for (m, s) in self.studies.iter().enumerate() {
            let vm = s.summary.v(&self.data)?;
            let cm = s.summary.n_ext as f64 / total as f64;
            let o = layout.r_off[m];
            v.view_mut((o, o), (vm.nrows(), vm.ncols()))
                .copy_from(&(vm / cm));
        }
        Ok(v)
    }

    /// Block diagonal of (n / N_m) Sigma_0m: the covariance of sqrt(n)(beta~ - beta_0).
    pub fn sigma_scaled(&self) -> Result<DMatrix<f64>> {
        let layout = self.layout();
        let n = self.data.n() as f64;
        let mut sig = DMatrix::zeros(layout.r, layout.r);
        for (m, s) in self.studies.iter().enumerate() {
            let sm = s.summary.sigma0(&self.data)?;
            let o = layout.r_off[m];
            sig.view_mut((o, o), (sm.nrows(), sm.ncols()))
                .copy_from(&(sm * (n / s.summary.n_ext as f64)));
        }
        Ok(sig)
    }
}

/// Validates dimensions and joins the per-study blocks into one problem.
/// M = 1 is identity stacking.
pub fn stack_studies(
    model: Arc<dyn SemiparametricModel>,
    data: Arc<InternalDataset>,
    studies: Vec<StudyBlock>,
) -> Result<FusionProblem> {
    if studies.is_empty() {
        return Err(Error::Invalid("at least one external study required".into()));
    }
    let p = model.dim_theta();
    for s in &studies {
        let d = s.constraints.dims();
        if d.p != p {
            return Err(Error::DimMismatch {
                expected: p,
                got: d.p,
            });
        }
        if d.r != s.summary.r() {
            return Err(Error::DimMismatch {
                expected: d.r,
                got: s.summary.r(),
            });
        }
        if d.q < d.v || d.q == 0 {
            return Err(Error::Invalid("constraint block needs q >= max(v, 1)".into()));
        }
        s.constraints.validate(&data)?;
    }
    Ok(FusionProblem {
        model,
        data,
        studies,
    })
}

/// Initial estimates entering the one-step update.
#[derive(Debug, Clone)]
pub struct InitialEstimates {
    pub theta: DVector<f64>,
    pub eta: EtaOwned,
    pub pi: DVector<f64>,
    pub beta: DVector<f64>,
}

// ---------------------------------------------------------------------------
// Initial pi
// ---------------------------------------------------------------------------

const PI_TOL: f64 = 1e-10;
const PI_BRACKET: (f64, f64) = (1e-6, 1e6);

/// Solves `E_n g*(theta~, eta~, pi, beta~) = 0` study by study (Newton, with a
/// bracketing bisection fallback for scalar blocks). Studies with v = 0 are
/// skipped.
pub fn solve_initial_pi(
    problem: &FusionProblem,
    theta: &DVector<f64>,
    eta: &EtaOwned,
    beta_tilde: &DVector<f64>,
) -> Result<DVector<f64>> {
    let layout = problem.layout();
    let data = problem.data.as_ref();
    let mut pi = DVector::zeros(layout.v);
    for (m, s) in problem.studies.iter().enumerate() {
        let d = s.constraints.dims();
        if d.v == 0 {
            continue;
        }
        let beta_m = beta_tilde.rows(layout.r_off[m], d.r).into_owned();
        let star = s.constraints.g_star_rows();
        let mean_gstar = |pi_m: &DVector<f64>| -> DVector<f64> {
            let at = EvalParams {
                theta,
                eta: eta.view(),
                pi: pi_m,
                beta: &beta_m,
            };
            let mut acc = DVector::zeros(d.q);
            for i in 0..data.n() {
                acc += s.constraints.eval(data, i, &at);
            }
            acc /= data.n() as f64;
            DVector::from_iterator(star.len(), star.iter().map(|&r| acc[r]))
        };
        let mean_jac = |pi_m: &DVector<f64>| -> DMatrix<f64> {
            let at = EvalParams {
                theta,
                eta: eta.view(),
                pi: pi_m,
                beta: &beta_m,
            };
            let mut acc = DMatrix::zeros(d.q, d.v);
            for i in 0..data.n() {
                acc += s.constraints.jac_pi(data, i, &at);
            }
            acc /= data.n() as f64;
            let mut out = DMatrix::zeros(star.len(), d.v);
            for (k, &r) in star.iter().enumerate() {
                out.row_mut(k).copy_from(&acc.row(r));
            }
            out
        };

        let mut pi_m = DVector::from_element(d.v, 1.0);
        let mut solved = false;
        let mut res = mean_gstar(&pi_m);
        for _ in 0..100 {
            if res.amax() <= PI_TOL {
                solved = true;
                break;
            }
            let jac = mean_jac(&pi_m);
            let step = match solve_guarded(&jac, &res, "initial pi Newton") {
                Ok(s) => s,
                Err(_) => break,
            };
            // Damped update: keep the residual shrinking.
            let mut lambda = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                let cand = &pi_m - lambda * &step;
                let cand_res = mean_gstar(&cand);
                if cand_res.amax() < res.amax() {
                    pi_m = cand;
                    res = cand_res;
                    improved = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if !solved && res.amax() <= PI_TOL {
            solved = true;
        }
        if !solved && d.v == 1 {
            // Scalar fallback: bracketing bisection on [1e-6, 1e6].
            let f = |x: f64| mean_gstar(&DVector::from_element(1, x))[0];
            let (mut lo, mut hi) = PI_BRACKET;
            let (flo, fhi) = (f(lo), f(hi));
            if flo * fhi <= 0.0 {
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid) * flo <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                pi_m = DVector::from_element(1, 0.5 * (lo + hi));
                solved = mean_gstar(&pi_m).amax() <= 1e-6;
            }
        }
        if !solved {
            return Err(Error::NoRoot);
        }
        pi.rows_mut(layout.v_off[m], d.v).copy_from(&pi_m);
    }
    Ok(pi)
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

/// Assembles the (p+v+q+2r)-square block matrix A from profiled derivatives.
/// `rho V^{-1}` is computed by solving against V's factorization.
pub fn assemble_a(pd: &ProfiledDerivatives, rho: f64, v_mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (p, v, q, r) = pd.dims();
    let rv = {
        let lu = GuardedLu::new(v_mat, "V")?;
        lu.solve_mat(&DMatrix::identity(r, r))? * rho
    };
    let s = p + v + q + 2 * r;
    let mut a = DMatrix::zeros(s, s);
    let (ot, ob, obt) = (p + v, p + v + q, p + v + q + r);
    a.view_mut((0, 0), (p, p)).copy_from(&(-&pd.m));
    a.view_mut((0, ot), (p, q)).copy_from(&pd.gt.transpose());
    a.view_mut((p, ot), (v, q)).copy_from(&pd.gp.transpose());
    a.view_mut((ot, 0), (q, p)).copy_from(&(-&pd.gt));
    a.view_mut((ot, p), (q, v)).copy_from(&(-&pd.gp));
    a.view_mut((ot, ot), (q, q)).copy_from(&pd.gmat);
    a.view_mut((ot, ob), (q, r)).copy_from(&(-&pd.gb));
    a.view_mut((ob, ot), (r, q)).copy_from(&pd.gb.transpose());
    a.view_mut((ob, ob), (r, r)).copy_from(&rv);
    a.view_mut((ob, obt), (r, r)).copy_from(&(-&rv));
    a.view_mut((obt, obt), (r, r))
        .copy_from(&DMatrix::identity(r, r));
    Ok(a)
}

/// `l = (sqrt n * score_bar, 0_v, sqrt n * gbar, 0_r, 0_r)`.
pub fn assemble_l(pd: &ProfiledDerivatives) -> DVector<f64> {
    let (p, v, q, r) = pd.dims();
    let sqrt_n = (pd.n as f64).sqrt();
    let mut l = DVector::zeros(p + v + q + 2 * r);
    l.rows_mut(0, p).copy_from(&(&pd.score_bar * sqrt_n));
    l.rows_mut(p + v, q).copy_from(&(&pd.gbar * sqrt_n));
    l
}

/// Middle covariance W: per-row profiled second moments (centered) plus the
/// external block `(1/rho) Sigma_0` per study.
pub fn assemble_w(pd: &ProfiledDerivatives, sigma_scaled: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, v, q, r) = pd.dims();
    let s = p + v + q + 2 * r;
    let (ot, obt) = (p + v, p + v + q + r);
    let mut w = DMatrix::zeros(s, s);
    w.view_mut((0, 0), (p, p)).copy_from(&pd.cov_score());
    let cross = pd.cov_score_g();
    w.view_mut((0, ot), (p, q)).copy_from(&cross);
    w.view_mut((ot, 0), (q, p)).copy_from(&cross.transpose());
    w.view_mut((ot, ot), (q, q)).copy_from(&pd.cov_g());
    w.view_mut((obt, obt), (r, r)).copy_from(sigma_scaled);
    w
}

fn centered(pd: &ProfiledDerivatives) -> ProfiledDerivatives {
    let mut out = pd.clone();
    out.gmat = pd.gmat_centered();
    out
}

// ---------------------------------------------------------------------------
// One-step update and covariance
// ---------------------------------------------------------------------------

/// Runtime diagnostics attached to a fusion result.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub cond_a: f64,
    /// `E_n g` at the updated parameters (eta held at eta~).
    pub constraint_residual: DVector<f64>,
    pub warnings: Vec<String>,
}

/// Updated estimates, their covariance, and diagnostics.
#[derive(Debug, Clone)]
pub struct FusionResult {
    pub theta_hat: DVector<f64>,
    pub pi_hat: DVector<f64>,
    pub beta_hat: DVector<f64>,
    /// Covariance of (theta^, pi^, beta^): DWD' / n, PSD-repaired.
    pub covariance: DMatrix<f64>,
    pub standard_errors: DVector<f64>,
    pub diagnostics: Diagnostics,
}

struct Solved {
    pd: ProfiledDerivatives,
    lu: GuardedLu,
    x: DVector<f64>,
}

fn solve_system(problem: &FusionProblem, init: &InitialEstimates) -> Result<Solved> {
    let stacked = problem.stacked();
    let at = EvalParams {
        theta: &init.theta,
        eta: init.eta.view(),
        pi: &init.pi,
        beta: &init.beta,
    };
    let pd_raw = profile_nuisance(problem.model.as_ref(), &stacked, &problem.data, &at)?;
    let pd = centered(&pd_raw);
    let v_eff = problem.effective_v()?;
    let a = assemble_a(&pd, problem.rho(), &v_eff)?;
    let l = assemble_l(&pd);
    let lu = GuardedLu::new(&a, "block matrix A").map_err(|e| match e {
        Error::SingularMatrix { cond, .. } => Error::SingularA { cond },
        other => other,
    })?;
    let x = lu.solve_vec(&l)?;
    Ok(Solved { pd, lu, x })
}

/// Applies the S-operator extraction to a solved system, returning
/// (d_theta, d_pi, d_beta) already scaled by n^{-1/2}.
fn extract_update(
    pd: &ProfiledDerivatives,
    x: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let (p, v, q, r) = pd.dims();
    let inv_sqrt_n = 1.0 / (pd.n as f64).sqrt();
    let x_t = x.rows(p + v, q).into_owned();
    let x_b = x.rows(p + v + q, r).into_owned();
    let x_bt = x.rows(p + v + q + r, r).into_owned();

    // S_theta routes M^{-1} Gt' into the t-slot.
    let y = solve_guarded(&pd.m, &(pd.gt.transpose() * &x_t), "profiled curvature M")?;
    let d_theta = &y * inv_sqrt_n;

    let d_pi = if v > 0 {
        // S_pi = -(Gp*)^{-1} [0, 0, H, Gb*, -Gb*], H = Gt* M^{-1} Gt' - G*.
        let gp_star = pd.gp_star();
        let h_xt = pd.gt_star() * &y - pd.g_star() * &x_t;
        let rhs = h_xt + pd.gb_star() * (&x_b - &x_bt);
        -solve_guarded(&gp_star, &rhs, "Gp* in S_pi")? * inv_sqrt_n
    } else {
        DVector::zeros(0)
    };

    // S_beta = [0, 0, 0, I, -I].
    let d_beta = (&x_b - &x_bt) * inv_sqrt_n;
    Ok((d_theta, d_pi, d_beta))
}

/// DWD' with D the (theta, pi, beta) rows of A^{-1}; returns the asymptotic
/// covariance of the sqrt(n)-scaled estimator.
fn dwd(pd: &ProfiledDerivatives, lu: &GuardedLu, sigma_scaled: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (p, v, q, r) = pd.dims();
    let s = p + v + q + 2 * r;
    let ainv = lu.solve_mat(&DMatrix::identity(s, s))?;
    let mut d = DMatrix::zeros(p + v + r, s);
    d.view_mut((0, 0), (p + v, s))
        .copy_from(&ainv.view((0, 0), (p + v, s)));
    d.view_mut((p + v, 0), (r, s))
        .copy_from(&ainv.view((p + v + q, 0), (r, s)));
    let w = assemble_w(pd, sigma_scaled);
    Ok(&d * w * d.transpose())
}

/// Exact covariance of the updated estimator: DWD'/n, PSD-repaired.
pub fn fused_covariance(
    pd: &ProfiledDerivatives,
    rho: f64,
    v_mat: &DMatrix<f64>,
    sigma_scaled: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let pd_c = centered(pd);
    let a = assemble_a(&pd_c, rho, v_mat)?;
    let lu = GuardedLu::new(&a, "block matrix A").map_err(|e| match e {
        Error::SingularMatrix { cond, .. } => Error::SingularA { cond },
        other => other,
    })?;
    let asym = dwd(&pd_c, &lu, sigma_scaled)?;
    repair_psd(&(asym / pd_c.n as f64))
}

/// The non-iterative one-step update
/// `(theta^, pi^, beta^) = (theta~, pi~, beta~) + n^{-1/2} S A^{-1} l`,
/// with covariance DWD'/n and diagnostics.
pub fn one_step_update(problem: &FusionProblem, init: &InitialEstimates) -> Result<FusionResult> {
    let solved = solve_system(problem, init)?;
    let (d_theta, d_pi, d_beta) = extract_update(&solved.pd, &solved.x)?;
    let theta_hat = &init.theta + d_theta;
    let pi_hat = &init.pi + d_pi;
    let beta_hat = &init.beta + d_beta;

    let sigma_scaled = problem.sigma_scaled()?;
    let asym = dwd(&solved.pd, &solved.lu, &sigma_scaled)?;
    let covariance = repair_psd(&(asym / solved.pd.n as f64))?;
    let standard_errors = covariance.diagonal().map(f64::sqrt);

    let mut warnings = Vec::new();
    let stacked = problem.stacked();
    let at_hat = EvalParams {
        theta: &theta_hat,
        eta: init.eta.view(),
        pi: &pi_hat,
        beta: &beta_hat,
    };
    let data = problem.data.as_ref();
    let mut residual = DVector::zeros(stacked.dims().q);
    for i in 0..data.n() {
        residual += stacked.eval(data, i, &at_hat);
    }
    residual /= data.n() as f64;
    for s in &problem.studies {
        warnings.extend(s.constraints.warnings(data, init.eta.view()));
    }

    Ok(FusionResult {
        theta_hat,
        pi_hat,
        beta_hat,
        covariance,
        standard_errors,
        diagnostics: Diagnostics {
            cond_a: solved.lu.cond,
            constraint_residual: residual,
            warnings,
        },
    })
}

/// Fits the internal model, solves the initial pi, and runs the one-step
/// update: the whole production pipeline.
pub fn fuse(problem: &FusionProblem) -> Result<(FusionResult, InitialEstimates)> {
    let fit = problem.model.fit(&problem.data)?;
    let beta = problem.beta_tilde();
    let pi = solve_initial_pi(problem, &fit.theta, &fit.eta, &beta)?;
    let init = InitialEstimates {
        theta: fit.theta,
        eta: fit.eta,
        pi,
        beta,
    };
    let result = one_step_update(problem, &init)?;
    Ok((result, init))
}

// ---------------------------------------------------------------------------
// Overlap invariance (redundant duplicated-parameter studies)
// ---------------------------------------------------------------------------

/// Result of comparing plain stacking against stacking augmented with the
/// redundancy rows `g3(beta_i, beta_j) = beta_i - beta_j`.
#[derive(Debug, Clone)]
pub struct OverlapReport {
    pub theta_plain: DVector<f64>,
    pub theta_augmented: DVector<f64>,
    pub max_deviation: f64,
    pub passed: bool,
}

const OVERLAP_TOL: f64 = 1e-8;

/// Runs the one-step update with and without the redundancy constraint tying
/// the declared duplicated-parameter studies, and reports the theta gap.
///
/// With no declared pairs the check degenerates to plain stacking and the
/// deviation is exactly zero.
pub fn overlap_invariance_check(
    problem: &FusionProblem,
    init: &InitialEstimates,
    pairs: &[(usize, usize)],
) -> Result<OverlapReport> {
    let solved = solve_system(problem, init)?;
    let (d_theta, _, _) = extract_update(&solved.pd, &solved.x)?;
    let theta_plain = &init.theta + &d_theta;

    if pairs.is_empty() {
        return Ok(OverlapReport {
            theta_augmented: theta_plain.clone(),
            theta_plain,
            max_deviation: 0.0,
            passed: true,
        });
    }

    let layout = problem.layout();
    for &(a, b) in pairs {
        let ra = problem.studies[a].summary.r();
        let rb = problem.studies[b].summary.r();
        if ra != rb {
            return Err(Error::DimMismatch {
                expected: ra,
                got: rb,
            });
        }
    }

    // Augmented system: the leading (p+v+q+2r) block is A itself; each pair
    // appends r0 multiplier columns (+I on study a's beta rows, -I on study
    // b's) and r0 rows enforcing beta^_a - beta^_b = 0 after the update.
    let pd = &solved.pd;
    let (p, v, q, r) = pd.dims();
    let base = p + v + q + 2 * r;
    let extra: usize = pairs.iter().map(|&(a, _)| problem.studies[a].summary.r()).collect::<Vec<_>>().iter().sum();
    let v_eff = problem.effective_v()?;
    let a_mat = assemble_a(pd, problem.rho(), &v_eff)?;
    let sqrt_n = (pd.n as f64).sqrt();

    let mut aug = DMatrix::zeros(base + extra, base + extra);
    aug.view_mut((0, 0), (base, base)).copy_from(&a_mat);
    let mut rhs = DVector::zeros(base + extra);
    rhs.rows_mut(0, base).copy_from(&assemble_l(pd));

    let mut off = base;
    for &(sa, sb) in pairs {
        let r0 = problem.studies[sa].summary.r();
        let oa = p + v + q + layout.r_off[sa];
        let ob = p + v + q + layout.r_off[sb];
        for k in 0..r0 {
            // multiplier column: +1 on study a's beta stationarity, -1 on b's
            aug[(oa + k, off + k)] = 1.0;
            aug[(ob + k, off + k)] = -1.0;
            // redundancy row: d beta_a - d beta_b = -sqrt(n) (beta~_a - beta~_b)
            aug[(off + k, oa + k)] = 1.0;
            aug[(off + k, ob + k)] = -1.0;
            let ga = init.beta[layout.r_off[sa] + k] - init.beta[layout.r_off[sb] + k];
            rhs[off + k] = -sqrt_n * ga;
        }
        off += r0;
    }

    // The appended rows can be exactly implied by the base system; use a
    // minimum-norm solve. The null space has zero theta/beta components, so
    // the extracted update is unique.
    let x_aug = solve_min_norm(&aug, &rhs, 1e-10)?;
    let x_view = x_aug.rows(0, base).into_owned();
    let (d_theta_aug, _, _) = extract_update(pd, &x_view)?;
    let theta_augmented = &init.theta + d_theta_aug;

    let max_deviation = (&theta_augmented - &theta_plain).amax();
    Ok(OverlapReport {
        theta_plain,
        theta_augmented,
        max_deviation,
        passed: max_deviation <= OVERLAP_TOL,
    })
}

/// Condition-number ceiling re-exported for diagnostics consumers.
pub const A_COND_LIMIT: f64 = COND_LIMIT;
