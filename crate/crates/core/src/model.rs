//! The estimation-problem abstraction: criterion models, nuisance handles,
//! and the generic profiling machinery shared by every model.
//!
//! A semiparametric model exposes its per-row criterion `m`, score, and
//! Hessian in `theta`, plus (when it has an infinite-dimensional component)
//! the derivative blocks with respect to the finite nuisance coordinates.
//! The nuisance is represented by its jumps at observed event times, so
//! profiling is exact linear algebra: Schur complements over the jump block.

use crate::constraints::ConstraintSet;
use crate::data::InternalDataset;
use crate::error::{Error, Result};
use crate::linalg::{self, GuardedLu};
use nalgebra::{DMatrix, DVector};

/// Borrowed view of the nuisance component.
#[derive(Debug, Clone, Copy)]
pub enum Nuisance<'a> {
    /// Parametric model: nothing to profile.
    None,
    /// Baseline cumulative hazard represented by jumps at event times
    /// (`times` strictly increasing, `jumps` positive, same length).
    Jumps { times: &'a [f64], jumps: &'a [f64] },
}

impl Nuisance<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Nuisance::None => 0,
            Nuisance::Jumps { jumps, .. } => jumps.len(),
        }
    }
}

/// Owned nuisance state produced by a fit.
#[derive(Debug, Clone)]
pub enum EtaOwned {
    None,
    Jumps { times: Vec<f64>, jumps: Vec<f64> },
}

impl EtaOwned {
    pub fn view(&self) -> Nuisance<'_> {
        match self {
            EtaOwned::None => Nuisance::None,
            EtaOwned::Jumps { times, jumps } => Nuisance::Jumps {
                times,
                jumps,
            },
        }
    }
}

/// Result of fitting a model to internal data.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub theta: DVector<f64>,
    pub eta: EtaOwned,
    /// Empirical criterion (sum over rows) at the fit.
    pub criterion: f64,
}

/// Aggregate nuisance derivative blocks (jump parameterization, dimension k).
#[derive(Debug, Clone)]
pub struct NuisanceBlocks {
    /// Per-row nuisance score `m_eta`, n x k.
    pub m_eta_rows: DMatrix<f64>,
    /// `E_n d^2 m / dtheta deta^T`, p x k.
    pub m_theta_eta: DMatrix<f64>,
    /// `E_n d^2 m / deta deta^T`, k x k.
    pub m_eta_eta: DMatrix<f64>,
}

/// A criterion model with optional nuisance component.
pub trait SemiparametricModel: Send + Sync {
    fn dim_theta(&self) -> usize;

    /// Per-row criterion value m(X_i; theta, eta).
    fn criterion(&self, data: &InternalDataset, i: usize, theta: &DVector<f64>, eta: Nuisance)
        -> f64;

    /// Per-row score dm/dtheta, length p.
    fn score(
        &self,
        data: &InternalDataset,
        i: usize,
        theta: &DVector<f64>,
        eta: Nuisance,
    ) -> DVector<f64>;

    /// Per-row Hessian d2m/dtheta dtheta^T, p x p.
    fn hessian(
        &self,
        data: &InternalDataset,
        i: usize,
        theta: &DVector<f64>,
        eta: Nuisance,
    ) -> DMatrix<f64>;

    /// Nuisance blocks at (theta, eta); `None` for parametric models.
    fn nuisance_blocks(
        &self,
        _data: &InternalDataset,
        _theta: &DVector<f64>,
        _eta: Nuisance,
    ) -> Option<NuisanceBlocks> {
        None
    }

    /// Maximizes the empirical criterion, producing (theta_tilde, eta_tilde).
    fn fit(&self, data: &InternalDataset) -> Result<FitOutput>;

    /// Profile of the nuisance at a fixed theta (identity for parametric models).
    fn profile_eta(&self, _data: &InternalDataset, _theta: &DVector<f64>) -> Result<EtaOwned> {
        Ok(EtaOwned::None)
    }
}

/// Parameter point at which profiled derivatives are evaluated.
#[derive(Clone, Copy)]
pub struct EvalParams<'a> {
    pub theta: &'a DVector<f64>,
    pub eta: Nuisance<'a>,
    pub pi: &'a DVector<f64>,
    pub beta: &'a DVector<f64>,
}

/// Empirical averages of the profiled derivative functions, plus the per-row
/// arrays needed for the middle covariance matrix.
#[derive(Debug, Clone)]
pub struct ProfiledDerivatives {
    pub n: usize,
    /// `E_n m~_thth`, p x p (negative definite at a proper fit).
    pub m: DMatrix<f64>,
    /// `E_n g~_th`, q x p.
    pub gt: DMatrix<f64>,
    /// `E_n dg/dpi`, q x v.
    pub gp: DMatrix<f64>,
    /// `E_n dg/dbeta`, q x r.
    pub gb: DMatrix<f64>,
    /// `E_n g g^T - G_eta M_ee^{-1} G_eta^T`, q x q (raw, uncentered).
    pub gmat: DMatrix<f64>,
    /// `E_n g~`, length q.
    pub gbar: DVector<f64>,
    /// `E_n m~_th`, length p.
    pub score_bar: DVector<f64>,
    /// Per-row profiled scores m~_th, n x p.
    pub per_row_scores: DMatrix<f64>,
    /// Per-row profiled constraints g~, n x q.
    pub per_row_g: DMatrix<f64>,
    /// Indices of the v rows of g forming g*.
    pub g_star_rows: Vec<usize>,
}

fn select_rows(mat: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), mat.ncols());
    for (k, &r) in rows.iter().enumerate() {
        out.row_mut(k).copy_from(&mat.row(r));
    }
    out
}

impl ProfiledDerivatives {
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (
            self.m.nrows(),
            self.gp.ncols(),
            self.gt.nrows(),
            self.gb.ncols(),
        )
    }

    /// Centered second moment of g~ (empirical covariance).
    pub fn gmat_centered(&self) -> DMatrix<f64> {
        &self.gmat - &self.gbar * self.gbar.transpose()
    }

    /// g* rows of the centered Gmat, v x q.
    pub fn g_star(&self) -> DMatrix<f64> {
        select_rows(&self.gmat_centered(), &self.g_star_rows)
    }

    pub fn gt_star(&self) -> DMatrix<f64> {
        select_rows(&self.gt, &self.g_star_rows)
    }

    pub fn gp_star(&self) -> DMatrix<f64> {
        select_rows(&self.gp, &self.g_star_rows)
    }

    pub fn gb_star(&self) -> DMatrix<f64> {
        select_rows(&self.gb, &self.g_star_rows)
    }

    /// Empirical covariance of the profiled score, p x p.
    pub fn cov_score(&self) -> DMatrix<f64> {
        let raw = self.per_row_scores.transpose() * &self.per_row_scores / self.n as f64;
        raw - &self.score_bar * self.score_bar.transpose()
    }

    /// Empirical covariance between profiled score and g~, p x q.
    pub fn cov_score_g(&self) -> DMatrix<f64> {
        let raw = self.per_row_scores.transpose() * &self.per_row_g / self.n as f64;
        raw - &self.score_bar * self.gbar.transpose()
    }
}

/// Profiles the nuisance out of the score, curvature, and constraint moments
/// at the given parameter point.
///
/// For models with jump coordinates this solves the directions
/// `h1* = M_ee^{-1} M_et` and `h2* = M_ee^{-1} G_eta^T` and forms the Schur
/// complements; for parametric models it returns the plain empirical averages.
pub fn profile_nuisance(
    model: &dyn SemiparametricModel,
    constraints: &dyn ConstraintSet,
    data: &InternalDataset,
    at: &EvalParams,
) -> Result<ProfiledDerivatives> {
    let n = data.n();
    let p = model.dim_theta();
    let dims = constraints.dims();
    if dims.p != p {
        return Err(Error::DimMismatch {
            expected: p,
            got: dims.p,
        });
    }
    let (v, q, r) = (dims.v, dims.q, dims.r);
    let nf = n as f64;

    let mut sum_hess = DMatrix::zeros(p, p);
    let mut sum_gt = DMatrix::zeros(q, p);
    let mut sum_gp = DMatrix::zeros(q, v);
    let mut sum_gb = DMatrix::zeros(q, r);
    let mut sum_ggt = DMatrix::zeros(q, q);
    let mut sum_geta: Option<DMatrix<f64>> = None;
    let mut rows_score = DMatrix::zeros(n, p);
    let mut rows_g = DMatrix::zeros(n, q);

    for i in 0..n {
        let sc = model.score(data, i, at.theta, at.eta);
        sum_hess += model.hessian(data, i, at.theta, at.eta);
        let g = constraints.eval(data, i, at);
        sum_gt += constraints.jac_theta(data, i, at);
        sum_gp += constraints.jac_pi(data, i, at);
        sum_gb += constraints.jac_beta(data, i, at);
        sum_ggt += &g * g.transpose();
        if let Some(je) = constraints.jac_eta(data, i, at) {
            let acc = sum_geta.get_or_insert_with(|| DMatrix::zeros(q, je.ncols()));
            *acc += je;
        }
        rows_score.row_mut(i).copy_from(&sc.transpose());
        rows_g.row_mut(i).copy_from(&g.transpose());
    }

    let mut m = sum_hess / nf;
    let mut gt = sum_gt / nf;
    let gp = sum_gp / nf;
    let gb = sum_gb / nf;
    let mut gmat = sum_ggt / nf;

    if let Some(blocks) = model.nuisance_blocks(data, at.theta, at.eta) {
        let k = blocks.m_eta_eta.nrows();
        let lu = GuardedLu::new(&blocks.m_eta_eta, "nuisance curvature")
            .map_err(|_| Error::SingularNuisanceBlock {
                cond: linalg::condition_number(&blocks.m_eta_eta),
            })?;
        // h1* solves M_ee h1 = M_et (k x p); h2* solves M_ee h2 = G_eta^T (k x q).
        let h1 = lu.solve_mat(&blocks.m_theta_eta.transpose())?;
        let g_eta = sum_geta
            .map(|s| s / nf)
            .unwrap_or_else(|| DMatrix::zeros(q, k));
        let h2 = lu.solve_mat(&g_eta.transpose())?;

        m -= &blocks.m_theta_eta * &h1;
        gt -= &g_eta * &h1;
        gmat -= &g_eta * &h2;
        // Per-row corrections: m~ = m_th - h1^T m_eta, g~ = g - h2^T m_eta.
        rows_score -= &blocks.m_eta_rows * &h1;
        rows_g -= &blocks.m_eta_rows * &h2;
    }

    let score_bar = rows_score.row_mean().transpose();
    let gbar = rows_g.row_mean().transpose();

    Ok(ProfiledDerivatives {
        n,
        m,
        gt,
        gp,
        gb,
        gmat,
        gbar,
        score_bar,
        per_row_scores: rows_score,
        per_row_g: rows_g,
        g_star_rows: constraints.g_star_rows(),
    })
}
