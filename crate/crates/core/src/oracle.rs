//! Direct maximizer of the joint empirical-likelihood objective for
//! parametric instances: the ground-truth oracle that validates the one-step
//! formulas. Favors simplicity and trustworthiness over speed.
//!
//! The outer objective (for one study; penalties add over studies) is
//!
//! ```text
//!   sum_i m(X_i; th) - sum_i log(1 + t' g(X_i; th, pi, b)) - N/2 (b~ - b)' V^{-1} (b~ - b)
//! ```
//!
//! with t resolved at every outer iterate by the inner dual solve. For Cox the
//! jumps are refit to the Breslow profile at each theta (full profile); that
//! path is restricted to small n.

use crate::data::InternalDataset;
use crate::error::{Error, Result};
use crate::fusion::{FusionProblem, InitialEstimates};
use crate::linalg::solve_guarded;
use crate::model::EvalParams;
use nalgebra::{DMatrix, DVector};

const INNER_TOL: f64 = 1e-10;
const INNER_MAX: usize = 200;
const OUTER_STEP_TOL: f64 = 1e-9;
const OUTER_MAX: usize = 200;
const ORACLE_MAX_N_SEMIPARAMETRIC: usize = 300;
/// Relative variance below which a constraint row is treated as constant in X
/// (a hard parameter constraint rather than a reweightable moment).
const DEGENERATE_VAR_TOL: f64 = 1e-12;

/// Solution of the joint EL maximization.
#[derive(Debug, Clone)]
pub struct ElSolution {
    pub theta: DVector<f64>,
    pub pi: DVector<f64>,
    pub beta: DVector<f64>,
    /// Lagrange multipliers of the moment constraints (zeros on rows that are
    /// constant in X).
    pub t: DVector<f64>,
    /// Point masses p_i = n^{-1} (1 + t'g_i)^{-1}.
    pub weights: DVector<f64>,
    /// Joint log-likelihood value at the solution.
    pub objective: f64,
}

/// Solves the inner dual: minimizes `-sum_i log(1 + t'g_i)` over
/// `{t : 1 + t'g_i > 1/n}` by damped Newton; the stationarity condition is
/// `sum_i g_i / (1 + t'g_i) = 0`.
pub fn inner_lagrange_solve(g_rows: &DMatrix<f64>) -> Result<DVector<f64>> {
    let (n, q) = (g_rows.nrows(), g_rows.ncols());
    let nf = n as f64;
    if g_rows.amax() == 0.0 {
        return Ok(DVector::zeros(q));
    }
    // Quick infeasibility test for scalar rows: zero must be interior.
    if q == 1 {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            lo = lo.min(g_rows[(i, 0)]);
            hi = hi.max(g_rows[(i, 0)]);
        }
        if lo >= 0.0 || hi <= 0.0 {
            return Err(Error::HullViolation);
        }
    }
    let floor = 1.0 / nf;
    let denom = |t: &DVector<f64>| -> Option<DVector<f64>> {
        let mut d = DVector::zeros(n);
        for i in 0..n {
            let mut acc = 1.0;
            for j in 0..q {
                acc += t[j] * g_rows[(i, j)];
            }
            if acc <= floor {
                return None;
            }
            d[i] = acc;
        }
        Some(d)
    };
    let value = |d: &DVector<f64>| -> f64 { -d.iter().map(|x| x.ln()).sum::<f64>() };

    let mut t = DVector::zeros(q);
    let mut d = denom(&t).expect("t = 0 is interior");
    let mut f = value(&d);
    for _ in 0..INNER_MAX {
        let mut grad = DVector::zeros(q);
        let mut hess = DMatrix::zeros(q, q);
        for i in 0..n {
            let w = 1.0 / d[i];
            for j in 0..q {
                let gij = g_rows[(i, j)];
                grad[j] -= gij * w;
                for k in 0..q {
                    hess[(j, k)] += gij * g_rows[(i, k)] * w * w;
                }
            }
        }
        if grad.amax() / nf <= INNER_TOL {
            return Ok(t);
        }
        let step = match solve_guarded(&hess, &grad, "inner dual Hessian") {
            Ok(s) => s,
            Err(_) => return Err(Error::HullViolation),
        };
        // Backtrack into the barrier domain with decrease.
        let mut lambda = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &t - lambda * &step;
            if let Some(dc) = denom(&cand) {
                let fc = value(&dc);
                if fc <= f + 1e-12 {
                    t = cand;
                    d = dc;
                    f = fc;
                    moved = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !moved || t.amax() > 1e10 {
            return Err(Error::HullViolation);
        }
    }
    Err(Error::HullViolation)
}

/// Pieces shared by objective evaluations at a fixed problem.
struct Evaluator<'a> {
    problem: &'a FusionProblem,
    p: usize,
    v: usize,
    r: usize,
    q: usize,
    /// Per-study (N_m, V_m^{-1}) for the quadratic penalty.
    penalties: Vec<(f64, DMatrix<f64>)>,
    beta_tilde: DVector<f64>,
    /// Constraint coordinates treated as constant in X at the init point.
    degenerate: Vec<bool>,
}

struct Objective {
    value: f64,
    t_varying: DVector<f64>,
    g_rows: DMatrix<f64>,
}

impl<'a> Evaluator<'a> {
    fn new(problem: &'a FusionProblem, init: &InitialEstimates) -> Result<Self> {
        let layout = problem.layout();
        let data = problem.data.as_ref();
        let mut penalties = Vec::new();
        for s in &problem.studies {
            let vm = s.summary.v(data)?;
            let vinv = solve_guarded_mat_identity(&vm)?;
            penalties.push((s.summary.n_ext as f64, vinv));
        }
        let mut ev = Self {
            problem,
            p: layout.p,
            v: layout.v,
            r: layout.r,
            q: layout.q,
            penalties,
            beta_tilde: problem.beta_tilde(),
            degenerate: vec![false; layout.q],
        };
        let g0 = ev.g_rows(&ev.split(&ev.pack(init))?)?;
        for j in 0..ev.q {
            let col = g0.column(j);
            let mean = col.mean();
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / g0.nrows() as f64;
            ev.degenerate[j] = var <= DEGENERATE_VAR_TOL * (1.0 + mean * mean);
        }
        Ok(ev)
    }

    fn pack(&self, init: &InitialEstimates) -> DVector<f64> {
        let mut nu = DVector::zeros(self.p + self.v + self.r);
        nu.rows_mut(0, self.p).copy_from(&init.theta);
        nu.rows_mut(self.p, self.v).copy_from(&init.pi);
        nu.rows_mut(self.p + self.v, self.r).copy_from(&init.beta);
        nu
    }

    fn split(&self, nu: &DVector<f64>) -> Result<SplitPoint> {
        let theta = nu.rows(0, self.p).into_owned();
        let eta = self.problem.model.profile_eta(&self.problem.data, &theta)?;
        Ok(SplitPoint {
            theta,
            pi: nu.rows(self.p, self.v).into_owned(),
            beta: nu.rows(self.p + self.v, self.r).into_owned(),
            eta,
        })
    }

    fn g_rows(&self, at: &SplitPoint) -> Result<DMatrix<f64>> {
        let stacked = self.problem.stacked();
        let data = self.problem.data.as_ref();
        let params = EvalParams {
            theta: &at.theta,
            eta: at.eta.view(),
            pi: &at.pi,
            beta: &at.beta,
        };
        let mut rows = DMatrix::zeros(data.n(), self.q);
        for i in 0..data.n() {
            use crate::constraints::ConstraintSet;
            rows.row_mut(i)
                .copy_from(&stacked.eval(data, i, &params).transpose());
        }
        Ok(rows)
    }

    fn criterion_sum(&self, at: &SplitPoint) -> f64 {
        let data = self.problem.data.as_ref();
        (0..data.n())
            .map(|i| {
                self.problem
                    .model
                    .criterion(data, i, &at.theta, at.eta.view())
            })
            .sum()
    }

    fn penalty(&self, beta: &DVector<f64>) -> f64 {
        let layout = self.problem.layout();
        let mut acc = 0.0;
        for (m, (n_ext, vinv)) in self.penalties.iter().enumerate() {
            let r_m = self.problem.studies[m].summary.r();
            let diff = self.beta_tilde.rows(layout.r_off[m], r_m)
                - beta.rows(layout.r_off[m], r_m);
            acc += 0.5 * n_ext * (vinv * &diff).dot(&diff);
        }
        acc
    }

    /// Joint objective with constant-in-X rows handled as a quadratic penalty
    /// of weight mu (the exact EL forces them to zero).
    fn objective(&self, nu: &DVector<f64>, mu: f64) -> Result<Objective> {
        let at = self.split(nu)?;
        let g = self.g_rows(&at)?;
        let n = g.nrows();
        let varying: Vec<usize> = (0..self.q).filter(|&j| !self.degenerate[j]).collect();
        let mut value = self.criterion_sum(&at) - self.penalty(&at.beta);
        let mut t_varying = DVector::zeros(varying.len());
        if !varying.is_empty() {
            let mut gv = DMatrix::zeros(n, varying.len());
            for (jj, &j) in varying.iter().enumerate() {
                gv.column_mut(jj).copy_from(&g.column(j));
            }
            let t = inner_lagrange_solve(&gv)?;
            for i in 0..n {
                let mut acc = 1.0;
                for (jj, _) in varying.iter().enumerate() {
                    acc += t[jj] * gv[(i, jj)];
                }
                value -= acc.ln();
            }
            t_varying = t;
        }
        if mu > 0.0 {
            for j in 0..self.q {
                if self.degenerate[j] {
                    let mean = g.column(j).mean();
                    value -= 0.5 * mu * n as f64 * mean * mean;
                }
            }
        }
        Ok(Objective {
            value,
            t_varying,
            g_rows: g,
        })
    }
}

struct SplitPoint {
    theta: DVector<f64>,
    pi: DVector<f64>,
    beta: DVector<f64>,
    eta: crate::model::EtaOwned,
}

fn solve_guarded_mat_identity(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let id = DMatrix::identity(v.nrows(), v.ncols());
    crate::linalg::solve_guarded_mat(v, &id, "penalty V")
}

/// Joint EL objective at a parameter point (t resolved internally); used to
/// compare the one-step point against the oracle optimum.
pub fn el_objective(problem: &FusionProblem, init: &InitialEstimates) -> Result<f64> {
    let ev = Evaluator::new(problem, init)?;
    let nu = ev.pack(init);
    Ok(ev.objective(&nu, 0.0)?.value)
}

/// Maximizes the joint empirical-likelihood objective by damped Newton on the
/// profiled-in-t objective with central-difference derivatives.
pub fn maximize_el(problem: &FusionProblem, init: &InitialEstimates) -> Result<ElSolution> {
    if matches!(init.eta, crate::model::EtaOwned::Jumps { .. })
        && problem.data.n() > ORACLE_MAX_N_SEMIPARAMETRIC
    {
        return Err(Error::Invalid(format!(
            "the EL oracle refits the full nuisance profile per iterate; restricted to n <= {ORACLE_MAX_N_SEMIPARAMETRIC} for semiparametric models"
        )));
    }
    let ev = Evaluator::new(problem, init)?;
    let mut nu = ev.pack(init);
    let any_degenerate = ev.degenerate.iter().any(|&d| d);
    let mu_ladder: &[f64] = if any_degenerate {
        &[1e2, 1e5, 1e8, 1e12]
    } else {
        &[0.0]
    };
    for &mu in mu_ladder {
        nu = newton_maximize(&ev, nu, mu)?;
    }

    let at = ev.split(&nu)?;
    let obj = ev.objective(&nu, 0.0)?;
    let n = problem.data.n();
    let varying: Vec<usize> = (0..ev.q).filter(|&j| !ev.degenerate[j]).collect();
    let mut t = DVector::zeros(ev.q);
    for (jj, &j) in varying.iter().enumerate() {
        t[j] = obj.t_varying[jj];
    }
    let mut weights = DVector::zeros(n);
    for i in 0..n {
        let mut acc = 1.0;
        for &j in &varying {
            acc += t[j] * obj.g_rows[(i, j)];
        }
        weights[i] = 1.0 / (n as f64 * acc);
    }
    Ok(ElSolution {
        theta: at.theta,
        pi: at.pi,
        beta: at.beta,
        t,
        weights,
        objective: obj.value,
    })
}

fn newton_maximize(ev: &Evaluator, start: DVector<f64>, mu: f64) -> Result<DVector<f64>> {
    let s = start.len();
    let mut nu = start;
    let mut f = ev.objective(&nu, mu)?.value;
    let eval = |x: &DVector<f64>| -> f64 {
        ev.objective(x, mu).map(|o| o.value).unwrap_or(f64::NEG_INFINITY)
    };
    for _ in 0..OUTER_MAX {
        // Central-difference gradient.
        let mut grad = DVector::zeros(s);
        let mut xp = nu.clone();
        for j in 0..s {
            let h = 1e-6 * (1.0 + nu[j].abs());
            xp[j] = nu[j] + h;
            let fp = eval(&xp);
            xp[j] = nu[j] - h;
            let fm = eval(&xp);
            xp[j] = nu[j];
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::HullViolation);
            }
            grad[j] = (fp - fm) / (2.0 * h);
        }
        // Central-difference Hessian (symmetric four-point stencil).
        let mut hess = DMatrix::zeros(s, s);
        let hs: Vec<f64> = (0..s).map(|j| 1e-4 * (1.0 + nu[j].abs())).collect();
        for j in 0..s {
            for k in j..s {
                let mut x = nu.clone();
                x[j] += hs[j];
                x[k] += hs[k];
                let fpp = eval(&x);
                x = nu.clone();
                x[j] += hs[j];
                x[k] -= hs[k];
                let fpm = eval(&x);
                x = nu.clone();
                x[j] -= hs[j];
                x[k] += hs[k];
                let fmp = eval(&x);
                x = nu.clone();
                x[j] -= hs[j];
                x[k] -= hs[k];
                let fmm = eval(&x);
                let val = (fpp - fpm - fmp + fmm) / (4.0 * hs[j] * hs[k]);
                hess[(j, k)] = val;
                hess[(k, j)] = val;
            }
        }
        // Ascent direction from -(H - lambda I) d = grad with Levenberg damping.
        let mut lambda_reg = 0.0;
        let scale = hess.amax().max(1.0);
        let step = loop {
            let mut a = -&hess;
            for j in 0..s {
                a[(j, j)] += lambda_reg * scale;
            }
            match solve_guarded(&a, &grad, "oracle Newton") {
                Ok(d) if d.dot(&grad) >= 0.0 => break d,
                _ => {
                    lambda_reg = if lambda_reg == 0.0 { 1e-8 } else { lambda_reg * 100.0 };
                    if lambda_reg > 1e8 {
                        break grad.clone() / scale;
                    }
                }
            }
        };
        // Backtracking line search on the objective.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &nu + alpha * &step;
            let fc = eval(&cand);
            if fc.is_finite() && fc >= f - 1e-14 {
                let moved = alpha * step.amax();
                nu = cand;
                f = fc;
                accepted = true;
                if moved < OUTER_STEP_TOL {
                    return Ok(nu);
                }
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // No uphill move representable: treat as converged.
            return Ok(nu);
        }
    }
    Err(Error::NoConvergence {
        iters: OUTER_MAX,
        context: "EL oracle outer loop",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn inner_zero_rows_gives_zero() {
        let g = DMatrix::zeros(5, 2);
        let t = inner_lagrange_solve(&g).unwrap();
        assert_eq!(t.amax(), 0.0);
    }

    #[test]
    fn inner_symmetric_rows_give_zero() {
        let g = DMatrix::from_row_slice(4, 1, &[0.7, -0.7, 0.3, -0.3]);
        let t = inner_lagrange_solve(&g).unwrap();
        assert_abs_diff_eq!(t[0], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn inner_scalar_matches_bisection() {
        // rows {-1, -1, 3}: -2/(1-t) + 3/(1+3t) = 0 has root t = 1/9.
        let g = DMatrix::from_row_slice(3, 1, &[-1.0, -1.0, 3.0]);
        let t = inner_lagrange_solve(&g).unwrap();
        let f = |t: f64| -2.0 / (1.0 - t) + 3.0 / (1.0 + 3.0 * t);
        let (mut lo, mut hi) = (-0.3, 0.33);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert_abs_diff_eq!(t[0], 0.5 * (lo + hi), epsilon = 1e-10);
        assert_abs_diff_eq!(t[0], 1.0 / 9.0, epsilon = 1e-10);
    }

    #[test]
    fn inner_detects_hull_violation() {
        let g = DMatrix::from_row_slice(3, 1, &[0.5, 1.0, 2.0]);
        assert!(matches!(inner_lagrange_solve(&g), Err(Error::HullViolation)));
    }

    #[test]
    fn inner_dual_feasible_weights() {
        let g = DMatrix::from_row_slice(6, 2, &[0.4, -0.1, -0.5, 0.2, 0.1, 0.3, -0.2, -0.4, 0.6, 0.1, -0.3, -0.1]);
        let t = inner_lagrange_solve(&g).unwrap();
        let mut total = 0.0;
        let mut moment = DVector::zeros(2);
        for i in 0..6 {
            let d = 1.0 + t[0] * g[(i, 0)] + t[1] * g[(i, 1)];
            assert!(d > 0.0);
            let w = 1.0 / (6.0 * d);
            total += w;
            moment[0] += w * g[(i, 0)];
            moment[1] += w * g[(i, 1)];
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
        assert!(moment.amax() <= 1e-8);
    }
}
