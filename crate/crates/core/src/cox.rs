//! Nonparametric maximum-likelihood Cox fitter (Breslow baseline), subgroup
//! t-year survival constraints with a heterogeneity parameter pi, and the
//! exact jump-block derivatives feeding the generic profiler.
//!
//! The full log-likelihood in jump parameterization is
//! `m(theta, lambda) = sum_i D_i [log lambda{Y_i} + theta'Z_i] - sum_i exp(theta'Z_i) L(Y_i)`
//! with `L(t) = sum_{t_j <= t} lambda_j`. Ties are handled Breslow-style:
//! events at equal times share a risk set. Nuisance coordinates are the raw
//! jump sizes, which keeps the eta-eta curvature diagonal.

use crate::constraints::{ConstraintDims, ConstraintSet};
use crate::data::InternalDataset;
use crate::error::{Error, Result};
use crate::linalg::solve_guarded;
use crate::model::{
    EtaOwned, EvalParams, FitOutput, Nuisance, NuisanceBlocks, SemiparametricModel,
};
use nalgebra::{DMatrix, DVector};

const SCORE_TOL: f64 = 1e-8;
const MAX_NEWTON: usize = 100;

/// Fitted Cox model: regression coefficients plus Breslow baseline jumps.
#[derive(Debug, Clone)]
pub struct CoxFit {
    pub theta_tilde: DVector<f64>,
    /// Strictly increasing distinct event times.
    pub event_times: Vec<f64>,
    /// Positive Breslow jump sizes, one per event time.
    pub jumps: Vec<f64>,
    /// Full nonparametric log-likelihood at the fit.
    pub loglik: f64,
}

impl CoxFit {
    pub fn eta(&self) -> EtaOwned {
        EtaOwned::Jumps {
            times: self.event_times.clone(),
            jumps: self.jumps.clone(),
        }
    }
}

/// `Lambda(t) = sum_{t_j <= t} lambda_j`: right-continuous step function,
/// zero below the first event time.
pub fn cumulative_hazard(times: &[f64], jumps: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for (tj, lj) in times.iter().zip(jumps.iter()) {
        if *tj <= t {
            acc += lj;
        } else {
            break;
        }
    }
    acc
}

fn cum_hazard_view(eta: Nuisance, t: f64) -> f64 {
    match eta {
        Nuisance::None => 0.0,
        Nuisance::Jumps { times, jumps } => cumulative_hazard(times, jumps, t),
    }
}

fn jump_at(eta: Nuisance, t: f64) -> f64 {
    match eta {
        Nuisance::None => 0.0,
        Nuisance::Jumps { times, jumps } => match times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(j) => jumps[j],
            Err(_) => 0.0,
        },
    }
}

/// Precomputed event-time structure for risk-set sweeps.
struct CoxIndex {
    /// Row indices sorted by descending follow-up time.
    desc: Vec<usize>,
    /// Distinct event times, ascending.
    times: Vec<f64>,
    /// Event multiplicities d_j.
    dcount: Vec<f64>,
    /// Sum of covariates over events at each time, k x p.
    event_z: DMatrix<f64>,
}

impl CoxIndex {
    fn new(data: &InternalDataset) -> Result<Self> {
        let n = data.n();
        let p = data.dim();
        let mut desc: Vec<usize> = (0..n).collect();
        desc.sort_by(|&a, &b| data.y(b).total_cmp(&data.y(a)));
        let mut times = Vec::new();
        for i in 0..n {
            if data.event(i) {
                times.push(data.y(i));
            }
        }
        if times.is_empty() {
            return Err(Error::NoEvents);
        }
        times.sort_by(|a, b| a.total_cmp(b));
        times.dedup();
        let k = times.len();
        let mut dcount = vec![0.0; k];
        let mut event_z = DMatrix::zeros(k, p);
        for i in 0..n {
            if data.event(i) {
                let j = times
                    .binary_search_by(|x| x.total_cmp(&data.y(i)))
                    .expect("event time present");
                dcount[j] += 1.0;
                for c in 0..p {
                    event_z[(j, c)] += data.z(i, c);
                }
            }
        }
        Ok(Self {
            desc,
            times,
            dcount,
            event_z,
        })
    }

    /// Risk-set sums S0, S1 (and S2 when requested) at every event time.
    fn risk_sums(
        &self,
        data: &InternalDataset,
        theta: &DVector<f64>,
        with_s2: bool,
    ) -> (Vec<f64>, DMatrix<f64>, Vec<DMatrix<f64>>) {
        let p = data.dim();
        let k = self.times.len();
        let mut s0 = vec![0.0; k];
        let mut s1 = DMatrix::zeros(k, p);
        let mut s2 = Vec::new();
        let mut acc0 = 0.0;
        let mut acc1 = DVector::zeros(p);
        let mut acc2 = DMatrix::zeros(p, p);
        let mut ptr = 0;
        for j in (0..k).rev() {
            let tj = self.times[j];
            while ptr < self.desc.len() && data.y(self.desc[ptr]) >= tj {
                let i = self.desc[ptr];
                let w = data.zdot(i, theta).exp();
                acc0 += w;
                data.z_axpy(i, w, &mut acc1);
                if with_s2 {
                    for a in 0..p {
                        for b in 0..p {
                            acc2[(a, b)] += w * data.z(i, a) * data.z(i, b);
                        }
                    }
                }
                ptr += 1;
            }
            s0[j] = acc0;
            s1.row_mut(j).copy_from(&acc1.transpose());
            if with_s2 {
                s2.push(acc2.clone());
            }
        }
        if with_s2 {
            s2.reverse();
        }
        (s0, s1, s2)
    }
}

/// Breslow-tie partial likelihood, score, and information at theta.
fn partial_lik(
    idx: &CoxIndex,
    data: &InternalDataset,
    theta: &DVector<f64>,
    with_info: bool,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let p = data.dim();
    let (s0, s1, s2) = idx.risk_sums(data, theta, with_info);
    let mut pl = 0.0;
    let mut score = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    for j in 0..idx.times.len() {
        let d = idx.dcount[j];
        let mut ez_theta = 0.0;
        for c in 0..p {
            ez_theta += idx.event_z[(j, c)] * theta[c];
            score[c] += idx.event_z[(j, c)] - d * s1[(j, c)] / s0[j];
        }
        pl += ez_theta - d * s0[j].ln();
        if with_info {
            for a in 0..p {
                for b in 0..p {
                    info[(a, b)] +=
                        d * (s2[j][(a, b)] / s0[j] - s1[(j, a)] * s1[(j, b)] / (s0[j] * s0[j]));
                }
            }
        }
    }
    (pl, score, info)
}

/// Partial-likelihood score at theta (Breslow ties), summed over rows.
pub fn partial_likelihood_score(data: &InternalDataset, theta: &DVector<f64>) -> Result<DVector<f64>> {
    let idx = CoxIndex::new(data)?;
    Ok(partial_lik(&idx, data, theta, false).1)
}

/// Observed partial-likelihood information (negative Hessian) at theta.
pub fn partial_likelihood_information(
    data: &InternalDataset,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let idx = CoxIndex::new(data)?;
    Ok(partial_lik(&idx, data, theta, true).2)
}

/// Breslow jumps at a fixed theta: `lambda_j = d_j / sum_{Y_i >= t_j} exp(theta'Z_i)`.
pub fn breslow_jumps(data: &InternalDataset, theta: &DVector<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let idx = CoxIndex::new(data)?;
    let (s0, _, _) = idx.risk_sums(data, theta, false);
    let jumps: Vec<f64> = idx
        .dcount
        .iter()
        .zip(s0.iter())
        .map(|(d, s)| d / s)
        .collect();
    Ok((idx.times, jumps))
}

/// Maximizes the partial likelihood by Newton with step-halving, then sets
/// the Breslow baseline jumps.
pub fn fit_cox(data: &InternalDataset) -> Result<CoxFit> {
    let idx = CoxIndex::new(data)?;
    let p = data.dim();
    let nf = data.n() as f64;
    let mut theta = DVector::zeros(p);
    let (mut pl, _, _) = partial_lik(&idx, data, &theta, false);
    let mut converged = false;
    for _ in 0..MAX_NEWTON {
        let (_, score, info) = partial_lik(&idx, data, &theta, true);
        if score.amax() / nf <= SCORE_TOL {
            converged = true;
            break;
        }
        let step = solve_guarded(&info, &score, "cox information").map_err(|_| Error::Collinear)?;
        let mut lambda = 1.0;
        loop {
            let cand = &theta + lambda * &step;
            let (cand_pl, _, _) = partial_lik(&idx, data, &cand, false);
            if cand_pl >= pl - 1e-12 {
                theta = cand;
                pl = cand_pl;
                break;
            }
            lambda *= 0.5;
            if lambda < 1e-10 {
                return Err(Error::NoConvergence {
                    iters: MAX_NEWTON,
                    context: "cox step-halving",
                });
            }
        }
    }
    if !converged {
        let (_, score, _) = partial_lik(&idx, data, &theta, false);
        if score.amax() / nf > SCORE_TOL {
            return Err(Error::NoConvergence {
                iters: MAX_NEWTON,
                context: "cox Newton",
            });
        }
    }
    let (s0, _, _) = idx.risk_sums(data, &theta, false);
    let jumps: Vec<f64> = idx
        .dcount
        .iter()
        .zip(s0.iter())
        .map(|(d, s)| d / s)
        .collect();
    let model = CoxModel { p };
    let eta = EtaOwned::Jumps {
        times: idx.times.clone(),
        jumps: jumps.clone(),
    };
    let loglik: f64 = (0..data.n())
        .map(|i| model.criterion(data, i, &theta, eta.view()))
        .sum();
    Ok(CoxFit {
        theta_tilde: theta,
        event_times: idx.times,
        jumps,
        loglik,
    })
}

/// Cox proportional hazards model in jump parameterization.
#[derive(Debug, Clone)]
pub struct CoxModel {
    pub p: usize,
}

impl CoxModel {
    pub fn for_dim(d: usize) -> Self {
        Self { p: d }
    }
}

impl SemiparametricModel for CoxModel {
    fn dim_theta(&self) -> usize {
        self.p
    }

    fn criterion(
        &self,
        data: &InternalDataset,
        i: usize,
        theta: &DVector<f64>,
        eta: Nuisance,
    ) -> f64 {
        let u = data.zdot(i, theta);
        let cum = cum_hazard_view(eta, data.y(i));
        let mut m = -u.exp() * cum;
        if data.event(i) {
            m += jump_at(eta, data.y(i)).ln() + u;
        }
        m
    }

    fn score(
        &self,
        data: &InternalDataset,
        i: usize,
        theta: &DVector<f64>,
        eta: Nuisance,
    ) -> DVector<f64> {
        let u = data.zdot(i, theta);
        let cum = cum_hazard_view(eta, data.y(i));
        let w = (if data.event(i) { 1.0 } else { 0.0 }) - u.exp() * cum;
        let mut s = DVector::zeros(self.p);
        data.z_axpy(i, w, &mut s);
        s
    }

    fn hessian(
        &self,
        data: &InternalDataset,
        i: usize,
        theta: &DVector<f64>,
        eta: Nuisance,
    ) -> DMatrix<f64> {
        let u = data.zdot(i, theta);
        let w = -u.exp() * cum_hazard_view(eta, data.y(i));
        let mut h = DMatrix::zeros(self.p, self.p);
        for a in 0..self.p {
            for b in 0..self.p {
                h[(a, b)] = w * data.z(i, a) * data.z(i, b);
            }
        }
        h
    }

    fn nuisance_blocks(
        &self,
        data: &InternalDataset,
        theta: &DVector<f64>,
        eta: Nuisance,
    ) -> Option<NuisanceBlocks> {
        let (times, jumps) = match eta {
            Nuisance::Jumps { times, jumps } => (times, jumps),
            Nuisance::None => return None,
        };
        let n = data.n();
        let k = times.len();
        let nf = n as f64;
        let mut m_eta_rows = DMatrix::zeros(n, k);
        let mut m_theta_eta = DMatrix::zeros(self.p, k);
        let mut diag = DVector::zeros(k);
        for i in 0..n {
            let u = data.zdot(i, theta).exp();
            let yi = data.y(i);
            for (j, &tj) in times.iter().enumerate() {
                if yi >= tj {
                    // per-row m_eta_j = D_i I(Y_i = t_j)/lambda_j - I(Y_i >= t_j) e^{theta'Z_i}
                    let mut val = -u;
                    if data.event(i) && yi == tj {
                        val += 1.0 / jumps[j];
                        diag[j] -= 1.0 / (jumps[j] * jumps[j]);
                    }
                    m_eta_rows[(i, j)] = val;
                    for c in 0..self.p {
                        m_theta_eta[(c, j)] -= data.z(i, c) * u;
                    }
                } else {
                    break;
                }
            }
        }
        m_theta_eta /= nf;
        let m_eta_eta = DMatrix::from_diagonal(&(diag / nf));
        Some(NuisanceBlocks {
            m_eta_rows,
            m_theta_eta,
            m_eta_eta,
        })
    }

    fn fit(&self, data: &InternalDataset) -> Result<FitOutput> {
        let fit = fit_cox(data)?;
        Ok(FitOutput {
            theta: fit.theta_tilde.clone(),
            criterion: fit.loglik,
            eta: fit.eta(),
        })
    }

    fn profile_eta(&self, data: &InternalDataset, theta: &DVector<f64>) -> Result<EtaOwned> {
        let (times, jumps) = breslow_jumps(data, theta)?;
        Ok(EtaOwned::Jumps { times, jumps })
    }
}

// ---------------------------------------------------------------------------
// Subgroup t-year survival constraints
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PiMode {
    /// Heterogeneity multiplier fixed at a known value (v = 0).
    Known(f64),
    /// One shared scalar pi estimated from the data (v = 1).
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondOp {
    Le,
    Gt,
    Eq,
}

/// A single membership condition on one covariate coordinate.
#[derive(Debug, Clone, Copy)]
pub struct SubgroupCond {
    pub covariate: usize,
    pub op: CondOp,
    pub value: f64,
}

impl SubgroupCond {
    fn holds(&self, data: &InternalDataset, i: usize) -> bool {
        let z = data.z(i, self.covariate);
        match self.op {
            CondOp::Le => z <= self.value,
            CondOp::Gt => z > self.value,
            CondOp::Eq => z == self.value,
        }
    }
}

/// One subgroup with its survival horizon t_k.
#[derive(Debug, Clone)]
pub struct Subgroup {
    pub conds: Vec<SubgroupCond>,
    pub horizon: f64,
}

impl Subgroup {
    pub fn member(&self, data: &InternalDataset, i: usize) -> bool {
        self.conds.iter().all(|c| c.holds(data, i))
    }
}

/// Constraint rows `g_k = I(Z in Omega_k) [exp{-pi L(t_k) e^{theta'Z}} - beta_k]`.
#[derive(Debug, Clone)]
pub struct SurvivalConstraints {
    pub p: usize,
    pub subgroups: Vec<Subgroup>,
    pub pi_mode: PiMode,
}

/// Builds the subgroup survival constraint set.
pub fn survival_constraints(
    p: usize,
    subgroups: Vec<Subgroup>,
    pi_mode: PiMode,
) -> Result<SurvivalConstraints> {
    if subgroups.is_empty() {
        return Err(Error::Invalid("at least one subgroup required".into()));
    }
    if subgroups.iter().any(|s| s.horizon <= 0.0) {
        return Err(Error::Invalid("subgroup horizons must be positive".into()));
    }
    Ok(SurvivalConstraints {
        p,
        subgroups,
        pi_mode,
    })
}

impl SurvivalConstraints {
    fn pi_eff(&self, at: &EvalParams) -> f64 {
        match self.pi_mode {
            PiMode::Known(v) => v,
            PiMode::Estimated => at.pi[0],
        }
    }

}

impl ConstraintSet for SurvivalConstraints {
    fn dims(&self) -> ConstraintDims {
        ConstraintDims {
            p: self.p,
            v: match self.pi_mode {
                PiMode::Known(_) => 0,
                PiMode::Estimated => 1,
            },
            q: self.subgroups.len(),
            r: self.subgroups.len(),
        }
    }

    fn eval(&self, data: &InternalDataset, i: usize, at: &EvalParams) -> DVector<f64> {
        let pi = self.pi_eff(at);
        let mut g = DVector::zeros(self.subgroups.len());
        for (k, sub) in self.subgroups.iter().enumerate() {
            if sub.member(data, i) {
                let cum = cum_hazard_view(at.eta, sub.horizon);
                let u = data.zdot(i, at.theta).exp();
                g[k] = (-pi * cum * u).exp() - at.beta[k];
            }
        }
        g
    }

    fn jac_theta(&self, data: &InternalDataset, i: usize, at: &EvalParams) -> DMatrix<f64> {
        let pi = self.pi_eff(at);
        let mut jac = DMatrix::zeros(self.subgroups.len(), self.p);
        for (k, sub) in self.subgroups.iter().enumerate() {
            if sub.member(data, i) {
                let cum = cum_hazard_view(at.eta, sub.horizon);
                let u = data.zdot(i, at.theta).exp();
                let s = (-pi * cum * u).exp();
                let w = -pi * cum * u * s;
                for c in 0..self.p {
                    jac[(k, c)] = w * data.z(i, c);
                }
            }
        }
        jac
    }

    fn jac_pi(&self, data: &InternalDataset, i: usize, at: &EvalParams) -> DMatrix<f64> {
        let v = self.dims().v;
        let mut jac = DMatrix::zeros(self.subgroups.len(), v);
        if v == 0 {
            return jac;
        }
        let pi = self.pi_eff(at);
        for (k, sub) in self.subgroups.iter().enumerate() {
            if sub.member(data, i) {
                let cum = cum_hazard_view(at.eta, sub.horizon);
                let u = data.zdot(i, at.theta).exp();
                let s = (-pi * cum * u).exp();
                jac[(k, 0)] = -cum * u * s;
            }
        }
        jac
    }

    fn jac_beta(&self, data: &InternalDataset, i: usize, _at: &EvalParams) -> DMatrix<f64> {
        let kk = self.subgroups.len();
        let mut jac = DMatrix::zeros(kk, kk);
        for (k, sub) in self.subgroups.iter().enumerate() {
            if sub.member(data, i) {
                jac[(k, k)] = -1.0;
            }
        }
        jac
    }

    /// Errors when a subgroup has no internal members.
    fn validate(&self, data: &InternalDataset) -> Result<()> {
        for (k, sub) in self.subgroups.iter().enumerate() {
            if !(0..data.n()).any(|i| sub.member(data, i)) {
                return Err(Error::EmptySubgroup { index: k });
            }
        }
        Ok(())
    }

    /// Warns on thin subgroups and on horizons beyond the last event time
    /// (the cumulative hazard is used there without extrapolation).
    fn warnings(&self, data: &InternalDataset, eta: Nuisance) -> Vec<String> {
        let mut out = Vec::new();
        for (k, sub) in self.subgroups.iter().enumerate() {
            let count = (0..data.n()).filter(|&i| sub.member(data, i)).count();
            if count > 0 && count < 5 {
                out.push(format!(
                    "subgroup {k} has only {count} internal members; constraint may be unstable"
                ));
            }
        }
        if let Nuisance::Jumps { times, .. } = eta {
            if let Some(&last) = times.last() {
                for (k, sub) in self.subgroups.iter().enumerate() {
                    if sub.horizon > last {
                        out.push(format!(
                            "subgroup {k} horizon {} exceeds the last event time {last:.6}; \
                             using the terminal cumulative hazard",
                            sub.horizon
                        ));
                    }
                }
            }
        }
        out
    }

    fn jac_eta(&self, data: &InternalDataset, i: usize, at: &EvalParams) -> Option<DMatrix<f64>> {
        let (times, _) = match at.eta {
            Nuisance::Jumps { times, jumps } => (times, jumps),
            Nuisance::None => return None,
        };
        let pi = self.pi_eff(at);
        let mut jac = DMatrix::zeros(self.subgroups.len(), times.len());
        for (k, sub) in self.subgroups.iter().enumerate() {
            if sub.member(data, i) {
                let cum = cum_hazard_view(at.eta, sub.horizon);
                let u = data.zdot(i, at.theta).exp();
                let w = -pi * u * (-pi * cum * u).exp();
                for (j, &tj) in times.iter().enumerate() {
                    if tj <= sub.horizon {
                        jac[(k, j)] = w;
                    } else {
                        break;
                    }
                }
            }
        }
        Some(jac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// (time, status, z) rows with one binary covariate.
    fn hand_dataset() -> InternalDataset {
        let t = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let status = vec![1, 1, 0];
        let z = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 0.0]);
        InternalDataset::survival(t, status, z).unwrap()
    }

    #[test]
    fn fit_matches_bisection_oracle() {
        // Score equation e^t/(e^t+2) + e^t/(e^t+1) = 1, root theta = ln sqrt(2).
        let data = hand_dataset();
        let fit = fit_cox(&data).unwrap();
        let f = |th: f64| {
            let x = th.exp();
            x / (x + 2.0) + x / (x + 1.0) - 1.0
        };
        let (mut lo, mut hi) = (-5.0, 5.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert_abs_diff_eq!(fit.theta_tilde[0], oracle, epsilon = 1e-8);
        assert_abs_diff_eq!(fit.theta_tilde[0], 0.5 * 2.0f64.ln(), epsilon = 1e-8);
    }

    #[test]
    fn breslow_reduces_to_nelson_aalen_at_zero() {
        let data = hand_dataset();
        let (times, jumps) = breslow_jumps(&data, &DVector::zeros(1)).unwrap();
        assert_eq!(times, vec![1.0, 2.0]);
        assert_abs_diff_eq!(jumps[0], 1.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(jumps[1], 1.0 / 2.0, epsilon = 1e-14);
        // Between the two events the cumulative hazard is the first increment.
        assert_abs_diff_eq!(cumulative_hazard(&times, &jumps, 1.5), 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn cumulative_hazard_edges() {
        let times = [1.0, 2.0];
        let jumps = [0.25, 0.5];
        assert_eq!(cumulative_hazard(&times, &jumps, 0.0), 0.0);
        assert_abs_diff_eq!(cumulative_hazard(&times, &jumps, 10.0), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn breslow_invariant_holds_at_fit() {
        let data = hand_dataset();
        let fit = fit_cox(&data).unwrap();
        // jump_j == d_j / sum_{Y_i >= t_j} exp(theta Z_i), recomputed by hand.
        let th = fit.theta_tilde[0];
        let risk1: f64 = (0..3).map(|i| (data.z(i, 0) * th).exp()).sum();
        let risk2: f64 = (1..3).map(|i| (data.z(i, 0) * th).exp()).sum();
        assert_abs_diff_eq!(fit.jumps[0], 1.0 / risk1, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.jumps[1], 1.0 / risk2, epsilon = 1e-10);
    }

    #[test]
    fn no_events_rejected() {
        let t = DVector::from_vec(vec![1.0, 2.0]);
        let data = InternalDataset::survival(t, vec![0, 0], DMatrix::zeros(2, 1)).unwrap();
        assert!(matches!(fit_cox(&data), Err(Error::NoEvents)));
    }

    #[test]
    fn collinear_rejected() {
        let t = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let z = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let data = InternalDataset::survival(t, vec![1, 1, 1, 0], z).unwrap();
        assert!(matches!(fit_cox(&data), Err(Error::Collinear)));
    }

    #[test]
    fn constraint_outside_subgroup_is_zero() {
        let data = hand_dataset();
        let set = survival_constraints(
            1,
            vec![Subgroup {
                conds: vec![SubgroupCond {
                    covariate: 0,
                    op: CondOp::Gt,
                    value: 10.0,
                }],
                horizon: 0.5,
            }],
            PiMode::Known(1.0),
        )
        .unwrap();
        let theta = DVector::zeros(1);
        let pi = DVector::zeros(0);
        let beta = DVector::from_vec(vec![0.4]);
        let times = [1.0, 2.0];
        let jumps = [0.3, 0.2];
        let at = EvalParams {
            theta: &theta,
            eta: Nuisance::Jumps {
                times: &times,
                jumps: &jumps,
            },
            pi: &pi,
            beta: &beta,
        };
        for i in 0..3 {
            assert_eq!(set.eval(&data, i, &at).amax(), 0.0);
            assert_eq!(set.jac_theta(&data, i, &at).amax(), 0.0);
            assert_eq!(set.jac_eta(&data, i, &at).unwrap().amax(), 0.0);
        }
    }

    #[test]
    fn constraint_before_first_event_is_one_minus_beta() {
        let data = hand_dataset();
        let set = survival_constraints(
            1,
            vec![Subgroup {
                conds: vec![],
                horizon: 0.5,
            }],
            PiMode::Known(1.0),
        )
        .unwrap();
        let theta = DVector::from_vec(vec![0.7]);
        let pi = DVector::zeros(0);
        let beta = DVector::from_vec(vec![0.4]);
        let times = [1.0, 2.0];
        let jumps = [0.3, 0.2];
        let at = EvalParams {
            theta: &theta,
            eta: Nuisance::Jumps {
                times: &times,
                jumps: &jumps,
            },
            pi: &pi,
            beta: &beta,
        };
        // Lambda(0.5) = 0 below the first event, so g = exp(0) - beta.
        assert_abs_diff_eq!(set.eval(&data, 0, &at)[0], 1.0 - 0.4, epsilon = 1e-15);
    }

    #[test]
    fn empty_subgroup_detected() {
        let data = hand_dataset();
        let set = survival_constraints(
            1,
            vec![Subgroup {
                conds: vec![SubgroupCond {
                    covariate: 0,
                    op: CondOp::Gt,
                    value: 10.0,
                }],
                horizon: 0.5,
            }],
            PiMode::Known(1.0),
        )
        .unwrap();
        assert!(matches!(
            set.validate(&data),
            Err(Error::EmptySubgroup { index: 0 })
        ));
    }

    #[test]
    fn theta_zero_m_theta_eta_is_risk_set_z_sum() {
        // At theta = 0 each column of E_n m_theta_eta is -(1/n) sum of Z over the risk set.
        let data = hand_dataset();
        let model = CoxModel::for_dim(1);
        let (times, jumps) = breslow_jumps(&data, &DVector::zeros(1)).unwrap();
        let eta = Nuisance::Jumps {
            times: &times,
            jumps: &jumps,
        };
        let blocks = model.nuisance_blocks(&data, &DVector::zeros(1), eta).unwrap();
        // Risk set at t=1: rows {0,1,2}, z-sum = 1; at t=2: rows {1,2}, z-sum = 1.
        assert_abs_diff_eq!(blocks.m_theta_eta[(0, 0)], -1.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(blocks.m_theta_eta[(0, 1)], -1.0 / 3.0, epsilon = 1e-14);
        // E_n m_eta_eta diagonal entries are -d_j / (n lambda_j^2).
        assert_abs_diff_eq!(
            blocks.m_eta_eta[(0, 0)],
            -1.0 / (3.0 * jumps[0] * jumps[0]),
            epsilon = 1e-12
        );
    }
}
