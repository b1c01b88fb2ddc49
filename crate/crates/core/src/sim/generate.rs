//! Scenario generators: internal datasets and external summaries for the
//! built-in linear, logistic, and Cox designs.
//!
//! Covariates for the parametric designs are bivariate normal with
//! Var(Z1) = var_z1, Var(Z2) = var_z2, Cov = cov (the default reading of
//! "Z2 ~ N(0,2)" is variance 2; both knobs are configurable). The Cox design
//! uses Z = (Z1, Z2, Z1*Z2) with Z1 ~ N(0,1), Z2 ~ Bernoulli(1/2), baseline
//! cumulative hazard t^2 (so T = sqrt(E exp(-theta'Z))), and uniform [0, c]
//! censoring.

use super::{CovariateLaw, FamilyKind, ScenarioConfig, VPolicy};
use crate::cox::{survival_constraints, PiMode, Subgroup};
use crate::data::InternalDataset;
use crate::error::{Error, Result};
use crate::external::{sandwich_sigma0, CovarianceSpec, ExternalSummary};
use crate::fusion::StudyBlock;
use crate::parametric::{reduced_model_sandwich_fn, Family, ReducedModelConstraint};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use std::sync::Arc;

pub(crate) fn draw_parametric_covariates<R: Rng>(law: &CovariateLaw, rng: &mut R) -> (f64, f64) {
    let e1: f64 = rng.sample(StandardNormal);
    let e2: f64 = rng.sample(StandardNormal);
    let z1 = law.var_z1.sqrt() * e1;
    let b = law.cov / law.var_z1.sqrt();
    let resid_var = (law.var_z2 - law.cov * law.cov / law.var_z1).max(0.0);
    let z2 = b * e1 + resid_var.sqrt() * e2;
    (z1, z2)
}

fn linear_mean(theta: &[f64], z1: f64, z2: f64) -> f64 {
    theta[0] + theta[1] * z1 + theta[2] * z2
}

/// Draws one internal dataset under the scenario's law.
pub fn generate_internal<R: Rng>(cfg: &ScenarioConfig, rng: &mut R) -> Result<InternalDataset> {
    match cfg.family {
        FamilyKind::Linear => {
            let n = cfg.n;
            let mut y = DVector::zeros(n);
            let mut z = DMatrix::zeros(n, 2);
            for i in 0..n {
                let (z1, z2) = draw_parametric_covariates(&cfg.covariates, rng);
                let eps: f64 = rng.sample(StandardNormal);
                z[(i, 0)] = z1;
                z[(i, 1)] = z2;
                y[i] = linear_mean(&cfg.theta, z1, z2) + eps;
            }
            InternalDataset::regression(y, z)
        }
        FamilyKind::Logistic => {
            let n = cfg.n;
            let mut y = DVector::zeros(n);
            let mut z = DMatrix::zeros(n, 2);
            for i in 0..n {
                let (z1, z2) = draw_parametric_covariates(&cfg.covariates, rng);
                let p = crate::parametric::expit(linear_mean(&cfg.theta, z1, z2));
                z[(i, 0)] = z1;
                z[(i, 1)] = z2;
                y[i] = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
            }
            InternalDataset::regression(y, z)
        }
        FamilyKind::Cox => {
            let surv = cfg.survival()?;
            let n = cfg.n;
            let mut time = DVector::zeros(n);
            let mut status = vec![0u8; n];
            let mut z = DMatrix::zeros(n, 3);
            for i in 0..n {
                let (zrow, t) = draw_cox_row(&cfg.theta, 1.0, rng);
                let c = surv.censor_upper * rng.random::<f64>();
                z[(i, 0)] = zrow[0];
                z[(i, 1)] = zrow[1];
                z[(i, 2)] = zrow[2];
                time[i] = t.min(c);
                status[i] = u8::from(t <= c);
            }
            InternalDataset::survival(time, status, z)
        }
    }
}

/// One Cox row: covariates and the event time under baseline pi * t^2.
pub(crate) fn draw_cox_row<R: Rng>(theta: &[f64], pi: f64, rng: &mut R) -> ([f64; 3], f64) {
    let z1: f64 = rng.sample(StandardNormal);
    let z2 = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
    let zrow = [z1, z2, z1 * z2];
    let lin = theta[0] * zrow[0] + theta[1] * zrow[1] + theta[2] * zrow[2];
    let e: f64 = rng.sample(Exp1);
    // pi * T^2 * exp(theta'Z) = E  =>  T = sqrt(E exp(-theta'Z) / pi)
    let t = (e * (-lin).exp() / pi).sqrt();
    (zrow, t)
}

/// Simulates one external study and returns its constraint block and summary.
///
/// Parametric studies fit their reduced models on a fresh external dataset of
/// size N_m; Cox studies report uncensored subgroup survival proportions at
/// the configured horizons, with the binomial covariance
/// Diag(b(1-b)/share) as the explicit Sigma_0.
pub fn generate_external_summary<R: Rng>(
    cfg: &ScenarioConfig,
    study: usize,
    rng: &mut R,
) -> Result<StudyBlock> {
    let n_ext = cfg.n_external[study];
    match cfg.family {
        FamilyKind::Linear | FamilyKind::Logistic => {
            let family = if cfg.family == FamilyKind::Linear {
                Family::Linear
            } else {
                Family::Logistic
            };
            let which = cfg.reduced_for_study(study)?;
            // Fresh external data under the same law.
            let ext_cfg = ScenarioConfig {
                n: n_ext,
                ..cfg.clone()
            };
            let ext_data = generate_internal(&ext_cfg, rng)?;
            let score = reduced_model_sandwich_fn(family, which.clone());
            let params = score.fit(&ext_data)?;
            let beta_hat =
                DVector::from_iterator(which.len(), (0..which.len()).map(|m| params[2 * m + 1]));
            let cov = match cfg.v_policy {
                VPolicy::Sandwich => CovarianceSpec::SandwichFromInternal(Arc::new(score.clone())),
                VPolicy::Explicit => {
                    // The external study publishes its own sandwich covariance.
                    let sw = sandwich_sigma0(&score, &ext_data)?;
                    CovarianceSpec::Explicit(sw.sigma_beta)
                }
            };
            let summary = ExternalSummary::new(beta_hat, n_ext, cov)?;
            let constraints = ReducedModelConstraint::new(family, 2, which)?;
            Ok(StudyBlock {
                constraints: Arc::new(constraints),
                summary,
            })
        }
        FamilyKind::Cox => {
            let surv = cfg.survival()?;
            let pi_m = surv.pi[study];
            let subgroups = surv.subgroup_structs();
            let k = subgroups.len();
            let mut member_counts = vec![0usize; k];
            let mut surviving = vec![0usize; k];
            // Membership reuses the constraint predicates on a 1-row dataset.
            let probe = |zrow: &[f64; 3], sub: &Subgroup| -> bool {
                sub.conds.iter().all(|c| {
                    let z = zrow[c.covariate];
                    match c.op {
                        crate::cox::CondOp::Le => z <= c.value,
                        crate::cox::CondOp::Gt => z > c.value,
                        crate::cox::CondOp::Eq => z == c.value,
                    }
                })
            };
            for _ in 0..n_ext {
                let (zrow, t) = draw_cox_row(&cfg.theta, pi_m, rng);
                for (kk, sub) in subgroups.iter().enumerate() {
                    if probe(&zrow, sub) {
                        member_counts[kk] += 1;
                        if t > sub.horizon {
                            surviving[kk] += 1;
                        }
                    }
                }
            }
            let mut beta_hat = DVector::zeros(k);
            let mut sigma = DMatrix::zeros(k, k);
            for kk in 0..k {
                if member_counts[kk] == 0 {
                    return Err(Error::EmptySubgroup { index: kk });
                }
                let share = member_counts[kk] as f64 / n_ext as f64;
                let prop = surviving[kk] as f64 / member_counts[kk] as f64;
                beta_hat[kk] = prop;
                let var = (prop * (1.0 - prop)).max(1e-10) / share;
                sigma[(kk, kk)] = var;
            }
            let summary = ExternalSummary::new(beta_hat, n_ext, CovarianceSpec::Explicit(sigma))?;
            let pi_mode = if surv.pi_estimated() {
                PiMode::Estimated
            } else {
                PiMode::Known(pi_m)
            };
            let constraints = survival_constraints(3, subgroups, pi_mode)?;
            Ok(StudyBlock {
                constraints: Arc::new(constraints),
                summary,
            })
        }
    }
}

/// Tunes the uniform censoring upper bound to a target censoring rate by
/// bisection against a Monte Carlo draw of event times.
pub fn calibrate_censoring<R: Rng>(
    theta: &[f64],
    target_rate: f64,
    draws: usize,
    rng: &mut R,
) -> f64 {
    let times: Vec<f64> = (0..draws).map(|_| draw_cox_row(theta, 1.0, rng).1).collect();
    // P(censored | c) = E[min(T, c)] / c, monotone decreasing in c.
    let rate = |c: f64| times.iter().map(|t| t.min(c)).sum::<f64>() / (draws as f64 * c);
    let (mut lo, mut hi) = (1e-6, 1.0);
    while rate(hi) > target_rate {
        hi *= 2.0;
        if hi > 1e6 {
            break;
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) > target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn covariate_moments_match_law() {
        let law = CovariateLaw {
            var_z1: 1.0,
            var_z2: 2.0,
            cov: 0.6,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let n = 200_000;
        let (mut m11, mut m22, mut m12) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let (z1, z2) = draw_parametric_covariates(&law, &mut rng);
            m11 += z1 * z1;
            m22 += z2 * z2;
            m12 += z1 * z2;
        }
        let nf = n as f64;
        assert!((m11 / nf - 1.0).abs() < 0.02);
        assert!((m22 / nf - 2.0).abs() < 0.04);
        assert!((m12 / nf - 0.6).abs() < 0.02);
    }

    #[test]
    fn cox_censoring_rate_near_thirty_percent() {
        // Paper defaults: uniform [0, 2.52] censoring aims at 30%.
        let cfg = ScenarioConfig::cox_table2(100, vec![500], true, 1.0, 42);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let theta = [-0.5, 1.0, -0.5];
        let c = 2.52;
        let n = 100_000;
        let mut censored = 0;
        for _ in 0..n {
            let (_, t) = draw_cox_row(&theta, 1.0, &mut rng);
            if c * rng.random::<f64>() < t {
                censored += 1;
            }
        }
        let rate = censored as f64 / n as f64;
        assert!((rate - 0.30).abs() < 0.02, "censoring rate {rate}");
        let _ = cfg;
    }

    #[test]
    fn cox_null_theta_median_is_sqrt_ln2() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let theta = [0.0, 0.0, 0.0];
        let mut ts: Vec<f64> = (0..100_001).map(|_| draw_cox_row(&theta, 1.0, &mut rng).1).collect();
        ts.sort_by(|a, b| a.total_cmp(b));
        let median = ts[50_000];
        assert!((median - (2.0f64.ln()).sqrt()).abs() < 0.01);
    }

    #[test]
    fn censoring_calibration_recovers_paper_bound() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let c = calibrate_censoring(&[-0.5, 1.0, -0.5], 0.30, 200_000, &mut rng);
        assert!((c - 2.52).abs() < 0.15, "calibrated bound {c}");
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let cfg = ScenarioConfig::linear_table1(1000, vec![500], vec![vec![1]], 7);
        let mut r1 = ChaCha12Rng::seed_from_u64(7);
        let mut r2 = ChaCha12Rng::seed_from_u64(7);
        let d1 = generate_internal(&cfg, &mut r1).unwrap();
        let d2 = generate_internal(&cfg, &mut r2).unwrap();
        assert_eq!(d1.responses().as_slice(), d2.responses().as_slice());
        assert_eq!(d1.covariates().as_slice(), d2.covariates().as_slice());
    }
}
