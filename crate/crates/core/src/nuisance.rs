//! Nuisance models: treatment probability `pi_z(x)`, outcome mean
//! `mu_z(x, m)` and the Gaussian-linear principal score `f_zm(x)`.
//!
//! The estimator only sees the [`Nuisances`] trait, so data-generating
//! truths and alternative fitting strategies plug in beside the parametric
//! fits shipped here.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::copula::CopulaSpec;
use crate::dataset::{Arm, Dataset, Observation};
use crate::error::{Error, Result};
use crate::normal::{self, Tails};
use crate::stats;

/// Conditional distribution of `M_z` given `X = x`.
pub trait MarginalDist: Send + Sync {
    fn density(&self, m: f64) -> f64;
    fn tails(&self, m: f64) -> Tails;

    /// Normal score `Phi^-1(F(m))`. Override when it is available in
    /// closed form.
    fn normal_score(&self, m: f64) -> f64 {
        let t = self.tails(m);
        if t.lower <= 0.5 {
            normal::ppf(t.lower)
        } else {
            normal::isf(t.upper)
        }
    }
}

/// `N(mean, sd^2)` marginal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalMarginal {
    pub mean: f64,
    pub sd: f64,
}

impl MarginalDist for NormalMarginal {
    #[inline]
    fn density(&self, m: f64) -> f64 {
        normal::pdf_scaled(m, self.mean, self.sd)
    }

    #[inline]
    fn tails(&self, m: f64) -> Tails {
        Tails::standard((m - self.mean) / self.sd)
    }

    #[inline]
    fn normal_score(&self, m: f64) -> f64 {
        (m - self.mean) / self.sd
    }
}

/// Everything the estimator needs to know about the data-generating
/// process, fitted or true.
pub trait Nuisances: Send + Sync {
    /// `P(Z = z | X = x)`, unclamped.
    fn treatment_prob(&self, x: &[f64], z: Arm) -> f64;
    /// `E(Y | X = x, Z = z, M = m)`.
    fn outcome_mean(&self, x: &[f64], z: Arm, m: f64) -> f64;
    /// Law of `M` given `X = x, Z = z`.
    fn principal_marginal(&self, x: &[f64], z: Arm) -> Box<dyn MarginalDist>;
    /// Association model between the two principal-score marginals.
    fn copula(&self) -> &CopulaSpec;

    fn ps_density(&self, x: &[f64], z: Arm, m: f64) -> f64 {
        self.principal_marginal(x, z).density(m)
    }

    fn ps_cdf(&self, x: &[f64], z: Arm, m: f64) -> f64 {
        self.principal_marginal(x, z).tails(m).lower
    }
}

/// Fits nuisances from data; bootstrap replicates call this once each.
pub trait NuisanceStrategy: Send + Sync {
    fn fit(&self, data: &Dataset, copula: CopulaSpec) -> Result<Arc<dyn Nuisances>>;
}

/// Logistic regression, linear outcome regression with `x:z`
/// interactions, and a Gaussian linear model for `M`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ParametricStrategy;

impl NuisanceStrategy for ParametricStrategy {
    fn fit(&self, data: &Dataset, copula: CopulaSpec) -> Result<Arc<dyn Nuisances>> {
        Ok(Arc::new(FittedNuisances::fit(data, copula)?))
    }
}

/// Ignores the data and always hands back the same nuisances. Used for
/// oracle studies where the true functions are known.
#[derive(Clone)]
pub struct FixedStrategy(pub Arc<dyn Nuisances>);

impl NuisanceStrategy for FixedStrategy {
    fn fit(&self, _data: &Dataset, _copula: CopulaSpec) -> Result<Arc<dyn Nuisances>> {
        Ok(self.0.clone())
    }
}

const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 100;
const SEPARATION_LIMIT: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentModel {
    /// `(intercept, x1..xp)`.
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    /// `(intercept, x1..xp, z, m, x1:z..xp:z)`.
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalScoreModel {
    /// `ell = (intercept, x1..xp, z)`.
    pub coefficients: Vec<f64>,
    pub sigma2: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl TreatmentModel {
    fn linear(&self, x: &[f64]) -> f64 {
        self.coefficients[0] + dot(&self.coefficients[1..], x)
    }

    /// `pi_z(x)`. The two arms sum to one.
    pub fn predict_pi(&self, x: &[f64], z: Arm) -> f64 {
        let p1 = normal::expit(self.linear(x));
        match z {
            Arm::Treated => p1,
            Arm::Control => 1.0 - p1,
        }
    }
}

impl OutcomeModel {
    pub fn predict_mu(&self, x: &[f64], z: Arm, m: f64) -> f64 {
        let p = x.len();
        let c = &self.coefficients;
        let zv = z.indicator();
        let mut v = c[0] + dot(&c[1..=p], x) + c[p + 1] * zv + c[p + 2] * m;
        if zv != 0.0 {
            v += dot(&c[p + 3..], x);
        }
        v
    }
}

impl PrincipalScoreModel {
    pub fn mean(&self, x: &[f64], z: Arm) -> f64 {
        let p = x.len();
        let c = &self.coefficients;
        c[0] + dot(&c[1..=p], x) + c[p + 1] * z.indicator()
    }

    pub fn marginal(&self, x: &[f64], z: Arm) -> NormalMarginal {
        NormalMarginal {
            mean: self.mean(x, z),
            sd: self.sigma2.sqrt(),
        }
    }

    pub fn ps_density(&self, x: &[f64], z: Arm, m: f64) -> f64 {
        self.marginal(x, z).density(m)
    }

    pub fn ps_cdf(&self, x: &[f64], z: Arm, m: f64) -> f64 {
        let g = self.marginal(x, z);
        normal::cdf((m - g.mean) / g.sd)
    }
}

fn covariate_names(p: usize) -> impl Iterator<Item = String> {
    (1..=p).map(|k| format!("x{k}"))
}

pub fn treatment_basis_names(p: usize) -> Vec<String> {
    std::iter::once("intercept".to_string())
        .chain(covariate_names(p))
        .collect()
}

pub fn outcome_basis_names(p: usize) -> Vec<String> {
    let mut v = treatment_basis_names(p);
    v.push("z".into());
    v.push("m".into());
    v.extend((1..=p).map(|k| format!("x{k}:z")));
    v
}

pub fn principal_score_basis_names(p: usize) -> Vec<String> {
    let mut v = treatment_basis_names(p);
    v.push("z".into());
    v
}

fn design<F>(obs: &[Observation], k: usize, row: F) -> DMatrix<f64>
where
    F: Fn(&Observation, &mut Vec<f64>),
{
    let mut buf = Vec::with_capacity(k);
    let mut data = Vec::with_capacity(obs.len() * k);
    for o in obs {
        buf.clear();
        row(o, &mut buf);
        data.extend_from_slice(&buf);
    }
    DMatrix::from_row_slice(obs.len(), k, &data)
}

fn treatment_design(obs: &[Observation], p: usize) -> DMatrix<f64> {
    design(obs, p + 1, |o, r| {
        r.push(1.0);
        r.extend_from_slice(&o.x);
    })
}

fn outcome_design(obs: &[Observation], p: usize) -> DMatrix<f64> {
    design(obs, 2 * p + 3, |o, r| {
        let zv = o.z.indicator();
        r.push(1.0);
        r.extend_from_slice(&o.x);
        r.push(zv);
        r.push(o.m);
        r.extend(o.x.iter().map(|v| v * zv));
    })
}

fn principal_score_design(obs: &[Observation], p: usize) -> DMatrix<f64> {
    design(obs, p + 2, |o, r| {
        r.push(1.0);
        r.extend_from_slice(&o.x);
        r.push(o.z.indicator());
    })
}

/// Fails with the names of collinear columns when the design is rank
/// deficient. Columns are scaled to unit norm first so the test does not
/// depend on units.
fn check_rank(x: &DMatrix<f64>, names: &[String], model: &str) -> Result<()> {
    let k = x.ncols();
    let mut scaled = x.clone();
    for (j, name) in names.iter().enumerate().take(k) {
        let norm = scaled.column(j).norm();
        if norm == 0.0 {
            return Err(Error::RankDeficient {
                model: model.into(),
                columns: vec![name.clone()],
            });
        }
        scaled.column_mut(j).scale_mut(1.0 / norm);
    }
    if x.nrows() < k {
        return Err(Error::RankDeficient {
            model: model.into(),
            columns: names.to_vec(),
        });
    }
    let r = scaled.qr().r();
    let svd = r.svd(false, true);
    let s = &svd.singular_values;
    let (imin, smin) = s.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &v)| {
        if v < acc.1 {
            (i, v)
        } else {
            acc
        }
    });
    let smax = s.max();
    if smin <= 1e-10 * smax {
        let v_t = svd.v_t.expect("requested right singular vectors");
        let null = v_t.row(imin);
        let columns = (0..k)
            .filter(|&j| null[j].abs() > 1e-3)
            .map(|j| names[j].clone())
            .collect();
        return Err(Error::RankDeficient {
            model: model.into(),
            columns,
        });
    }
    Ok(())
}

/// Least squares via Householder QR. Returns coefficients and the residual
/// sum of squares.
fn ols(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String], model: &str) -> Result<(Vec<f64>, f64)> {
    check_rank(x, names, model)?;
    let k = x.ncols();
    let qr = x.clone().qr();
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let r = qr.r();
    let beta = r
        .solve_upper_triangular(&qty.rows(0, k).into_owned())
        .ok_or_else(|| Error::RankDeficient {
            model: model.into(),
            columns: names.to_vec(),
        })?;
    let resid = y - x * &beta;
    Ok((beta.iter().copied().collect(), resid.norm_squared()))
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn mean_loglik(x: &DMatrix<f64>, z: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    let terms: Vec<f64> = eta
        .iter()
        .zip(z.iter())
        .map(|(&e, &zi)| zi * e - softplus(e))
        .collect();
    stats::mean(&terms)
}

/// Logistic regression of `z` on `(1, x)` by iteratively reweighted least
/// squares with step halving.
pub fn fit_treatment(data: &Dataset) -> Result<TreatmentModel> {
    let obs = data.observations();
    let x = treatment_design(obs, data.p());
    check_rank(&x, &treatment_basis_names(data.p()), "treatment")?;
    let n = obs.len() as f64;
    let k = x.ncols();
    let z = DVector::from_iterator(obs.len(), obs.iter().map(|o| o.z.indicator()));
    let mut beta = DVector::zeros(k);
    let mut ll = mean_loglik(&x, &z, &beta);
    for iter in 0..=IRLS_MAX_ITER {
        let eta = &x * &beta;
        let p = eta.map(normal::expit);
        let grad = x.tr_mul(&(&z - &p)) / n;
        let gnorm = grad.norm();
        if gnorm <= IRLS_TOL {
            // A linear predictor that classifies every row correctly means
            // the data are separable and no finite maximizer exists; a small
            // gradient is then only an artifact of saturated probabilities.
            let separated = eta
                .iter()
                .zip(z.iter())
                .all(|(&e, &zi)| (e > 0.0) == (zi == 1.0) && e != 0.0);
            if separated {
                return Err(Error::Separation {
                    norm: beta.norm(),
                    limit: SEPARATION_LIMIT,
                });
            }
            return Ok(TreatmentModel {
                coefficients: beta.iter().copied().collect(),
                iterations: iter,
                gradient_norm: gnorm,
            });
        }
        if iter == IRLS_MAX_ITER {
            return Err(Error::NoConvergence {
                iterations: IRLS_MAX_ITER,
                gradient_norm: gnorm,
            });
        }
        let w = p.map(|v| v * (1.0 - v));
        let mut xw = x.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let hess = x.tr_mul(&xw) / n;
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                // Weights collapsed to zero: fitted probabilities are 0 or 1.
                return Err(Error::Separation {
                    norm: beta.norm(),
                    limit: SEPARATION_LIMIT,
                });
            }
        };
        let mut t = 1.0;
        let mut next = &beta + &step;
        let mut next_ll = mean_loglik(&x, &z, &next);
        while next_ll < ll && t > 1e-10 {
            t *= 0.5;
            next = &beta + &step * t;
            next_ll = mean_loglik(&x, &z, &next);
        }
        beta = next;
        ll = next_ll.max(ll);
        let norm = beta.norm();
        if norm > SEPARATION_LIMIT || !norm.is_finite() {
            return Err(Error::Separation {
                norm,
                limit: SEPARATION_LIMIT,
            });
        }
    }
    unreachable!("loop returns on the final iteration")
}

/// Ordinary least squares of `y` on `(1, x, z, m, x:z)`.
pub fn fit_outcome(data: &Dataset) -> Result<OutcomeModel> {
    let obs = data.observations();
    let x = outcome_design(obs, data.p());
    let y = DVector::from_iterator(obs.len(), obs.iter().map(|o| o.y));
    let (coefficients, _) = ols(&x, &y, &outcome_basis_names(data.p()), "outcome")?;
    Ok(OutcomeModel { coefficients })
}

/// Least squares of `m` on `(1, x, z)`, with `sigma2 = RSS / (n - p - 2)`.
pub fn fit_principal_score(data: &Dataset) -> Result<PrincipalScoreModel> {
    let obs = data.observations();
    let p = data.p();
    let x = principal_score_design(obs, p);
    let m: Vec<f64> = obs.iter().map(|o| o.m).collect();
    let y = DVector::from_column_slice(&m);
    let (ell, rss) = ols(&x, &y, &principal_score_basis_names(p), "principal score")?;
    let sigma2 = rss / (obs.len() - p - 2) as f64;
    let var_m = stats::sample_sd(&m).powi(2);
    if !(sigma2 > 1e-14 * var_m) {
        return Err(Error::DegeneratePrincipalScore { ell, sigma2 });
    }
    Ok(PrincipalScoreModel {
        coefficients: ell,
        sigma2,
    })
}

/// The three parametric fits plus the chosen copula. Serializes to the
/// JSON layout `{treatment, outcome, principal_score, copula}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedNuisances {
    pub treatment: TreatmentModel,
    pub outcome: OutcomeModel,
    pub principal_score: PrincipalScoreModel,
    pub copula: CopulaSpec,
}

impl FittedNuisances {
    pub fn fit(data: &Dataset, copula: CopulaSpec) -> Result<Self> {
        copula.validate()?;
        Ok(FittedNuisances {
            treatment: fit_treatment(data)?,
            outcome: fit_outcome(data)?,
            principal_score: fit_principal_score(data)?,
            copula,
        })
    }

    pub fn with_copula(&self, copula: CopulaSpec) -> Self {
        FittedNuisances {
            copula,
            ..self.clone()
        }
    }

    /// Covariate dimension implied by the stored coefficients.
    pub fn p(&self) -> usize {
        self.treatment.coefficients.len() - 1
    }

    /// Checks coefficient lengths against each other and `sigma2 > 0`.
    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        let bad = |what: &str| Err(Error::Config(format!("nuisance file: {what}")));
        if self.outcome.coefficients.len() != 2 * p + 3 {
            return bad("outcome coefficient count does not match treatment model");
        }
        if self.principal_score.coefficients.len() != p + 2 {
            return bad("principal-score coefficient count does not match treatment model");
        }
        if !(self.principal_score.sigma2 > 0.0) {
            return bad("sigma2 must be positive");
        }
        let all = self
            .treatment
            .coefficients
            .iter()
            .chain(&self.outcome.coefficients)
            .chain(&self.principal_score.coefficients);
        if !all.clone().all(|v| v.is_finite()) {
            return bad("non-finite coefficient");
        }
        self.copula.validate()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: FittedNuisances = serde_json::from_str(s)?;
        v.validate()?;
        Ok(v)
    }
}

impl Nuisances for FittedNuisances {
    fn treatment_prob(&self, x: &[f64], z: Arm) -> f64 {
        self.treatment.predict_pi(x, z)
    }

    fn outcome_mean(&self, x: &[f64], z: Arm, m: f64) -> f64 {
        self.outcome.predict_mu(x, z, m)
    }

    fn principal_marginal(&self, x: &[f64], z: Arm) -> Box<dyn MarginalDist> {
        Box::new(self.principal_score.marginal(x, z))
    }

    fn copula(&self) -> &CopulaSpec {
        &self.copula
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_pi_examples() {
        let m = TreatmentModel {
            coefficients: vec![0.0, 0.0],
            iterations: 0,
            gradient_norm: 0.0,
        };
        assert_eq!(m.predict_pi(&[3.0], Arm::Treated), 0.5);
        assert_eq!(m.predict_pi(&[3.0], Arm::Control), 0.5);
        let m = TreatmentModel {
            coefficients: vec![0.0, 1.0],
            ..m
        };
        assert_eq!(m.predict_pi(&[0.0], Arm::Treated), 0.5);
        assert!((m.predict_pi(&[2.0], Arm::Treated) - 0.880_797_077_977_882_4).abs() < 1e-15);
    }

    #[test]
    fn predict_mu_examples() {
        let mut c = vec![0.0; 5];
        let m = OutcomeModel { coefficients: c.clone() };
        assert_eq!(m.predict_mu(&[1.3], Arm::Treated, 4.0), 0.0);
        c[3] = 0.5;
        let m = OutcomeModel { coefficients: c };
        assert_eq!(m.predict_mu(&[1.3], Arm::Control, 2.0), 1.0);
        let m = OutcomeModel {
            coefficients: vec![0.2, -1.0, 0.7, 0.4, 1.5],
        };
        let want = 0.2 - 1.0 * 0.3 + 0.7 + 0.4 * 2.0 + 1.5 * 0.3;
        assert!((m.predict_mu(&[0.3], Arm::Treated, 2.0) - want).abs() < 1e-15);
    }

    #[test]
    fn ps_density_and_cdf() {
        let m = PrincipalScoreModel {
            coefficients: vec![0.5, 1.0, -0.25],
            sigma2: 1.0,
        };
        let x = [0.2];
        let mean = 0.5 + 0.2 - 0.25;
        assert!((m.ps_density(&x, Arm::Treated, mean) - 0.398_942_3).abs() < 1e-7);
        assert!((m.ps_density(&x, Arm::Treated, mean + 1.0) - 0.241_970_7).abs() < 1e-7);
        assert_eq!(m.ps_cdf(&x, Arm::Treated, mean), 0.5);
        assert!((m.ps_cdf(&x, Arm::Treated, mean + 1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!(m.ps_cdf(&x, Arm::Treated, mean - 40.0) < 1e-300);
    }

    #[test]
    fn separation_is_detected() {
        let rows = (0..20)
            .map(|i| {
                let x = i as f64 - 9.5;
                Observation {
                    x: vec![x],
                    z: if x > 0.0 { Arm::Treated } else { Arm::Control },
                    m: x,
                    y: 0.0,
                }
            })
            .collect();
        let d = Dataset::new(rows).unwrap();
        assert!(matches!(fit_treatment(&d), Err(Error::Separation { .. })));
    }

    #[test]
    fn collinear_columns_are_named() {
        let rows = (0..12)
            .map(|i| {
                let x = i as f64 * 0.3;
                Observation {
                    x: vec![x, 2.0 * x],
                    z: if i % 2 == 0 { Arm::Treated } else { Arm::Control },
                    m: (i as f64).sin(),
                    y: 1.0,
                }
            })
            .collect();
        let d = Dataset::new(rows).unwrap();
        match fit_principal_score(&d) {
            Err(Error::RankDeficient { columns, .. }) => {
                assert_eq!(columns, vec!["x1".to_string(), "x2".to_string()]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
