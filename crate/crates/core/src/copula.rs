//! Copula densities and the copula-identified joint principal density
//! `e_u(x) = c(F_1(m1 | x), F_0(m0 | x)) f_1(m1 | x) f_0(m0 | x)`.
//!
//! Every supported family factors as `c(u, v) = a(u) a(v) link(s(u) s(v))`
//! for per-axis functions `a`, `s`. Integration loops exploit this: the
//! marginal work is done once per axis and the tensor product only pays for
//! `link`.

use serde::{Deserialize, Serialize};

use crate::dataset::PrincipalPoint;
use crate::error::{Error, Result};
use crate::normal;
use crate::nuisance::{MarginalDist, PrincipalScoreModel};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before
/// taking normal scores.
pub const PROB_CLAMP: f64 = 1e-12;

/// `Phi^-1(1 - PROB_CLAMP)`: the same clamp expressed on the score scale.
pub const SCORE_CLAMP: f64 = 7.034_483_825_301_132;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Independence,
    Gaussian,
    /// Farlie–Gumbel–Morgenstern.
    Fgm,
}

impl std::str::FromStr for CopulaFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independence" => Ok(CopulaFamily::Independence),
            "gaussian" => Ok(CopulaFamily::Gaussian),
            "fgm" => Ok(CopulaFamily::Fgm),
            other => Err(Error::Config(format!(
                "unknown copula {other:?}; expected gaussian, fgm or independence"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    pub family: CopulaFamily,
    #[serde(default)]
    pub rho: f64,
}

impl CopulaSpec {
    pub const INDEPENDENCE: CopulaSpec = CopulaSpec {
        family: CopulaFamily::Independence,
        rho: 0.0,
    };

    pub fn new(family: CopulaFamily, rho: f64) -> Result<Self> {
        let spec = CopulaSpec { family, rho };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian(rho: f64) -> Result<Self> {
        Self::new(CopulaFamily::Gaussian, rho)
    }

    pub fn fgm(rho: f64) -> Result<Self> {
        Self::new(CopulaFamily::Fgm, rho)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.family {
            CopulaFamily::Independence => true,
            CopulaFamily::Gaussian => self.rho.abs() < 1.0,
            CopulaFamily::Fgm => self.rho.abs() <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "rho = {} is outside the admissible range for the {:?} copula",
                self.rho, self.family
            )))
        }
    }

    /// Copula density at `(u, v)` in the open unit square.
    pub fn density(&self, u: f64, v: f64) -> Result<f64> {
        let inside = |t: f64| t > 0.0 && t < 1.0;
        if !(inside(u) && inside(v)) {
            return Err(Error::CopulaDomain { u, v });
        }
        self.validate()?;
        Ok(match self.family {
            CopulaFamily::Independence => 1.0,
            CopulaFamily::Fgm => 1.0 + self.rho * (1.0 - 2.0 * u) * (1.0 - 2.0 * v),
            CopulaFamily::Gaussian => {
                let a = normal::ppf(u.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP));
                let b = normal::ppf(v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP));
                let r = self.rho;
                let one_minus = 1.0 - r * r;
                (-(r * r * (a * a + b * b) - 2.0 * r * a * b) / (2.0 * one_minus)).exp()
                    / one_minus.sqrt()
            }
        })
    }

    /// Precomputes the constants used by the factored evaluation.
    pub fn factored(&self) -> FactoredCopula {
        let r = self.rho;
        match self.family {
            CopulaFamily::Independence => FactoredCopula {
                family: self.family,
                rho: 0.0,
                kappa: 0.0,
                quad: 0.0,
                scale: 1.0,
            },
            CopulaFamily::Fgm => FactoredCopula {
                family: self.family,
                rho: r,
                kappa: 0.0,
                quad: 0.0,
                scale: 1.0,
            },
            CopulaFamily::Gaussian => {
                let one_minus = 1.0 - r * r;
                FactoredCopula {
                    family: self.family,
                    rho: r,
                    kappa: r / one_minus,
                    quad: r * r / (2.0 * one_minus),
                    scale: one_minus.powf(-0.25),
                }
            }
        }
    }
}

/// Per-axis factor of `e_u(x)`: the marginal density times the copula's
/// axis weight, plus the score fed to the cross term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisTerm {
    pub weight: f64,
    pub score: f64,
}

/// A copula in factored form, ready for tensor-product evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactoredCopula {
    family: CopulaFamily,
    rho: f64,
    kappa: f64,
    quad: f64,
    scale: f64,
}

impl FactoredCopula {
    /// Axis factor of `marginal` at `m`. Returns whether the probability
    /// clamp was hit.
    #[inline]
    pub fn axis(&self, marginal: &dyn MarginalDist, m: f64) -> (AxisTerm, bool) {
        let f = marginal.density(m);
        match self.family {
            CopulaFamily::Independence => (AxisTerm { weight: f, score: 0.0 }, false),
            CopulaFamily::Fgm => {
                let t = marginal.tails(m);
                (
                    AxisTerm {
                        weight: f,
                        score: t.upper - t.lower,
                    },
                    false,
                )
            }
            CopulaFamily::Gaussian => {
                let raw = marginal.normal_score(m);
                let s = raw.clamp(-SCORE_CLAMP, SCORE_CLAMP);
                let w = f * self.scale * (-self.quad * s * s).exp();
                (AxisTerm { weight: w, score: s }, s != raw)
            }
        }
    }

    /// Cross term as a function of the product of the two axis scores.
    #[inline]
    pub fn link(&self, q: f64) -> f64 {
        match self.family {
            CopulaFamily::Independence => 1.0,
            CopulaFamily::Fgm => 1.0 + self.rho * q,
            CopulaFamily::Gaussian => (self.kappa * q).exp(),
        }
    }

    #[inline]
    pub fn combine(&self, a: AxisTerm, b: AxisTerm) -> f64 {
        a.weight * b.weight * self.link(a.score * b.score)
    }

    /// `e_u` for two marginals, with the clamp count.
    pub fn joint_density(
        &self,
        treated: &dyn MarginalDist,
        control: &dyn MarginalDist,
        u: PrincipalPoint,
    ) -> (f64, u32) {
        let (a, ca) = self.axis(treated, u.m1);
        let (b, cb) = self.axis(control, u.m0);
        (self.combine(a, b), ca as u32 + cb as u32)
    }
}

/// `e_u(x)` under a fitted Gaussian-linear principal score.
pub fn joint_principal_density(
    spec: &CopulaSpec,
    ps: &PrincipalScoreModel,
    x: &[f64],
    u: PrincipalPoint,
) -> Result<f64> {
    spec.validate()?;
    use crate::dataset::Arm;
    let f1 = ps.marginal(x, Arm::Treated);
    let f0 = ps.marginal(x, Arm::Control);
    Ok(spec.factored().joint_density(&f1, &f0, u).0)
}
