//! Data-generating processes with known truth, Monte-Carlo oracles for the
//! stratum effect, and the simulation-study driver.
//!
//! Two families are provided:
//!
//! * Synthetic surrogate examples `P1`, `P2` with covariates
//!   `X = (X1, X0) ~ N(0, S)`, `S = [[1, .25], [.25, 1]]`,
//!   `(M1, M0) | X ~ N(X, S)` (P1) or `N(0, S)` (P2), `Z ~ Bern(1/2)` and
//!   `Y_{z,m} = m/2 + N(X_z + X_{1-z}/2, 1)` (P1, the `m/2` term absent in
//!   P2). The stratum effect is `0.75 (m1 - m0)` under P1 and zero under P2.
//! * Benchmark settings `(tp, ps, om)` with `X ~ N(0, I_3)` and two
//!   variants each for the treatment, principal-score and outcome laws.
//!   Variant 1 is linear in the covariates (so the parametric fits are
//!   correct) and variant 2 is not.

use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::CopulaSpec;
use crate::dataset::{Arm, Dataset, Observation, PrincipalPoint, StandardizeColumns};
use crate::error::{Error, Result};
use crate::estimator::{bootstrap, BootstrapConfig, CiMethod, DensityPolicy, Pipeline};
use crate::kernel::Bandwidth;
use crate::normal::{self, expit};
use crate::nuisance::{FixedStrategy, MarginalDist, NormalMarginal, Nuisances, ParametricStrategy};
use crate::quadrature::QuadratureConfig;
use crate::rng::{self, derive_seed, standard_normal, Domain, StreamRng};
use crate::stats;

const SYNTH_RHO: f64 = 0.25;
const BENCH_SD: f64 = 0.5;
const BENCH_RHO: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SyntheticVariant {
    P1,
    P2,
}

/// Potential values kept alongside a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Latent {
    pub m1: Vec<f64>,
    pub m0: Vec<f64>,
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BenchmarkSetting {
    pub tp: u8,
    pub ps: u8,
    pub om: u8,
    pub n: usize,
    pub seed: u64,
}

impl BenchmarkSetting {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: u8| v == 1 || v == 2;
        if !(ok(self.tp) && ok(self.ps) && ok(self.om)) {
            return Err(Error::Config(format!(
                "setting indices must be 1 or 2, got ({}, {}, {})",
                self.tp, self.ps, self.om
            )));
        }
        if self.n < 50 {
            return Err(Error::Config(format!("benchmark needs n >= 50, got {}", self.n)));
        }
        Ok(())
    }
}

/// A data-generating process: a synthetic variant or a benchmark setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Synthetic(SyntheticVariant),
    Benchmark { tp: u8, ps: u8, om: u8 },
}

impl FromStr for Design {
    type Err = Error;

    /// `p1`, `p2`, or three digits such as `121` for `(tp, ps, om)`.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p1" => return Ok(Design::Synthetic(SyntheticVariant::P1)),
            "p2" => return Ok(Design::Synthetic(SyntheticVariant::P2)),
            _ => {}
        }
        let d: Vec<u8> = s.bytes().map(|b| b.wrapping_sub(b'0')).collect();
        if d.len() == 3 && d.iter().all(|&v| v == 1 || v == 2) {
            Ok(Design::Benchmark {
                tp: d[0],
                ps: d[1],
                om: d[2],
            })
        } else {
            Err(Error::Config(format!(
                "unknown setting {s:?}; expected p1, p2 or three digits in {{1,2}} such as 111"
            )))
        }
    }
}

impl std::fmt::Display for Design {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Design::Synthetic(SyntheticVariant::P1) => f.write_str("p1"),
            Design::Synthetic(SyntheticVariant::P2) => f.write_str("p2"),
            Design::Benchmark { tp, ps, om } => write!(f, "{tp}{ps}{om}"),
        }
    }
}

/// Covariates `(X1, X0)` with correlation 0.25.
fn synth_covariates(rng: &mut StreamRng) -> [f64; 2] {
    let a = standard_normal(rng);
    let b = standard_normal(rng);
    correlated(a, b)
}

#[inline]
fn correlated(a: f64, b: f64) -> [f64; 2] {
    [a, SYNTH_RHO * a + (1.0 - SYNTH_RHO * SYNTH_RHO).sqrt() * b]
}

fn bench_covariates(rng: &mut StreamRng) -> [f64; 3] {
    [standard_normal(rng), standard_normal(rng), standard_normal(rng)]
}

fn bernoulli(rng: &mut StreamRng, p: f64) -> Arm {
    if rng::open_unit(rng) < p {
        Arm::Treated
    } else {
        Arm::Control
    }
}

/// Draws `n` rows of a synthetic variant, keeping the potential values.
pub fn gen_synthetic(variant: SyntheticVariant, n: usize, seed: u64) -> Result<(Dataset, Latent)> {
    let mut rng = rng::stream(seed);
    let mut rows = Vec::with_capacity(n);
    let mut latent = Latent::default();
    for _ in 0..n {
        let x = synth_covariates(&mut rng);
        let z = bernoulli(&mut rng, 0.5);
        let noise = correlated(standard_normal(&mut rng), standard_normal(&mut rng));
        let (m1, m0) = match variant {
            SyntheticVariant::P1 => (x[0] + noise[0], x[1] + noise[1]),
            SyntheticVariant::P2 => (noise[0], noise[1]),
        };
        let slope = match variant {
            SyntheticVariant::P1 => 0.5,
            SyntheticVariant::P2 => 0.0,
        };
        let y1 = slope * m1 + x[0] + 0.5 * x[1] + standard_normal(&mut rng);
        let y0 = slope * m0 + x[1] + 0.5 * x[0] + standard_normal(&mut rng);
        let (m, y) = match z {
            Arm::Treated => (m1, y1),
            Arm::Control => (m0, y0),
        };
        rows.push(Observation {
            x: x.to_vec(),
            z,
            m,
            y,
        });
        latent.m1.push(m1);
        latent.m0.push(m0);
        latent.y1.push(y1);
        latent.y0.push(y0);
    }
    Ok((Dataset::new(rows)?, latent))
}

/// The true nuisance functions of a synthetic variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticTruth {
    pub variant: SyntheticVariant,
    pub copula: CopulaSpec,
}

impl SyntheticTruth {
    /// Truth with the copula implied by the latent covariance.
    pub fn new(variant: SyntheticVariant) -> Self {
        SyntheticTruth {
            variant,
            copula: CopulaSpec::gaussian(SYNTH_RHO).expect("valid rho"),
        }
    }
}

fn own_other(x: &[f64], z: Arm) -> (f64, f64) {
    match z {
        Arm::Treated => (x[0], x[1]),
        Arm::Control => (x[1], x[0]),
    }
}

impl Nuisances for SyntheticTruth {
    fn treatment_prob(&self, _x: &[f64], _z: Arm) -> f64 {
        0.5
    }

    fn outcome_mean(&self, x: &[f64], z: Arm, m: f64) -> f64 {
        let (own, other) = own_other(x, z);
        let slope = match self.variant {
            SyntheticVariant::P1 => 0.5,
            SyntheticVariant::P2 => 0.0,
        };
        slope * m + own + 0.5 * other
    }

    fn principal_marginal(&self, x: &[f64], z: Arm) -> Box<dyn MarginalDist> {
        let mean = match self.variant {
            SyntheticVariant::P1 => own_other(x, z).0,
            SyntheticVariant::P2 => 0.0,
        };
        Box::new(NormalMarginal { mean, sd: 1.0 })
    }

    fn copula(&self) -> &CopulaSpec {
        &self.copula
    }
}

/// The true nuisance functions of a benchmark setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkTruth {
    pub tp: u8,
    pub ps: u8,
    pub om: u8,
    pub copula: CopulaSpec,
}

impl BenchmarkTruth {
    pub fn new(tp: u8, ps: u8, om: u8) -> Self {
        BenchmarkTruth {
            tp,
            ps,
            om,
            copula: CopulaSpec::gaussian(BENCH_RHO).expect("valid rho"),
        }
    }

    pub fn treated_prob(&self, x: &[f64]) -> f64 {
        match self.tp {
            1 => expit(x[1] + x[2]),
            _ => expit(x[0] * x[0] / 2.0 + x[1].powi(3) / 2.0),
        }
    }

    pub fn ps_mean(&self, x: &[f64], z: Arm) -> f64 {
        let zv = z.indicator();
        match self.ps {
            1 => (x[0] + x[1] + x[2]) / 2.0 + zv,
            _ => x[0] + zv * (x[0] * x[0] + x[0].powi(3) / 2.0),
        }
    }

    pub fn om_mean(&self, x: &[f64], z: Arm, m: f64) -> f64 {
        let zv = z.indicator();
        match self.om {
            1 => x[0] + x[2] + zv * x[0] + zv + m / 2.0,
            _ => x[1] + zv * (x[0] + x[0] * x[0] + x[0].powi(3) / 5.0) + m / 2.0,
        }
    }
}

impl Nuisances for BenchmarkTruth {
    fn treatment_prob(&self, x: &[f64], z: Arm) -> f64 {
        let p = self.treated_prob(x);
        match z {
            Arm::Treated => p,
            Arm::Control => 1.0 - p,
        }
    }

    fn outcome_mean(&self, x: &[f64], z: Arm, m: f64) -> f64 {
        self.om_mean(x, z, m)
    }

    fn principal_marginal(&self, x: &[f64], z: Arm) -> Box<dyn MarginalDist> {
        Box::new(NormalMarginal {
            mean: self.ps_mean(x, z),
            sd: BENCH_SD,
        })
    }

    fn copula(&self) -> &CopulaSpec {
        &self.copula
    }
}

/// Draws a benchmark dataset: `X`, then `Z`, then `M`, then `Y`.
pub fn gen_benchmark(setting: &BenchmarkSetting) -> Result<Dataset> {
    setting.validate()?;
    let truth = BenchmarkTruth::new(setting.tp, setting.ps, setting.om);
    let mut rng = rng::stream(setting.seed);
    let rows = (0..setting.n)
        .map(|_| {
            let x = bench_covariates(&mut rng);
            let z = bernoulli(&mut rng, truth.treated_prob(&x));
            let m = truth.ps_mean(&x, z) + BENCH_SD * standard_normal(&mut rng);
            let y = truth.om_mean(&x, z, m) + BENCH_SD * standard_normal(&mut rng);
            Observation {
                x: x.to_vec(),
                z,
                m,
                y,
            }
        })
        .collect();
    Dataset::new(rows)
}

impl Design {
    pub fn p(&self) -> usize {
        match self {
            Design::Synthetic(_) => 2,
            Design::Benchmark { .. } => 3,
        }
    }

    /// The copula of the data-generating process.
    pub fn true_copula(&self) -> CopulaSpec {
        match self {
            Design::Synthetic(_) => CopulaSpec::gaussian(SYNTH_RHO),
            Design::Benchmark { .. } => CopulaSpec::gaussian(BENCH_RHO),
        }
        .expect("valid rho")
    }

    /// True nuisances with the given copula.
    pub fn truth(&self, copula: CopulaSpec) -> Arc<dyn Nuisances> {
        match *self {
            Design::Synthetic(variant) => Arc::new(SyntheticTruth { variant, copula }),
            Design::Benchmark { tp, ps, om } => Arc::new(BenchmarkTruth { tp, ps, om, copula }),
        }
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<Dataset> {
        match *self {
            Design::Synthetic(v) => Ok(gen_synthetic(v, n, seed)?.0),
            Design::Benchmark { tp, ps, om } => gen_benchmark(&BenchmarkSetting { tp, ps, om, n, seed }),
        }
    }

    fn sample_covariates(&self, rng: &mut StreamRng, out: &mut [f64; 3]) {
        match self {
            Design::Synthetic(_) => {
                let x = synth_covariates(rng);
                out[..2].copy_from_slice(&x);
            }
            Design::Benchmark { .. } => *out = bench_covariates(rng),
        }
    }
}

/// Monte-Carlo value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleValue {
    pub tau: f64,
    pub se: f64,
}

const ORACLE_CHUNK: usize = 10_000;

/// Sums `(w, w a, w^2, w^2 a, w^2 a^2)` over covariate draws, with draws
/// split into fixed-size chunks on derived streams.
fn weighted_sums<F>(design: &Design, n_mc: usize, seed: u64, f: F) -> [f64; 5]
where
    F: Fn(&[f64]) -> (f64, f64) + Sync,
{
    let chunks = n_mc.div_ceil(ORACLE_CHUNK);
    let parts: Vec<[f64; 5]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(derive_seed(seed, Domain::Oracle, c as u64));
            let len = ORACLE_CHUNK.min(n_mc - c * ORACLE_CHUNK);
            let mut acc = [0.0; 5];
            let mut x = [0.0; 3];
            for _ in 0..len {
                design.sample_covariates(&mut rng, &mut x);
                let (w, a) = f(&x[..design.p()]);
                acc[0] += w;
                acc[1] += w * a;
                acc[2] += w * w;
                acc[3] += w * w * a;
                acc[4] += w * w * a * a;
            }
            acc
        })
        .collect();
    let mut out = [0.0; 5];
    for (k, o) in out.iter_mut().enumerate() {
        let col: Vec<f64> = parts.iter().map(|p| p[k]).collect();
        *o = stats::pairwise_sum(&col);
    }
    out
}

fn ratio(s: [f64; 5]) -> Result<OracleValue> {
    let [sw, swa, sww, swwa, swwaa] = s;
    if !(sw > 1e-300) {
        return Err(Error::OracleUnderflow(sw));
    }
    let tau = swa / sw;
    // Delta method: sum_i w_i^2 (a_i - tau)^2, expanded.
    let var = (swwaa - 2.0 * tau * swwa + tau * tau * sww).max(0.0);
    Ok(OracleValue {
        tau,
        se: var.sqrt() / sw,
    })
}

/// The stratum effect as `sum (mu_1 - mu_0) e_u(X) / sum e_u(X)` over `n_mc`
/// covariate draws, with the true nuisances and the given copula.
pub fn oracle_tau_star(
    design: &Design,
    u: PrincipalPoint,
    copula: CopulaSpec,
    n_mc: usize,
    seed: u64,
) -> Result<OracleValue> {
    copula.validate()?;
    if n_mc < 2 {
        return Err(Error::Config("oracle needs at least 2 draws".into()));
    }
    let truth = design.truth(copula);
    let fc = copula.factored();
    let sums = weighted_sums(design, n_mc, seed, |x| {
        let f1 = truth.principal_marginal(x, Arm::Treated);
        let f0 = truth.principal_marginal(x, Arm::Control);
        let (e, _) = fc.joint_density(f1.as_ref(), f0.as_ref(), u);
        let a = truth.outcome_mean(x, Arm::Treated, u.m1) - truth.outcome_mean(x, Arm::Control, u.m0);
        (e, a)
    });
    ratio(sums)
}

/// Second oracle for benchmark settings with the first outcome law, where
/// `mu_1(x, m1) - mu_0(x, m0) = x1 + 1 + (m1 - m0)/2`. Estimates `E[X1 | U = u]`
/// by weighting draws with the closed-form bivariate normal density of `U`
/// given `X` (a Gaussian copula of Gaussian marginals).
pub fn oracle_tau_star_linear_om(
    design: &Design,
    u: PrincipalPoint,
    rho: f64,
    n_mc: usize,
    seed: u64,
) -> Result<OracleValue> {
    let Design::Benchmark { tp, ps, om: 1 } = *design else {
        return Err(Error::Config("the linear-outcome oracle needs a benchmark setting with om = 1".into()));
    };
    let truth = BenchmarkTruth::new(tp, ps, 1);
    let sums = weighted_sums(design, n_mc, seed, |x| {
        let mean = (truth.ps_mean(x, Arm::Treated), truth.ps_mean(x, Arm::Control));
        let w = normal::bivariate_pdf(u.m1, u.m0, mean, (BENCH_SD, BENCH_SD), rho);
        (w, x[0])
    });
    let v = ratio(sums)?;
    Ok(OracleValue {
        tau: v.tau + 1.0 + (u.m1 - u.m0) / 2.0,
        se: v.se,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NuisanceMode {
    /// Fit the parametric models in every round.
    Parametric,
    /// Use the true nuisance functions.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub replicates: usize,
    pub alpha: f64,
    pub method: CiMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub design: Design,
    pub n: usize,
    pub rounds: usize,
    pub points: Vec<PrincipalPoint>,
    /// Copula used by the estimator.
    pub copula: CopulaSpec,
    pub bandwidth: Bandwidth,
    pub quad: QuadratureConfig,
    pub nuisance: NuisanceMode,
    pub density_policy: DensityPolicy,
    pub standardize: StandardizeColumns,
    pub coverage: Option<CoverageConfig>,
    pub seed: u64,
    pub oracle_n_mc: usize,
}

impl StudyConfig {
    /// Defaults for a design: its true copula, the optimal-rate bandwidth,
    /// grid quadrature, parametric nuisances, no standardization and a
    /// one-million-draw oracle.
    pub fn new(design: Design, n: usize, rounds: usize, points: Vec<PrincipalPoint>, seed: u64) -> Self {
        StudyConfig {
            design,
            n,
            rounds,
            points,
            copula: design.true_copula(),
            bandwidth: Bandwidth::OPTIMAL,
            quad: QuadratureConfig::default(),
            nuisance: NuisanceMode::Parametric,
            density_policy: DensityPolicy::Error,
            standardize: StandardizeColumns::NONE,
            coverage: None,
            seed,
            oracle_n_mc: 1_000_000,
        }
    }

    pub fn pipeline(&self) -> Pipeline {
        let strategy: Arc<dyn crate::nuisance::NuisanceStrategy> = match self.nuisance {
            NuisanceMode::Parametric => Arc::new(ParametricStrategy),
            NuisanceMode::Oracle => Arc::new(FixedStrategy(self.design.truth(self.copula))),
        };
        Pipeline {
            strategy,
            copula: self.copula,
            bandwidth: self.bandwidth,
            quad: self.quad,
            density_policy: self.density_policy,
            standardize: self.standardize,
        }
    }
}

/// One point in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub m1: f64,
    pub m0: f64,
    pub tau_star: f64,
    pub tau_hat: Option<f64>,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub covered: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub u: PrincipalPoint,
    pub tau_star: f64,
    pub tau_star_se: f64,
    pub rounds: usize,
    pub failures: usize,
    /// `mean(tau_hat - tau_star)` over successful rounds.
    pub mean_bias: f64,
    pub mean_abs_error: f64,
    pub rmse: f64,
    pub coverage: Option<f64>,
    pub mean_ci_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub summaries: Vec<PointSummary>,
    pub records: Vec<RoundRecord>,
}

/// Runs `rounds` independent replications: draw data, estimate at every
/// point (with a bootstrap interval in coverage mode) and score against the
/// oracle. Round `r` uses streams derived from `(seed, r)`.
pub fn run_mc_study(cfg: &StudyConfig) -> Result<StudyResult> {
    if cfg.rounds == 0 {
        return Err(Error::Config("a study needs at least one round".into()));
    }
    if cfg.points.is_empty() {
        return Err(Error::Config("a study needs at least one point".into()));
    }
    let truth = cfg
        .points
        .iter()
        .enumerate()
        .map(|(k, &u)| {
            oracle_tau_star(
                &cfg.design,
                u,
                cfg.design.true_copula(),
                cfg.oracle_n_mc,
                derive_seed(cfg.seed, Domain::Oracle, k as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let pipeline = cfg.pipeline();

    let rounds: Vec<Vec<RoundRecord>> = (0..cfg.rounds)
        .into_par_iter()
        .map(|r| run_round(cfg, &pipeline, &truth, r))
        .collect();
    let records: Vec<RoundRecord> = rounds.into_iter().flatten().collect();

    let summaries = cfg
        .points
        .iter()
        .zip(&truth)
        .enumerate()
        .map(|(k, (&u, t))| summarize(u, *t, records.iter().skip(k).step_by(cfg.points.len())))
        .collect();
    Ok(StudyResult { summaries, records })
}

fn run_round(cfg: &StudyConfig, pipeline: &Pipeline, truth: &[OracleValue], r: usize) -> Vec<RoundRecord> {
    let seed = derive_seed(cfg.seed, Domain::StudyRound, r as u64);
    let blank = |k: usize, error: Option<String>| RoundRecord {
        round: r,
        m1: cfg.points[k].m1,
        m0: cfg.points[k].m0,
        tau_star: truth[k].tau,
        tau_hat: None,
        se: None,
        ci_lo: None,
        ci_hi: None,
        covered: None,
        error,
    };
    let data = match cfg.design.generate(cfg.n, seed) {
        Ok(d) => d,
        Err(e) => return (0..cfg.points.len()).map(|k| blank(k, Some(e.to_string()))).collect(),
    };
    let estimates = match pipeline.estimate(&data, &cfg.points) {
        Ok(v) => v,
        Err(e) => return (0..cfg.points.len()).map(|k| blank(k, Some(e.to_string()))).collect(),
    };
    let intervals = cfg.coverage.map(|c| {
        let bc = BootstrapConfig {
            replicates: c.replicates,
            alpha: c.alpha,
            seed: derive_seed(seed, Domain::Bootstrap, u64::MAX),
            method: c.method,
        };
        bootstrap(&data, pipeline, &cfg.points, &bc)
    });
    estimates
        .into_iter()
        .enumerate()
        .map(|(k, est)| {
            let mut rec = blank(k, None);
            match est {
                Ok(e) => rec.tau_hat = Some(e.tau_hat),
                Err(e) => {
                    rec.error = Some(e.to_string());
                    return rec;
                }
            }
            if let Some(intervals) = &intervals {
                let (c, tau_hat) = (cfg.coverage.expect("coverage set"), rec.tau_hat.expect("set above"));
                let bres = match intervals {
                    Ok(v) => v[k].as_ref().map_err(|e| e.to_string()),
                    Err(e) => Err(e.to_string()),
                };
                match bres {
                    Ok(b) => {
                        let ci = match c.method {
                            CiMethod::Percentile => b.ci,
                            CiMethod::Normal => b.normal_interval(tau_hat, c.alpha),
                        };
                        rec.se = Some(b.se);
                        rec.ci_lo = Some(ci.0);
                        rec.ci_hi = Some(ci.1);
                        rec.covered = Some(ci.0 <= rec.tau_star && rec.tau_star <= ci.1);
                    }
                    Err(e) => rec.error = Some(format!("bootstrap: {e}")),
                }
            }
            rec
        })
        .collect()
}

fn summarize<'a>(u: PrincipalPoint, truth: OracleValue, recs: impl Iterator<Item = &'a RoundRecord>) -> PointSummary {
    let recs: Vec<&RoundRecord> = recs.collect();
    let errors: Vec<f64> = recs
        .iter()
        .filter_map(|r| r.tau_hat.map(|t| t - r.tau_star))
        .collect();
    let covered: Vec<bool> = recs.iter().filter_map(|r| r.covered).collect();
    let widths: Vec<f64> = recs
        .iter()
        .filter_map(|r| Some(r.ci_hi? - r.ci_lo?))
        .collect();
    let nan_if_empty = |v: &[f64], f: fn(&[f64]) -> f64| if v.is_empty() { f64::NAN } else { f(v) };
    let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
    PointSummary {
        u,
        tau_star: truth.tau,
        tau_star_se: truth.se,
        rounds: recs.len(),
        failures: recs.iter().filter(|r| r.error.is_some()).count(),
        mean_bias: nan_if_empty(&errors, stats::mean),
        mean_abs_error: nan_if_empty(&abs, stats::mean),
        rmse: nan_if_empty(&sq, stats::mean).sqrt(),
        coverage: (!covered.is_empty())
            .then(|| covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64),
        mean_ci_width: (!widths.is_empty()).then(|| stats::mean(&widths)),
    }
}
