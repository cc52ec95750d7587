//! The doubly robust plug-in estimator of the localized principal causal
//! effect, surface evaluation and the nonparametric bootstrap.
//!
//! For a stratum `u*` and rows `i = 1..n`
//!
//! ```text
//! tau = [ mean_i xi_i (y_i - mu_{z_i}(x_i, m_i)) + mean_i [[ (mu_1 - mu_0) e_u(x_i) ]] ]
//!       / mean_i [[ e_u(x_i) ]]
//! ```
//!
//! where `[[.]]` is the kernel smoother over strata and
//! `xi_i = (-1)^(z+1) gamma^(z)(m_i, x_i) / (pi_z(x_i) f_{z m_i}(x_i))` with
//! `gamma^(1)(m, x) = int k(m, m0) e_(m, m0)(x) dm0` (and the mirror image
//! for `z = 0`).

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::{AxisTerm, CopulaSpec, FactoredCopula};
use crate::dataset::{
    rescale_estimate, standardize_columns, Arm, Dataset, GridSpec, PrincipalPoint, StandardizeColumns,
};
use crate::error::{Error, Result};
use crate::kernel::{Bandwidth, KernelConfig};
use crate::normal;
use crate::nuisance::{MarginalDist, NuisanceStrategy, Nuisances};
use crate::quadrature::{Integral, LineIntegrand, QuadratureConfig, Smoother, TensorIntegrand};
use crate::rng::{self, Domain};
use crate::stats;

/// Predicted treatment probabilities are clamped to `[PI_FLOOR, 1 - PI_FLOOR]`
/// inside divisions.
pub const PI_FLOOR: f64 = 1e-6;
/// Smallest principal-score density accepted in `xi`.
pub const DENSITY_FLOOR: f64 = 1e-12;
/// Smallest accepted denominator `mean_i [[e_u(x_i)]]`.
pub const DENOM_FLOOR: f64 = 1e-10;
/// Largest tolerated fraction of failed bootstrap replicates.
pub const MAX_FAILURE_RATE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityPolicy {
    /// Fail when `f_{z m_i}(x_i)` falls below the floor.
    #[default]
    Error,
    /// Raise it to the floor and count the event.
    ClampAndCount,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub kernel: KernelConfig,
    pub quad: QuadratureConfig,
    pub density_policy: DensityPolicy,
}

impl EstimatorConfig {
    pub fn new(kernel: KernelConfig, quad: QuadratureConfig) -> Self {
        EstimatorConfig {
            kernel,
            quad,
            density_policy: DensityPolicy::Error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClampCounts {
    /// Treatment probabilities raised to the overlap floor.
    pub pi: u64,
    /// Principal-score densities raised to the floor.
    pub density: u64,
    /// Copula arguments clamped away from 0 and 1.
    pub copula: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub clamp_counts: ClampCounts,
    /// Bound on the integration error of `tau`'s numerator and denominator
    /// terms, averaged over rows (largest of the three).
    pub quad_bound: f64,
    /// Integrand evaluations summed over rows.
    pub evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub u_star: PrincipalPoint,
    pub tau_hat: f64,
    /// `mean_i [[e_u(x_i)]]`.
    pub denom: f64,
    pub h: f64,
    pub n: usize,
    /// Weighted-residual part of `tau_hat`.
    pub residual_term: f64,
    /// Plug-in part of `tau_hat`, the sample version of the localized
    /// effect under the fitted nuisances.
    pub plugin_term: f64,
    pub diagnostics: Diagnostics,
}

/// The integrands for row `x`: `e_u(x)` and `(mu_1 - mu_0) e_u(x)`.
struct SurfaceIntegrand<'a> {
    copula: FactoredCopula,
    nuis: &'a dyn Nuisances,
    x: &'a [f64],
    treated: &'a dyn MarginalDist,
    control: &'a dyn MarginalDist,
    clamps: AtomicU32,
}

impl SurfaceIntegrand<'_> {
    fn axis(&self, marginal: &dyn MarginalDist, arm: Arm, ms: &[f64]) -> Vec<(AxisTerm, f64)> {
        let mut clamped = 0;
        let out = ms
            .iter()
            .map(|&m| {
                let (t, c) = self.copula.axis(marginal, m);
                clamped += c as u32;
                (t, self.nuis.outcome_mean(self.x, arm, m))
            })
            .collect();
        self.clamps.fetch_add(clamped, Ordering::Relaxed);
        out
    }
}

impl TensorIntegrand<2> for SurfaceIntegrand<'_> {
    fn eval_tensor(&self, m1s: &[f64], m0s: &[f64], out: &mut [[f64; 2]]) {
        let a = self.axis(self.treated, Arm::Treated, m1s);
        let b = self.axis(self.control, Arm::Control, m0s);
        let mut k = 0;
        for &(ta, mu1) in &a {
            for &(tb, mu0) in &b {
                let e = self.copula.combine(ta, tb);
                out[k] = [e, (mu1 - mu0) * e];
                k += 1;
            }
        }
    }
}

/// `m' -> e_(m_fixed, m')(x)` along the free axis.
struct GammaIntegrand<'a> {
    copula: FactoredCopula,
    fixed: AxisTerm,
    free: &'a dyn MarginalDist,
    clamps: AtomicU32,
}

impl LineIntegrand<1> for GammaIntegrand<'_> {
    fn eval_line(&self, ms: &[f64], out: &mut [[f64; 1]]) {
        let mut clamped = 0;
        for (o, &m) in out.iter_mut().zip(ms) {
            let (t, c) = self.copula.axis(self.free, m);
            clamped += c as u32;
            *o = [self.copula.combine(self.fixed, t)];
        }
        self.clamps.fetch_add(clamped, Ordering::Relaxed);
    }
}

fn marginals(nuis: &dyn Nuisances, x: &[f64]) -> (Box<dyn MarginalDist>, Box<dyn MarginalDist>) {
    (
        nuis.principal_marginal(x, Arm::Treated),
        nuis.principal_marginal(x, Arm::Control),
    )
}

fn gamma_with(
    nuis: &dyn Nuisances,
    smoother: &Smoother,
    treated: &dyn MarginalDist,
    control: &dyn MarginalDist,
    z: Arm,
    m: f64,
) -> Result<(Integral<1>, u32)> {
    let copula = nuis.copula().factored();
    let (fixed_marginal, free) = match z {
        Arm::Treated => (treated, control),
        Arm::Control => (control, treated),
    };
    let (fixed, c) = copula.axis(fixed_marginal, m);
    let g = GammaIntegrand {
        copula,
        fixed,
        free,
        clamps: AtomicU32::new(c as u32),
    };
    let r = smoother.smooth1d(z, m, &g)?;
    Ok((r, g.clamps.into_inner()))
}

/// `gamma^(z)(m, x)`: the kernel-weighted integral of `e_u(x)` over the
/// other arm's axis with arm `z` pinned at `m`.
pub fn gamma1(nuis: &dyn Nuisances, smoother: &Smoother, x: &[f64], z: Arm, m: f64) -> Result<Integral<1>> {
    let (t, c) = marginals(nuis, x);
    gamma_with(nuis, smoother, t.as_ref(), c.as_ref(), z, m).map(|r| r.0)
}

/// Signed weight `(-1)^(z+1) gamma^(z) / (pi_z f_{zm})` with its clamp
/// counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Xi {
    pub value: f64,
    pub bound: f64,
    pub clamps: ClampCounts,
    pub evaluations: usize,
}

#[allow(clippy::too_many_arguments)]
fn xi_with(
    nuis: &dyn Nuisances,
    smoother: &Smoother,
    policy: DensityPolicy,
    row: usize,
    x: &[f64],
    treated: &dyn MarginalDist,
    control: &dyn MarginalDist,
    z: Arm,
    m: f64,
) -> Result<Xi> {
    let mut clamps = ClampCounts::default();
    let raw_pi = nuis.treatment_prob(x, z);
    let pi = raw_pi.clamp(PI_FLOOR, 1.0 - PI_FLOOR);
    if pi != raw_pi {
        clamps.pi += 1;
    }
    let own = match z {
        Arm::Treated => treated,
        Arm::Control => control,
    };
    let mut f = own.density(m);
    if !(f >= DENSITY_FLOOR) {
        match policy {
            DensityPolicy::Error => return Err(Error::DensityUnderflow { row, density: f }),
            DensityPolicy::ClampAndCount => {
                f = DENSITY_FLOOR;
                clamps.density += 1;
            }
        }
    }
    let (gamma, cc) = gamma_with(nuis, smoother, treated, control, z, m)?;
    clamps.copula += cc as u64;
    let scale = z.sign() / (pi * f);
    Ok(Xi {
        value: gamma.value[0] * scale,
        bound: gamma.bound[0] * scale.abs(),
        clamps,
        evaluations: gamma.evaluations,
    })
}

/// `xi(x, z, m)` for a single observation.
pub fn xi1(
    nuis: &dyn Nuisances,
    smoother: &Smoother,
    policy: DensityPolicy,
    x: &[f64],
    z: Arm,
    m: f64,
) -> Result<Xi> {
    let (t, c) = marginals(nuis, x);
    xi_with(nuis, smoother, policy, 0, x, t.as_ref(), c.as_ref(), z, m)
}

struct RowTerms {
    denom: f64,
    plugin: f64,
    residual: f64,
    denom_bound: f64,
    plugin_bound: f64,
    residual_bound: f64,
    clamps: ClampCounts,
    evaluations: usize,
}

fn row_terms(
    nuis: &dyn Nuisances,
    smoother: &Smoother,
    policy: DensityPolicy,
    row: usize,
    data: &Dataset,
) -> Result<RowTerms> {
    let o = &data.observations()[row];
    let (treated, control) = marginals(nuis, &o.x);
    let surface = SurfaceIntegrand {
        copula: nuis.copula().factored(),
        nuis,
        x: &o.x,
        treated: treated.as_ref(),
        control: control.as_ref(),
        clamps: AtomicU32::new(0),
    };
    let s = smoother.smooth2d(&surface)?;
    let xi = xi_with(nuis, smoother, policy, row, &o.x, treated.as_ref(), control.as_ref(), o.z, o.m)?;
    let resid = o.y - nuis.outcome_mean(&o.x, o.z, o.m);
    let mut clamps = xi.clamps;
    clamps.copula += surface.clamps.into_inner() as u64;
    Ok(RowTerms {
        denom: s.value[0],
        plugin: s.value[1],
        residual: xi.value * resid,
        denom_bound: s.bound[0],
        plugin_bound: s.bound[1],
        residual_bound: xi.bound * resid.abs(),
        clamps,
        evaluations: s.evaluations + xi.evaluations,
    })
}

/// `tau_hat` at `u_star` on `data` (already on the estimation scale).
pub fn estimate_point(
    data: &Dataset,
    nuis: &dyn Nuisances,
    cfg: &EstimatorConfig,
    u_star: PrincipalPoint,
) -> Result<PointEstimate> {
    nuis.copula().validate()?;
    let n = data.len();
    let smoother = Smoother::new(cfg.quad, cfg.kernel, u_star, n)?;
    let rows: Vec<Result<RowTerms>> = (0..n)
        .into_par_iter()
        .map(|i| row_terms(nuis, &smoother, cfg.density_policy, i, data))
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;

    let column = |f: fn(&RowTerms) -> f64| -> f64 {
        let v: Vec<f64> = rows.iter().map(f).collect();
        stats::mean(&v)
    };
    let denom = column(|r| r.denom);
    if !(denom > DENOM_FLOOR) {
        return Err(Error::NegligibleDensity { denom });
    }
    let plugin = column(|r| r.plugin);
    let residual = column(|r| r.residual);
    let quad_bound = column(|r| r.denom_bound)
        .max(column(|r| r.plugin_bound))
        .max(column(|r| r.residual_bound));
    let mut clamps = ClampCounts::default();
    let mut evaluations = 0u64;
    for r in &rows {
        clamps.pi += r.clamps.pi;
        clamps.density += r.clamps.density;
        clamps.copula += r.clamps.copula;
        evaluations += r.evaluations as u64;
    }
    let residual_term = residual / denom;
    let plugin_term = plugin / denom;
    let tau_hat = residual_term + plugin_term;
    if !tau_hat.is_finite() {
        return Err(Error::InvalidData(format!("non-finite estimate at {u_star:?}")));
    }
    Ok(PointEstimate {
        u_star,
        tau_hat,
        denom,
        h: cfg.kernel.h(),
        n,
        residual_term,
        plugin_term,
        diagnostics: Diagnostics {
            clamp_counts: clamps,
            quad_bound,
            evaluations,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum NodeOutcome {
    Ok { estimate: PointEstimate },
    Missing { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceNode {
    pub u_star: PrincipalPoint,
    pub outcome: NodeOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceEstimate {
    pub grid: GridSpec,
    pub nodes: Vec<SurfaceNode>,
}

/// `estimate_point` at every grid node. Failed nodes are kept as missing.
pub fn estimate_surface(
    data: &Dataset,
    nuis: &dyn Nuisances,
    cfg: &EstimatorConfig,
    grid: &GridSpec,
) -> Result<SurfaceEstimate> {
    let nodes: Vec<SurfaceNode> = grid
        .nodes()
        .into_iter()
        .map(|u| SurfaceNode {
            u_star: u,
            outcome: match estimate_point(data, nuis, cfg, u) {
                Ok(estimate) => NodeOutcome::Ok { estimate },
                Err(e) => NodeOutcome::Missing { reason: e.to_string() },
            },
        })
        .collect();
    if let Some(reason) = all_missing(&nodes) {
        return Err(Error::AllNodesMissing(reason));
    }
    Ok(SurfaceEstimate { grid: *grid, nodes })
}

fn all_missing(nodes: &[SurfaceNode]) -> Option<String> {
    let mut first = None;
    for n in nodes {
        match &n.outcome {
            NodeOutcome::Ok { .. } => return None,
            NodeOutcome::Missing { reason } => {
                first.get_or_insert_with(|| reason.clone());
            }
        }
    }
    first
}

/// The full estimation pipeline: optional standardization, nuisance fit,
/// bandwidth resolution, estimation, and mapping back to original units.
/// Bootstrap replicates rerun all of it.
#[derive(Clone)]
pub struct Pipeline {
    pub strategy: Arc<dyn NuisanceStrategy>,
    pub copula: CopulaSpec,
    pub bandwidth: Bandwidth,
    pub quad: QuadratureConfig,
    pub density_policy: DensityPolicy,
    pub standardize: StandardizeColumns,
}

/// A pipeline fitted to one dataset, ready to estimate at any point.
pub struct Fitted {
    pub data: Dataset,
    pub nuisances: Arc<dyn Nuisances>,
    pub config: EstimatorConfig,
}

impl Fitted {
    /// Estimate at `u` given in original units; the result is reported in
    /// original units.
    pub fn estimate(&self, u: PrincipalPoint) -> Result<PointEstimate> {
        match self.data.standardization() {
            None => estimate_point(&self.data, self.nuisances.as_ref(), &self.config, u),
            Some(rec) => {
                let est = estimate_point(&self.data, self.nuisances.as_ref(), &self.config, rec.forward_point(u))?;
                rescale_estimate(&est, Some(rec))
            }
        }
    }
}

impl Pipeline {
    pub fn fit(&self, raw: &Dataset) -> Result<Fitted> {
        self.quad.validate()?;
        self.copula.validate()?;
        let data = if self.standardize == StandardizeColumns::NONE {
            raw.clone()
        } else {
            standardize_columns(raw, self.standardize)?.0
        };
        let nuisances = self.strategy.fit(&data, self.copula)?;
        let kernel = self.bandwidth.resolve(data.len())?;
        Ok(Fitted {
            data,
            nuisances,
            config: EstimatorConfig {
                kernel,
                quad: self.quad,
                density_policy: self.density_policy,
            },
        })
    }

    /// Fits once and estimates at every point; per-point failures are kept.
    pub fn estimate(&self, raw: &Dataset, points: &[PrincipalPoint]) -> Result<Vec<Result<PointEstimate>>> {
        let fitted = self.fit(raw)?;
        Ok(points.iter().map(|&u| fitted.estimate(u)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    #[default]
    Percentile,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    pub method: CiMethod,
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::Config("bootstrap needs at least 2 replicates".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub se: f64,
    pub ci: (f64, f64),
    /// Successful replicate estimates in replicate order.
    pub replicates: Vec<f64>,
    pub seed: u64,
    pub failed: usize,
}

impl BootstrapResult {
    /// `center +- z_(1 - alpha/2) se`.
    pub fn normal_interval(&self, center: f64, alpha: f64) -> (f64, f64) {
        let z = normal::isf(alpha / 2.0);
        (center - z * self.se, center + z * self.se)
    }
}

/// Resamples rows `cfg.replicates` times, reruns the whole pipeline on each
/// resample and summarizes the estimates at every point. Replicate `r`
/// draws from a stream derived from `(seed, r)`, so results do not depend
/// on scheduling.
pub fn bootstrap(
    raw: &Dataset,
    pipeline: &Pipeline,
    points: &[PrincipalPoint],
    cfg: &BootstrapConfig,
) -> Result<Vec<Result<BootstrapResult>>> {
    cfg.validate()?;
    let n = raw.len();
    let per_replicate: Vec<Vec<Result<f64, &'static str>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(rng::derive_seed(cfg.seed, Domain::Bootstrap, r as u64));
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let est = raw.select(&idx).and_then(|d| pipeline.estimate(&d, points));
            match est {
                Ok(v) => v
                    .into_iter()
                    .map(|e| e.map(|e| e.tau_hat).map_err(|e| e.kind()))
                    .collect(),
                Err(e) => vec![Err(e.kind()); points.len()],
            }
        })
        .collect();

    Ok((0..points.len())
        .map(|p| {
            let mut values = Vec::with_capacity(cfg.replicates);
            let mut reasons: BTreeMap<&'static str, usize> = BTreeMap::new();
            for rep in &per_replicate {
                match &rep[p] {
                    Ok(v) => values.push(*v),
                    Err(kind) => *reasons.entry(kind).or_default() += 1,
                }
            }
            let failed = cfg.replicates - values.len();
            if failed as f64 > MAX_FAILURE_RATE * cfg.replicates as f64 || values.len() < 2 {
                let breakdown = reasons
                    .iter()
                    .map(|(k, c)| format!("{c} x {k}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                return Err(Error::BootstrapFailures {
                    failed,
                    total: cfg.replicates,
                    breakdown,
                });
            }
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let ci = (
                stats::quantile_sorted(&sorted, cfg.alpha / 2.0),
                stats::quantile_sorted(&sorted, 1.0 - cfg.alpha / 2.0),
            );
            Ok(BootstrapResult {
                se: stats::sample_sd(&values),
                ci,
                replicates: values,
                seed: cfg.seed,
                failed,
            })
        })
        .collect())
}

/// Single-point convenience wrapper around [`bootstrap`].
pub fn bootstrap_point(
    raw: &Dataset,
    pipeline: &Pipeline,
    u_star: PrincipalPoint,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult> {
    bootstrap(raw, pipeline, &[u_star], cfg)?
        .pop()
        .expect("one point requested")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::CopulaSpec;
    use crate::dataset::Observation;
    use crate::nuisance::NormalMarginal;
    use crate::quadrature::QuadMode;

    /// Hand-specified nuisances for exact checks.
    #[derive(Clone, Copy)]
    struct Stub {
        pi1: f64,
        mu_shift: f64,
        m_slope: f64,
        copula: CopulaSpec,
    }

    impl Stub {
        fn new(pi1: f64, copula: CopulaSpec) -> Self {
            Stub {
                pi1,
                mu_shift: 1.0,
                m_slope: 0.3,
                copula,
            }
        }
    }

    impl Nuisances for Stub {
        fn treatment_prob(&self, _x: &[f64], z: Arm) -> f64 {
            match z {
                Arm::Treated => self.pi1,
                Arm::Control => 1.0 - self.pi1,
            }
        }
        fn outcome_mean(&self, x: &[f64], z: Arm, m: f64) -> f64 {
            x[0] + self.m_slope * m + self.mu_shift * z.indicator()
        }
        fn principal_marginal(&self, x: &[f64], _z: Arm) -> Box<dyn MarginalDist> {
            Box::new(NormalMarginal { mean: 0.2 * x[0], sd: 1.0 })
        }
        fn copula(&self) -> &CopulaSpec {
            &self.copula
        }
    }

    fn smoother(u: PrincipalPoint) -> Smoother {
        Smoother::new(QuadratureConfig::adaptive(1e-11), KernelConfig::new(0.3).unwrap(), u, 100).unwrap()
    }

    #[test]
    fn xi_far_stratum_is_zero() {
        let s = Stub::new(0.5, CopulaSpec::INDEPENDENCE);
        let sm = smoother(PrincipalPoint::new(30.0, 0.0));
        let xi = xi1(&s, &sm, DensityPolicy::Error, &[0.0], Arm::Treated, 0.0).unwrap();
        assert_eq!(xi.value, 0.0);
    }

    #[test]
    fn xi_is_antisymmetric_under_symmetric_marginals() {
        let s = Stub::new(0.5, CopulaSpec::gaussian(0.4).unwrap());
        let sm = smoother(PrincipalPoint::new(0.1, 0.1));
        let a = xi1(&s, &sm, DensityPolicy::Error, &[0.5], Arm::Treated, 0.3).unwrap();
        let b = xi1(&s, &sm, DensityPolicy::Error, &[0.5], Arm::Control, 0.3).unwrap();
        assert!(a.value > 0.0);
        assert!((a.value + b.value).abs() < 1e-12 * a.value.abs());
    }

    #[test]
    fn xi_matches_hand_arithmetic() {
        let s = Stub::new(0.3, CopulaSpec::INDEPENDENCE);
        let u = PrincipalPoint::new(0.2, -0.1);
        let sm = smoother(u);
        let (x, m) = (0.5, 0.4);
        let xi = xi1(&s, &sm, DensityPolicy::Error, &[x], Arm::Control, m).unwrap();
        // Independence: gamma = k0(m) * f0(m) * int k1(m1) f1(m1) dm1, and the
        // last factor is a normal density of m1* with variance 1 + h^2.
        let h = 0.3;
        let f0 = normal::pdf_scaled(m, 0.1, 1.0);
        let gamma = normal::pdf_scaled(m, u.m0, h) * f0 * normal::pdf_scaled(u.m1, 0.1, (1.0f64 + h * h).sqrt());
        let want = -gamma / (0.7 * f0);
        assert!((xi.value - want).abs() < 1e-10 * want.abs(), "{} vs {want}", xi.value);
    }

    #[test]
    fn density_floor_policies() {
        let s = Stub::new(0.5, CopulaSpec::INDEPENDENCE);
        let sm = smoother(PrincipalPoint::new(0.0, 0.0));
        let err = xi1(&s, &sm, DensityPolicy::Error, &[0.0], Arm::Treated, 9.0).unwrap_err();
        assert!(err.to_string().starts_with("principal-score density underflow at row"));
        let ok = xi1(&s, &sm, DensityPolicy::ClampAndCount, &[0.0], Arm::Treated, 9.0).unwrap();
        assert_eq!(ok.clamps.density, 1);
    }

    fn fixture(n: usize, stub: &Stub) -> Dataset {
        let rows = (0..n)
            .map(|i| {
                let x = ((i * 37) % 101) as f64 / 50.0 - 1.0;
                let z = if i % 3 == 0 { Arm::Treated } else { Arm::Control };
                let m = ((i * 53) % 97) as f64 / 40.0 - 1.2;
                Observation {
                    y: stub.outcome_mean(&[x], z, m),
                    x: vec![x],
                    z,
                    m,
                }
            })
            .collect();
        Dataset::new(rows).unwrap()
    }

    #[test]
    fn constant_contrast_is_recovered_exactly() {
        // With no slope in m, mu_1 - mu_0 is the constant shift and every
        // residual is zero.
        let stub = Stub {
            mu_shift: 1.7,
            m_slope: 0.0,
            ..Stub::new(0.4, CopulaSpec::gaussian(0.3).unwrap())
        };
        let data = fixture(60, &stub);
        for mode in [QuadMode::Grid, QuadMode::Adaptive] {
            let cfg = EstimatorConfig::new(
                KernelConfig::new(0.4).unwrap(),
                QuadratureConfig {
                    mode,
                    ..QuadratureConfig::default()
                },
            );
            let est = estimate_point(&data, &stub, &cfg, PrincipalPoint::new(0.2, -0.3)).unwrap();
            assert_eq!(est.residual_term, 0.0);
            assert!((est.tau_hat - 1.7).abs() < 1e-12, "{mode:?}: {}", est.tau_hat);
        }
    }

    #[test]
    fn empty_stratum_is_negligible() {
        let stub = Stub::new(0.5, CopulaSpec::INDEPENDENCE);
        let data = fixture(30, &stub);
        let cfg = EstimatorConfig::new(KernelConfig::new(0.3).unwrap(), QuadratureConfig::adaptive(1e-9));
        let err = estimate_point(&data, &stub, &cfg, PrincipalPoint::new(50.0, -50.0)).unwrap_err();
        assert!(matches!(err, Error::NegligibleDensity { .. }));
        assert!(err.to_string().contains("negligible estimated density"));
    }

    #[test]
    fn bootstrap_config_is_checked() {
        let bad = BootstrapConfig {
            replicates: 1,
            alpha: 0.05,
            seed: 1,
            method: CiMethod::Percentile,
        };
        assert!(bad.validate().is_err());
        assert!(BootstrapConfig { replicates: 10, alpha: 1.0, ..bad }.validate().is_err());
    }
}
