//! Kernel-weighted integration over principal strata.
//!
//! Two engines share one integrand interface:
//!
//! * [`grid`]: midpoint rule on a uniform `N x N` grid over a square of
//!   edge `C1 h sqrt(ln n)` centered at `u*`, with
//!   `N = ceil((ln n)^(1 + eps/2) sqrt(n))`. Cost is fixed in advance and an
//!   error bound (truncation plus a variation-based grid term) is reported.
//! * [`adaptive`]: globally adaptive tensor Gauss–Kronrod (G7/K15) on
//!   `u* +- 10h` to an absolute tolerance. Used as a test oracle and as a
//!   faster engine for Monte-Carlo studies.
//!
//! Integrands are evaluated on tensor products of axis nodes so callers can
//! hoist per-axis work out of the inner loop.

pub mod adaptive;
pub mod grid;

use serde::{Deserialize, Serialize};

use crate::dataset::{Arm, PrincipalPoint};
use crate::error::{Error, Result};
use crate::kernel::KernelConfig;

pub use adaptive::{adaptive_oracle_1d, adaptive_oracle_2d};
pub use grid::{smooth1d, smooth2d};

/// A `K`-vector valued integrand evaluated on tensor grids.
pub trait TensorIntegrand<const K: usize>: Sync {
    /// Writes `g(m1s[i], m0s[j])` to `out[i * m0s.len() + j]`.
    fn eval_tensor(&self, m1s: &[f64], m0s: &[f64], out: &mut [[f64; K]]);
}

/// A `K`-vector valued integrand along one axis.
pub trait LineIntegrand<const K: usize>: Sync {
    fn eval_line(&self, ms: &[f64], out: &mut [[f64; K]]);
}

/// Adapts a pointwise closure to [`TensorIntegrand`].
pub struct PointFn<F>(pub F);

impl<F: Fn(PrincipalPoint) -> f64 + Sync> TensorIntegrand<1> for PointFn<F> {
    fn eval_tensor(&self, m1s: &[f64], m0s: &[f64], out: &mut [[f64; 1]]) {
        let mut k = 0;
        for &a in m1s {
            for &b in m0s {
                out[k] = [(self.0)(PrincipalPoint::new(a, b))];
                k += 1;
            }
        }
    }
}

/// Adapts a scalar closure to [`LineIntegrand`].
pub struct ScalarFn<F>(pub F);

impl<F: Fn(f64) -> f64 + Sync> LineIntegrand<1> for ScalarFn<F> {
    fn eval_line(&self, ms: &[f64], out: &mut [[f64; 1]]) {
        for (o, &m) in out.iter_mut().zip(ms) {
            *o = [(self.0)(m)];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadMode {
    Grid,
    Adaptive,
}

impl std::str::FromStr for QuadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(QuadMode::Grid),
            "adaptive" => Ok(QuadMode::Adaptive),
            other => Err(Error::Config(format!(
                "unknown quadrature mode {other:?}; expected grid or adaptive"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Truncation constant; the square has edge `c1 h sqrt(ln n)`.
    pub c1: f64,
    /// Grid-size exponent slack.
    pub epsilon: f64,
    /// Explicit node count per axis, replacing the `n`-driven rule.
    pub n_override: Option<usize>,
    pub mode: QuadMode,
    /// Absolute tolerance of the adaptive engine.
    pub tol: f64,
    /// Subdivision budget of the adaptive engine.
    pub max_subdivisions: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            c1: 4.0,
            epsilon: 0.5,
            n_override: None,
            mode: QuadMode::Grid,
            tol: 1e-9,
            max_subdivisions: 20_000,
        }
    }
}

impl QuadratureConfig {
    pub fn adaptive(tol: f64) -> Self {
        QuadratureConfig {
            mode: QuadMode::Adaptive,
            tol,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1 >= 2.0 * std::f64::consts::SQRT_2) {
            return Err(Error::Config(format!("quad c1 must be at least 2*sqrt(2), got {}", self.c1)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("quad epsilon must be positive, got {}", self.epsilon)));
        }
        if let Some(n) = self.n_override {
            if n < 8 {
                return Err(Error::Config(format!("quad node override must be at least 8, got {n}")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("quad tolerance must be positive, got {}", self.tol)));
        }
        if self.max_subdivisions == 0 {
            return Err(Error::Config("quad subdivision budget must be positive".into()));
        }
        Ok(())
    }

    fn log_n(n: usize) -> f64 {
        (n.max(3) as f64).ln()
    }

    /// Nodes per axis of the 2-D grid.
    pub fn nodes_2d(&self, n: usize) -> usize {
        self.n_override.unwrap_or_else(|| {
            let v = Self::log_n(n).powf(1.0 + self.epsilon / 2.0) * (n as f64).sqrt();
            (v.ceil() as usize).max(8)
        })
    }

    /// Nodes of the 1-D grid.
    pub fn nodes_1d(&self, n: usize) -> usize {
        self.n_override.unwrap_or_else(|| {
            let v = Self::log_n(n).powf(1.0 + self.epsilon) * n as f64;
            (v.ceil() as usize).max(8)
        })
    }

    /// Full edge length `c1 h sqrt(ln n)` of the truncation window.
    pub fn window(&self, h: f64, n: usize) -> f64 {
        self.c1 * h * Self::log_n(n).sqrt()
    }
}

/// Integral estimate with a per-component error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral<const K: usize> {
    pub value: [f64; K],
    pub bound: [f64; K],
    pub evaluations: usize,
}

impl<const K: usize> Integral<K> {
    pub fn max_bound(&self) -> f64 {
        self.bound.iter().fold(0.0, |a, &b| a.max(b))
    }
}

/// `[[ g ]]` at a fixed `u*`, dispatching on the configured engine.
#[derive(Debug, Clone, Copy)]
pub struct Smoother {
    pub cfg: QuadratureConfig,
    pub kernel: KernelConfig,
    pub u_star: PrincipalPoint,
    pub n: usize,
}

impl Smoother {
    pub fn new(cfg: QuadratureConfig, kernel: KernelConfig, u_star: PrincipalPoint, n: usize) -> Result<Self> {
        cfg.validate()?;
        if !(u_star.m1.is_finite() && u_star.m0.is_finite()) {
            return Err(Error::Config("u* must be finite".into()));
        }
        Ok(Smoother {
            cfg,
            kernel,
            u_star,
            n,
        })
    }

    /// `int g(u) k(u) du` over strata.
    pub fn smooth2d<const K: usize, G: TensorIntegrand<K>>(&self, g: &G) -> Result<Integral<K>> {
        match self.cfg.mode {
            QuadMode::Grid => grid::grid2d(&self.cfg, &self.kernel, self.u_star, self.n, g),
            QuadMode::Adaptive => adaptive::adaptive2d(
                &self.kernel,
                self.u_star,
                g,
                self.cfg.tol,
                self.cfg.max_subdivisions,
            ),
        }
    }

    /// `int g(m) k(u) dm` over the free axis, with `fixed_axis` pinned at
    /// `m_fixed`.
    pub fn smooth1d<const K: usize, G: LineIntegrand<K>>(
        &self,
        fixed_axis: Arm,
        m_fixed: f64,
        g: &G,
    ) -> Result<Integral<K>> {
        match self.cfg.mode {
            QuadMode::Grid => grid::grid1d(&self.cfg, &self.kernel, self.u_star, self.n, fixed_axis, m_fixed, g),
            QuadMode::Adaptive => adaptive::adaptive1d(
                &self.kernel,
                self.u_star,
                fixed_axis,
                m_fixed,
                g,
                self.cfg.tol,
                self.cfg.max_subdivisions,
            ),
        }
    }
}

pub(crate) fn check_finite<const K: usize>(v: &[f64; K], m1: f64, m0: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteIntegrand { m1, m0 })
    }
}
