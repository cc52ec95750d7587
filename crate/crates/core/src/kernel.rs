//! The Gaussian product localization kernel
//! `k(u) = h^-2 phi((m1 - m1*) / h) phi((m0 - m0*) / h)` and bandwidth rules.

use serde::{Deserialize, Serialize};

use crate::dataset::{Arm, PrincipalPoint};
use crate::error::{Error, Result};
use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    h: f64,
}

impl KernelConfig {
    pub fn new(h: f64) -> Result<Self> {
        if h > 0.0 && h.is_finite() {
            Ok(KernelConfig { h })
        } else {
            Err(Error::Config(format!("bandwidth must be positive and finite, got {h}")))
        }
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// One-dimensional factor `h^-1 phi((m - center) / h)`.
    #[inline]
    pub fn axis_weight(&self, center: f64, m: f64) -> f64 {
        normal::pdf((m - center) / self.h) / self.h
    }
}

pub fn kernel_weight(cfg: &KernelConfig, u_star: PrincipalPoint, u: PrincipalPoint) -> f64 {
    cfg.axis_weight(u_star.m1, u.m1) * cfg.axis_weight(u_star.m0, u.m0)
}

/// The kernel integrated over the free axis, with `fixed_axis` pinned at `m`.
pub fn kernel_marginal(cfg: &KernelConfig, u_star: PrincipalPoint, fixed_axis: Arm, m: f64) -> f64 {
    cfg.axis_weight(u_star.coord(fixed_axis), m)
}

/// How the bandwidth is chosen for a sample of size `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum Bandwidth {
    Fixed { h: f64 },
    /// `scale * n^(-1/6)`, default scale 0.15.
    Optimal { scale: f64 },
    /// `scale * n^(-1/5)`, default scale 0.1.
    Undersmooth { scale: f64 },
}

impl Bandwidth {
    pub const OPTIMAL: Bandwidth = Bandwidth::Optimal { scale: 0.15 };
    pub const UNDERSMOOTH: Bandwidth = Bandwidth::Undersmooth { scale: 0.1 };

    pub fn resolve(&self, n: usize) -> Result<KernelConfig> {
        let n = n as f64;
        KernelConfig::new(match *self {
            Bandwidth::Fixed { h } => h,
            Bandwidth::Optimal { scale } => scale * n.powf(-1.0 / 6.0),
            Bandwidth::Undersmooth { scale } => scale * n.powf(-0.2),
        })
    }
}
