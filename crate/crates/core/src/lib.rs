//! Principal causal effects over continuous principal strata.
//!
//! The estimand is the average effect of a binary treatment on an outcome
//! within the stratum `U = (M1, M0)` of units whose intermediate variable
//! would be `m1` under treatment and `m0` under control. Because `M1` and
//! `M0` are never observed together, their dependence is supplied as a
//! copula sensitivity model, and the effect is localized around a stratum
//! `u*` with a Gaussian kernel of bandwidth `h`.
//!
//! ```
//! use pce_core::prelude::*;
//!
//! let (data, _) = gen_synthetic(SyntheticVariant::P1, 400, 7).unwrap();
//! let pipeline = Pipeline {
//!     strategy: std::sync::Arc::new(ParametricStrategy),
//!     copula: CopulaSpec::gaussian(0.25).unwrap(),
//!     bandwidth: Bandwidth::Fixed { h: 0.4 },
//!     quad: QuadratureConfig::adaptive(1e-8),
//!     density_policy: DensityPolicy::Error,
//!     standardize: StandardizeColumns::NONE,
//! };
//! let est = pipeline.fit(&data).unwrap().estimate(PrincipalPoint::new(1.0, 0.0)).unwrap();
//! assert!(est.tau_hat.is_finite());
//! ```

// `!(a > b)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod copula;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod kernel;
pub mod normal;
pub mod nuisance;
pub mod quadrature;
pub mod rng;
pub mod simulation;
pub mod stats;

pub use error::{Error, Result};

/// The types most programs need.
pub mod prelude {
    pub use crate::copula::{CopulaFamily, CopulaSpec};
    pub use crate::dataset::{
        standardize, Arm, Dataset, GridSpec, Observation, PrincipalPoint, StandardizeColumns,
    };
    pub use crate::error::{Error, Result};
    pub use crate::estimator::{
        bootstrap, bootstrap_point, estimate_point, estimate_surface, BootstrapConfig, BootstrapResult,
        CiMethod, DensityPolicy, EstimatorConfig, Pipeline, PointEstimate,
    };
    pub use crate::kernel::{Bandwidth, KernelConfig};
    pub use crate::nuisance::{FittedNuisances, NuisanceStrategy, Nuisances, ParametricStrategy};
    pub use crate::quadrature::{QuadMode, QuadratureConfig};
    pub use crate::simulation::{gen_benchmark, gen_synthetic, BenchmarkSetting, SyntheticVariant};
}
