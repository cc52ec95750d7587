//! Output records.

use serde::Serialize;
use serde_json::Value;

use pce_core::estimator::ClampCounts;
use pce_core::prelude::*;
use pce_core::simulation::{PointSummary, RoundRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    /// Estimated, but the bootstrap interval could not be formed.
    Partial,
    Missing,
}

/// One stratum of a `fit` report. Fields that could not be computed are null.
#[derive(Debug, Clone, Serialize)]
pub struct PointReport {
    pub u_star: [f64; 2],
    pub status: Status,
    pub tau_hat: Option<f64>,
    pub denom: Option<f64>,
    pub h: Option<f64>,
    pub se: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub n: usize,
    pub clamp_counts: Option<ClampCounts>,
    pub quad_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_failed: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl PointReport {
    pub fn missing(u: PrincipalPoint, n: usize, reason: String) -> Self {
        PointReport {
            u_star: [u.m1, u.m0],
            status: Status::Missing,
            tau_hat: None,
            denom: None,
            h: None,
            se: None,
            ci: None,
            n,
            clamp_counts: None,
            quad_bound: None,
            bootstrap_failed: None,
            reason: Some(reason),
        }
    }

    pub fn estimated(e: &PointEstimate) -> Self {
        PointReport {
            u_star: [e.u_star.m1, e.u_star.m0],
            status: Status::Ok,
            tau_hat: Some(e.tau_hat),
            denom: Some(e.denom),
            h: Some(e.h),
            se: None,
            ci: None,
            n: e.n,
            clamp_counts: Some(e.diagnostics.clamp_counts),
            quad_bound: Some(e.diagnostics.quad_bound),
            bootstrap_failed: None,
            reason: None,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub config: Value,
    pub points: Vec<PointReport>,
}

/// A row of the surface CSV.
#[derive(Debug, Serialize)]
pub struct SurfaceRow {
    pub m1: f64,
    pub m0: f64,
    pub tau_hat: Option<f64>,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub status: Status,
}

impl From<&PointReport> for SurfaceRow {
    fn from(p: &PointReport) -> Self {
        SurfaceRow {
            m1: p.u_star[0],
            m0: p.u_star[1],
            tau_hat: p.tau_hat,
            se: p.se,
            ci_lo: p.ci.map(|c| c[0]),
            ci_hi: p.ci.map(|c| c[1]),
            status: p.status,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct StudyReport<'a> {
    pub config: Value,
    pub summaries: &'a [PointSummary],
    pub records: &'a [RoundRecord],
}

#[derive(Debug, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub h: f64,
    pub nodes_2d: usize,
    pub nodes_1d: usize,
    pub window: f64,
    pub evaluations: u64,
    pub quad_bound: f64,
    pub tau_hat: f64,
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub config: Value,
    pub runs: Vec<BenchRow>,
}
