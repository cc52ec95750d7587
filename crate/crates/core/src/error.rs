use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("csv error at row {row}, column {column}: {message}")]
    Csv {
        row: usize,
        column: String,
        message: String,
    },

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("perfect separation in treatment model (coefficient norm {norm:.3e}, divergence limit {limit:.0e}); consider a ridge-penalized fit")]
    Separation { norm: f64, limit: f64 },

    #[error("treatment model did not converge in {iterations} IRLS steps (gradient norm {gradient_norm:.3e})")]
    NoConvergence {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("rank-deficient design in {model}: collinear columns {columns:?}")]
    RankDeficient { model: String, columns: Vec<String> },

    #[error("degenerate principal-score fit: residual variance {sigma2:.3e} is numerically zero")]
    DegeneratePrincipalScore { ell: Vec<f64>, sigma2: f64 },

    #[error("copula argument outside (0,1): ({u}, {v})")]
    CopulaDomain { u: f64, v: f64 },

    #[error("principal-score density underflow at row {row} (density {density:.3e})")]
    DensityUnderflow { row: usize, density: f64 },

    #[error("non-finite integrand value at grid point ({m1}, {m0})")]
    NonFiniteIntegrand { m1: f64, m0: f64 },

    #[error("subdivision budget exhausted after {subdivisions} subdivisions: best estimate {estimate:?}, achieved error {error:.3e}")]
    QuadratureBudget {
        estimate: Vec<f64>,
        error: f64,
        subdivisions: usize,
    },

    #[error("stratum u* has negligible estimated density ({denom:.3e}); widen h or move u*")]
    NegligibleDensity { denom: f64 },

    #[error("every grid node failed; first reason: {0}")]
    AllNodesMissing(String),

    #[error("{failed} of {total} bootstrap replicates failed (limit 20%): {breakdown}")]
    BootstrapFailures {
        failed: usize,
        total: usize,
        breakdown: String,
    },

    #[error("missing standardization record")]
    MissingRecord,

    #[error("oracle denominator underflow ({0:.3e})")]
    OracleUnderflow(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Short stable label for grouping failures.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidData(_) => "invalid data",
            Error::Csv { .. } => "csv",
            Error::ZeroVariance(_) => "zero variance",
            Error::Config(_) => "configuration",
            Error::Separation { .. } => "separation",
            Error::NoConvergence { .. } => "no convergence",
            Error::RankDeficient { .. } => "rank deficient",
            Error::DegeneratePrincipalScore { .. } => "degenerate principal score",
            Error::CopulaDomain { .. } => "copula domain",
            Error::DensityUnderflow { .. } => "density underflow",
            Error::NonFiniteIntegrand { .. } => "non-finite integrand",
            Error::QuadratureBudget { .. } => "quadrature budget",
            Error::NegligibleDensity { .. } => "negligible density",
            Error::AllNodesMissing(_) => "all nodes missing",
            Error::BootstrapFailures { .. } => "bootstrap failures",
            Error::MissingRecord => "missing record",
            Error::OracleUnderflow(_) => "oracle underflow",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
