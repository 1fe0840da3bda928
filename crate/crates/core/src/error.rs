use thiserror::Error;

/// Every failure the library can report.
///
/// Variant names double as the diagnostic names printed by the CLI, so keep
/// them stable.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("metric is not positive definite at r = {r:.6e} (regularity radius exceeded)")]
    NonPositiveDefinite { r: f64 },
    #[error("grid mismatch: expected {expected}, got {got}")]
    GridMismatch { expected: String, got: String },
    #[error("point leaves the chart: r = {r:.6e} >= r_max = {r_max:.6e}")]
    OutOfChart { r: f64, r_max: f64 },
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("resonant radius: small divisor {small_divisor:.3e} <= threshold {threshold:.3e} at rho = {rho}")]
    Resonant { rho: f64, small_divisor: f64, threshold: f64 },
    #[error("input has content in a block the solver does not accept: {0}")]
    BlockViolation(String),
    #[error("geodesic Jacobi operator is degenerate: smallest singular value {sigma_min:.3e} <= {threshold:.3e}")]
    DegenerateGeodesic { sigma_min: f64, threshold: f64 },
    #[error("iterate left the ball: norm {norm:.3e} > radius {radius:.3e}")]
    BallEscape { norm: f64, radius: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("foliation violated between rho = {rho_a} and rho = {rho_b}: {detail}")]
    FoliationViolation { rho_a: f64, rho_b: f64, detail: String },
    #[error("solve result did not converge; cannot assemble the Jacobi operator")]
    NotConverged,
    #[error("operator has {nullity} near-zero eigenvalues; index is not well defined")]
    NullityPresent { nullity: usize },
    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),
    #[error("model parse error (line {line}): {msg}")]
    ModelParse { line: usize, msg: String },
    #[error("curvature table violates algebraic symmetry: {0}")]
    CurvatureSymmetry(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    /// Short stable name of the variant.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NonPositiveDefinite { .. } => "NonPositiveDefinite",
            Error::GridMismatch { .. } => "GridMismatch",
            Error::OutOfChart { .. } => "OutOfChart",
            Error::Degenerate(_) => "Degenerate",
            Error::Resonant { .. } => "Resonant",
            Error::BlockViolation(_) => "BlockViolation",
            Error::DegenerateGeodesic { .. } => "DegenerateGeodesic",
            Error::BallEscape { .. } => "BallEscape",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::FoliationViolation { .. } => "FoliationViolation",
            Error::NotConverged => "NotConverged",
            Error::NullityPresent { .. } => "NullityPresent",
            Error::QuadratureFailure(_) => "QuadratureFailure",
            Error::ModelParse { .. } => "ModelParse",
            Error::CurvatureSymmetry(_) => "CurvatureSymmetry",
            Error::InvalidInput(_) => "InvalidInput",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
