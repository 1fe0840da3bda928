//! Constant-mean-curvature tubes around a closed geodesic.
//!
//! The crate builds, for a closed geodesic `Γ` in a Riemannian manifold
//! described by its curvature along `Γ` ([`model::ModelMetric`]), the
//! CMC hypersurfaces `T_ρ(w, Φ)` that shrink onto `Γ`, for radii in the gap
//! windows `I_k` that avoid the resonances of the fibre-constant mode. It
//! also computes Morse indices of those leaves, the exact bifurcation
//! spectrum of the flat torus, and the measure-theoretic limits that force a
//! condensation set to be minimal.
//!
//! ```
//! use cmc_tubes::model::ModelMetric;
//! use cmc_tubes::solver::{fixed_point_solve, gap_intervals, SolverConfig};
//!
//! let model = ModelMetric::curved_toy();
//! let window = gap_intervals(2, model.lambda_len(), 5, 5, 0.0).unwrap()[0];
//! let leaf = fixed_point_solve(&model, window.midpoint(), &SolverConfig::default()).unwrap();
//! assert!(leaf.residual_sup <= 1e-9);
//! ```

pub mod error;
pub mod fit;
pub mod jacobi;
pub mod measure;
pub mod model;
pub mod modes;
pub mod quadrature;
pub mod scalar;
pub mod solver;
pub mod spectral;
pub mod spectrum;
pub mod tube;

pub use error::{Error, Result};
pub use model::{ExactModel, FermiPoint, ModelMetric};
pub use solver::{fixed_point_solve, gap_intervals, GapInterval, SolveResult, SolverConfig};
pub use spectrum::SpectrumReport;
pub use tube::TubeConfiguration;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model-metric.md")]
    mod model_metric {}
    #[doc = include_str!("../../../book/src/modes.md")]
    mod modes {}
    #[doc = include_str!("../../../book/src/tube-geometry.md")]
    mod tube_geometry {}
    #[doc = include_str!("../../../book/src/jacobi-solvers.md")]
    mod jacobi_solvers {}
    #[doc = include_str!("../../../book/src/cmc-solver.md")]
    mod cmc_solver {}
    #[doc = include_str!("../../../book/src/spectral-index.md")]
    mod spectral_index {}
    #[doc = include_str!("../../../book/src/measure-limits.md")]
    mod measure_limits {}
}
