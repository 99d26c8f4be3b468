//! Underdetermined direction-of-arrival estimation on sparse (coprime) linear
//! arrays with off-grid sparse Bayesian learning under a generalized double
//! Pareto prior.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the `*F64`
//! aliases below name the double-precision instantiations used by the
//! harness and the command-line front end.

// NaN-rejecting guards are written as `!(x > 0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod peaks;
pub mod sbl;
pub mod scalar;
pub mod sim;

pub use array::{
    build_dictionary, coprime_positions, steering_derivative, steering_vector, uniform_grid,
    ArrayGeometry, GridDictionary,
};
pub use error::{DoaError, Result};
pub use estimator::{estimate_doa, EstimationResult, EstimatorConfig};
pub use harness::{
    match_estimates, rmse, run_sweep, run_trial, ExperimentSetup, SweepRow, SweepSpec,
    SweepVariable, TrialResult,
};
pub use peaks::{find_peaks, refine_peak, PeakCluster, RefinedPeak};
pub use sbl::{run_gdp_ogsbl, GdpConfig, SblRun, SblState};
pub use scalar::{Cx, Real};
pub use sim::{generate_sources, simulate_snapshots, Scenario, SnapshotMatrix, SourceMode};

pub type ArrayGeometryF64 = ArrayGeometry<f64>;
pub type GridDictionaryF64 = GridDictionary<f64>;
pub type ScenarioF64 = Scenario<f64>;
pub type SnapshotMatrixF64 = SnapshotMatrix<f64>;
pub type GdpConfigF64 = GdpConfig<f64>;
pub type SblStateF64 = SblState<f64>;
pub type EstimatorConfigF64 = EstimatorConfig<f64>;
pub type EstimationResultF64 = EstimationResult<f64>;
pub type ExperimentSetupF64 = ExperimentSetup<f64>;
pub type TrialResultF64 = TrialResult<f64>;

pub type ArrayGeometryF32 = ArrayGeometry<f32>;
pub type GridDictionaryF32 = GridDictionary<f32>;
pub type GdpConfigF32 = GdpConfig<f32>;
pub type SblStateF32 = SblState<f32>;
