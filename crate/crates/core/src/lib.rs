//! Operator-loop (worm) path-integral quantum Monte Carlo for stoquastic
//! XY Hamiltonians
//!
//!   H = Σ_{i<j} (−a_ij X_iX_j + b_ij Y_iY_j) + Σ_i d_i Z_i,
//!   |b_ij| ≤ a_ij ≤ 1/2,  |d_i| ≤ 1.
//!
//! The partition function Z = Tr[e^{−βH}] is approximated by a Trotterized
//! trace over closed worldline configurations and estimated to multiplicative
//! precision by a telescoping product of ratio observables over a β grid,
//! each ratio sampled with a worm (two-head) Markov chain that is exactly
//! detailed-balanced by construction.
//!
//! Module map:
//! - [`hamiltonian`]: coefficient tables, validation, Trotter schedules,
//!   single-operator matrix elements.
//! - [`worldline`]: leg-bit configurations, worm heads, weights, and the
//!   loop/string decomposition of configuration differences.
//! - [`chain`]: the operator-loop update Markov chain (junction selection,
//!   heat-bath moves, laziness) and the binary step-trace format.
//! - [`estimator`]: the counting-to-sampling telescoping estimator.
//! - [`oracle`]: exact desk-scale ground truth (dense diagonalization,
//!   exhaustive configuration enumeration, explicit transition matrices,
//!   spectral gaps).
//! - [`diagnostics`]: autocorrelation, exact total-variation decay, sector
//!   occupancy monitoring.
//!
//! ```
//! use wormline::estimator::{estimate_partition_function, EstimatorParams};
//! use wormline::hamiltonian::{FieldTerm, XYHamiltonian};
//!
//! // H = Z_0, so Z(beta) = 2 cosh(beta)
//! let h = XYHamiltonian { n: 1, pairs: vec![], fields: vec![FieldTerm { i: 0, d: 1.0 }] };
//! let res = estimate_partition_function(&h, 1.0, 0.25, &EstimatorParams::default(), 7).unwrap();
//! assert!((res.log_z - (2.0 * 1.0f64.cosh()).ln()).abs() <= 0.25);
//! ```

// Parameter guards use `!(x > 0.0)` so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod diagnostics;
pub mod estimator;
pub mod hamiltonian;
pub mod oracle;
pub mod worldline;

mod error;

pub use chain::{Chain, ChainParams, Junction, MoveKind, RunStats, StepRecord};
pub use error::{Error, Result};
pub use estimator::{EstimateResult, EstimatorParams, EstimatorSchedule, RatioEstimate};
pub use hamiltonian::{
    FieldTerm, OpKind, OperatorDescriptor, OperatorSchedule, PairTerm, ValidationReport,
    XYHamiltonian,
};
pub use oracle::{EnumeratedSpace, SpectralOutcome, TransitionMatrix};
pub use worldline::{Geometry, Sector, SegmentId, WorldlineConfig};

/// Name of the random number generator used everywhere, recorded in output
/// documents so any run can be replayed.
pub const RNG_ALGORITHM: &str = "chacha8";
