//! Truncated Smoluchowski aggregation with a particle source, and POD-based
//! model-order reduction of its solutions.
//!
//! - [`kernel`]: coagulation kernels and their separable factorization.
//! - [`rhs`]: full right-hand side, direct `O(N²)` and FFT-based `O(N log N)`.
//! - [`integrator`]: fixed-step explicit midpoint scheme.
//! - [`pod`]: snapshot bases, thresholded merge, projection error.
//! - [`greedy`]: windowed basis construction.
//! - [`reduced`]: projected source and tensor, the `O(R³)` reduced system.
//! - [`harness`], [`config`], [`podmat`]: command implementations and file formats.

pub mod config;
pub mod conv;
pub mod error;
pub mod greedy;
pub mod harness;
pub mod integrator;
pub mod kernel;
pub mod pod;
pub mod podmat;
pub mod reduced;
pub mod rhs;

pub use error::{Error, Result};
pub use greedy::{build_basis, GreedyConfig, GreedyResult, GreedyTrace};
pub use integrator::{integrate, midpoint_step, IntegratorConfig, Rhs, Trajectory};
pub use kernel::{build_kernel, dense_kernel, kernel_entry, KernelForm, KernelSpec, LowRankKernel};
pub use pod::{
    lift, merge_bases, project, projection_error, snapshot_basis, ReductionBasis, SnapshotMatrix,
};
pub use reduced::{
    build_reduced_tensor, dense_tensor, project_source, rhs_reduced, solve_reduced, ReducedMode,
    ReducedSystem,
};
pub use rhs::{mass_flux_out, moment, rhs_direct, rhs_fast, FastRhs, SourceVector, StateVector};
