//! Tokenization, stabilization, augmentation, and sampling tools for
//! autoregressive PDE surrogate models.
//!
//! Modules:
//! - [`tensorfield`]: field sets, trajectories, and the `CKT1` container.
//! - [`spectral`]: exact frequency-domain model of strided/transposed convolution
//!   and the patch-jitter expectation identity.
//! - [`patching`]: stride planning, boundary-aware padding, jitter, and the two-stage
//!   patch encoder/decoder.
//! - [`augment`]: 2D-to-3D embedding, octahedral tensor-law transforms, time striding.
//! - [`normalize`]: asymmetric RMS normalization and the normalized delta loss.
//! - [`emulator`]: a toy space-time factorized emulator and rollouts.
//! - [`scheduler`]: throughput simulator for sharded data-parallel sampling.
//! - [`metrics`]: VRMSE/VMSE and rollout-window aggregation.
//! - [`synthetic`]: periodic advection trajectories with exact solutions.

pub mod augment;
pub mod emulator;
pub mod error;
pub mod metrics;
pub mod normalize;
pub mod patching;
pub mod scheduler;
pub mod spectral;
pub mod synthetic;
pub mod tensorfield;

pub use error::{Error, Result};
