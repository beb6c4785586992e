//! Generalized data transformations for contrastive learning.
//!
//! - [`transform`]: factor specs, composed transformations, product contrasts
//!   and admissibility checks.
//! - [`sampler`]: hierarchical batch sampling and exact pair counts.
//! - [`loss`]: the generalized noise-contrastive objective and its gradient.
//! - [`variance`]: stratified vs naive estimation of a pairwise objective.
//! - [`world`], [`encoder`], [`train`]: a synthetic multimodal dataset, a
//!   small two-layer encoder and an SGD training loop.
//! - [`eval`]: frozen-feature retrieval, k-NN and dispersion metrics.
//! - [`harness`]: experiment presets, configs, verification suites and the
//!   run/sweep drivers behind the `gdt` binary.

pub mod error;
pub mod rng;
pub mod transform;
pub mod sampler;
pub mod loss;
pub mod variance;
pub mod world;
pub mod encoder;
pub mod train;
pub mod eval;
pub mod harness;

pub use error::{GdtError, Result};
