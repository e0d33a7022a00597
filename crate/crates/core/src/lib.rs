//! Differentially private gradients for sequence models.
//!
//! * [`tensor`]: dense tensors, matrix kernels, seeded randomness.
//! * [`model`]: a small sequence classifier whose backward pass exposes layer
//!   inputs and output gradients.
//! * [`clipping`]: per-example gradient norms (naive, layer-by-layer, ghost)
//!   and sums of clipped gradients.
//! * [`accountant`]: Rényi-DP accounting of the Poisson-subsampled Gaussian
//!   mechanism, Gaussian-DP CLT estimates and noise calibration.
//! * [`optim`]: Poisson sampling, gradient privatization, DP-SGD and DP-Adam.
//! * [`harness`]: synthetic tasks, training runs, sweeps and the memory bench
//!   behind the `ghostclip` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod alloc;
pub mod clipping;
pub mod error;
pub mod harness;
pub mod model;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};

#[cfg(test)]
#[global_allocator]
static TEST_ALLOC: alloc::CountingAlloc = alloc::CountingAlloc;
