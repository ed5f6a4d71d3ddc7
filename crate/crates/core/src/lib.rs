//! Spectral-domain CNN pruning and sparse accelerator modeling.
//!
//! The crate covers the full flow from exact spectral convolution (2D FFT with
//! Overlap-and-Add tiling), through ADMM-based top-k pruning of spectral
//! kernels, to the hardware-facing sparse table format, a cycle-level replay
//! simulator of the sparse Hadamard pipeline, and an analytic throughput /
//! design-space exploration model.

pub mod admm;
pub mod dataset;
pub mod dse;
pub mod error;
pub mod model;
pub mod par;
pub mod sim;
pub mod sparse;
pub mod spectral;

pub use error::{Error, Result};
