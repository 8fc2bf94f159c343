//! Deterministic CNN engine for scene-recognition backbones.
//!
//! The crate provides:
//! - dense rank-4 tensors with a 32-bit compute mode and a 64-bit
//!   verification mode, plus a finite-difference gradient oracle;
//! - forward/backward passes for the residual-network layer set,
//!   including the dilated pooling downsampler;
//! - a declarative architecture builder covering depth presets 18/50/101,
//!   width scaling, and four downsampling variants (strided, dilated
//!   pooling, average-pool and max-pool baselines);
//! - a static multiply-accumulate and parameter-count analyzer;
//! - a spectral low/high-pass filtering pipeline with an
//!   accuracy-vs-filter-size sweep harness;
//! - a desk-scale SGD training and evaluation harness with a synthetic
//!   grating dataset generator.

pub mod arch;
pub mod cost;
pub mod error;
pub mod freq;
pub mod image_io;
pub mod layers;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod tensor_io;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{Dtype, Scalar};
pub use tensor::{finite_difference_grad, Shape, Tensor4};
