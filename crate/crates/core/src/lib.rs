//! Decoupled content/degradation data generation for real-world
//! super-resolution, at desk scale.
//!
//! The crate covers the full pipeline: a parameterized synthetic degradation
//! operator, content and degradation extractors with their reconstruction
//! heads, a conditionally modulated denoising diffusion model with
//! partial-noising generation and candidate filtering, and a downstream SR
//! harness with PSNR/SSIM evaluation.
//!
//! All numeric kernels are generic over the scalar type ([`Scalar`], `f32`
//! or `f64`). The pipeline runs `f32`; tests that need 1e-9 tolerances
//! instantiate the same code at `f64`.

pub mod dataio;
pub mod degrade;
pub mod diffusion;
pub mod losses;
pub mod nn;
pub mod error;
pub mod evaluation;
pub mod extractors;
pub mod generation;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Scalar type the CLI pipeline runs at.
pub type PipelineScalar = f32;

/// Concrete aliases for the two supported precisions.
pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
