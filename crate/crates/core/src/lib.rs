//! Differentially private diffusion models trained by stochastic adversarial
//! distillation.
//!
//! A teacher denoiser is trained on private data without protection. A
//! student denoiser is then distilled from it together with a discriminator,
//! and only the student's gradients are privatized: the loss gradient is
//! clipped at the student's output for one random diffusion step, pushed
//! through the student by the chain rule, and perturbed with Gaussian noise
//! once per update.
//!
//! The crate is `no_std` and only needs `alloc`; file formats and the
//! command-line tool live in the `dpsad` crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]
extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod autodiff;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod kmeans;
pub mod nn;
pub mod optim;
pub mod privacy;
pub mod rng;
pub mod tensor;
pub mod toy;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
