//! Mask consistency regularization for diffusion-based object removal.
//!
//! A small, CPU-only implementation: binary mask morphology and random
//! masks, a synthetic object-removal corpus, a DDPM noise schedule with a
//! strided deterministic sampler, a three-layer convolutional noise
//! predictor with a hand-written backward pass, the consistency-regularized
//! training objective, and PSNR/SSIM metrics.
//!
//! ```
//! use mcr::mask::BinaryMask;
//!
//! let mut m = BinaryMask::zeros(5, 5);
//! m.set(2, 2, true);
//! assert_eq!(m.dilate(1).count(), 9);
//! ```

pub mod ablation;
mod conv;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod imagio;
pub mod mask;
pub mod metrics;
pub mod pnm;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
