//! Robustness evaluation and hardening for image classifiers.
//!
//! The crate bundles seeded image corruptions gated by PSNR/SSIM, a small
//! differentiable CNN used as victim and shadow model, FGSM/PGD/FFL-PGD
//! attacks, preprocessing and adversarial-training defenses, a
//! feature-squeezing detector, and a harness that scores local or remote
//! classifiers.

pub mod attacks;
pub mod corruption;
pub mod dataset;
pub mod defenses;
pub mod error;
pub mod filters;
pub mod gate;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod mock;
pub mod model;
pub mod report;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use image::Image;
