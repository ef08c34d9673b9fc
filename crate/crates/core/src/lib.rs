//! Interpretable ordinal grading with diffusion-autoencoder semantic latents.
//!
//! The pipeline trains a diffusion autoencoder on unlabeled images, fits
//! linear probes on the semantic latents, calibrates signed hyperplane
//! distance to a grade scale, and produces counterfactual images by moving
//! latents along the hyperplane normal and decoding them with the original
//! stochastic latent.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod counterfactual;
pub mod dae;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod image;
pub mod json;
pub mod metrics;
pub mod nn;
pub mod par;

pub use error::{Error, Result};
