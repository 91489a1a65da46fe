//! Gaze-guided spatiotemporal attention for binary video outcome
//! classification.
//!
//! The pipeline turns per-frame gaze fixations into visual masks
//! ([`mask`]), extracts per-frame features from video frames and masks with
//! a convolutional autoencoder ([`autoencoder`]), fuses them with a
//! squeeze-and-excitation attention classifier ([`attention`]), and scores
//! the resulting predictions ([`metrics`], [`trust`]). [`synth`] generates
//! labeled clip + gaze datasets in the on-disk layout read by [`data`].

pub mod attention;
pub mod autoencoder;
pub mod data;
pub mod engine;
pub mod mask;
pub mod metrics;
pub mod synth;
pub mod trust;

pub use engine::{Tensor, TensorError};
