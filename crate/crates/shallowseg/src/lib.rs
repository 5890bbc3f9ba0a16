//! Shallow-attention segmentation toolkit.
//!
//! A desk-scale segmentation stack built around three mechanisms: LAB color
//! exchange augmentation, a shallow attention module that gates high-resolution
//! features with rectified upsampled deep features, and probability-correction
//! post-processing that rescales logits by class occupancy at inference time.
//! The numeric core is a small reverse-mode autodiff engine whose every
//! operator is certified against central finite differences.

pub mod autodiff;
pub mod colorimetry;
pub mod dataio;
pub mod metrics;
pub mod model;
pub mod pcs;
pub mod scalar;

pub use scalar::Scalar;

/// Single-precision tape, the training default.
pub type Tape32 = autodiff::Tape<f32>;
/// Double-precision tape, used by the certification tests.
pub type Tape64 = autodiff::Tape<f64>;
/// Single-precision network, the training default.
pub type Network32 = model::Network<f32>;
/// Double-precision network, used by the certification tests.
pub type Network64 = model::Network<f64>;

