//! Neural stain learning.
//!
//! Predicts spot-level gene expression from stained tissue patches with an
//! 11-parameter per-gene model: a learnable row-normalized 3×3 stain
//! deconvolution matrix applied to per-pixel optical densities, a bipolar
//! sigmoid, mean aggregation over pixels and a scalar linear head.
//!
//! - [`stain`] and [`model`]: the model and its exact gradients
//! - [`training`]: Adam and the per-gene training driver
//! - [`dataset`]: manifests, expression matrices, patch cropping, synthetic data
//! - [`evaluation`]: leave-one-patient-out CV, Pearson statistics, reports, overlays
//! - [`ols`]: least-squares baseline on precomputed spot features

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod evaluation;
pub mod model;
pub mod ols;
pub mod stain;
pub mod training;

pub use model::{
    encoded_gradients, forward, forward_histogram, gradients, EncodedPatch, Gradients,
};
pub use stain::{
    bipolar_sigmoid, optical_density, row_normalize, ColorHistogram, Mat3, NslParams, Patch,
    StainError, StainMatrix,
};
pub use training::{
    adam_step, train_all, train_gene, AdamState, ModelBundle, TrainConfig, TrainError,
    TrainedGeneModel,
};
