//! Multi-level vision-language alignment at desk scale.
//!
//! The crate trains a small image backbone and text encoder so that three
//! granularities of text (words, sentences, whole reports) align with three
//! granularities of image features (shallow local grid, deep local grid,
//! global vector). A trained model localizes a text prompt as a heatmap over
//! the image, classifies pathologies zero-shot from positive/negative prompt
//! pairs, and is scored with IoU/Dice/CNR/AUROC plus percentile-bootstrap
//! confidence intervals.
//!
//! All numeric kernels are generic over the scalar type ([`Scalar`], i.e.
//! `f32` or `f64`); `f32` is the training default and `f64` is used where
//! tight verification tolerances matter. Concrete aliases live at the crate
//! root.

pub mod ablate;
pub mod align;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod infer;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod text;
pub mod vision;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used by default for training and CLI inference.
pub type DefaultScalar = f32;

/// Alignment model in the default (single) precision.
pub type ModelF32 = align::AlignmentModel<f32>;
/// Alignment model in double precision, used for verification-grade runs.
pub type ModelF64 = align::AlignmentModel<f64>;
/// Heatmap in the default precision.
pub type HeatmapF32 = infer::Heatmap<f32>;
