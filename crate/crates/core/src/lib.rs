//! Face landmark localization around a trained heatmap model.
//!
//! The crate covers everything except the backbone network itself:
//!
//! - [`geometry`]: five-point similarity alignment and image warping.
//! - [`heatmap`]: Gaussian heatmap encoding and three sub-pixel decoders.
//! - [`tensor`]: small deterministic conv / deconv / pixel-shuffle kernels
//!   with multiply-accumulate counting.
//! - [`head`]: `S`/`D` upsampling-head strategies, their cost model and an
//!   executable forward pass that validates it.
//! - [`augment`]: seeded training augmentations.
//! - [`eval`]: NME, CED curve, AUC and failure rate.
//! - [`pipeline`]: dataset alignment, model runners, flip test-time
//!   averaging and end-to-end scoring.

pub mod augment;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod head;
pub mod heatmap;
pub mod image;
pub mod pipeline;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use geometry::{Landmarks, Point, ReferenceTemplate, SimilarityTransform};
pub use heatmap::{DecodedPoint, Decoder, GaussianParams, HeatmapStack};
pub use image::Image;
