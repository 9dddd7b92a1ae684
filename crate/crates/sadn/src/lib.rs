//! Learned compression for lenslet light-field images.
//!
//! The crate covers the full path from raw light fields to decodable
//! bitstreams: representation transforms between lenslet tilings,
//! sub-aperture view stacks and epipolar slices; a small reverse-mode
//! autodiff engine driving a convolutional analysis/synthesis pair that
//! separates spatial from angular structure; a range coder with a
//! factorized latent model for the actual bits; rate-distortion training;
//! and the quality metrics used to compare codecs.

pub mod autodiff;
pub mod codec;
pub mod entropy;
mod error;
pub mod imageio;
pub mod lightfield;
pub mod metrics;
pub mod model;
pub mod train;

pub use error::{Error, Result};
