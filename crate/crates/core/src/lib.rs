//! Mixed-resolution image tokenization.
//!
//! Images are split into a quadtree patch mosaic by greedily refining the
//! most salient patch, and the resulting mosaic is embedded into a token
//! sequence that a standard Transformer encoder can consume. The crate is
//! organized bottom-up:
//!
//! - [`image`]: raster type, PPM I/O, area/bilinear resampling, blur, MSE.
//! - [`tensor`]: the `MTOK1` tensor container and JSON-manifest bundles.
//! - [`quadtree`]: patch geometry, z-order keys and the greedy split loop.
//! - [`scorers`]: pixel-blur, feature-based and saliency-map patch scorers.
//! - [`tokenizer`]: patch representations, linear embedding, 2D sin/cos positions.
//! - [`vit`]: a small pre-LN Transformer encoder forward pass.
//! - [`analysis`]: rank correlations, mosaic composition, MAC counts, timing.

pub mod analysis;
pub mod error;
pub mod image;
pub mod quadtree;
pub mod scorers;
pub mod synthetic;
pub mod tensor;
pub mod tokenizer;
pub mod vit;

pub use error::{Error, ErrorKind, Result};
pub use image::{Image, UpsampleMode};
pub use quadtree::{PatchMosaic, PatchRect, QuadtreeConfig, ZKey};
