//! Bilateral-branch network (BBNet) for collaborative camouflaged object
//! detection.
//!
//! The crate is organised around the two branches of the model and the
//! machinery they share:
//!
//! - [`tensor`]: dense `(B, C, H, W)` tensors in `f64` plus the raw numeric
//!   kernels (convolution, pooling, bilinear resize, batched matmul).
//! - [`tape`]: reverse-mode autodiff over those kernels.
//! - [`backbone`], [`cfe`], [`ofs`], [`lgr`], [`network`]: the feature
//!   extractor, the inter-image collaborative branch, the intra-image
//!   object-search branch, local-global refinement, and their composition
//!   into the full forward pass.
//! - [`losses`], [`metrics`]: the weighted BCE + IoU training objective and
//!   the MAE / S / E / F evaluation measures with a 256-point PR curve.
//! - [`gradcheck`], [`oracle`]: independent verification paths (central
//!   finite differences and scalar brute-force references) used by the test
//!   suite.
//!
//! Everything here is pure computation on owned values: no IO, no threads,
//! no global state. File formats, dataset handling, and the CLI live in the
//! companion `bbnet-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod backbone;
pub mod cfe;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod lgr;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod ofs;
pub mod optim;
pub mod oracle;
pub mod params;
pub mod tape;
pub mod tensor;

pub use config::{BackboneId, ModelConfig, TrainConfig};
pub use error::CoreError;
pub use tensor::{Dims, FeatureMap, Stage, Tensor};
