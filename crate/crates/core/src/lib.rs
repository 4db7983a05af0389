//! Simultaneous multi-surface segmentation of volumetric images.
//!
//! A small CNN regresses the positions of `lambda` terrain-like surfaces
//! for the middle half of each `N`-column patch of a slice; overlapping
//! patches are stitched into full surfaces. An exact dynamic-programming
//! solver with convex smoothness priors serves as the classical baseline.
//!
//! Modules:
//!
//! 1. **numerics** – tensors, layers with backpropagation, SGD, gradient checks.
//! 2. **model** – the regression network, training, persistence.
//! 3. **synthdata** – synthetic volumes with known surfaces.
//! 4. **pipeline** – denoising/normalization, patch extraction, augmentation, datasets.
//! 5. **infer** – tiling, per-patch inference and stitching.
//! 6. **baseline** – exact optimal-surface DP.
//! 7. **metrics** – surface errors, confidence intervals, paired t-tests.
//! 8. **cli** – the `surfseg` command line.

pub mod baseline;
pub mod binio;
pub mod cli;
pub mod error;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod rng;
pub mod synthdata;

pub use error::{Error, FormatError, Result};
pub use rng::RngState;
