//! Learning-based structure-from-motion for underwater semantic mapping.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: pinhole camera, rigid poses, bilinear sampling and the
//!   inverse-warp reprojection operator.
//! - [`objective`]: the self-supervised photometric / smoothness /
//!   geometric-consistency objective together with its hand-derived adjoints.
//! - [`estimation`]: depth and pose estimator backends, the Adam fitting loop
//!   and sliding-window depth uncertainty.
//! - [`semantics`]: benthic taxonomy, label maps, patch tiling and stitching.
//! - [`fusion`]: TSDF integration and semantic point-cloud extraction.
//! - [`ortho`]: gravity-aligned ortho-projection, benthic cover and holes.
//! - [`evaluation`]: marker-distance error and confusion-matrix metrics.
//! - [`synth`]: procedural heightfield scenes used as ground truth.
//! - [`pipeline`]: configuration, dataset IO and the end-to-end run.

pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod objective;
pub mod ortho;
pub mod pipeline;
pub mod semantics;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
