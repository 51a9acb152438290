//! Camera model, rigid-pose algebra, sampling and reprojection.
//!
//! Conventions: camera x points right, y down, z forward; the image origin
//! is the top-left pixel and integer pixel coordinates address pixel
//! centres.

mod camera;
pub(crate) mod image;
pub(crate) mod pose;
mod warp;

pub use camera::{CameraIntrinsics, Projection, MIN_DEPTH};
pub use image::{BilinearSample, BoolGrid, DepthMap, Frame, SampleCell};
pub use pose::{rotation_from_axis_angle, rotation_to_axis_angle, PoseSE3};
pub use warp::{reproject_image, warp_depth, Reprojection};

pub(crate) use warp::check_shape as check_dims;
