//! Dense RGB-D SLAM over a map of isotropic 3D Gaussians.
//!
//! Every numeric type is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision for the common cases.

// Negated comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evalio;
pub mod geometry;
pub mod image;
pub mod mapper;
pub mod optim;
pub mod pipeline;
pub mod rasterizer;
pub mod refiner;
pub mod scalar;
pub mod scene;
pub mod tracker;

pub use error::{Error, Result};
pub use geometry::{constant_velocity_extrapolate, Mat3, Pose, Quat, Vec3};
pub use image::{Image, Mask};
pub use pipeline::{SlamConfig, SlamState};
pub use scalar::Scalar;
pub use scene::{CameraModel, GaussianMap, IsotropicGaussian, RgbdFrame};

pub type Pose32 = Pose<f32>;
pub type Pose64 = Pose<f64>;
pub type Gaussian32 = IsotropicGaussian<f32>;
pub type Gaussian64 = IsotropicGaussian<f64>;
pub type GaussianMap32 = GaussianMap<f32>;
pub type GaussianMap64 = GaussianMap<f64>;
pub type CameraModel32 = CameraModel<f32>;
pub type CameraModel64 = CameraModel<f64>;
pub type RgbdFrame32 = RgbdFrame<f32>;
pub type RgbdFrame64 = RgbdFrame<f64>;
pub type Image32 = Image<f32>;
pub type Image64 = Image<f64>;
pub type SlamState32 = SlamState<f32>;
pub type SlamState64 = SlamState<f64>;
