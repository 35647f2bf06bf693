//! Panorama reconstruction from single-photon binary frame sequences.
//!
//! A photon cube is split into groups of frames. Each group is merged into a
//! flux image after compensating the current motion estimate, consecutive
//! merged images are registered, and the resulting homographies are chained
//! and interpolated into a per-frame trajectory. Repeating this with denser
//! groups refines the motion; the final panorama pools every binary sample.
//!
//! Numeric code is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below name the common instantiations.

pub mod config;
pub mod cube;
pub mod error;
pub mod image;
pub mod metrics;
pub mod pipeline;
pub mod registration;
pub mod render;
pub mod rng;
pub mod scalar;
pub mod scene;
pub mod simulator;
pub mod tone;
pub mod trajectory;
pub mod warp;

pub use cube::PhotonCube;
pub use error::{Error, Result};

pub type WarpParamsF64 = warp::WarpParams<f64>;
pub type WarpParamsF32 = warp::WarpParams<f32>;
pub type HomographyF64 = warp::Homography<f64>;
pub type HomographyF32 = warp::Homography<f32>;
pub type LinearImageF64 = image::LinearImage<f64>;
pub type LinearImageF32 = image::LinearImage<f32>;
pub type TrajectoryF64 = trajectory::Trajectory<f64>;
pub type TrajectoryF32 = trajectory::Trajectory<f32>;
pub type KnotF64 = trajectory::Knot<f64>;
pub type KnotF32 = trajectory::Knot<f32>;
pub type PanoramaCanvasF64 = render::PanoramaCanvas<f64>;
pub type PanoramaCanvasF32 = render::PanoramaCanvas<f32>;
