//! Extrinsic calibration between a non-repetitive-scan solid-state LiDAR and
//! a pinhole camera from checkerboard placements, with a rosette-scan
//! simulator that supplies ground truth.

pub mod config;
pub mod corner2d;
pub mod corner3d;
pub mod error;
pub mod evaluation;
pub mod extrinsic;
pub mod geometry;
pub mod image;
pub mod integration;
pub mod io;
pub mod optimize;
pub mod pipeline;
pub mod refinement;
pub mod rng;
pub mod segmentation;
pub mod simulator;
pub mod spatial;

pub use error::{Error, Result};
pub use geometry::{
    plane_point_distance, project_point, rotation_angle_between, transform_cloud,
    CameraIntrinsics, CheckerboardSpec, Plane, Point3, PointCloud, RigidTransform,
};
