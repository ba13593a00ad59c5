//! Stereo pinhole projection chain, camera projection loss (CPL) and the
//! tooling around it: synthetic data generation, parameter recovery,
//! a small multi-task regressor and evaluation metrics.
//!
//! Angles are radians everywhere inside the library. Files and the CLI use
//! degrees for pitch.

pub mod camera_model;
pub mod cli;
pub mod cpl;
pub mod datagen;
pub mod error;
pub mod estimator;
pub mod metrics;

pub use camera_model::{
    camera_to_image, camera_to_world, image_to_camera, normalized_image_to_camera,
    project_to_world, world_to_camera, CameraParams, CameraPoint, Extrinsics, Intrinsics,
    PixelObservation, WorldPoint,
};
pub use cpl::{
    cpl_loss, decomposed_loss, grad_world_point, AdaptiveWeights, Component, CorrespondenceSet,
    LossMode, LossReport, ParamVector13, WorldJacobian,
};
pub use error::{Error, Result};
pub use metrics::{hfov, hfov_accuracy, nmae, EvalTable};
