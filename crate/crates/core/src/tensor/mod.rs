//! Single-affordance interaction tensors: bisector surface between a query
//! object and a scene patch, provenance vectors, keypoint sampling and the
//! eight-orientation augmented descriptor.

pub mod bisector;
pub mod descriptor;
pub mod example;
pub mod keypoints;

use nalgebra::{Rotation3, Vector3};
use thiserror::Error;

use crate::cloud::CloudError;

pub use bisector::{compute_bisector, BisectorParams, BisectorResult, BisectorSample};
pub use descriptor::{augment_descriptor, build_descriptor, AffordanceDescriptor, BuildOutput, BuildParams};
pub use example::InteractionExample;
pub use keypoints::{
    compute_provenance, sample_keypoints, AffordanceKeypoint, ProvenancePair, SampledKeypoints,
    SamplingParams, SamplingScheme, WeightRule,
};

/// Number of spun copies of every descriptor, evenly spaced about +z.
pub const ORIENTATIONS: u8 = 8;

/// Default keypoints per orientation.
pub const DEFAULT_KEYPOINTS: usize = 512;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error("{0} cloud is empty")]
    EmptyCloud(&'static str),
    #[error("query object and scene share point {object_index} (ambiguous bisector)")]
    OverlappingClouds { object_index: usize },
    #[error("object is {distance} m from the scene, beyond the contact bound of {bound} m")]
    NotInContact { distance: f64, bound: f64 },
    #[error("tensor is empty")]
    EmptyTensor,
    #[error("keypoint count must be at least 1")]
    InvalidCount,
    #[error("keypoint {index} has orientation {orientation}, expected 0")]
    NotCanonical { index: usize, orientation: u8 },
    #[error("keypoints belong to several affordances")]
    MixedAffordances,
}

/// Rotation about +z for orientation bin `orientation`.
pub fn orientation_rotation(orientation: u8) -> Rotation3<f64> {
    let angle = std::f64::consts::TAU * orientation as f64 / ORIENTATIONS as f64;
    Rotation3::from_axis_angle(&Vector3::z_axis(), angle)
}
