//! Pointcloud data model and the spatial plumbing shared by every stage:
//! file I/O, voxel grids and an exact kd-tree.

pub mod index;
pub mod io;
pub mod voxel;

use std::fmt;

use nalgebra::Vector3;
use thiserror::Error;

pub use index::{Aabb, SpatialIndex};
pub use io::{parse_cloud, read_cloud, write_cloud, write_cloud_to, CloudFormat};
pub use voxel::{voxel_downsample, VoxelGrid};

/// Position inside an input file, used to point at the offending spot of a
/// malformed file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Offset {
    Line(usize),
    Byte(u64),
}

impl fmt::Display for Offset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Offset::Line(l) => write!(f, "line {l}"),
            Offset::Byte(b) => write!(f, "byte {b}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header at {at}: {msg}")]
    MalformedHeader { at: Offset, msg: String },
    #[error("malformed payload at {at}: {msg}")]
    MalformedPayload { at: Offset, msg: String },
    #[error("truncated payload at {at}: expected {expected} vertices, found {found}")]
    Truncated {
        at: Offset,
        expected: usize,
        found: usize,
    },
    #[error("unsupported at {at}: {msg}")]
    Unsupported { at: Offset, msg: String },
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("normal {index} has length {length}, expected 1")]
    BadNormal { index: usize, length: f64 },
    #[error("{normals} normals for {points} points")]
    NormalCountMismatch { points: usize, normals: usize },
    #[error("cloud is empty")]
    Empty,
    #[error("cell size must be positive and finite, got {0}")]
    InvalidCellSize(f64),
}

/// Tolerance on the unit length of stored normals.
pub const NORMAL_TOLERANCE: f64 = 1e-6;

/// An ordered set of 3D points in meters, world frame, +z up.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    normals: Option<Vec<Vector3<f64>>>,
    pub frame_id: String,
}

impl PointCloud {
    /// Builds a cloud, checking finiteness of every coordinate.
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, CloudError> {
        Self::with_normals(points, None)
    }

    pub fn with_normals(
        points: Vec<Vector3<f64>>,
        normals: Option<Vec<Vector3<f64>>>,
    ) -> Result<Self, CloudError> {
        if let Some(i) = points.iter().position(|p| !is_finite(p)) {
            return Err(CloudError::NonFinite(i));
        }
        if let Some(ns) = &normals {
            if ns.len() != points.len() {
                return Err(CloudError::NormalCountMismatch {
                    points: points.len(),
                    normals: ns.len(),
                });
            }
            for (index, n) in ns.iter().enumerate() {
                let length = n.norm();
                if !length.is_finite() || (length - 1.0).abs() > NORMAL_TOLERANCE {
                    return Err(CloudError::BadNormal { index, length });
                }
            }
        }
        Ok(Self {
            points,
            normals,
            frame_id: String::new(),
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_frame(mut self, frame_id: impl Into<String>) -> Self {
        self.frame_id = frame_id.into();
        self
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Vector3<f64>> {
        self.points
    }

    /// Axis-aligned bounds, `None` for an empty cloud.
    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(&self.points)
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        mean(&self.points)
    }

    /// Applies `f` to every point. Normals are transformed with `g`.
    pub fn map(
        &self,
        f: impl Fn(&Vector3<f64>) -> Vector3<f64>,
        g: impl Fn(&Vector3<f64>) -> Vector3<f64>,
    ) -> Self {
        Self {
            points: self.points.iter().map(f).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| g(n).normalize()).collect()),
            frame_id: self.frame_id.clone(),
        }
    }

    pub fn transformed(&self, pose: &nalgebra::Isometry3<f64>) -> Self {
        self.map(
            |p| pose.transform_point(&(*p).into()).coords,
            |n| pose.rotation * n,
        )
    }

    /// Concatenates two clouds. Normals survive only if both carry them.
    pub fn concat(&self, other: &PointCloud) -> Self {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let normals = match (&self.normals, &other.normals) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Self {
            points,
            normals,
            frame_id: self.frame_id.clone(),
        }
    }
}

pub(crate) fn is_finite(p: &Vector3<f64>) -> bool {
    p.iter().all(|c| c.is_finite())
}

pub(crate) fn mean(points: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    if points.is_empty() {
        return None;
    }
    let sum = points.iter().fold(Vector3::zeros(), |acc, p| acc + p);
    Some(sum / points.len() as f64)
}

/// Translates the cloud so its centroid sits at the origin and returns the
/// removed centroid, which callers keep for pose recovery.
pub fn zero_mean(cloud: &PointCloud) -> Result<(PointCloud, Vector3<f64>), CloudError> {
    let c = cloud.centroid().ok_or(CloudError::Empty)?;
    let out = PointCloud {
        points: cloud.points.iter().map(|p| p - c).collect(),
        normals: cloud.normals.clone(),
        frame_id: cloud.frame_id.clone(),
    };
    Ok((out, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    #[test]
    fn zero_mean_two_points() {
        let cloud = PointCloud::new(vec![v(1.0, 1.0, 1.0), v(3.0, 1.0, 1.0)]).unwrap();
        let (out, c) = zero_mean(&cloud).unwrap();
        assert_eq!(c, v(2.0, 1.0, 1.0));
        assert_eq!(out.points(), &[v(-1.0, 0.0, 0.0), v(1.0, 0.0, 0.0)]);
    }

    #[test]
    fn zero_mean_centered_is_identity() {
        let cloud = PointCloud::new(vec![v(-1.0, 2.0, 0.5), v(1.0, -2.0, -0.5)]).unwrap();
        let (out, c) = zero_mean(&cloud).unwrap();
        assert!(c.norm() < 1e-12);
        assert_eq!(out.points(), cloud.points());
    }

    #[test]
    fn zero_mean_inverse_identity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = (0..500)
            .map(|_| v(rng.random_range(-5.0..5.0), rng.random(), rng.random_range(0.0..3.0)))
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let (out, c) = zero_mean(&cloud).unwrap();
        assert!(out.centroid().unwrap().norm() < 1e-9);
        for (a, b) in out.points().iter().zip(cloud.points()) {
            assert!((a + c - b).norm() < 1e-9);
        }
    }

    #[test]
    fn zero_mean_empty() {
        assert!(matches!(zero_mean(&PointCloud::empty()), Err(CloudError::Empty)));
    }

    #[test]
    fn rejects_non_finite_and_bad_normals() {
        assert!(matches!(
            PointCloud::new(vec![v(0.0, f64::NAN, 0.0)]),
            Err(CloudError::NonFinite(0))
        ));
        assert!(matches!(
            PointCloud::with_normals(vec![v(0.0, 0.0, 0.0)], Some(vec![v(0.0, 0.0, 2.0)])),
            Err(CloudError::BadNormal { index: 0, .. })
        ));
        assert!(matches!(
            PointCloud::with_normals(vec![v(0.0, 0.0, 0.0)], Some(vec![])),
            Err(CloudError::NormalCountMismatch { .. })
        ));
    }
}
