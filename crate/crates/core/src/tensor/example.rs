use nalgebra::{Isometry3, Vector3};

use super::TensorError;
use crate::cloud::{PointCloud, SpatialIndex};

/// One demonstrated interaction: a query object placed against a scene patch.
#[derive(Debug, Clone)]
pub struct InteractionExample {
    pub affordance_id: u32,
    /// verb-object pair such as `Place-book`
    pub label: String,
    /// object in its own frame
    pub query_object: PointCloud,
    /// scene in world frame
    pub scene_patch: PointCloud,
    /// places the query object in the scene frame
    pub object_pose: Isometry3<f64>,
    /// Training test-point. The descriptor is spun about the vertical line
    /// through it. Defaults to the scene point closest to the placed object's
    /// centroid.
    pub anchor: Option<Vector3<f64>>,
}

impl InteractionExample {
    pub fn new(
        affordance_id: u32,
        label: impl Into<String>,
        query_object: PointCloud,
        scene_patch: PointCloud,
        object_pose: Isometry3<f64>,
    ) -> Self {
        Self {
            affordance_id,
            label: label.into(),
            query_object,
            scene_patch,
            object_pose,
            anchor: None,
        }
    }

    pub fn with_anchor(mut self, anchor: Vector3<f64>) -> Self {
        self.anchor = Some(anchor);
        self
    }

    /// The query object expressed in the scene frame.
    pub fn placed_object(&self) -> PointCloud {
        self.query_object.transformed(&self.object_pose)
    }

    pub fn anchor_point(&self) -> Result<Vector3<f64>, TensorError> {
        if let Some(a) = self.anchor {
            return Ok(a);
        }
        if self.scene_patch.is_empty() {
            return Err(TensorError::EmptyCloud("scene"));
        }
        let centroid = self
            .placed_object()
            .centroid()
            .ok_or(TensorError::EmptyCloud("object"))?;
        let index = SpatialIndex::from_cloud(&self.scene_patch);
        let (i, _) = index.try_nearest(&centroid)?;
        Ok(self.scene_patch.points()[i])
    }

    /// Checks that both clouds are non-empty and disjoint and that the placed
    /// object lies within `contact_bound` meters of the scene.
    pub fn validate(&self, contact_bound: f64) -> Result<(), TensorError> {
        if self.query_object.is_empty() {
            return Err(TensorError::EmptyCloud("object"));
        }
        if self.scene_patch.is_empty() {
            return Err(TensorError::EmptyCloud("scene"));
        }
        let index = SpatialIndex::from_cloud(&self.scene_patch);
        let mut min = f64::INFINITY;
        for (i, p) in self.placed_object().points().iter().enumerate() {
            let (_, d) = index.try_nearest(p)?;
            if d == 0.0 {
                return Err(TensorError::OverlappingClouds { object_index: i });
            }
            min = min.min(d);
        }
        if min >= contact_bound {
            return Err(TensorError::NotInContact {
                distance: min,
                bound: contact_bound,
            });
        }
        Ok(())
    }
}
