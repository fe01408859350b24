use std::collections::BTreeMap;

use nalgebra::Vector3;

use super::{mean, CloudError, PointCloud};

pub type CellKey = [i64; 3];

/// Sparse uniform grid; only occupied cells are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub cell_size: f64,
    pub origin: Vector3<f64>,
    cells: BTreeMap<CellKey, Vec<usize>>,
}

impl VoxelGrid {
    /// Grid anchored at the minimum corner of `points`.
    pub fn build(points: &[Vector3<f64>], cell_size: f64) -> Result<Self, CloudError> {
        let origin = points
            .iter()
            .fold(None::<Vector3<f64>>, |acc, p| Some(acc.map_or(*p, |a| a.inf(p))))
            .unwrap_or_else(Vector3::zeros);
        Self::build_with_origin(points, cell_size, origin)
    }

    pub fn build_with_origin(
        points: &[Vector3<f64>],
        cell_size: f64,
        origin: Vector3<f64>,
    ) -> Result<Self, CloudError> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(CloudError::InvalidCellSize(cell_size));
        }
        let mut cells: BTreeMap<CellKey, Vec<usize>> = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            cells
                .entry(cell_of(p, &origin, cell_size))
                .or_default()
                .push(i);
        }
        Ok(Self {
            cell_size,
            origin,
            cells,
        })
    }

    pub fn key(&self, p: &Vector3<f64>) -> CellKey {
        cell_of(p, &self.origin, self.cell_size)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Occupied cells in key order with their member indices.
    pub fn cells(&self) -> impl Iterator<Item = (&CellKey, &[usize])> {
        self.cells.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn members(&self, key: &CellKey) -> Option<&[usize]> {
        self.cells.get(key).map(Vec::as_slice)
    }
}

fn cell_of(p: &Vector3<f64>, origin: &Vector3<f64>, e: f64) -> CellKey {
    let r = (p - origin) / e;
    [r.x.floor() as i64, r.y.floor() as i64, r.z.floor() as i64]
}

/// One point per occupied cell, at the centroid of its members. Output is in
/// cell key order; normals are dropped.
pub fn voxel_downsample(cloud: &PointCloud, cell_size: f64) -> Result<PointCloud, CloudError> {
    let grid = VoxelGrid::build(cloud.points(), cell_size)?;
    let pts = cloud.points();
    let out: Vec<_> = grid
        .cells()
        .map(|(_, members)| {
            let m: Vec<_> = members.iter().map(|&i| pts[i]).collect();
            mean(&m).expect("occupied cell")
        })
        .collect();
    Ok(PointCloud::new(out)?.with_frame(cloud.frame_id.clone()))
}
