//! Merges single-affordance descriptors into one cell grid.
//!
//! Seeds sit at the centres of a uniform grid spanning the joint bounding box
//! of all keypoints. Each keypoint joins its nearest seed, empty cells are
//! dropped, and each cell keeps, per affordance and orientation, the member
//! closest to its seed (or every member in [`AgglomerationMode::All`]). The
//! cell centroid is then moved once to the mean of what it kept.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::mean;
use crate::tensor::{AffordanceDescriptor, AffordanceKeypoint};

/// Largest tolerated deviation of a descriptor mean from the origin.
pub const ZERO_MEAN_TOLERANCE: f64 = 1e-6;

/// Preset cell sizes in meters.
pub const CELL_SIZE_FINE: f64 = 0.005;
pub const CELL_SIZE_COARSE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum AgglomerateError {
    #[error("no descriptors to agglomerate")]
    Empty,
    #[error("descriptor for affordance {0} has no keypoints")]
    EmptyDescriptor(u32),
    #[error("affordance {affordance_id} is not zero-meaned (mean norm {offset})")]
    NotZeroMean { affordance_id: u32, offset: f64 },
    #[error("affordance {0} appears twice")]
    DuplicateAffordance(u32),
    #[error("cell size must be positive and finite, got {0}")]
    InvalidCellSize(f64),
    #[error("grid of {0:?} cells per axis is too large")]
    GridTooLarge([u64; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgglomerationMode {
    /// one kept keypoint per affordance and orientation per cell
    #[default]
    Closest,
    /// every member kept
    All,
}

impl fmt::Display for AgglomerationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgglomerationMode::Closest => "closest",
            AgglomerationMode::All => "all",
        })
    }
}

impl FromStr for AgglomerationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "closest" => Ok(AgglomerationMode::Closest),
            "all" => Ok(AgglomerationMode::All),
            _ => Err(format!("unknown agglomeration mode '{s}' (closest, all)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoredKeypoint {
    pub position: Vector3<f64>,
    pub provenance: Vector3<f64>,
    pub weight: f64,
}

impl From<&AffordanceKeypoint> for StoredKeypoint {
    fn from(k: &AffordanceKeypoint) -> Self {
        Self {
            position: k.position,
            provenance: k.provenance,
            weight: k.weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellEntry {
    pub affordance_id: u32,
    pub orientation_id: u8,
    pub kept: Vec<StoredKeypoint>,
    /// keypoints of this affordance and orientation that fell in the cell
    pub member_count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub centroid: Vector3<f64>,
    /// sorted by (affordance, orientation)
    pub entries: Vec<CellEntry>,
}

impl Cell {
    pub fn kept_count(&self) -> usize {
        self.entries.iter().map(|e| e.kept.len()).sum()
    }

    pub fn has_affordance(&self, id: u32) -> bool {
        self.entries.iter().any(|e| e.affordance_id == id)
    }
}

/// Directory entry for one constituent affordance.
#[derive(Debug, Clone, PartialEq)]
pub struct AffordanceInfo {
    pub id: u32,
    pub label: String,
    pub centroid_offset: Vector3<f64>,
    pub per_orientation: u32,
    pub object: Vec<Vector3<f64>>,
}

impl From<&AffordanceDescriptor> for AffordanceInfo {
    fn from(d: &AffordanceDescriptor) -> Self {
        Self {
            id: d.affordance_id,
            label: d.label.clone(),
            centroid_offset: d.centroid_offset,
            per_orientation: d.per_orientation as u32,
            object: d.object.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgglomeratedDescriptor {
    pub cell_size: f64,
    pub mode: AgglomerationMode,
    pub cells: Vec<Cell>,
    /// sorted by id
    pub affordances: Vec<AffordanceInfo>,
    /// affordance ids in the order the descriptors were supplied
    pub source_ids: Vec<u32>,
}

impl AgglomeratedDescriptor {
    pub fn affordance(&self, id: u32) -> Option<&AffordanceInfo> {
        self.affordances
            .binary_search_by_key(&id, |a| a.id)
            .ok()
            .map(|i| &self.affordances[i])
    }

    pub fn affordance_ids(&self) -> Vec<u32> {
        self.affordances.iter().map(|a| a.id).collect()
    }

    /// Total kept keypoints over all cells.
    pub fn keypoint_count(&self) -> usize {
        self.cells.iter().map(Cell::kept_count).sum()
    }

    /// Total input keypoints represented, i.e. summed member counts.
    pub fn member_count(&self) -> usize {
        self.cells
            .iter()
            .flat_map(|c| &c.entries)
            .map(|e| e.member_count as usize)
            .sum()
    }

    /// Each keypoint of `d` as its own cell, with no merging. This is the
    /// uncompressed form used as the sequential baseline.
    pub fn from_single(d: &AffordanceDescriptor) -> Self {
        let cells = d
            .keypoints
            .iter()
            .map(|k| Cell {
                centroid: k.position,
                entries: vec![CellEntry {
                    affordance_id: k.affordance_id,
                    orientation_id: k.orientation_id,
                    kept: vec![k.into()],
                    member_count: 1,
                }],
            })
            .collect();
        Self {
            cell_size: 0.0,
            mode: AgglomerationMode::All,
            cells,
            affordances: vec![d.into()],
            source_ids: vec![d.affordance_id],
        }
    }
}

/// Seed of grid cell `idx` for a grid with minimum corner `min`.
pub fn seed_position(min: &Vector3<f64>, idx: [u64; 3], e: f64) -> Vector3<f64> {
    Vector3::new(
        min.x + (idx[0] as f64 + 0.5) * e,
        min.y + (idx[1] as f64 + 0.5) * e,
        min.z + (idx[2] as f64 + 0.5) * e,
    )
}

/// Reduces the members of one cell. `members` pairs a global keypoint index
/// (used for tie-breaks) with the keypoint.
pub fn reduce_cell(
    seed: &Vector3<f64>,
    members: &[(usize, AffordanceKeypoint)],
    mode: AgglomerationMode,
) -> Cell {
    let mut groups: BTreeMap<(u32, u8), Vec<(usize, AffordanceKeypoint)>> = BTreeMap::new();
    for &(i, k) in members {
        groups.entry((k.affordance_id, k.orientation_id)).or_default().push((i, k));
    }
    let mut entries = Vec::with_capacity(groups.len());
    let mut kept_positions = Vec::new();
    for ((affordance_id, orientation_id), mut group) in groups {
        group.sort_by_key(|(i, _)| *i);
        let kept: Vec<StoredKeypoint> = match mode {
            AgglomerationMode::All => group.iter().map(|(_, k)| k.into()).collect(),
            AgglomerationMode::Closest => {
                let best = group
                    .iter()
                    .min_by(|a, b| {
                        let da = (a.1.position - seed).norm_squared();
                        let db = (b.1.position - seed).norm_squared();
                        da.total_cmp(&db).then(a.0.cmp(&b.0))
                    })
                    .expect("non-empty group");
                vec![(&best.1).into()]
            }
        };
        kept_positions.extend(kept.iter().map(|k| k.position));
        entries.push(CellEntry {
            affordance_id,
            orientation_id,
            kept,
            member_count: group.len() as u32,
        });
    }
    Cell {
        centroid: mean(&kept_positions).unwrap_or(*seed),
        entries,
    }
}

pub fn agglomerate(
    descriptors: &[AffordanceDescriptor],
    cell_size: f64,
    mode: AgglomerationMode,
) -> Result<AgglomeratedDescriptor, AgglomerateError> {
    if descriptors.is_empty() {
        return Err(AgglomerateError::Empty);
    }
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(AgglomerateError::InvalidCellSize(cell_size));
    }
    for d in descriptors {
        let positions: Vec<_> = d.keypoints.iter().map(|k| k.position).collect();
        let m = mean(&positions).ok_or(AgglomerateError::EmptyDescriptor(d.affordance_id))?;
        if m.norm() > ZERO_MEAN_TOLERANCE {
            return Err(AgglomerateError::NotZeroMean {
                affordance_id: d.affordance_id,
                offset: m.norm(),
            });
        }
    }
    agglomerate_in_frame(descriptors, cell_size, mode)
}

/// As [`agglomerate`], for descriptors already known to share a frame, such
/// as pruned subsets of zero-meaned descriptors. No zero-mean check.
pub fn agglomerate_in_frame(
    descriptors: &[AffordanceDescriptor],
    cell_size: f64,
    mode: AgglomerationMode,
) -> Result<AgglomeratedDescriptor, AgglomerateError> {
    if descriptors.is_empty() {
        return Err(AgglomerateError::Empty);
    }
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(AgglomerateError::InvalidCellSize(cell_size));
    }
    let mut affordances: Vec<AffordanceInfo> = Vec::with_capacity(descriptors.len());
    for d in descriptors {
        if d.keypoints.is_empty() {
            return Err(AgglomerateError::EmptyDescriptor(d.affordance_id));
        }
        if affordances.iter().any(|a| a.id == d.affordance_id) {
            return Err(AgglomerateError::DuplicateAffordance(d.affordance_id));
        }
        affordances.push(d.into());
    }
    affordances.sort_by_key(|a| a.id);

    let all: Vec<AffordanceKeypoint> = descriptors
        .iter()
        .flat_map(|d| d.keypoints.iter().copied())
        .collect();
    let first = all[0].position;
    let (min, max) = all
        .iter()
        .fold((first, first), |(lo, hi), k| (lo.inf(&k.position), hi.sup(&k.position)));
    let dims = grid_dims(&min, &max, cell_size)?;

    let mut cells: BTreeMap<u64, Vec<(usize, AffordanceKeypoint)>> = BTreeMap::new();
    for (i, k) in all.iter().enumerate() {
        let key = nearest_seed(&k.position, &min, dims, cell_size);
        cells.entry(key).or_default().push((i, *k));
    }
    let cells = cells
        .into_iter()
        .map(|(key, members)| {
            let seed = seed_position(&min, unlinear(key, dims), cell_size);
            reduce_cell(&seed, &members, mode)
        })
        .collect();

    Ok(AgglomeratedDescriptor {
        cell_size,
        mode,
        cells,
        affordances,
        source_ids: descriptors.iter().map(|d| d.affordance_id).collect(),
    })
}

fn grid_dims(min: &Vector3<f64>, max: &Vector3<f64>, e: f64) -> Result<[u64; 3], AgglomerateError> {
    let per_axis = |a: usize| ((max[a] - min[a]) / e).floor() + 1.0;
    let f = [per_axis(0), per_axis(1), per_axis(2)];
    if f.iter().product::<f64>() > u64::MAX as f64 / 2.0 {
        return Err(AgglomerateError::GridTooLarge(f.map(|v| v as u64)));
    }
    Ok(f.map(|v| v as u64))
}

fn linear(idx: [u64; 3], dims: [u64; 3]) -> u64 {
    (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2]
}

fn unlinear(key: u64, dims: [u64; 3]) -> [u64; 3] {
    [key / (dims[1] * dims[2]), (key / dims[2]) % dims[1], key % dims[2]]
}

/// Exact nearest seed among the cells around the floor cell of `p`, ties to
/// the lowest linear index.
fn nearest_seed(p: &Vector3<f64>, min: &Vector3<f64>, dims: [u64; 3], e: f64) -> u64 {
    let base: [i64; 3] = std::array::from_fn(|a| {
        (((p[a] - min[a]) / e).floor() as i64).clamp(0, dims[a] as i64 - 1)
    });
    let mut best = (f64::INFINITY, u64::MAX);
    for di in -1..=1 {
        for dj in -1..=1 {
            for dk in -1..=1 {
                let c = [base[0] + di, base[1] + dj, base[2] + dk];
                if (0..3).any(|a| c[a] < 0 || c[a] >= dims[a] as i64) {
                    continue;
                }
                let idx = c.map(|v| v as u64);
                let d2 = (p - seed_position(min, idx, e)).norm_squared();
                let key = linear(idx, dims);
                if d2 < best.0 || (d2 == best.0 && key < best.1) {
                    best = (d2, key);
                }
            }
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kp(x: f64, y: f64, z: f64, k: u32, o: u8) -> AffordanceKeypoint {
        AffordanceKeypoint {
            position: Vector3::new(x, y, z),
            provenance: Vector3::new(0.0, 0.0, -0.01),
            weight: 0.5,
            affordance_id: k,
            orientation_id: o,
        }
    }

    fn descriptor(id: u32, mut keypoints: Vec<AffordanceKeypoint>) -> AffordanceDescriptor {
        let m = mean(&keypoints.iter().map(|k| k.position).collect::<Vec<_>>()).unwrap();
        for k in &mut keypoints {
            k.position -= m;
            k.affordance_id = id;
        }
        AffordanceDescriptor {
            affordance_id: id,
            label: format!("A{id}"),
            per_orientation: keypoints.len(),
            keypoints,
            centroid_offset: m,
            object: vec![],
        }
    }

    #[test]
    fn hand_executed_cell() {
        let members = [
            (0, kp(0.004, 0.005, 0.005, 0, 0)),
            (1, kp(0.009, 0.001, 0.001, 0, 0)),
            (2, kp(0.006, 0.005, 0.005, 1, 0)),
        ];
        let cell = reduce_cell(&Vector3::repeat(0.005), &members, AgglomerationMode::Closest);
        assert_eq!(cell.entries.len(), 2);
        assert_eq!(cell.entries[0].kept[0].position, Vector3::new(0.004, 0.005, 0.005));
        assert_eq!(cell.entries[0].member_count, 2);
        assert_eq!(cell.entries[1].kept[0].position, Vector3::new(0.006, 0.005, 0.005));
        assert!((cell.centroid - Vector3::repeat(0.005)).norm() < 1e-15);
    }

    #[test]
    fn single_cell_single_affordance() {
        let d = descriptor(
            0,
            vec![kp(0.0, 0.0, 0.0, 0, 0), kp(0.001, 0.0, 0.0, 0, 0), kp(0.0, 0.002, 0.0, 0, 0)],
        );
        let a = agglomerate(&[d.clone()], 0.1, AgglomerationMode::Closest).unwrap();
        assert_eq!(a.cells.len(), 1);
        let kept = a.cells[0].entries[0].kept[0].position;
        assert_eq!(a.cells[0].centroid, kept);
        assert!(d.keypoints.iter().any(|k| k.position == kept));
    }

    #[test]
    fn all_mode_preserves_keypoints() {
        let d0 = descriptor(0, (0..50).map(|i| kp(i as f64 * 0.003, 0.0, 0.0, 0, (i % 8) as u8)).collect());
        let d1 = descriptor(1, (0..30).map(|i| kp(0.0, i as f64 * 0.004, 0.0, 0, 0)).collect());
        let a = agglomerate(&[d0, d1], 0.01, AgglomerationMode::All).unwrap();
        assert_eq!(a.keypoint_count(), 80);
        assert_eq!(a.member_count(), 80);
    }

    #[test]
    fn errors() {
        assert!(matches!(agglomerate(&[], 0.01, AgglomerationMode::Closest), Err(AgglomerateError::Empty)));
        let d = descriptor(0, vec![kp(0.0, 0.0, 0.0, 0, 0), kp(1.0, 0.0, 0.0, 0, 0)]);
        assert!(matches!(
            agglomerate(&[d.clone()], 0.0, AgglomerationMode::Closest),
            Err(AgglomerateError::InvalidCellSize(_))
        ));
        assert!(matches!(
            agglomerate(&[d.clone(), d.clone()], 0.1, AgglomerationMode::Closest),
            Err(AgglomerateError::DuplicateAffordance(0))
        ));
        let mut shifted = d;
        shifted.keypoints[0].position.x += 0.5;
        assert!(matches!(
            agglomerate(&[shifted], 0.1, AgglomerationMode::Closest),
            Err(AgglomerateError::NotZeroMean { .. })
        ));
    }

    #[test]
    fn linear_index_round_trip() {
        let dims = [3, 4, 5];
        for key in 0..60 {
            assert_eq!(linear(unlinear(key, dims), dims), key);
        }
    }

    #[test]
    fn mode_parses() {
        assert_eq!("all".parse::<AgglomerationMode>().unwrap(), AgglomerationMode::All);
        assert!("x".parse::<AgglomerationMode>().is_err());
    }
}
