use nalgebra::Vector3;

use crate::agglomerate::AgglomeratedDescriptor;
use crate::cloud::{Aabb, SpatialIndex};
use crate::tensor::ORIENTATIONS;

const BINS: usize = ORIENTATIONS as usize;

/// Agreement between a test vector and a stored provenance vector, in
/// `[0, 1]`, with 1 only when they coincide.
///
/// `exp(-d^2 / (2 w^2))` with `d = |v - p| / |p|`.
pub fn contribution(v: &Vector3<f64>, p: &Vector3<f64>, w: f64) -> f64 {
    let d = (v - p).norm() / p.norm();
    (-d * d / (2.0 * w * w)).exp()
}

#[derive(Debug, Clone, Copy)]
struct PackedEntry {
    slot: u32,
    provenance: Vector3<f64>,
    inv_norm: f64,
    inv_two_w2: f64,
}

#[derive(Debug, Clone, Copy)]
struct PackedCell {
    centroid: Vector3<f64>,
    start: u32,
    end: u32,
}

/// Per-affordance, per-orientation scores at one test point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointScores {
    /// aligned with [`Scorer::affordance_ids`]
    pub scores: Vec<[f64; BINS]>,
}

impl PointScores {
    /// Best orientation and its score for affordance slot `a`, ties to the
    /// lowest bin.
    pub fn best(&self, a: usize) -> (u8, f64) {
        let mut best = (0u8, self.scores[a][0]);
        for (o, &s) in self.scores[a].iter().enumerate().skip(1) {
            if s > best.1 {
                best = (o as u8, s);
            }
        }
        best
    }
}

/// Precomputed, flattened view of a descriptor for repeated scoring.
#[derive(Debug, Clone)]
pub struct Scorer {
    affordance_ids: Vec<u32>,
    /// entries per (affordance slot, orientation)
    counts: Vec<f64>,
    cells: Vec<PackedCell>,
    entries: Vec<PackedEntry>,
    search_half_width: f64,
}

impl Scorer {
    /// `search_half_width` bounds the cube around the test point in which
    /// nearest scene points are looked up; `None` picks the default from
    /// the descriptor extent.
    pub fn new(descriptor: &AgglomeratedDescriptor, search_half_width: Option<f64>) -> Self {
        let affordance_ids = descriptor.affordance_ids();
        let slot_of = |k: u32| affordance_ids.binary_search(&k).expect("entry affordance in directory");
        let mut counts = vec![0.0; affordance_ids.len() * BINS];
        let mut cells = Vec::with_capacity(descriptor.cells.len());
        let mut entries = Vec::new();
        for c in &descriptor.cells {
            let start = entries.len() as u32;
            for e in &c.entries {
                let slot = (slot_of(e.affordance_id) * BINS + e.orientation_id as usize) as u32;
                for k in &e.kept {
                    counts[slot as usize] += 1.0;
                    entries.push(PackedEntry {
                        slot,
                        provenance: k.provenance,
                        inv_norm: 1.0 / k.provenance.norm(),
                        inv_two_w2: 1.0 / (2.0 * k.weight * k.weight),
                    });
                }
            }
            cells.push(PackedCell {
                centroid: c.centroid,
                start,
                end: entries.len() as u32,
            });
        }
        Self {
            affordance_ids,
            counts,
            cells,
            entries,
            search_half_width: search_half_width.unwrap_or_else(|| default_search_half_width(descriptor)),
        }
    }

    pub fn affordance_ids(&self) -> &[u32] {
        &self.affordance_ids
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn search_half_width(&self) -> f64 {
        self.search_half_width
    }

    pub fn score(&self, scene: &SpatialIndex, t: &Vector3<f64>) -> PointScores {
        self.score_inner(scene, t, None)
    }

    /// Also returns, per cell, the scene point its test vector ended on.
    pub fn score_with_targets(&self, scene: &SpatialIndex, t: &Vector3<f64>) -> (PointScores, Vec<Option<usize>>) {
        let mut targets = Vec::with_capacity(self.cells.len());
        let s = self.score_inner(scene, t, Some(&mut targets));
        (s, targets)
    }

    fn score_inner(
        &self,
        scene: &SpatialIndex,
        t: &Vector3<f64>,
        mut targets: Option<&mut Vec<Option<usize>>>,
    ) -> PointScores {
        let mut sums = vec![0.0; self.counts.len()];
        let region = Aabb::cube(*t, self.search_half_width);
        for c in &self.cells {
            let q = t + c.centroid;
            let hit = scene.nearest_in_box(&q, &region);
            if let Some(ts) = targets.as_deref_mut() {
                ts.push(hit.map(|h| h.0));
            }
            let Some((i, _)) = hit else { continue };
            let v = scene.point(i) - q;
            for e in &self.entries[c.start as usize..c.end as usize] {
                let d = (v - e.provenance).norm() * e.inv_norm;
                sums[e.slot as usize] += (-d * d * e.inv_two_w2).exp();
            }
        }
        let scores = sums
            .chunks(BINS)
            .zip(self.counts.chunks(BINS))
            .map(|(s, n)| std::array::from_fn(|o| if n[o] > 0.0 { s[o] / n[o] } else { 0.0 }))
            .collect();
        PointScores { scores }
    }
}

/// Half the diagonal of the smallest origin-centred box holding every cell
/// centroid and every provenance endpoint.
pub fn default_search_half_width(descriptor: &AgglomeratedDescriptor) -> f64 {
    let mut reach = Vector3::<f64>::zeros();
    for c in &descriptor.cells {
        reach = reach.sup(&c.centroid.abs());
        for e in &c.entries {
            for k in &e.kept {
                reach = reach.sup(&(k.position + k.provenance).abs());
            }
        }
    }
    reach.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agglomerate::{AgglomerationMode, Cell, CellEntry, StoredKeypoint, AffordanceInfo};

    fn one_entry(centroid: Vector3<f64>, p: Vector3<f64>, w: f64) -> AgglomeratedDescriptor {
        AgglomeratedDescriptor {
            cell_size: 0.01,
            mode: AgglomerationMode::Closest,
            cells: vec![Cell {
                centroid,
                entries: vec![CellEntry {
                    affordance_id: 5,
                    orientation_id: 2,
                    kept: vec![StoredKeypoint {
                        position: centroid,
                        provenance: p,
                        weight: w,
                    }],
                    member_count: 1,
                }],
            }],
            affordances: vec![AffordanceInfo {
                id: 5,
                label: "x".into(),
                centroid_offset: Vector3::zeros(),
                per_orientation: 1,
                object: vec![],
            }],
            source_ids: vec![5],
        }
    }

    #[test]
    fn exact_match_scores_one() {
        let d = one_entry(Vector3::new(0.0, 0.0, 0.05), Vector3::new(0.0, 0.0, -0.05), 0.5);
        let scene = SpatialIndex::build(vec![Vector3::new(1.0, 1.0, 0.0), Vector3::new(1.0, 1.0, 0.5)]);
        let s = Scorer::new(&d, None).score(&scene, &Vector3::new(1.0, 1.0, 0.0));
        assert_eq!(s.scores[0][2], 1.0);
        assert_eq!(s.best(0), (2, 1.0));
        assert_eq!(s.scores[0][0], 0.0);
    }

    #[test]
    fn delta_equal_to_weight() {
        let p = Vector3::new(0.0, 0.0, -0.1);
        let w = 0.3;
        // |v - p| / |p| = w
        let v = p + Vector3::new(w * 0.1, 0.0, 0.0);
        assert!((contribution(&v, &p, w) - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn empty_neighbourhood_scores_zero() {
        let d = one_entry(Vector3::zeros(), Vector3::new(0.0, 0.0, -0.05), 0.5);
        let scene = SpatialIndex::build(vec![Vector3::new(5.0, 0.0, 0.0)]);
        let s = Scorer::new(&d, Some(0.5)).score(&scene, &Vector3::zeros());
        assert!(s.scores[0].iter().all(|&v| v == 0.0));
        let empty = SpatialIndex::build(vec![]);
        let s = Scorer::new(&d, None).score(&empty, &Vector3::zeros());
        assert!(s.scores[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn default_search_covers_descriptor() {
        let d = one_entry(Vector3::new(0.03, 0.0, 0.0), Vector3::new(0.0, 0.04, 0.0), 0.5);
        assert!((default_search_half_width(&d) - 0.05).abs() < 1e-15);
    }
}
