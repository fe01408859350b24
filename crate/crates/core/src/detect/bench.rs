use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use thiserror::Error;

use super::Scorer;
use crate::agglomerate::AgglomeratedDescriptor;
use crate::cloud::SpatialIndex;
use crate::tensor::AffordanceDescriptor;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("agglomerated descriptor covers affordances {agglomerated:?}, single descriptors cover {single:?}")]
    MismatchedAffordances { agglomerated: Vec<u32>, single: Vec<u32> },
    #[error("no test points")]
    NoTestPoints,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub test_points: usize,
    pub affordances: usize,
    pub agglomerated_ms_per_point: f64,
    pub sequential_ms_per_point: f64,
    pub agglomerated_cells: usize,
    pub agglomerated_keypoints: usize,
    pub sequential_keypoints: usize,
}

impl BenchReport {
    pub fn speedup(&self) -> f64 {
        self.sequential_ms_per_point / self.agglomerated_ms_per_point
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "test_points = {}", self.test_points);
        let _ = writeln!(s, "affordances = {}", self.affordances);
        let _ = writeln!(s, "agglomerated_ms_per_point = {:.4}", self.agglomerated_ms_per_point);
        let _ = writeln!(s, "sequential_ms_per_point = {:.4}", self.sequential_ms_per_point);
        let _ = writeln!(s, "speedup = {:.3}", self.speedup());
        let _ = writeln!(s, "agglomerated_cells = {}", self.agglomerated_cells);
        let _ = writeln!(s, "agglomerated_keypoints = {}", self.agglomerated_keypoints);
        let _ = writeln!(s, "sequential_keypoints = {}", self.sequential_keypoints);
        s
    }
}

/// Times one agglomerated query against one query per single descriptor, at
/// the same test points, on the calling thread.
pub fn benchmark(
    scene: &SpatialIndex,
    test_ids: &[usize],
    agglomerated: &AgglomeratedDescriptor,
    singles: &[AffordanceDescriptor],
) -> Result<BenchReport, BenchError> {
    if test_ids.is_empty() {
        return Err(BenchError::NoTestPoints);
    }
    let mut single_ids: Vec<u32> = singles.iter().map(|d| d.affordance_id).collect();
    single_ids.sort_unstable();
    if single_ids != agglomerated.affordance_ids() {
        return Err(BenchError::MismatchedAffordances {
            agglomerated: agglomerated.affordance_ids(),
            single: single_ids,
        });
    }
    let multi = Scorer::new(agglomerated, None);
    let raw: Vec<Scorer> = singles
        .iter()
        .map(|d| Scorer::new(&AgglomeratedDescriptor::from_single(d), None))
        .collect();

    let start = Instant::now();
    for &t in test_ids {
        black_box(multi.score(scene, &scene.point(t)));
    }
    let multi_ms = start.elapsed().as_secs_f64() * 1e3;

    let start = Instant::now();
    for &t in test_ids {
        let p = scene.point(t);
        for s in &raw {
            black_box(s.score(scene, &p));
        }
    }
    let seq_ms = start.elapsed().as_secs_f64() * 1e3;

    let n = test_ids.len() as f64;
    Ok(BenchReport {
        test_points: test_ids.len(),
        affordances: singles.len(),
        agglomerated_ms_per_point: multi_ms / n,
        sequential_ms_per_point: seq_ms / n,
        agglomerated_cells: agglomerated.cells.len(),
        agglomerated_keypoints: agglomerated.keypoint_count(),
        sequential_keypoints: singles.iter().map(|d| d.keypoints.len()).sum(),
    })
}
