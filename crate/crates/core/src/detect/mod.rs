//! Scoring descriptors against scenes at sampled test points.

pub mod bench;
pub mod export;
pub mod score;

use std::cmp::Ordering;

use nalgebra::{Isometry3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agglomerate::AgglomeratedDescriptor;
use crate::cloud::{PointCloud, SpatialIndex};
use crate::tensor::descriptor::object_pose;

pub use bench::{benchmark, BenchError, BenchReport};
pub use export::{write_detections_csv, overlay_cloud};
pub use score::{contribution, default_search_half_width, PointScores, Scorer};

/// Which descriptor pipeline produced the descriptor; picks the default
/// detection threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    #[default]
    Agglomeration,
    Saliency,
}

impl Pipeline {
    pub fn default_threshold(self) -> f64 {
        match self {
            Pipeline::Agglomeration => 0.7,
            Pipeline::Saliency => 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestPoints {
    Count(usize),
    /// per square meter of the scene's horizontal footprint
    PerSquareMeter(f64),
}

impl Default for TestPoints {
    fn default() -> Self {
        TestPoints::PerSquareMeter(100.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub threshold: f64,
    pub test_points: TestPoints,
    /// half-width of the cube searched around each test point
    pub search_half_width: Option<f64>,
    pub seed: u64,
}

impl DetectorConfig {
    pub fn for_pipeline(pipeline: Pipeline) -> Self {
        Self {
            threshold: pipeline.default_threshold(),
            ..Default::default()
        }
    }
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            threshold: Pipeline::Agglomeration.default_threshold(),
            test_points: TestPoints::default(),
            search_half_width: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// index of the test point in the scene cloud
    pub test_point_id: usize,
    pub test_point: Vector3<f64>,
    pub affordance_id: u32,
    pub orientation_id: u8,
    pub score: f64,
    /// places the affordance's query object in the scene
    pub object_pose: Isometry3<f64>,
}

/// Distinct scene point indices drawn uniformly without replacement. Asking
/// for more points than the scene has returns all of them, shuffled.
pub fn sample_test_points(scene: &PointCloud, n: usize, seed: u64) -> Vec<usize> {
    let len = scene.len();
    if n > len {
        log::info!("{n} test points requested from a {len}-point scene; using all of them");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, len, n.min(len)).into_vec()
}

/// Test-point count implied by `points` for `scene`.
pub fn test_point_count(scene: &PointCloud, points: TestPoints) -> usize {
    match points {
        TestPoints::Count(n) => n,
        TestPoints::PerSquareMeter(density) => match scene.bounds() {
            None => 0,
            Some(b) => {
                let e = b.extent();
                ((density * e.x * e.y).ceil() as usize).max(1)
            }
        },
    }
}

/// Detections at the given scene points: for every test point and
/// affordance, the best orientation if its score reaches `threshold`.
/// Sorted by score descending, then test point, then affordance.
pub fn detect_at(
    scene: &SpatialIndex,
    descriptor: &AgglomeratedDescriptor,
    scorer: &Scorer,
    test_ids: &[usize],
    threshold: f64,
) -> Vec<Detection> {
    let ids = scorer.affordance_ids();
    let mut out: Vec<Detection> = test_ids
        .par_iter()
        .map(|&tid| {
            let t = scene.point(tid);
            let s = scorer.score(scene, &t);
            let mut found = Vec::new();
            for (a, &k) in ids.iter().enumerate() {
                let (o, score) = s.best(a);
                if score >= threshold {
                    let offset = descriptor.affordance(k).expect("scorer ids come from descriptor").centroid_offset;
                    found.push(Detection {
                        test_point_id: tid,
                        test_point: t,
                        affordance_id: k,
                        orientation_id: o,
                        score,
                        object_pose: object_pose(&t, o, &offset),
                    });
                }
            }
            found
        })
        .flatten()
        .collect();
    out.sort_by(detection_order);
    out
}

fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.test_point_id.cmp(&b.test_point_id))
        .then(a.affordance_id.cmp(&b.affordance_id))
}

pub fn detect_scene(scene: &PointCloud, descriptor: &AgglomeratedDescriptor, config: &DetectorConfig) -> Vec<Detection> {
    if scene.is_empty() {
        return Vec::new();
    }
    let n = test_point_count(scene, config.test_points);
    let test_ids = sample_test_points(scene, n, config.seed);
    let index = SpatialIndex::from_cloud(scene);
    let scorer = Scorer::new(descriptor, config.search_half_width);
    detect_at(&index, descriptor, &scorer, &test_ids, config.threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect()).unwrap()
    }

    #[test]
    fn full_sample_is_permutation() {
        let mut ids = sample_test_points(&line(50), 50, 3);
        ids.sort_unstable();
        assert_eq!(ids, (0..50).collect::<Vec<_>>());
        assert_eq!(sample_test_points(&line(5), 9, 3).len(), 5);
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(sample_test_points(&line(100), 10, 8), sample_test_points(&line(100), 10, 8));
    }

    #[test]
    fn thresholds() {
        assert_eq!(Pipeline::Agglomeration.default_threshold(), 0.7);
        assert_eq!(Pipeline::Saliency.default_threshold(), 0.5);
    }

    #[test]
    fn density_count() {
        let c = PointCloud::new(vec![Vector3::zeros(), Vector3::new(2.0, 0.5, 0.3)]).unwrap();
        assert_eq!(test_point_count(&c, TestPoints::PerSquareMeter(10.0)), 10);
        assert_eq!(test_point_count(&c, TestPoints::Count(3)), 3);
        assert_eq!(test_point_count(&PointCloud::empty(), TestPoints::PerSquareMeter(10.0)), 0);
    }
}
