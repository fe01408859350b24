use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{InteractionExample, TensorError};
use crate::cloud::{Aabb, SpatialIndex};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectorParams {
    /// largest accepted |d(b, scene) - d(b, object)|, meters
    pub tolerance: f64,
    pub max_iterations: usize,
    /// give up after `samples * attempts_per_sample` candidates
    pub attempts_per_sample: usize,
    /// seed jitter as a fraction of the seed pair gap; its length is capped
    /// at half the gap
    pub jitter: f64,
}

impl Default for BisectorParams {
    fn default() -> Self {
        Self {
            tolerance: 0.002,
            max_iterations: 32,
            attempts_per_sample: 20,
            jitter: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectorSample {
    pub position: Vector3<f64>,
    /// nearest scene point to `position`
    pub scene_point: Vector3<f64>,
    /// nearest object point to `position`
    pub object_point: Vector3<f64>,
}

impl BisectorSample {
    pub fn imbalance(&self) -> f64 {
        ((self.position - self.scene_point).norm() - (self.position - self.object_point).norm()).abs()
    }
}

#[derive(Debug, Clone)]
pub struct BisectorResult {
    pub samples: Vec<BisectorSample>,
    pub requested: usize,
    pub attempts: usize,
    /// box every accepted sample lies in
    pub region: Aabb,
}

impl BisectorResult {
    pub fn shortfall(&self) -> bool {
        self.samples.len() < self.requested
    }
}

/// Samples the surface equidistant from the placed query object and the
/// scene.
///
/// Candidates start at the midpoint between a random object point and its
/// nearest scene point, are jittered by less than half the pair gap, then pushed onto the surface by Newton
/// steps on `d(x, scene) - d(x, object)`. Seeds come from object points only,
/// so scene points hidden behind the scene surface never change the result.
///
/// Accepted samples lie in the joint bounding box grown by the object
/// diameter (or by the widest seed gap when the object is a single point).
pub fn compute_bisector(
    example: &InteractionExample,
    samples: usize,
    params: &BisectorParams,
    seed: u64,
) -> Result<BisectorResult, TensorError> {
    let object = example.placed_object();
    if object.is_empty() {
        return Err(TensorError::EmptyCloud("object"));
    }
    if example.scene_patch.is_empty() {
        return Err(TensorError::EmptyCloud("scene"));
    }
    let scene_index = SpatialIndex::from_cloud(&example.scene_patch);
    let object_index = SpatialIndex::from_cloud(&object);

    let mut seeds = Vec::with_capacity(object.len());
    let mut widest_gap: f64 = 0.0;
    for (i, o) in object.points().iter().enumerate() {
        let (si, d) = scene_index.try_nearest(o)?;
        if d == 0.0 {
            return Err(TensorError::OverlappingClouds { object_index: i });
        }
        widest_gap = widest_gap.max(d);
        seeds.push((*o, scene_index.point(si), d));
    }

    let object_box = object.bounds().expect("non-empty");
    let margin = object_box.diagonal().max(widest_gap);
    let region = object_box
        .union(&example.scene_patch.bounds().expect("non-empty"))
        .expanded(margin);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = samples.saturating_mul(params.attempts_per_sample.max(1));
    let mut out = Vec::with_capacity(samples);
    let mut attempts = 0;
    while out.len() < samples && attempts < budget {
        attempts += 1;
        let (o, s, gap) = seeds[rng.random_range(0..seeds.len())];
        let mut noise = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)) * (params.jitter * gap);
        // stay within the ball touching the scene point from the object side
        let cap = 0.5 * gap;
        if noise.norm() > cap {
            noise *= cap / noise.norm();
        }
        let start = (o + s) * 0.5 + noise;
        if let Some(b) = refine(start, &scene_index, &object_index, params) {
            if b.imbalance() <= params.tolerance && region.contains(&b.position) {
                out.push(b);
            }
        }
    }
    if out.len() < samples {
        log::warn!(
            "bisector for '{}': {} of {} samples after {} attempts",
            example.label,
            out.len(),
            samples,
            attempts
        );
    }
    Ok(BisectorResult {
        samples: out,
        requested: samples,
        attempts,
        region,
    })
}

fn refine(
    mut x: Vector3<f64>,
    scene: &SpatialIndex,
    object: &SpatialIndex,
    params: &BisectorParams,
) -> Option<BisectorSample> {
    let stop = params.tolerance / 16.0;
    for _ in 0..=params.max_iterations {
        let (si, ds) = scene.nearest(&x)?;
        let (oi, dobj) = object.nearest(&x)?;
        let (s, o) = (scene.point(si), object.point(oi));
        let f = ds - dobj;
        if f.abs() <= stop {
            return Some(BisectorSample {
                position: x,
                scene_point: s,
                object_point: o,
            });
        }
        if ds == 0.0 || dobj == 0.0 {
            return None;
        }
        let grad = (x - s) / ds - (x - o) / dobj;
        let g2 = grad.norm_squared();
        if g2 < 1e-12 {
            return None;
        }
        x -= grad * (f / g2);
    }
    let (si, _) = scene.nearest(&x)?;
    let (oi, _) = object.nearest(&x)?;
    Some(BisectorSample {
        position: x,
        scene_point: scene.point(si),
        object_point: object.point(oi),
    })
}
