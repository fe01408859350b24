use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};

use super::{
    compute_bisector, compute_provenance, orientation_rotation, sample_keypoints, AffordanceKeypoint,
    BisectorParams, InteractionExample, SamplingParams, SamplingScheme, TensorError, WeightRule,
    DEFAULT_KEYPOINTS, ORIENTATIONS,
};
use crate::cloud::mean;

/// One affordance, spun into eight orientations and zero-meaned.
///
/// Keypoints are stored orientation-major: copy `m` occupies
/// `keypoints[m * per_orientation..(m + 1) * per_orientation]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffordanceDescriptor {
    pub affordance_id: u32,
    pub label: String,
    pub per_orientation: usize,
    pub keypoints: Vec<AffordanceKeypoint>,
    /// mean removed by zero-meaning
    pub centroid_offset: Vector3<f64>,
    /// query object in the frame the spin was applied in; used for overlays
    pub object: Vec<Vector3<f64>>,
}

impl AffordanceDescriptor {
    pub fn orientation(&self, m: u8) -> &[AffordanceKeypoint] {
        let n = self.per_orientation;
        let start = m as usize * n;
        &self.keypoints[start..start + n]
    }

    /// Maps the stored object into the scene when the descriptor origin sits
    /// at `test_point` in orientation bin `orientation`.
    pub fn object_pose(&self, test_point: &Vector3<f64>, orientation: u8) -> Isometry3<f64> {
        object_pose(test_point, orientation, &self.centroid_offset)
    }
}

pub(crate) fn object_pose(
    test_point: &Vector3<f64>,
    orientation: u8,
    centroid_offset: &Vector3<f64>,
) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::from(test_point - centroid_offset),
        UnitQuaternion::from_rotation_matrix(&orientation_rotation(orientation)),
    )
}

/// Spins canonical keypoints into all orientations about +z, then removes the
/// mean of the whole set.
pub fn augment_descriptor(
    keypoints: Vec<AffordanceKeypoint>,
    label: impl Into<String>,
) -> Result<AffordanceDescriptor, TensorError> {
    let first = keypoints.first().ok_or(TensorError::EmptyTensor)?;
    let affordance_id = first.affordance_id;
    for (index, k) in keypoints.iter().enumerate() {
        if k.orientation_id != 0 {
            return Err(TensorError::NotCanonical {
                index,
                orientation: k.orientation_id,
            });
        }
        if k.affordance_id != affordance_id {
            return Err(TensorError::MixedAffordances);
        }
    }
    let n = keypoints.len();
    let mut out = Vec::with_capacity(n * ORIENTATIONS as usize);
    for m in 0..ORIENTATIONS {
        let r = orientation_rotation(m);
        out.extend(keypoints.iter().map(|k| AffordanceKeypoint {
            position: r * k.position,
            provenance: r * k.provenance,
            orientation_id: m,
            ..*k
        }));
    }
    let positions: Vec<_> = out.iter().map(|k| k.position).collect();
    let centroid = mean(&positions).expect("non-empty");
    for k in &mut out {
        k.position -= centroid;
    }
    Ok(AffordanceDescriptor {
        affordance_id,
        label: label.into(),
        per_orientation: n,
        keypoints: out,
        centroid_offset: centroid,
        object: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildParams {
    pub keypoints_per_orientation: usize,
    /// bisector samples drawn before keypoint sampling
    pub tensor_samples: usize,
    pub bisector: BisectorParams,
    pub scheme: SamplingScheme,
    pub weight_rule: WeightRule,
    /// the object must come within this distance of the scene, meters
    pub contact_bound: f64,
    pub seed: u64,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            keypoints_per_orientation: DEFAULT_KEYPOINTS,
            tensor_samples: 4096,
            bisector: BisectorParams::default(),
            scheme: SamplingScheme::default(),
            weight_rule: WeightRule::default(),
            contact_bound: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub descriptor: AffordanceDescriptor,
    pub tensor_size: usize,
    pub bisector_shortfall: bool,
    pub with_replacement: bool,
}

/// Full single-affordance pipeline: bisector, provenance, keypoint sampling
/// and augmentation. Positions are taken relative to the example anchor, so
/// the spin axis is the vertical line through it.
pub fn build_descriptor(
    example: &InteractionExample,
    params: &BuildParams,
) -> Result<BuildOutput, TensorError> {
    example.validate(params.contact_bound)?;
    let anchor = example.anchor_point()?;
    let bisector = compute_bisector(example, params.tensor_samples, &params.bisector, params.seed)?;
    let mut tensor = compute_provenance(&bisector.samples);
    for t in &mut tensor {
        t.position -= anchor;
    }
    let sampled = sample_keypoints(
        &tensor,
        example.affordance_id,
        &SamplingParams {
            count: params.keypoints_per_orientation,
            scheme: params.scheme,
            weight_rule: params.weight_rule,
            seed: params.seed ^ 0x5EED_0F_C0FFEE,
        },
    )?;
    let mut descriptor = augment_descriptor(sampled.keypoints, example.label.clone())?;
    descriptor.object = example
        .placed_object()
        .points()
        .iter()
        .map(|p| p - anchor)
        .collect();
    Ok(BuildOutput {
        descriptor,
        tensor_size: tensor.len(),
        bisector_shortfall: bisector.shortfall(),
        with_replacement: sampled.with_replacement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn canonical(n: usize, seed: u64) -> Vec<AffordanceKeypoint> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| AffordanceKeypoint {
                position: Vector3::from_fn(|_, _| rng.random_range(-0.2..0.3)),
                provenance: Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05)),
                weight: 0.5,
                affordance_id: 3,
                orientation_id: 0,
            })
            .collect()
    }

    #[test]
    fn count_and_zero_mean() {
        let d = augment_descriptor(canonical(512, 1), "Place-book").unwrap();
        assert_eq!(d.keypoints.len(), 4096);
        let m = mean(&d.keypoints.iter().map(|k| k.position).collect::<Vec<_>>()).unwrap();
        assert!(m.norm() < 1e-12);
        // spin about +z leaves only a vertical offset
        assert!(d.centroid_offset.x.abs() < 1e-12 && d.centroid_offset.y.abs() < 1e-12);
    }

    #[test]
    fn first_copy_is_shifted_input() {
        let input = canonical(20, 2);
        let d = augment_descriptor(input.clone(), "x").unwrap();
        for (k, orig) in d.orientation(0).iter().zip(&input) {
            assert!((k.position + d.centroid_offset - orig.position).norm() < 1e-12);
            assert_eq!(k.provenance, orig.provenance);
        }
    }

    #[test]
    fn rotation_preserves_lengths_and_distances() {
        let input = canonical(30, 3);
        let d = augment_descriptor(input.clone(), "x").unwrap();
        for m in 0..ORIENTATIONS {
            let copy = d.orientation(m);
            for (i, k) in copy.iter().enumerate() {
                assert_eq!(k.orientation_id, m);
                assert!((k.provenance.norm() - input[i].provenance.norm()).abs() < 1e-9);
                let j = (i + 7) % copy.len();
                let a = (copy[i].position - copy[j].position).norm();
                let b = (input[i].position - input[j].position).norm();
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_non_canonical_or_empty() {
        let mut input = canonical(3, 4);
        input[1].orientation_id = 2;
        assert!(matches!(
            augment_descriptor(input, "x"),
            Err(TensorError::NotCanonical { index: 1, orientation: 2 })
        ));
        assert!(matches!(augment_descriptor(vec![], "x"), Err(TensorError::EmptyTensor)));
    }

    #[test]
    fn pose_maps_object_to_copy() {
        let input = canonical(10, 5);
        let d = augment_descriptor(input.clone(), "x").unwrap();
        let t = Vector3::new(1.0, 2.0, 0.5);
        for m in 0..ORIENTATIONS {
            let pose = d.object_pose(&t, m);
            for (k, orig) in d.orientation(m).iter().zip(&input) {
                let world = pose * nalgebra::Point3::from(orig.position);
                assert!((world.coords - (t + k.position)).norm() < 1e-12);
            }
        }
    }
}
