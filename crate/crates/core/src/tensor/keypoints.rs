use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BisectorSample, TensorError};

/// A tensor element: bisector position and the vector from it to the scene
/// point that generated it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProvenancePair {
    pub position: Vector3<f64>,
    pub provenance: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffordanceKeypoint {
    pub position: Vector3<f64>,
    /// points from `position` toward its generating scene point
    pub provenance: Vector3<f64>,
    pub weight: f64,
    pub affordance_id: u32,
    pub orientation_id: u8,
}

/// Maps a provenance magnitude to the tolerance width used when scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum WeightRule {
    /// `w = |p|` in meters
    Magnitude,
    /// `w = |p| / (|p| + scale)`, dimensionless and below 1
    Saturating { scale_m: f64 },
}

impl Default for WeightRule {
    fn default() -> Self {
        WeightRule::Saturating { scale_m: 0.01 }
    }
}

impl WeightRule {
    pub fn weight(&self, magnitude: f64) -> f64 {
        match *self {
            WeightRule::Magnitude => magnitude,
            WeightRule::Saturating { scale_m } => magnitude / (magnitude + scale_m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingScheme {
    Uniform,
    /// selection probability proportional to `1 / |p|`
    #[default]
    Proximity,
}

impl SamplingScheme {
    fn weight(&self, pair: &ProvenancePair) -> f64 {
        match self {
            SamplingScheme::Uniform => 1.0,
            SamplingScheme::Proximity => 1.0 / pair.provenance.norm(),
        }
    }
}

impl fmt::Display for SamplingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingScheme::Uniform => "uniform",
            SamplingScheme::Proximity => "proximity",
        })
    }
}

impl FromStr for SamplingScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(SamplingScheme::Uniform),
            "proximity" | "proximity-weighted" => Ok(SamplingScheme::Proximity),
            _ => Err(format!("unknown sampling scheme '{s}' (uniform, proximity)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingParams {
    pub count: usize,
    pub scheme: SamplingScheme,
    pub weight_rule: WeightRule,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            count: super::DEFAULT_KEYPOINTS,
            scheme: SamplingScheme::default(),
            weight_rule: WeightRule::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampledKeypoints {
    pub keypoints: Vec<AffordanceKeypoint>,
    /// tensor indices of the keypoints, same order
    pub indices: Vec<usize>,
    /// set when the tensor was smaller than the requested count
    pub with_replacement: bool,
}

/// `p = s - b` per sample. Samples sitting on their scene point are dropped.
pub fn compute_provenance(samples: &[BisectorSample]) -> Vec<ProvenancePair> {
    let mut out = Vec::with_capacity(samples.len());
    let mut dropped = 0;
    for b in samples {
        let p = b.scene_point - b.position;
        if p.norm() > 0.0 {
            out.push(ProvenancePair {
                position: b.position,
                provenance: p,
            });
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} bisector samples with zero-length provenance");
    }
    out
}

/// Draws `params.count` keypoints, all with orientation 0.
///
/// Without replacement when the tensor is large enough. Otherwise every
/// element is taken once and the remainder is drawn with replacement.
pub fn sample_keypoints(
    tensor: &[ProvenancePair],
    affordance_id: u32,
    params: &SamplingParams,
) -> Result<SampledKeypoints, TensorError> {
    if tensor.is_empty() {
        return Err(TensorError::EmptyTensor);
    }
    if params.count == 0 {
        return Err(TensorError::InvalidCount);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let scheme = params.scheme;
    let n = params.count;

    let (indices, with_replacement) = if tensor.len() >= n {
        let picked = match scheme {
            SamplingScheme::Uniform => index::sample(&mut rng, tensor.len(), n),
            SamplingScheme::Proximity => {
                index::sample_weighted(&mut rng, tensor.len(), |i| scheme.weight(&tensor[i]), n)
                    .expect("provenance magnitudes are positive and finite")
            }
        };
        let mut v = picked.into_vec();
        v.sort_unstable();
        (v, false)
    } else {
        log::warn!(
            "tensor has {} elements, fewer than {n}; sampling with replacement",
            tensor.len()
        );
        let mut v: Vec<usize> = (0..tensor.len()).collect();
        let extra = n - tensor.len();
        match scheme {
            SamplingScheme::Uniform => {
                v.extend((0..extra).map(|_| rng.random_range(0..tensor.len())));
            }
            SamplingScheme::Proximity => {
                let dist = WeightedIndex::new(tensor.iter().map(|t| scheme.weight(t)))
                    .expect("provenance magnitudes are positive and finite");
                v.extend((0..extra).map(|_| dist.sample(&mut rng)));
            }
        }
        (v, true)
    };

    let keypoints = indices
        .iter()
        .map(|&i| {
            let t = &tensor[i];
            AffordanceKeypoint {
                position: t.position,
                provenance: t.provenance,
                weight: params.weight_rule.weight(t.provenance.norm()),
                affordance_id,
                orientation_id: 0,
            }
        })
        .collect();
    Ok(SampledKeypoints {
        keypoints,
        indices,
        with_replacement,
    })
}
