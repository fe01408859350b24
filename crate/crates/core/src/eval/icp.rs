use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};

use super::EvalError;
use crate::cloud::{PointCloud, SpatialIndex};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// stop once the RMS residual improves by less than this, meters
    pub tolerance: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// maps the candidate onto the template
    pub transform: Isometry3<f64>,
    /// RMS nearest-neighbour distance after `transform`, meters
    pub residual: f64,
    /// exp(-residual / sigma), sigma = template bbox diagonal / 20
    pub score: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Least-squares rigid transform taking `src[i]` to `dst[i]`.
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Isometry3<f64> {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut v = v_t.transpose();
    if (v * u.transpose()).determinant() < 0.0 {
        v.column_mut(2).neg_mut();
    }
    let r = Rotation3::from_matrix_unchecked(v * u.transpose());
    let t = cd - r * cs;
    Isometry3::from_parts(Translation3::from(t), UnitQuaternion::from_rotation_matrix(&r))
}

fn rms(index: &SpatialIndex, pts: &[Vector3<f64>], pose: &Isometry3<f64>) -> (f64, Vec<Vector3<f64>>) {
    let mut sum = 0.0;
    let mut matched = Vec::with_capacity(pts.len());
    for p in pts {
        let q = (pose * Point3::from(*p)).coords;
        let (j, d) = index.nearest(&q).expect("non-empty");
        sum += d * d;
        matched.push(index.point(j));
    }
    ((sum / pts.len() as f64).sqrt(), matched)
}

/// Point-to-point ICP aligning `candidate` to `template`, started from the
/// centroid offset. Returns the best alignment seen; `converged` is false if
/// the iteration budget ran out first.
pub fn icp_score(template: &PointCloud, candidate: &PointCloud, params: &IcpParams) -> Result<IcpResult, EvalError> {
    if template.is_empty() || candidate.is_empty() {
        return Err(EvalError::EmptyCloud);
    }
    let index = SpatialIndex::from_cloud(template);
    let pts = candidate.points();
    let shift = template.centroid().expect("non-empty") - candidate.centroid().expect("non-empty");
    let mut pose = Isometry3::translation(shift.x, shift.y, shift.z);
    let (mut residual, mut matched) = rms(&index, pts, &pose);
    let mut best = (residual, pose);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iterations {
        iterations += 1;
        pose = kabsch(pts, &matched);
        let (r, m) = rms(&index, pts, &pose);
        if r < best.0 {
            best = (r, pose);
        }
        let step = residual - r;
        residual = r;
        matched = m;
        if step.abs() < params.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("ICP hit {} iterations; returning best alignment", params.max_iterations);
    }
    let sigma = template.bounds().expect("non-empty").diagonal() / 20.0;
    let score = if sigma > 0.0 { (-best.0 / sigma).exp() } else if best.0 == 0.0 { 1.0 } else { 0.0 };
    Ok(IcpResult {
        transform: best.1,
        residual: best.0,
        score,
        iterations,
        converged,
    })
}
