//! Small synthetic object/scene pairs with known geometry.
//!
//! Two families:
//! - post fixtures: a vertical post on a floor with a bracket block on one
//!   side; the query object is a partial ring around the post with a tab
//!   resting above the block. The spin axis is the post axis, so the
//!   descriptor origin lands inside the post.
//! - table fixtures: boxes hovering just above a table top, similar enough
//!   that their descriptors overlap heavily.

use std::f64::consts::{PI, TAU};

use nalgebra::{Isometry3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;
use crate::tensor::{AffordanceDescriptor, InteractionExample};

/// Surface samples of an axis-aligned box, roughly `spacing` apart.
pub fn box_surface(min: Vector3<f64>, max: Vector3<f64>, spacing: f64) -> Vec<Vector3<f64>> {
    let steps = |a: usize| (((max[a] - min[a]) / spacing).ceil() as usize).max(1);
    let n = [steps(0), steps(1), steps(2)];
    let at = |a: usize, i: usize| min[a] + (max[a] - min[a]) * i as f64 / n[a] as f64;
    let mut out = Vec::new();
    for i in 0..=n[0] {
        for j in 0..=n[1] {
            for k in 0..=n[2] {
                let on_face = i == 0 || i == n[0] || j == 0 || j == n[1] || k == 0 || k == n[2];
                if on_face {
                    out.push(Vector3::new(at(0, i), at(1, j), at(2, k)));
                }
            }
        }
    }
    out
}

/// Horizontal grid at height `z` over `[-half, half]^2`.
pub fn plane(half: f64, z: f64, spacing: f64) -> Vec<Vector3<f64>> {
    let n = (2.0 * half / spacing).round() as i64;
    let mut out = Vec::new();
    for i in 0..=n {
        for j in 0..=n {
            out.push(Vector3::new(-half + i as f64 * spacing, -half + j as f64 * spacing, z));
        }
    }
    out
}

/// Band on a vertical cylinder about the z axis between angles `a0..a1`.
pub fn cylinder_band(radius: f64, z0: f64, z1: f64, a0: f64, a1: f64, spacing: f64) -> Vec<Vector3<f64>> {
    let na = (((a1 - a0) * radius / spacing).ceil() as usize).max(1);
    let nz = (((z1 - z0) / spacing).ceil() as usize).max(1);
    let mut out = Vec::new();
    for i in 0..=na {
        let a = a0 + (a1 - a0) * i as f64 / na as f64;
        for k in 0..=nz {
            let z = z0 + (z1 - z0) * k as f64 / nz as f64;
            out.push(Vector3::new(radius * a.cos(), radius * a.sin(), z));
        }
    }
    out
}

fn disc(radius: f64, z: f64, spacing: f64) -> Vec<Vector3<f64>> {
    let mut out = vec![Vector3::new(0.0, 0.0, z)];
    let rings = (radius / spacing).ceil() as usize;
    for r in 1..=rings {
        let rr = radius * r as f64 / rings as f64;
        let n = ((TAU * rr / spacing).ceil() as usize).max(3);
        for i in 0..n {
            let a = TAU * i as f64 / n as f64;
            out.push(Vector3::new(rr * a.cos(), rr * a.sin(), z));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostFixture {
    pub post_radius: f64,
    /// horizontal gap between post and ring
    pub ring_gap: f64,
    /// ring arc, radians, centred on the block direction
    pub ring_arc: f64,
    pub ring_height: f64,
    /// direction of the bracket block, radians
    pub block_angle: f64,
    /// height of the block top
    pub block_top: f64,
    pub block_width: f64,
    /// vertical gap between block top and the object above it
    pub block_gap: f64,
    /// radial length of the tab resting over the block
    pub tab_length: f64,
    pub tab_height: f64,
    pub spacing: f64,
}

impl Default for PostFixture {
    fn default() -> Self {
        Self {
            post_radius: 0.05,
            ring_gap: 0.03,
            ring_arc: 4.0 * PI / 3.0,
            ring_height: 0.04,
            block_angle: 0.0,
            block_top: 0.25,
            block_width: 0.08,
            block_gap: 0.03,
            tab_length: 0.05,
            tab_height: 0.03,
            spacing: 0.005,
        }
    }
}

impl PostFixture {
    fn block_length(&self) -> f64 {
        self.ring_gap + self.tab_length + 0.03
    }

    pub fn post_height(&self) -> f64 {
        self.block_top + self.block_gap + self.ring_height.max(self.tab_height) + 0.1
    }

    /// Floor, post (with top cap) and bracket block.
    pub fn scene(&self) -> Vec<Vector3<f64>> {
        let r = self.post_radius;
        let h = self.post_height();
        let s = self.spacing;
        let mut pts: Vec<_> = plane(0.3, 0.0, 0.01)
            .into_iter()
            .filter(|p| p.xy().norm() > r)
            .collect();
        pts.extend(cylinder_band(r, s, h, 0.0, TAU - s / r, s));
        pts.extend(disc(r, h, s));
        let depth = 0.06;
        let block = box_surface(
            Vector3::new(r, -self.block_width / 2.0, self.block_top - depth),
            Vector3::new(r + self.block_length(), self.block_width / 2.0, self.block_top),
            s,
        );
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), self.block_angle);
        // drop the face buried in the post
        pts.extend(block.into_iter().filter(|p| p.x > r + 1e-9).map(|p| rot * p));
        pts
    }

    /// Partial ring around the post plus a tab above the block.
    pub fn object(&self) -> Vec<Vector3<f64>> {
        let r = self.post_radius + self.ring_gap;
        let z0 = self.block_top + self.block_gap;
        let s = self.spacing;
        let a = self.block_angle;
        let mut pts = cylinder_band(r, z0, z0 + self.ring_height, a - self.ring_arc / 2.0, a + self.ring_arc / 2.0, s);
        let tab = box_surface(
            Vector3::new(r + s, -self.block_width * 0.3, z0),
            Vector3::new(r + self.tab_length, self.block_width * 0.3, z0 + self.tab_height),
            s,
        );
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), a);
        pts.extend(tab.into_iter().map(|p| rot * p));
        pts
    }

    /// The interaction, anchored on the post axis at floor level.
    pub fn example(&self, affordance_id: u32, label: impl Into<String>) -> InteractionExample {
        InteractionExample::new(
            affordance_id,
            label,
            PointCloud::new(self.object()).expect("finite"),
            PointCloud::new(self.scene()).expect("finite"),
            Isometry3::identity(),
        )
        .with_anchor(Vector3::zeros())
    }
}

/// `count` post fixtures with varied proportions.
pub fn post_fixtures(count: usize, seed: u64) -> Vec<PostFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| PostFixture {
            post_radius: rng.random_range(0.04..0.07),
            ring_gap: rng.random_range(0.03..0.045),
            ring_arc: rng.random_range(PI..1.6 * PI),
            ring_height: rng.random_range(0.03..0.06),
            block_angle: rng.random_range(0.0..TAU),
            block_top: rng.random_range(0.15..0.35),
            block_width: rng.random_range(0.06..0.1),
            block_gap: rng.random_range(0.03..0.045),
            tab_length: rng.random_range(0.03..0.06),
            tab_height: rng.random_range(0.02..0.04),
            spacing: 0.005,
        })
        .collect()
}

/// Where a descriptor's origin sits when it reproduces its training
/// interaction: the anchor shifted by the removed mean.
pub fn planted_location(example: &InteractionExample, descriptor: &AffordanceDescriptor) -> Vector3<f64> {
    example.anchor_point().expect("non-empty example") + descriptor.centroid_offset
}

/// The example scene rotated by orientation bin `orientation` about the
/// vertical line through the anchor, with `planted` appended as its last
/// point. Returns the scene and the index of the planted point.
pub fn planted_scene(
    example: &InteractionExample,
    planted: &Vector3<f64>,
    orientation: u8,
) -> (PointCloud, usize) {
    let anchor = example.anchor_point().expect("non-empty example");
    let r = crate::tensor::orientation_rotation(orientation);
    let axis = Vector3::new(anchor.x, anchor.y, 0.0);
    let mut pts: Vec<_> = example
        .scene_patch
        .points()
        .iter()
        .map(|p| r * (p - axis) + axis)
        .collect();
    pts.push(r * (planted - axis) + axis);
    let id = pts.len() - 1;
    (PointCloud::new(pts).expect("finite"), id)
}

/// A box of random footprint hovering `gap` above a table, anchored at the
/// table point below its centre.
pub fn table_example(affordance_id: u32, rng: &mut impl Rng) -> InteractionExample {
    let half = Vector3::new(
        rng.random_range(0.03..0.08),
        rng.random_range(0.03..0.08),
        rng.random_range(0.02..0.06),
    );
    let gap = rng.random_range(0.01..0.03);
    let offset = Vector3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), 0.0);
    let object = box_surface(-half, half, 0.01);
    let pose = Isometry3::translation(offset.x, offset.y, half.z + gap);
    InteractionExample::new(
        affordance_id,
        format!("Place-box{affordance_id}"),
        PointCloud::new(object).expect("finite"),
        PointCloud::new(plane(0.2, 0.0, 0.01)).expect("finite"),
        pose,
    )
}

pub fn table_examples(count: usize, seed: u64) -> Vec<InteractionExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count as u32).map(|k| table_example(k, &mut rng)).collect()
}

/// A 1 m table top with a few boxes standing on it.
pub fn table_scene(seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = plane(0.5, 0.0, 0.01);
    for _ in 0..4 {
        let c = Vector3::new(rng.random_range(-0.35..0.35), rng.random_range(-0.35..0.35), 0.0);
        let half = Vector3::new(rng.random_range(0.03..0.08), rng.random_range(0.03..0.08), rng.random_range(0.02..0.06));
        let (lo, hi) = (c - Vector3::new(half.x, half.y, 0.0), c + Vector3::new(half.x, half.y, 2.0 * half.z));
        pts.extend(box_surface(lo, hi, 0.01).into_iter().filter(|p| p.z > 1e-9));
    }
    PointCloud::new(pts).expect("finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_surface_has_no_interior() {
        let pts = box_surface(Vector3::zeros(), Vector3::repeat(0.1), 0.02);
        // 6^3 lattice minus the 4^3 interior
        assert_eq!(pts.len(), 216 - 64);
    }

    #[test]
    fn post_object_clears_scene() {
        let f = PostFixture::default();
        let ex = f.example(0, "Hang-ring");
        ex.validate(0.1).unwrap();
    }
}
