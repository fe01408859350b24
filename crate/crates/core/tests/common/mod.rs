//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;

use affordance_core::tensor::{AffordanceDescriptor, AffordanceKeypoint};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random zero-meaned descriptors: up to `max_affordances` affordances and
/// `max_keypoints` keypoints in total.
pub fn random_descriptors(
    seed: u64,
    max_affordances: usize,
    max_keypoints: usize,
) -> Vec<AffordanceDescriptor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(1..=max_affordances);
    let budget = rng.random_range(count..=max_keypoints);
    let mut sizes = vec![budget / count; count];
    sizes[0] += budget % count;
    sizes
        .into_iter()
        .enumerate()
        .map(|(a, n)| {
            let id = a as u32 * 3 + rng.random_range(0..3);
            let mut keypoints: Vec<AffordanceKeypoint> = (0..n)
                .map(|_| AffordanceKeypoint {
                    position: Vector3::from_fn(|_, _| rng.random_range(-0.15..0.15)),
                    provenance: Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05)),
                    weight: rng.random_range(0.1..1.0),
                    affordance_id: id,
                    orientation_id: rng.random_range(0..8),
                })
                .collect();
            let m = keypoints.iter().map(|k| k.position).sum::<Vector3<f64>>() / n as f64;
            for k in &mut keypoints {
                k.position -= m;
            }
            AffordanceDescriptor {
                affordance_id: id,
                label: format!("Aff-{id}"),
                per_orientation: n,
                keypoints,
                centroid_offset: m,
                object: vec![],
            }
        })
        .collect()
}

/// One oracle cell: centroid and kept keypoints as (affordance, orientation,
/// position) triples in global index order.
#[derive(Debug, Clone)]
pub struct OracleCell {
    pub centroid: Vector3<f64>,
    pub kept: Vec<(u32, u8, Vector3<f64>)>,
    pub members: usize,
}

/// Straight transcription of the grid clustering: every keypoint is compared
/// against every seed.
pub fn agglomerate_oracle(descriptors: &[AffordanceDescriptor], e: f64, keep_all: bool) -> Vec<OracleCell> {
    let all: Vec<AffordanceKeypoint> = descriptors.iter().flat_map(|d| d.keypoints.clone()).collect();
    let mut lo = all[0].position;
    let mut hi = all[0].position;
    for k in &all {
        for a in 0..3 {
            lo[a] = lo[a].min(k.position[a]);
            hi[a] = hi[a].max(k.position[a]);
        }
    }
    let n: Vec<u64> = (0..3).map(|a| ((hi[a] - lo[a]) / e).floor() as u64 + 1).collect();
    let mut seeds = Vec::new();
    for i in 0..n[0] {
        for j in 0..n[1] {
            for k in 0..n[2] {
                seeds.push(Vector3::new(
                    lo.x + (i as f64 + 0.5) * e,
                    lo.y + (j as f64 + 0.5) * e,
                    lo.z + (k as f64 + 0.5) * e,
                ));
            }
        }
    }
    let mut assigned: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (gi, k) in all.iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (si, s) in seeds.iter().enumerate() {
            let d = (k.position - s).norm_squared();
            if d < best_d {
                best_d = d;
                best = si;
            }
        }
        assigned.entry(best).or_default().push(gi);
    }
    assigned
        .into_iter()
        .map(|(si, members)| {
            let seed = seeds[si];
            let mut by_group: BTreeMap<(u32, u8), Vec<usize>> = BTreeMap::new();
            for &gi in &members {
                by_group
                    .entry((all[gi].affordance_id, all[gi].orientation_id))
                    .or_default()
                    .push(gi);
            }
            let mut kept = Vec::new();
            for ((k, o), group) in by_group {
                if keep_all {
                    kept.extend(group.iter().map(|&gi| (k, o, all[gi].position)));
                } else {
                    let mut best = group[0];
                    for &gi in &group[1..] {
                        if (all[gi].position - seed).norm_squared() < (all[best].position - seed).norm_squared() {
                            best = gi;
                        }
                    }
                    kept.push((k, o, all[best].position));
                }
            }
            let centroid = kept.iter().map(|t| t.2).sum::<Vector3<f64>>() / kept.len() as f64;
            OracleCell {
                centroid,
                kept,
                members: members.len(),
            }
        })
        .collect()
}

/// Brute-force precision/recall sweep. Predictions and truths are
/// (affordance, location, score) triples. Returns (threshold, precision,
/// recall) per distinct score, descending.
pub fn pr_oracle(
    pred: &[(u32, Vector3<f64>, f64)],
    truth: &[(u32, Vector3<f64>)],
    radius: f64,
) -> Vec<(f64, f64, f64)> {
    let mut thresholds: Vec<f64> = pred.iter().map(|p| p.2).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    // fix a processing order: score descending, then location
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| {
        pred[b].2.total_cmp(&pred[a].2).then_with(|| {
            let (pa, pb) = (pred[a].1, pred[b].1);
            pa.x.total_cmp(&pb.x)
                .then(pa.y.total_cmp(&pb.y))
                .then(pa.z.total_cmp(&pb.z))
                .then(pred[a].0.cmp(&pred[b].0))
        })
    });
    thresholds
        .into_iter()
        .map(|th| {
            let mut used = vec![false; truth.len()];
            let mut tp = 0;
            let mut n = 0;
            for &i in order.iter().filter(|&&i| pred[i].2 >= th) {
                n += 1;
                let mut best: Option<(f64, usize)> = None;
                for (j, t) in truth.iter().enumerate() {
                    if used[j] || t.0 != pred[i].0 {
                        continue;
                    }
                    let d = (t.1 - pred[i].1).norm();
                    if d <= radius && best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, j));
                    }
                }
                if let Some((_, j)) = best {
                    used[j] = true;
                    tp += 1;
                }
            }
            (th, tp as f64 / n as f64, tp as f64 / truth.len() as f64)
        })
        .collect()
}

/// Kendall rank correlation between two score vectors over the same items.
pub fn kendall_oracle(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    let n = a.len();
    for i in 0..n {
        for j in i + 1..n {
            s += ((a[i] - a[j]) * (b[i] - b[j])).signum();
        }
    }
    s / (n * (n - 1) / 2) as f64
}

/// Brute-force back-projection: for each (point, affordance) pair, scan all
/// cells holding that affordance for the nearest centroid, first index wins.
/// Returns `tally[cell][affordance]`.
pub fn backproject_oracle(
    centroids: &[Vector3<f64>],
    holds: &dyn Fn(usize, u32) -> bool,
    records: &[(Vec<u32>, Vec<Vector3<f64>>, Vec<f64>)],
    weighted: bool,
) -> BTreeMap<(usize, u32), f64> {
    let mut out = BTreeMap::new();
    for (ks, pts, ws) in records {
        for &k in ks {
            for (p, w) in pts.iter().zip(ws) {
                let mut best: Option<(usize, f64)> = None;
                for (j, c) in centroids.iter().enumerate() {
                    if !holds(j, k) {
                        continue;
                    }
                    let d = (c - p).norm_squared();
                    if best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((j, d));
                    }
                }
                if let Some((j, _)) = best {
                    *out.entry((j, k)).or_insert(0.0) += if weighted { *w } else { 1.0 };
                }
            }
        }
    }
    out
}

/// Random predictions and truths on a coarse lattice so that ties, shared
/// locations and near-misses all occur. No (affordance, location) repeats.
pub fn random_pr_instance(
    seed: u64,
) -> (Vec<(u32, Vector3<f64>, f64)>, Vec<(u32, Vector3<f64>)>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |n: usize, rng: &mut ChaCha8Rng| {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        while out.len() < n {
            let k = rng.random_range(0..3u32);
            let cell = [0; 3].map(|_| rng.random_range(0..5i32));
            if seen.insert((k, cell)) {
                let jitter = Vector3::from_fn(|_, _| rng.random_range(-0.004..0.004));
                out.push((k, Vector3::new(cell[0] as f64, cell[1] as f64, cell[2] as f64) * 0.01 + jitter));
            }
        }
        out
    };
    let np = rng.random_range(1..60);
    let nt = rng.random_range(1..60);
    let pred = draw(np, &mut rng)
        .into_iter()
        .map(|(k, p)| (k, p, rng.random_range(0..10) as f64 / 10.0))
        .collect();
    let truth = draw(nt, &mut rng);
    (pred, truth, rng.random_range(0.003..0.012))
}

/// Surface samples of a random ellipsoid with a box bump on one side.
pub fn random_shape(rng: &mut impl Rng, count: usize) -> Vec<Vector3<f64>> {
    let radii = Vector3::from_fn(|_, _| rng.random_range(0.05..0.2));
    let mut pts: Vec<Vector3<f64>> = (0..count)
        .map(|_| {
            let d = loop {
                let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                let n: f64 = v.norm();
                if n > 0.1 && n <= 1.0 {
                    break v / n;
                }
            };
            d.component_mul(&radii)
        })
        .collect();
    let bump = Vector3::new(radii.x, 0.0, 0.0);
    for _ in 0..count / 5 {
        pts.push(bump + Vector3::from_fn(|i, _| rng.random_range(0.0..0.04) * if i == 0 { 1.0 } else { 0.5 }));
    }
    pts
}
