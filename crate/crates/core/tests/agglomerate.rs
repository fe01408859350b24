mod common;

use affordance_core::agglomerate::{agglomerate, AgglomeratedDescriptor, AgglomerationMode};
use common::{agglomerate_oracle, random_descriptors, OracleCell};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn extent(descriptors: &[affordance_core::tensor::AffordanceDescriptor]) -> f64 {
    let pts: Vec<_> = descriptors.iter().flat_map(|d| d.keypoints.iter().map(|k| k.position)).collect();
    let lo = pts.iter().fold(pts[0], |a, p| a.inf(p));
    let hi = pts.iter().fold(pts[0], |a, p| a.sup(p));
    (hi - lo).max()
}

fn assert_matches(got: &AgglomeratedDescriptor, want: &[OracleCell]) {
    assert_eq!(got.cells.len(), want.len());
    for (c, o) in got.cells.iter().zip(want) {
        assert!((c.centroid - o.centroid).norm() <= 1e-12);
        let kept: Vec<_> = c
            .entries
            .iter()
            .flat_map(|e| e.kept.iter().map(move |k| (e.affordance_id, e.orientation_id, k.position)))
            .collect();
        assert_eq!(kept, o.kept);
        let members: u32 = c.entries.iter().map(|e| e.member_count).sum();
        assert_eq!(members as usize, o.members);
    }
}

#[test]
fn matches_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for seed in 0..30 {
        let ds = random_descriptors(seed, 5, 2000);
        let e = extent(&ds) * rng.random_range(1.0 / 12.0..0.5);
        for (mode, all) in [(AgglomerationMode::Closest, false), (AgglomerationMode::All, true)] {
            let got = agglomerate(&ds, e, mode).unwrap();
            assert_matches(&got, &agglomerate_oracle(&ds, e, all));
        }
    }
}

#[test]
fn centroid_count_non_increasing_for_nested_grids() {
    for seed in 0..10 {
        let ds = random_descriptors(seed + 50, 4, 1500);
        let mut prev = usize::MAX;
        for e in [0.005, 0.01, 0.02, 0.04, 0.08] {
            let n = agglomerate(&ds, e, AgglomerationMode::Closest).unwrap().cells.len();
            assert!(n <= prev, "seed {seed}, e {e}: {n} > {prev}");
            prev = n;
        }
    }
}

#[test]
fn closest_mode_keeps_at_most_one_per_group() {
    let ds = random_descriptors(7, 5, 2000);
    let a = agglomerate(&ds, 0.02, AgglomerationMode::Closest).unwrap();
    let total: usize = ds.iter().map(|d| d.keypoints.len()).sum();
    assert_eq!(a.member_count(), total);
    for c in &a.cells {
        assert!(!c.entries.is_empty());
        for e in &c.entries {
            assert_eq!(e.kept.len(), 1);
        }
        for w in c.entries.windows(2) {
            assert!((w[0].affordance_id, w[0].orientation_id) < (w[1].affordance_id, w[1].orientation_id));
        }
    }
}
