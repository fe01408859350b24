//! Exact kd-tree over a fixed set of points.
//!
//! Every query returns what a linear scan would: distances are compared as
//! `(squared distance, point index)` pairs, so ties resolve to the lowest index.
//! Subtrees are pruned only when strictly farther than the current best.

use std::cmp::Ordering;

use nalgebra::Vector3;

use super::{CloudError, PointCloud};

const LEAF_SIZE: usize = 12;
const NO_CHILD: u32 = u32::MAX;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    /// Cube of half-width `half` centered on `center`.
    pub fn cube(center: Vector3<f64>, half: f64) -> Self {
        let h = Vector3::repeat(half);
        Self::new(center - h, center + h)
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        Some(it.fold(Self::new(first, first), |b, p| b.including(p)))
    }

    pub fn including(self, p: &Vector3<f64>) -> Self {
        Self::new(self.min.inf(p), self.max.sup(p))
    }

    pub fn union(self, other: &Aabb) -> Self {
        Self::new(self.min.inf(&other.min), self.max.sup(&other.max))
    }

    pub fn expanded(self, margin: f64) -> Self {
        let m = Vector3::repeat(margin);
        Self::new(self.min - m, self.max + m)
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    /// Squared distance from `q` to the box (zero inside).
    pub fn distance_squared(&self, q: &Vector3<f64>) -> f64 {
        let mut d = 0.0;
        for i in 0..3 {
            let gap = (self.min[i] - q[i]).max(q[i] - self.max[i]).max(0.0);
            d += gap * gap;
        }
        d
    }
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    start: u32,
    end: u32,
    left: u32,
    right: u32,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.left == NO_CHILD
    }
}

/// Immutable kd-tree; safe to share between threads for read-only queries.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Vector3<f64>>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    index: u32,
}

impl Candidate {
    fn cmp(&self, other: &Candidate) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

impl SpatialIndex {
    pub fn from_cloud(cloud: &PointCloud) -> Self {
        Self::build(cloud.points().to_vec())
    }

    pub fn build(points: Vec<Vector3<f64>>) -> Self {
        assert!(points.len() < NO_CHILD as usize, "too many points for index");
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        if !points.is_empty() {
            let n = points.len();
            build_node(&points, &mut order, 0, n, &mut nodes);
        }
        Self {
            points,
            order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Vector3<f64> {
        self.points[index]
    }

    pub fn bounds(&self) -> Option<Aabb> {
        self.nodes.first().map(|n| n.bounds)
    }

    /// Closest point to `q` as `(index, distance)`, `None` when empty.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        self.nearest_filtered(q, None)
    }

    pub fn try_nearest(&self, q: &Vector3<f64>) -> Result<(usize, f64), CloudError> {
        self.nearest(q).ok_or(CloudError::Empty)
    }

    /// Closest point to `q` among the points inside `region` (inclusive).
    pub fn nearest_in_box(&self, q: &Vector3<f64>, region: &Aabb) -> Option<(usize, f64)> {
        self.nearest_filtered(q, Some(region))
    }

    fn nearest_filtered(&self, q: &Vector3<f64>, region: Option<&Aabb>) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = Candidate {
            d2: f64::INFINITY,
            index: NO_CHILD,
        };
        self.nearest_rec(0, q, region, &mut best);
        (best.index != NO_CHILD).then(|| (best.index as usize, best.d2.sqrt()))
    }

    fn nearest_rec(&self, node: usize, q: &Vector3<f64>, region: Option<&Aabb>, best: &mut Candidate) {
        let n = &self.nodes[node];
        if n.is_leaf() {
            for &i in &self.order[n.start as usize..n.end as usize] {
                let p = &self.points[i as usize];
                if let Some(r) = region {
                    if !r.contains(p) {
                        continue;
                    }
                }
                let c = Candidate {
                    d2: (p - q).norm_squared(),
                    index: i,
                };
                if c.cmp(best) == Ordering::Less {
                    *best = c;
                }
            }
            return;
        }
        let (l, r) = (n.left as usize, n.right as usize);
        let dl = self.child_distance(l, q, region);
        let dr = self.child_distance(r, q, region);
        let (first, d_first, second, d_second) = if dl <= dr { (l, dl, r, dr) } else { (r, dr, l, dl) };
        if d_first.is_finite() && d_first <= best.d2 {
            self.nearest_rec(first, q, region, best);
        }
        if d_second.is_finite() && d_second <= best.d2 {
            self.nearest_rec(second, q, region, best);
        }
    }

    fn child_distance(&self, node: usize, q: &Vector3<f64>, region: Option<&Aabb>) -> f64 {
        let b = &self.nodes[node].bounds;
        match region {
            Some(r) if !r.intersects(b) => f64::INFINITY,
            _ => b.distance_squared(q),
        }
    }

    /// The `k` closest points in increasing `(distance, index)` order.
    pub fn knn(&self, q: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap: Vec<Candidate> = Vec::with_capacity(k + 1);
        self.knn_rec(0, q, k, &mut heap);
        heap.into_iter()
            .map(|c| (c.index as usize, c.d2.sqrt()))
            .collect()
    }

    fn knn_rec(&self, node: usize, q: &Vector3<f64>, k: usize, best: &mut Vec<Candidate>) {
        let worst = |best: &Vec<Candidate>| {
            if best.len() < k {
                f64::INFINITY
            } else {
                best[best.len() - 1].d2
            }
        };
        let n = &self.nodes[node];
        if n.is_leaf() {
            for &i in &self.order[n.start as usize..n.end as usize] {
                let c = Candidate {
                    d2: (self.points[i as usize] - q).norm_squared(),
                    index: i,
                };
                if best.len() == k && c.cmp(&best[k - 1]) != Ordering::Less {
                    continue;
                }
                let pos = best.partition_point(|b| b.cmp(&c) == Ordering::Less);
                best.insert(pos, c);
                best.truncate(k);
            }
            return;
        }
        let (l, r) = (n.left as usize, n.right as usize);
        let dl = self.nodes[l].bounds.distance_squared(q);
        let dr = self.nodes[r].bounds.distance_squared(q);
        let (first, d_first, second, d_second) = if dl <= dr { (l, dl, r, dr) } else { (r, dr, l, dl) };
        if d_first <= worst(best) {
            self.knn_rec(first, q, k, best);
        }
        if d_second <= worst(best) {
            self.knn_rec(second, q, k, best);
        }
    }

    /// All points within `radius` of `q` (inclusive), sorted by
    /// `(distance, index)`.
    pub fn within_radius(&self, q: &Vector3<f64>, radius: f64) -> Vec<(usize, f64)> {
        let mut out: Vec<Candidate> = Vec::new();
        if self.nodes.is_empty() || !(radius >= 0.0) {
            return Vec::new();
        }
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            let n = &self.nodes[node];
            if n.bounds.distance_squared(q) > r2 {
                continue;
            }
            if n.is_leaf() {
                for &i in &self.order[n.start as usize..n.end as usize] {
                    let d2 = (self.points[i as usize] - q).norm_squared();
                    if d2 <= r2 {
                        out.push(Candidate { d2, index: i });
                    }
                }
            } else {
                stack.push(n.left as usize);
                stack.push(n.right as usize);
            }
        }
        out.sort_by(|a, b| a.cmp(b));
        out.into_iter()
            .map(|c| (c.index as usize, c.d2.sqrt()))
            .collect()
    }

    /// Indices of all points inside `region`, ascending.
    pub fn within_box(&self, region: &Aabb) -> Vec<usize> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            let n = &self.nodes[node];
            if !n.bounds.intersects(region) {
                continue;
            }
            if n.is_leaf() {
                out.extend(
                    self.order[n.start as usize..n.end as usize]
                        .iter()
                        .filter(|&&i| region.contains(&self.points[i as usize]))
                        .map(|&i| i as usize),
                );
            } else {
                stack.push(n.left as usize);
                stack.push(n.right as usize);
            }
        }
        out.sort_unstable();
        out
    }
}

fn build_node(
    points: &[Vector3<f64>],
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let bounds = Aabb::from_points(order[start..end].iter().map(|&i| &points[i as usize]))
        .expect("non-empty range");
    let id = nodes.len() as u32;
    nodes.push(Node {
        bounds,
        start: start as u32,
        end: end as u32,
        left: NO_CHILD,
        right: NO_CHILD,
    });
    if end - start <= LEAF_SIZE {
        return id;
    }
    let extent = bounds.extent();
    let axis = extent.imax();
    if extent[axis] <= 0.0 {
        // all points coincide
        return id;
    }
    let mid = start + (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    let left = build_node(points, order, start, mid, nodes);
    let right = build_node(points, order, mid, end, nodes);
    let node = &mut nodes[id as usize];
    node.left = left;
    node.right = right;
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn linear_nearest(points: &[Vector3<f64>], q: &Vector3<f64>) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let d2 = (p - q).norm_squared();
            if best.is_none_or(|(_, b)| d2 < b) {
                best = Some((i, d2));
            }
        }
        best.map(|(i, d2)| (i, d2.sqrt()))
    }

    fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    #[test]
    fn query_on_point_returns_it() {
        let pts = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 2.0, 3.0)];
        let idx = SpatialIndex::build(pts);
        assert_eq!(idx.nearest(&Vector3::new(1.0, 2.0, 3.0)), Some((1, 0.0)));
    }

    #[test]
    fn two_point_case() {
        let idx = SpatialIndex::build(vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)]);
        let (i, d) = idx.nearest(&Vector3::new(0.4, 0.0, 0.0)).unwrap();
        assert_eq!(i, 0);
        assert!((d - 0.4).abs() < 1e-15);
    }

    #[test]
    fn empty_index_errors() {
        let idx = SpatialIndex::build(vec![]);
        assert!(idx.nearest(&Vector3::zeros()).is_none());
        assert!(matches!(idx.try_nearest(&Vector3::zeros()), Err(CloudError::Empty)));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        // duplicated points and equidistant points on a lattice
        let mut pts = Vec::new();
        for _ in 0..3 {
            for x in 0..5 {
                for y in 0..5 {
                    pts.push(Vector3::new(x as f64, y as f64, 0.0));
                }
            }
        }
        let idx = SpatialIndex::build(pts.clone());
        for x in 0..9 {
            for y in 0..9 {
                let q = Vector3::new(x as f64 * 0.5, y as f64 * 0.5, 0.25);
                assert_eq!(idx.nearest(&q), linear_nearest(&pts, &q));
            }
        }
    }

    #[test]
    fn random_queries_match_linear_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pts = random_points(&mut rng, 500);
        let idx = SpatialIndex::build(pts.clone());
        for _ in 0..100 {
            let q = Vector3::new(rng.random(), rng.random(), rng.random());
            assert_eq!(idx.nearest(&q), linear_nearest(&pts, &q));
        }
    }

    #[test]
    fn box_constrained_nearest() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let pts = random_points(&mut rng, 2000);
        let idx = SpatialIndex::build(pts.clone());
        for _ in 0..200 {
            let c = Vector3::new(rng.random(), rng.random(), rng.random());
            let region = Aabb::cube(c, rng.random_range(0.0..0.3));
            let q = Vector3::new(rng.random(), rng.random(), rng.random());
            let inside: Vec<_> = (0..pts.len()).filter(|&i| region.contains(&pts[i])).collect();
            let expect = inside
                .iter()
                .map(|&i| (i, (pts[i] - q).norm_squared()))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .map(|(i, d2)| (i, d2.sqrt()));
            assert_eq!(idx.nearest_in_box(&q, &region), expect);
            assert_eq!(idx.within_box(&region), inside);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn knn_and_radius_match_brute_force(
            seed in any::<u64>(),
            n in 1usize..3000,
            k in 1usize..20,
            radius in 0.0f64..0.4,
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // coarse coordinates make exact ties common
            let pts: Vec<_> = (0..n)
                .map(|_| Vector3::new(
                    (rng.random_range(0..20) as f64) / 20.0,
                    (rng.random_range(0..20) as f64) / 20.0,
                    rng.random::<f64>(),
                ))
                .collect();
            let idx = SpatialIndex::build(pts.clone());
            let q = Vector3::new(rng.random(), rng.random(), rng.random());

            let mut all: Vec<(usize, f64)> = pts.iter().enumerate()
                .map(|(i, p)| (i, (p - q).norm_squared()))
                .collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let expect_knn: Vec<_> = all.iter().take(k).map(|&(i, d2)| (i, d2.sqrt())).collect();
            prop_assert_eq!(idx.knn(&q, k), expect_knn);
            prop_assert_eq!(idx.nearest(&q), linear_nearest(&pts, &q));

            let expect_r: Vec<_> = all.iter()
                .filter(|(_, d2)| *d2 <= radius * radius)
                .map(|&(i, d2)| (i, d2.sqrt()))
                .collect();
            prop_assert_eq!(idx.within_radius(&q, radius), expect_r);
        }
    }
}
