//! Ball tree under the L1 metric with exact range queries.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("query has dimension {found}, tree has {expected}")]
pub struct DimensionMismatch {
    pub expected: usize,
    pub found: usize,
}

/// Slack on the pruning bound so float rounding in the triangle inequality
/// never discards a point that the exact per-point check would accept.
const PRUNE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone)]
struct Node {
    centroid: Vec<f64>,
    radius: f64,
    /// range into `order`
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

/// Nested balls over a point set; leaves partition the points.
#[derive(Debug, Clone)]
pub struct BallTree {
    dim: usize,
    /// row-major `n x dim`
    points: Vec<f64>,
    ids: Vec<u32>,
    /// permutation of point indices; each node owns a contiguous range
    order: Vec<usize>,
    nodes: Vec<Node>,
    leaf_size: usize,
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

impl BallTree {
    pub const DEFAULT_LEAF_SIZE: usize = 16;

    /// `points` is row-major with `dim` columns; `ids` labels each point.
    pub fn new(dim: usize, points: Vec<f64>, ids: Vec<u32>, leaf_size: usize) -> Self {
        assert!(dim > 0, "ball tree needs at least one dimension");
        assert_eq!(points.len(), dim * ids.len(), "point buffer does not match id count");
        let n = ids.len();
        let mut tree = Self {
            dim,
            points,
            ids,
            order: (0..n).collect(),
            nodes: Vec::new(),
            leaf_size: leaf_size.max(1),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let dim = self.dim;
        let count = (end - start) as f64;
        let mut centroid = vec![0.0; dim];
        for &i in &self.order[start..end] {
            for (c, x) in centroid.iter_mut().zip(self.point(i)) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= count);
        let radius = self.order[start..end]
            .iter()
            .map(|&i| l1(self.point(i), &centroid))
            .fold(0.0, f64::max);

        let id = self.nodes.len();
        self.nodes.push(Node {
            centroid,
            radius,
            start,
            end,
            children: None,
        });
        if end - start <= self.leaf_size {
            return id;
        }

        // split at the median of the widest dimension
        let mut spread_dim = 0;
        let mut widest = -1.0;
        for d in 0..dim {
            let (lo, hi) = self.order[start..end].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let x = self.points[i * dim + d];
                (lo.min(x), hi.max(x))
            });
            if hi - lo > widest {
                widest = hi - lo;
                spread_dim = d;
            }
        }
        if widest <= 0.0 {
            // all points identical: keep as a leaf
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a * dim + spread_dim].total_cmp(&points[b * dim + spread_dim])
        });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id].children = Some((left, right));
        id
    }

    /// Ids of all points within L1 distance `radius` of `center` (inclusive).
    pub fn range_query(&self, center: &[f64], radius: f64) -> Result<Vec<u32>, DimensionMismatch> {
        let mut out = Vec::new();
        self.range_query_into(center, radius, &mut out)?;
        Ok(out)
    }

    /// Like [`range_query`](Self::range_query) but appends to `out`.
    pub fn range_query_into(&self, center: &[f64], radius: f64, out: &mut Vec<u32>) -> Result<(), DimensionMismatch> {
        if center.len() != self.dim {
            return Err(DimensionMismatch {
                expected: self.dim,
                found: center.len(),
            });
        }
        if self.nodes.is_empty() {
            return Ok(());
        }
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            let to_centroid = l1(center, &node.centroid);
            if to_centroid - node.radius > radius + PRUNE_SLACK {
                continue;
            }
            match node.children {
                Some((l, r)) => {
                    stack.push(r);
                    stack.push(l);
                }
                None => {
                    for &i in &self.order[node.start..node.end] {
                        if l1(self.point(i), center) <= radius {
                            out.push(self.ids[i]);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks the covering invariant on every node; used by tests.
    pub fn check_invariants(&self) -> bool {
        let mut seen = vec![false; self.len()];
        for node in &self.nodes {
            for &i in &self.order[node.start..node.end] {
                if l1(self.point(i), &node.centroid) > node.radius + 1e-12 {
                    return false;
                }
                if node.children.is_none() {
                    if seen[i] {
                        return false;
                    }
                    seen[i] = true;
                }
            }
        }
        seen.iter().all(|s| *s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scan(points: &[f64], dim: usize, center: &[f64], radius: f64) -> Vec<u32> {
        (0..points.len() / dim)
            .filter(|&i| {
                let d: f64 = (0..dim).map(|k| (points[i * dim + k] - center[k]).abs()).sum();
                d <= radius
            })
            .map(|i| i as u32)
            .collect()
    }

    fn tree_1d(xs: &[f64]) -> BallTree {
        BallTree::new(1, xs.to_vec(), (0..xs.len() as u32).collect(), 1)
    }

    #[test]
    fn zero_radius() {
        let t = tree_1d(&[0.0, 1.0]);
        assert_eq!(t.range_query(&[0.0], 0.0).unwrap(), vec![0]);
    }

    #[test]
    fn small_range() {
        let t = tree_1d(&[0.0, 0.4, 1.0]);
        assert_eq!(t.range_query(&[0.5], 0.2).unwrap(), vec![1]);
        assert_eq!(scan(&[0.0, 0.4, 1.0], 1, &[0.5], 0.2), vec![1]);
    }

    #[test]
    fn dimension_mismatch() {
        let t = tree_1d(&[0.0]);
        assert_eq!(
            t.range_query(&[0.0, 1.0], 1.0),
            Err(DimensionMismatch { expected: 1, found: 2 })
        );
    }

    #[test]
    fn duplicates_and_empty() {
        let t = tree_1d(&[0.3; 40]);
        assert!(t.check_invariants());
        assert_eq!(t.range_query(&[0.3], 0.0).unwrap().len(), 40);
        let e = BallTree::new(2, vec![], vec![], 4);
        assert!(e.range_query(&[0.0, 0.0], 1.0).unwrap().is_empty());
    }

    #[test]
    fn random_3d_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 2_000;
        let pts: Vec<f64> = (0..n * 3).map(|_| rng.random::<f64>()).collect();
        let t = BallTree::new(3, pts.clone(), (0..n as u32).collect(), 8);
        assert!(t.check_invariants());
        for _ in 0..50 {
            let c: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let r = rng.random::<f64>() * 0.5;
            let mut got = t.range_query(&c, r).unwrap();
            got.sort_unstable();
            assert_eq!(got, scan(&pts, 3, &c, r));
        }
    }

    proptest! {
        #[test]
        fn any_points_match_scan(
            pts in prop::collection::vec(0.0f64..1.0, 2..200),
            c0 in 0.0f64..1.0, c1 in 0.0f64..1.0,
            r in 0.0f64..1.5,
            leaf in 1usize..8,
        ) {
            let pts: Vec<f64> = pts[..pts.len() / 2 * 2].to_vec();
            let n = pts.len() / 2;
            let t = BallTree::new(2, pts.clone(), (0..n as u32).collect(), leaf);
            prop_assert!(t.check_invariants());
            let mut got = t.range_query(&[c0, c1], r).unwrap();
            got.sort_unstable();
            prop_assert_eq!(got, scan(&pts, 2, &[c0, c1], r));
        }
    }
}
