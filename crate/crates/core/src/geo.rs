//! Planar geometry: pairwise Euclidean distances and the minimum-spanning-tree
//! range used to scale the exponential spatial kernel.
//!
//! Coordinates are treated as planar. Geographic (lon/lat) inputs must be
//! projected beforehand; the distance unit is whatever the projection uses.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample-site locations as (easting, northing) pairs in a common planar unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSet {
    points: Vec<[f64; 2]>,
}

impl CoordinateSet {
    /// Validates that the set is non-empty and every coordinate is finite.
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::input(
                "coordinate set must contain at least one point",
            ));
        }
        if let Some(i) = points
            .iter()
            .position(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::input(format!("non-finite coordinate at point {i}")));
        }
        Ok(Self { points })
    }

    pub fn from_xy(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::input(format!(
                "coordinate columns differ in length ({} vs {})",
                x.len(),
                y.len()
            )));
        }
        Self::new(x.iter().zip(y).map(|(&a, &b)| [a, b]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn get(&self, i: usize) -> [f64; 2] {
        self.points[i]
    }

    /// A new set holding the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.points[i]).collect())
    }
}

#[inline]
pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Dense symmetric matrix of Euclidean distances with a zero diagonal.
pub fn pairwise_distances(coords: &CoordinateSet) -> DMatrix<f64> {
    let pts = coords.points();
    let n = pts.len();
    let mut d = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = distance(pts[i], pts[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Longest edge of a Euclidean minimum spanning tree over the sites.
///
/// Dense Prim expansion: O(n^2) time, O(n) memory, no edge list. Among
/// equal-length candidates the lowest vertex index is attached first; the
/// returned length does not depend on that choice.
///
/// Returns 0 (with a warning) when every point coincides.
pub fn mst_max_edge(coords: &CoordinateSet) -> Result<f64> {
    let pts = coords.points();
    let n = pts.len();
    if n < 2 {
        return Err(Error::input(format!(
            "minimum spanning tree needs at least 2 points, got {n}"
        )));
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    in_tree[0] = true;
    for j in 1..n {
        best[j] = distance(pts[0], pts[j]);
    }
    let mut longest = 0.0_f64;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_len = f64::INFINITY;
        for j in 0..n {
            if !in_tree[j] && best[j] < next_len {
                next = j;
                next_len = best[j];
            }
        }
        in_tree[next] = true;
        longest = longest.max(next_len);
        let p = pts[next];
        for j in 0..n {
            if !in_tree[j] {
                let d = distance(p, pts[j]);
                if d < best[j] {
                    best[j] = d;
                }
            }
        }
    }
    if longest == 0.0 {
        log::warn!("all {n} sites coincide; minimum spanning tree range is zero");
    }
    Ok(longest)
}

/// Mean of the strictly positive pairwise distances (0 when none exist).
pub fn mean_positive_distance(coords: &CoordinateSet) -> f64 {
    let pts = coords.points();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let d = distance(pts[i], pts[j]);
            if d > 0.0 {
                sum += d;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(pts: &[[f64; 2]]) -> CoordinateSet {
        CoordinateSet::new(pts.to_vec()).unwrap()
    }

    #[test]
    fn three_four_five() {
        let d = pairwise_distances(&set(&[[0.0, 0.0], [3.0, 4.0]]));
        assert_eq!(d[(0, 1)], 5.0);
        assert_eq!(d[(1, 0)], 5.0);
        assert_eq!(d[(0, 0)], 0.0);
    }

    #[test]
    fn single_point_matrix() {
        let d = pairwise_distances(&set(&[[1.0, 1.0]]));
        assert_eq!(d.shape(), (1, 1));
        assert_eq!(d[(0, 0)], 0.0);
    }

    #[test]
    fn equilateral_triangle() {
        let h = 3f64.sqrt() / 2.0;
        let d = pairwise_distances(&set(&[[0.0, 0.0], [1.0, 0.0], [0.5, h]]));
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!((d[(i, j)] - 1.0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn non_finite_rejected() {
        assert!(CoordinateSet::new(vec![[0.0, f64::NAN]]).is_err());
        assert!(CoordinateSet::new(vec![[f64::INFINITY, 0.0]]).is_err());
        assert!(CoordinateSet::new(vec![]).is_err());
    }

    #[test]
    fn mst_collinear() {
        let r = mst_max_edge(&set(&[[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])).unwrap();
        assert_eq!(r, 2.0);
    }

    #[test]
    fn mst_unit_square() {
        let r = mst_max_edge(&set(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn mst_needs_two_points() {
        assert!(mst_max_edge(&set(&[[0.0, 0.0]])).is_err());
    }

    #[test]
    fn mst_coincident_points_is_zero() {
        let r = mst_max_edge(&set(&[[2.0, 2.0], [2.0, 2.0], [2.0, 2.0]])).unwrap();
        assert_eq!(r, 0.0);
    }

    /// Exhaustive minimum over all spanning trees: enumerate every (n-1)-edge
    /// subset of the complete graph, keep the acyclic ones, take the tree of
    /// least total weight and report its longest edge.
    fn brute_force_mst_max_edge(pts: &[[f64; 2]]) -> f64 {
        let n = pts.len();
        let edges: Vec<(usize, usize, f64)> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, distance(pts[i], pts[j])))
            .collect();
        let m = edges.len();
        let mut best_total = f64::INFINITY;
        let mut best_max = f64::NAN;
        for mask in 0u32..(1 << m) {
            if mask.count_ones() as usize != n - 1 {
                continue;
            }
            let mut parent: Vec<usize> = (0..n).collect();
            fn find(p: &mut [usize], x: usize) -> usize {
                let mut r = x;
                while p[r] != r {
                    r = p[r];
                }
                r
            }
            let mut acyclic = true;
            let mut total = 0.0;
            let mut max = 0.0f64;
            for (e, &(i, j, w)) in edges.iter().enumerate() {
                if mask & (1 << e) == 0 {
                    continue;
                }
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a == b {
                    acyclic = false;
                    break;
                }
                parent[a] = b;
                total += w;
                max = max.max(w);
            }
            if acyclic && total < best_total {
                best_total = total;
                best_max = max;
            }
        }
        best_max
    }

    #[test]
    fn mst_matches_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let pts: Vec<[f64; 2]> = (0..6)
                .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
                .collect();
            let fast = mst_max_edge(&set(&pts)).unwrap();
            assert_eq!(fast, brute_force_mst_max_edge(&pts));
        }
    }

    fn points_strategy() -> impl Strategy<Value = Vec<[f64; 2]>> {
        prop::collection::vec(
            (-50.0..50.0f64, -50.0..50.0f64).prop_map(|(a, b)| [a, b]),
            2..30,
        )
    }

    proptest! {
        #[test]
        fn mst_bounds(pts in points_strategy()) {
            let cs = set(&pts);
            let r = mst_max_edge(&cs).unwrap();
            let d = pairwise_distances(&cs);
            let n = pts.len();
            let max_pair = d.max();
            let max_nn = (0..n)
                .map(|i| (0..n).filter(|&j| j != i).map(|j| d[(i, j)]).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max);
            prop_assert!(r <= max_pair + 1e-12);
            prop_assert!(r >= max_nn - 1e-12);
        }

        #[test]
        fn mst_permutation_invariant(pts in points_strategy(), shift in 0usize..100) {
            let mut rotated = pts.clone();
            let k = shift % pts.len();
            rotated.rotate_left(k);
            rotated.reverse();
            prop_assert_eq!(mst_max_edge(&set(&pts)).unwrap(), mst_max_edge(&set(&rotated)).unwrap());
        }

        #[test]
        fn distances_rigid_motion_invariant(pts in points_strategy(), theta in 0.0..std::f64::consts::TAU, tx in -10.0..10.0f64, ty in -10.0..10.0f64) {
            let (s, c) = theta.sin_cos();
            let moved: Vec<[f64; 2]> = pts.iter().map(|p| [c * p[0] - s * p[1] + tx, s * p[0] + c * p[1] + ty]).collect();
            let a = pairwise_distances(&set(&pts));
            let b = pairwise_distances(&set(&moved));
            prop_assert!((a - b).abs().max() < 1e-9);
        }
    }
}
