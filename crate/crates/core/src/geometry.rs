//! Max-distance geometry on R^n, Euclidean geometry on the complex plane,
//! covering grids and the n-disjoint grid families behind the gap bound.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute slack applied to every ball-membership test. A point closer than
/// this to the boundary of an open ball counts as outside.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// A point of R^n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub coords: Vec<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// `max_k |a_k - b_k|`.
pub fn max_dist(a: &Point, b: &Point) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(max_dist_slices(&a.coords, &b.coords))
}

#[inline]
pub(crate) fn max_dist_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

/// Strict membership `d < r` with the symmetric boundary tolerance.
#[inline]
pub fn strictly_inside(d: f64, r: f64) -> bool {
    d < r - BOUNDARY_TOL
}

/// Open max-norm ball, a hypercube of side `2 * half_side`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Box {
    pub center: Point,
    pub half_side: f64,
}

impl Box {
    pub fn new(center: Point, half_side: f64) -> Result<Self> {
        if !(half_side > 0.0) || !half_side.is_finite() {
            return Err(Error::InvalidInput(format!("box half side must be positive, got {half_side}")));
        }
        Ok(Box { center, half_side })
    }

    pub fn contains(&self, p: &Point) -> Result<bool> {
        Ok(strictly_inside(max_dist(&self.center, p)?, self.half_side))
    }
}

/// Distance from `z` to the nearest point of `set` (Euclidean, +inf if empty).
pub fn distance_to_set(z: Complex64, set: &[Complex64]) -> f64 {
    set.iter().map(|w| (z - w).norm()).fold(f64::INFINITY, f64::min)
}

/// `sup_{a in A} d(a, B)` in the Euclidean metric of C.
pub fn directed_hausdorff(a: &[Complex64], b: &[Complex64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("Hausdorff distance of an empty set".into()));
    }
    Ok(a.iter().map(|&z| distance_to_set(z, b)).fold(0.0, f64::max))
}

/// Two-sided Hausdorff distance between finite subsets of C (Euclidean).
pub fn hausdorff_distance(a: &[Complex64], b: &[Complex64]) -> Result<f64> {
    Ok(directed_hausdorff(a, b)?.max(directed_hausdorff(b, a)?))
}

/// Two-sided Hausdorff distance between finite subsets of R^n in the max metric.
pub fn hausdorff_distance_max(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("Hausdorff distance of an empty set".into()));
    }
    let directed = |x: &[Point], y: &[Point]| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for p in x {
            let mut best = f64::INFINITY;
            for q in y {
                best = best.min(max_dist(p, q)?);
            }
            worst = worst.max(best);
        }
        Ok(worst)
    };
    Ok(directed(a, b)?.max(directed(b, a)?))
}

/// Finite piece of the square lattice `s * Z^2` in C, stored as integer
/// indices so that renderers can lay it out row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeGrid {
    pub spacing: f64,
    pub half_side: f64,
    /// `(i, j)` indices; the point is `spacing * (i + i j)`.
    pub indices: Vec<(i64, i64)>,
}

impl LatticeGrid {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn point(&self, k: usize) -> Complex64 {
        let (i, j) = self.indices[k];
        Complex64::new(self.spacing * i as f64, self.spacing * j as f64)
    }

    pub fn points(&self) -> Vec<Complex64> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }

    pub fn covering_radius(&self) -> f64 {
        self.spacing / 2f64.sqrt()
    }

    /// Inclusive index bounds `(imin, imax, jmin, jmax)`.
    pub fn index_bounds(&self) -> Option<(i64, i64, i64, i64)> {
        let first = self.indices.first()?;
        Some(self.indices.iter().fold((first.0, first.0, first.1, first.1), |b, &(i, j)| {
            (b.0.min(i), b.1.max(i), b.2.min(j), b.3.max(j))
        }))
    }
}

/// All points of `s * Z^2` whose closed `s/sqrt(2)` disc meets the closed box
/// `[-M, M]^2`, ordered row-major (imaginary part descending, real ascending).
pub fn covering_grid(radius_bound: f64, spacing: f64) -> Result<LatticeGrid> {
    if !(radius_bound > 0.0 && radius_bound.is_finite()) {
        return Err(Error::InvalidInput(format!("grid radius must be positive, got {radius_bound}")));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidInput(format!("grid spacing must be positive, got {spacing}")));
    }
    let reach = spacing / 2f64.sqrt();
    let kmax = ((radius_bound + reach) / spacing).floor() as i64 + 1;
    let gap = |i: i64| ((spacing * i as f64).abs() - radius_bound).max(0.0);
    let mut indices = Vec::new();
    for j in (-kmax..=kmax).rev() {
        for i in -kmax..=kmax {
            let (dx, dy) = (gap(i), gap(j));
            if dx * dx + dy * dy <= reach * reach * (1.0 + 1e-12) {
                indices.push((i, j));
            }
        }
    }
    Ok(LatticeGrid { spacing, half_side: radius_bound, indices })
}

/// The family `A_1, ..., A_r` of subsets of R^n built from the offset sets
/// `J_i = [-m, m] + 2(L+m)(Z + i/r + 1/2)`; `A_i` holds the points with at
/// least one coordinate in `J_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFamily {
    pub n: usize,
    pub r: usize,
    pub l: f64,
    pub m: f64,
}

pub fn disjoint_grid_family(n: usize, r: usize, l: f64, m: f64) -> Result<GridFamily> {
    if n == 0 || r == 0 {
        return Err(Error::InvalidInput("grid family needs n >= 1 and r >= 1".into()));
    }
    if !(m > 0.0) || !(l > 0.0) {
        return Err(Error::InvalidInput(format!("grid family needs L > 0 and m > 0, got L={l}, m={m}")));
    }
    if l <= (r as f64 - 1.0) * m {
        return Err(Error::Precondition(format!(
            "L = {l} must exceed (r-1)m = {}; the offset sets would overlap",
            (r as f64 - 1.0) * m
        )));
    }
    Ok(GridFamily { n, r, l, m })
}

impl GridFamily {
    fn period(&self) -> f64 {
        2.0 * (self.l + self.m)
    }

    /// Distance from `t` to the nearest point of `shift + period * Z`.
    fn lattice_offset(&self, t: f64, shift: f64) -> f64 {
        let p = self.period();
        let u = (t - shift) / p;
        (u - u.round()).abs() * p
    }

    /// `t in J_i` for `i in 1..=r`.
    pub fn in_offset_set(&self, i: usize, t: f64) -> bool {
        let shift = self.period() * (i as f64 / self.r as f64 + 0.5);
        self.lattice_offset(t, shift) <= self.m
    }

    /// `x in A_i`.
    pub fn in_a(&self, i: usize, x: &[f64]) -> bool {
        x.iter().any(|&t| self.in_offset_set(i, t))
    }

    /// Number of sets `A_i` containing `x`.
    pub fn multiplicity(&self, x: &[f64]) -> usize {
        (1..=self.r).filter(|&i| self.in_a(i, x)).count()
    }

    /// For `x` outside `A_i`, the centre `z in Z_i` with `x in B_L(z)`.
    pub fn box_center(&self, i: usize, x: &[f64]) -> Option<Vec<f64>> {
        if self.in_a(i, x) {
            return None;
        }
        let p = self.period();
        let frac = i as f64 / self.r as f64;
        Some(x.iter().map(|&t| p * ((t / p - frac).round() + frac)).collect())
    }

    /// Centres of `Z_i = 2(L+m)(Z^n + (i/r)(1,...,1))` inside the cube `[-R, R]^n`.
    pub fn centers_within(&self, i: usize, reach: f64) -> Vec<Vec<f64>> {
        let p = self.period();
        let frac = i as f64 / self.r as f64;
        let lo = (-reach / p - frac).ceil() as i64;
        let hi = (reach / p - frac).floor() as i64;
        let axis: Vec<f64> = (lo..=hi).map(|k| p * (k as f64 + frac)).collect();
        let mut out: Vec<Vec<f64>> = vec![Vec::new()];
        for _ in 0..self.n {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&c| {
                        let mut v = prefix.clone();
                        v.push(c);
                        v
                    })
                })
                .collect();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn max_dist_examples() {
        let a = Point::new(vec![0.0, 0.0]);
        let b = Point::new(vec![3.0, 1.0]);
        assert_eq!(max_dist(&a, &b).unwrap(), 3.0);
        assert_eq!(max_dist(&Point::new(vec![2.0]), &Point::new(vec![2.0])).unwrap(), 0.0);
        assert!(matches!(max_dist(&a, &Point::new(vec![1.0])), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn box_is_open() {
        let b = Box::new(Point::new(vec![0.0]), 2.0).unwrap();
        assert!(b.contains(&Point::new(vec![1.999])).unwrap());
        assert!(!b.contains(&Point::new(vec![2.0])).unwrap());
        assert!(!b.contains(&Point::new(vec![-2.0])).unwrap());
        assert!(Box::new(Point::new(vec![0.0]), 0.0).is_err());
    }

    #[test]
    fn hausdorff_examples() {
        assert_eq!(hausdorff_distance(&[c(0.0, 0.0)], &[c(0.0, 0.0)]).unwrap(), 0.0);
        assert_eq!(hausdorff_distance(&[c(0.0, 0.0), c(4.0, 0.0)], &[c(1.0, 0.0)]).unwrap(), 3.0);
        assert!(hausdorff_distance(&[], &[c(1.0, 0.0)]).is_err());
        let pa = [Point::new(vec![0.0, 0.0])];
        let pb = [Point::new(vec![1.0, 2.0])];
        assert_eq!(hausdorff_distance_max(&pa, &pb).unwrap(), 2.0);
    }

    #[test]
    fn unit_covering_grid_has_nine_points() {
        let g = covering_grid(1.0, 1.0).unwrap();
        let mut pts: Vec<(i64, i64)> = g.indices.clone();
        pts.sort();
        let mut expect = Vec::new();
        for i in -1..=1 {
            for j in -1..=1 {
                expect.push((i, j));
            }
        }
        assert_eq!(pts, expect);
        assert_eq!(g.indices[0], (-1, 1));
    }

    #[test]
    fn spectrum_grid_covering_radius() {
        let tau: f64 = 0.5;
        let g = covering_grid(4.0, tau * 2f64.sqrt() / 4.0).unwrap();
        assert!((g.covering_radius() - tau / 4.0).abs() < 1e-15);
    }

    #[test]
    fn small_family_offsets() {
        let f = disjoint_grid_family(1, 2, 3.0, 1.0).unwrap();
        // period 8: Z_1 = 4 + 8Z, Z_2 = 8Z, and J_i sits halfway between
        for t in [-1.0, 0.0, 1.0, 7.0, 8.0, 9.0, -8.5] {
            assert!(f.in_offset_set(1, t), "J_1 should contain {t}");
        }
        for t in [3.0, 4.0, 5.0, 12.0, -4.0] {
            assert!(f.in_offset_set(2, t), "J_2 should contain {t}");
        }
        assert!(!f.in_offset_set(2, 0.0));
        assert!(!f.in_offset_set(1, 4.0));
        assert!(!f.in_offset_set(1, 2.5) && !f.in_offset_set(2, 2.5));
        assert!(disjoint_grid_family(1, 3, 2.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn max_dist_matches_loop_and_is_metric(
            a in prop::collection::vec(-50.0f64..50.0, 3),
            b in prop::collection::vec(-50.0f64..50.0, 3),
            c in prop::collection::vec(-50.0f64..50.0, 3),
        ) {
            let (pa, pb, pc) = (Point::new(a.clone()), Point::new(b.clone()), Point::new(c));
            let mut brute: f64 = 0.0;
            for k in 0..3 {
                let d = (a[k] - b[k]).abs();
                if d > brute { brute = d; }
            }
            prop_assert_eq!(max_dist(&pa, &pb).unwrap(), brute);
            prop_assert_eq!(max_dist(&pa, &pb).unwrap(), max_dist(&pb, &pa).unwrap());
            prop_assert!(max_dist(&pa, &pc).unwrap() <= max_dist(&pa, &pb).unwrap() + max_dist(&pb, &pc).unwrap() + 1e-12);
        }

        #[test]
        fn covering_grid_covers_box(m in 0.3f64..5.0, s in 0.05f64..1.5, u in 0.0f64..1.0, v in 0.0f64..1.0) {
            let g = covering_grid(m, s).unwrap();
            let z = Complex64::new((2.0 * u - 1.0) * m, (2.0 * v - 1.0) * m);
            prop_assert!(distance_to_set(z, &g.points()) <= s / 2f64.sqrt() * (1.0 + 1e-9));
        }

        #[test]
        fn hausdorff_zero_iff_equal(
            a in prop::collection::vec((-3i32..3, -3i32..3), 1..6),
            b in prop::collection::vec((-3i32..3, -3i32..3), 1..6),
        ) {
            let ca: Vec<Complex64> = a.iter().map(|&(x, y)| c(x as f64, y as f64)).collect();
            let cb: Vec<Complex64> = b.iter().map(|&(x, y)| c(x as f64, y as f64)).collect();
            let mut sa = a.clone(); sa.sort(); sa.dedup();
            let mut sb = b.clone(); sb.sort(); sb.dedup();
            let d = hausdorff_distance(&ca, &cb).unwrap();
            prop_assert_eq!(d <= 1e-12, sa == sb);
        }

        #[test]
        fn families_are_n_disjoint(
            n in 1usize..4, r in 2usize..6, extra in 0.1f64..4.0, m in 0.5f64..3.0,
            x in prop::collection::vec(-100.0f64..100.0, 3),
        ) {
            let l = (r as f64 - 1.0) * m + extra;
            let f = disjoint_grid_family(n, r, l, m).unwrap();
            let p = &x[..n];
            prop_assert!(f.multiplicity(p) <= n);
            for i in 1..=r {
                if let Some(z) = f.box_center(i, p) {
                    prop_assert!(max_dist_slices(&z, p) < l + 1e-9);
                }
            }
        }
    }
}
