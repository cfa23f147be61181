//! Multi-resolution bisquare basis on a rectangular domain.
//!
//! Level `k` carries a regular `2^k x 2^k` grid of cell-centre knots, so knots
//! of different levels never coincide. Each level's bandwidth is 1.5 times the
//! smallest distance between its knots.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{dist, Point};

pub const MAX_LEVELS: usize = 4;
pub const BANDWIDTH_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Rect {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Self {
        Self { xmin, xmax, ymin, ymax }
    }

    pub fn square(lo: f64, hi: f64) -> Self {
        Self::new(lo, hi, lo, hi)
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    /// Smallest rectangle holding every point.
    pub fn bounding(points: &[Point]) -> Option<Self> {
        let first = points.first()?;
        let mut r = Self::new(first[0], first[0], first[1], first[1]);
        for p in points {
            r.xmin = r.xmin.min(p[0]);
            r.xmax = r.xmax.max(p[0]);
            r.ymin = r.ymin.min(p[1]);
            r.ymax = r.ymax.max(p[1]);
        }
        Some(r)
    }
}

/// Knot locations with their resolution levels and per-level bandwidths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotSet {
    pub domain: Rect,
    pub levels: usize,
    pub knots: Vec<Point>,
    /// Resolution level (1-based) of each knot.
    pub resolution: Vec<usize>,
    /// Bandwidth of each level; `bandwidths[k - 1]` belongs to level `k`.
    pub bandwidths: Vec<f64>,
}

impl KnotSet {
    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn bandwidth_of_knot(&self, m: usize) -> f64 {
        self.bandwidths[self.resolution[m] - 1]
    }

    /// Knot indices of one level, in column order.
    pub fn level_indices(&self, level: usize) -> Vec<usize> {
        (0..self.len()).filter(|&m| self.resolution[m] == level).collect()
    }

    /// Same knots moved by `offset`; bandwidths unchanged.
    pub fn translated(&self, offset: Point) -> Self {
        let mut out = self.clone();
        for k in &mut out.knots {
            k[0] += offset[0];
            k[1] += offset[1];
        }
        out
    }

    /// Widens the coarsest level once (x1.5) if some location sees no basis
    /// function. Returns whether the bandwidth changed.
    pub fn ensure_coverage(&mut self, locations: &[Point]) -> bool {
        let uncovered = locations.iter().any(|s| !self.covers(s));
        if uncovered {
            self.bandwidths[0] *= BANDWIDTH_FACTOR;
        }
        uncovered
    }

    /// True when at least one basis function is nonzero at `s`.
    pub fn covers(&self, s: &Point) -> bool {
        (0..self.len()).any(|m| dist(s, &self.knots[m]) < self.bandwidth_of_knot(m))
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn build_knots(domain: Rect, levels: usize) -> Result<KnotSet> {
    let (w, h) = (domain.width(), domain.height());
    if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
        return Err(Error::DegenerateDomain(format!("{domain:?}")));
    }
    if levels == 0 || levels > MAX_LEVELS {
        return Err(Error::Validation(format!(
            "levels must be in 1..={MAX_LEVELS}, got {levels}"
        )));
    }
    let mut knots = Vec::new();
    let mut resolution = Vec::new();
    let mut bandwidths = Vec::with_capacity(levels);
    for level in 1..=levels {
        let per_side = 1usize << level;
        let (dx, dy) = (w / per_side as f64, h / per_side as f64);
        for j in 0..per_side {
            for i in 0..per_side {
                knots.push([
                    domain.xmin + (i as f64 + 0.5) * dx,
                    domain.ymin + (j as f64 + 0.5) * dy,
                ]);
                resolution.push(level);
            }
        }
        bandwidths.push(BANDWIDTH_FACTOR * dx.min(dy));
    }
    Ok(KnotSet { domain, levels, knots, resolution, bandwidths })
}

/// `{1 - (d/γ)^2}^2` inside radius γ, zero outside.
#[inline]
pub fn eval_bisquare(s: &Point, u: &Point, gamma: f64) -> f64 {
    debug_assert!(gamma > 0.0);
    let d = dist(s, u);
    if d < gamma {
        let r = d / gamma;
        let a = 1.0 - r * r;
        a * a
    } else {
        0.0
    }
}

/// Dense basis evaluations; rows are locations, columns are knots.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    values: Vec<f64>,
}

impl BasisMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self { n_rows, n_cols, values: vec![0.0; n_rows * n_cols] }
    }

    #[inline]
    pub fn get(&self, i: usize, m: usize) -> f64 {
        self.values[i * self.n_cols + m]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    /// Rows `rows` of this matrix, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut out = Self::zeros(rows.len(), self.n_cols);
        for (k, &i) in rows.iter().enumerate() {
            out.values[k * self.n_cols..(k + 1) * self.n_cols].copy_from_slice(self.row(i));
        }
        out
    }

    pub fn mul_vec(&self, coef: &[f64]) -> Result<Vec<f64>> {
        if coef.len() != self.n_cols {
            return Err(Error::DimensionMismatch(format!(
                "basis has {} columns, coefficient vector has {}",
                self.n_cols,
                coef.len()
            )));
        }
        Ok((0..self.n_rows)
            .map(|i| self.row(i).iter().zip(coef).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Nonzero `(row, value)` pairs of each column.
    pub fn sparse_columns(&self) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![Vec::new(); self.n_cols];
        for i in 0..self.n_rows {
            for (m, &v) in self.row(i).iter().enumerate() {
                if v != 0.0 {
                    cols[m].push((i, v));
                }
            }
        }
        cols
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.row(i).iter().sum()).collect()
    }
}

pub fn eval_matrix(locations: &[Point], knots: &KnotSet) -> Result<BasisMatrix> {
    if locations.is_empty() {
        return Err(Error::Validation("no locations to evaluate".into()));
    }
    let mut out = BasisMatrix::zeros(locations.len(), knots.len());
    for (i, s) in locations.iter().enumerate() {
        for m in 0..knots.len() {
            out.values[i * out.n_cols + m] = eval_bisquare(s, &knots.knots[m], knots.bandwidth_of_knot(m));
        }
    }
    Ok(out)
}

/// Knot sets of the two processes. Coefficient vectors must have equal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisPair {
    pub process1: KnotSet,
    pub process2: KnotSet,
}

impl BasisPair {
    pub fn new(process1: KnotSet, process2: KnotSet) -> Result<Self> {
        if process1.len() != process2.len() || process1.resolution != process2.resolution {
            return Err(Error::DimensionMismatch(format!(
                "process knot sets must match in size and level layout ({} vs {})",
                process1.len(),
                process2.len()
            )));
        }
        Ok(Self { process1, process2 })
    }

    pub fn shared(knots: KnotSet) -> Self {
        Self { process1: knots.clone(), process2: knots }
    }

    /// Process-2 knots shifted by `offset` relative to process 1.
    pub fn with_offset(knots: KnotSet, offset: Point) -> Self {
        let shifted = knots.translated(offset);
        Self { process1: knots, process2: shifted }
    }

    pub fn dim(&self) -> usize {
        self.process1.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn three_levels_on_unit_square() {
        let k = build_knots(Rect::square(0.0, 1.0), 3).unwrap();
        assert_eq!(k.len(), 84);
        assert_eq!(k.level_indices(1).len(), 4);
        assert_eq!(k.level_indices(2).len(), 16);
        assert_eq!(k.level_indices(3).len(), 64);
        for a in 0..k.len() {
            for b in 0..a {
                if k.resolution[a] != k.resolution[b] {
                    assert!(dist(&k.knots[a], &k.knots[b]) > 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_level_layout() {
        let k = build_knots(Rect::square(0.0, 1.0), 1).unwrap();
        let expect = [[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]];
        assert_eq!(k.knots, expect.to_vec());
        assert!((k.bandwidths[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn bandwidth_follows_min_distance_rule() {
        let k = build_knots(Rect::square(0.0, 5.0), 3).unwrap();
        assert!((k.bandwidths[2] - 0.9375).abs() < 1e-15);
        for level in 1..=3 {
            let idx = k.level_indices(level);
            let mut min_d = f64::INFINITY;
            for (a, &i) in idx.iter().enumerate() {
                for &j in &idx[..a] {
                    min_d = min_d.min(dist(&k.knots[i], &k.knots[j]));
                }
            }
            assert!((k.bandwidths[level - 1] - 1.5 * min_d).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_domains() {
        assert!(matches!(build_knots(Rect::new(0.0, 0.0, 0.0, 1.0), 2), Err(Error::DegenerateDomain(_))));
        assert!(build_knots(Rect::square(0.0, 1.0), 0).is_err());
        assert!(build_knots(Rect::square(0.0, 1.0), 5).is_err());
    }

    #[test]
    fn bisquare_values() {
        let u = [1.0, 2.0];
        assert_eq!(eval_bisquare(&u, &u, 0.7), 1.0);
        assert_eq!(eval_bisquare(&[1.7, 2.0], &u, 0.7), 0.0);
        let just_inside = eval_bisquare(&[1.0 + 0.7 * (1.0 - 1e-9), 2.0], &u, 0.7);
        assert!(just_inside > 0.0 && just_inside < 1e-16);
        assert!((eval_bisquare(&[1.35, 2.0], &u, 0.7) - 0.5625).abs() < 1e-15);
    }

    #[test]
    fn matrix_at_coarse_knot() {
        let k = build_knots(Rect::square(0.0, 1.0), 2).unwrap();
        let phi = eval_matrix(&[k.knots[2]], &k).unwrap();
        assert_eq!(phi.get(0, 2), 1.0);
        assert!(eval_matrix(&[], &k).is_err());
    }

    #[test]
    fn simulation_domain_is_covered() {
        let k = build_knots(Rect::square(0.0, 5.0), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Point> = (0..5000).map(|_| [rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)]).collect();
        let phi = eval_matrix(&pts, &k).unwrap();
        assert!(phi.row_sums().iter().all(|&s| s > 0.0));
        for i in 0..pts.len() {
            let within = (0..k.len()).filter(|&m| dist(&pts[i], &k.knots[m]) < k.bandwidth_of_knot(m)).count();
            let nz = phi.row(i).iter().filter(|&&v| v != 0.0).count();
            assert!(nz <= within);
        }
    }

    #[test]
    fn coverage_guard_widens_coarsest_level_once() {
        let mut k = build_knots(Rect::square(0.0, 1.0), 2).unwrap();
        let far = [[3.0, 3.0]];
        let before = k.bandwidths.clone();
        assert!(k.ensure_coverage(&far));
        assert_eq!(k.bandwidths[0], before[0] * 1.5);
        assert_eq!(k.bandwidths[1], before[1]);
        assert!(!k.ensure_coverage(&[[0.5, 0.5]]));
    }

    #[test]
    fn knots_json_roundtrip() {
        let k = build_knots(Rect::new(-1.0, 4.0, 2.0, 3.0), 2).unwrap();
        let dir = tempfile_dir();
        let path = dir.join("knots.json");
        k.to_json_file(&path).unwrap();
        assert_eq!(KnotSet::from_json_file(&path).unwrap(), k);
    }

    #[test]
    fn pair_requires_matching_sizes() {
        let a = build_knots(Rect::square(0.0, 1.0), 2).unwrap();
        let b = build_knots(Rect::square(0.0, 1.0), 3).unwrap();
        assert!(BasisPair::new(a.clone(), b).is_err());
        assert!(BasisPair::new(a.clone(), a.translated([0.1, 0.0])).is_ok());
    }

    fn tempfile_dir() -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("jlsgev-basis-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    proptest! {
        #[test]
        fn radially_symmetric(d in 0.0..2.0f64, theta in 0.0..6.283f64, gamma in 0.1..1.5f64) {
            let u = [0.3, -0.2];
            let a = eval_bisquare(&[u[0] + d, u[1]], &u, gamma);
            let b = eval_bisquare(&[u[0] + d * theta.cos(), u[1] + d * theta.sin()], &u, gamma);
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn permutation_equivariant(seed in 0u64..1000) {
            let k = build_knots(Rect::square(0.0, 5.0), 2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Point> = (0..12).map(|_| [rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)]).collect();
            let mut order: Vec<usize> = (0..12).collect();
            order.reverse();
            order.swap(0, 5);
            let permuted: Vec<Point> = order.iter().map(|&i| pts[i]).collect();
            let a = eval_matrix(&pts, &k).unwrap();
            let b = eval_matrix(&permuted, &k).unwrap();
            prop_assert_eq!(a.select_rows(&order), b);
        }
    }
}
