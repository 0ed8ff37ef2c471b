//! Covering the ball `B_2(1.1 sqrt(n))` with sampled anchors.
//!
//! The bounding cube `[-R, R]^n` is cut into axis-aligned cubes of side
//! `l` anchored at `-R`. A cube counts if its nearest point to the origin
//! lies in the ball, and the ball is covered when every such cube holds a
//! sample. Samples anywhere in a counted cube are binned, including the
//! parts outside the ball: every point of the cube is still within
//! `l sqrt(n)` of such a sample.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::normal_interval;

pub const DEFAULT_CUBE_CAP: usize = 10_000_000;

/// `1.1 sqrt(n)`.
pub fn cover_radius(n: usize) -> f64 {
    1.1 * (n as f64).sqrt()
}

/// Cube side `eps / (8 L sqrt(n))`, so that every point of a covered cube is
/// within `eps / (8L)` of an anchor.
pub fn cell_side(lipschitz: f64, eps: f64, n: usize) -> Result<f64> {
    if !(lipschitz > 0.0 && eps > 0.0) || n == 0 {
        return Err(Error::invalid("L, eps and n must be positive"));
    }
    Ok(eps / (8.0 * lipschitz * (n as f64).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub covered: bool,
    /// Multi-index of the first empty cube, in lexicographic order.
    pub empty_cell_witness: Option<Vec<usize>>,
    pub cell_side: f64,
    /// Cubes meeting the ball.
    pub cube_count: usize,
}

struct CubeGrid {
    n: usize,
    radius: f64,
    side: f64,
    per_axis: usize,
}

impl CubeGrid {
    fn new(n: usize, side: f64, cap: usize) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) || n == 0 {
            return Err(Error::invalid("cube side and dimension must be positive"));
        }
        let radius = cover_radius(n);
        let per_axis = (2.0 * radius / side).ceil().max(1.0);
        let total = per_axis.powi(n as i32);
        if total > cap as f64 {
            return Err(Error::Resource {
                what: "coverage cubes".into(),
                requested: total,
                cap: cap as f64,
            });
        }
        Ok(CubeGrid {
            n,
            radius,
            side,
            per_axis: per_axis as usize,
        })
    }

    fn total(&self) -> usize {
        self.per_axis.pow(self.n as u32)
    }

    fn bounds(&self, k: usize) -> (f64, f64) {
        let lo = -self.radius + k as f64 * self.side;
        (lo, lo + self.side)
    }

    fn index_of(&self, mut flat: usize, out: &mut [usize]) {
        for d in (0..self.n).rev() {
            out[d] = flat % self.per_axis;
            flat /= self.per_axis;
        }
    }

    fn meets_ball(&self, idx: &[usize]) -> bool {
        let sq: f64 = idx
            .iter()
            .map(|&k| {
                let (lo, hi) = self.bounds(k);
                0f64.clamp(lo, hi).powi(2)
            })
            .sum();
        sq <= self.radius * self.radius
    }

    fn cell_of(&self, x: &[f64]) -> Option<usize> {
        let mut flat = 0;
        for &v in x {
            let k = ((v + self.radius) / self.side).floor();
            if !(k >= 0.0 && k < self.per_axis as f64) {
                return None;
            }
            flat = flat * self.per_axis + k as usize;
        }
        Some(flat)
    }
}

/// Coverage with cube side [`cell_side`].
pub fn coverage_check<P: AsRef<[f64]>>(
    samples: &[P],
    lipschitz: f64,
    eps: f64,
    n: usize,
) -> Result<CoverageReport> {
    coverage_check_with_side(samples, cell_side(lipschitz, eps, n)?, n, DEFAULT_CUBE_CAP)
}

pub fn coverage_check_with_side<P: AsRef<[f64]>>(
    samples: &[P],
    side: f64,
    n: usize,
    cap: usize,
) -> Result<CoverageReport> {
    let grid = CubeGrid::new(n, side, cap)?;
    let mut hit = vec![false; grid.total()];
    for x in samples {
        let x = x.as_ref();
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: x.len(),
            });
        }
        if let Some(c) = grid.cell_of(x) {
            hit[c] = true;
        }
    }
    let mut idx = vec![0; n];
    let mut witness = None;
    let mut count = 0;
    for (c, &seen) in hit.iter().enumerate() {
        grid.index_of(c, &mut idx);
        if !grid.meets_ball(&idx) {
            continue;
        }
        count += 1;
        if !seen && witness.is_none() {
            witness = Some(idx.clone());
        }
    }
    Ok(CoverageReport {
        covered: witness.is_none(),
        empty_cell_witness: witness,
        cell_side: side,
        cube_count: count,
    })
}

/// Samples needed so that every counted cube is hit with probability at
/// least `1 - failure`, by a union bound over the cubes with the exact
/// Gaussian mass of the lightest one.
pub fn coverage_sample_count(n: usize, side: f64, failure: f64, cap: usize) -> Result<u64> {
    if !(failure > 0.0 && failure < 1.0) {
        return Err(Error::invalid("failure probability must lie in (0, 1)"));
    }
    let grid = CubeGrid::new(n, side, cap)?;
    let axis_mass: Vec<f64> = (0..grid.per_axis)
        .map(|k| {
            let (lo, hi) = grid.bounds(k);
            normal_interval(lo, hi)
        })
        .collect();
    let mut idx = vec![0; n];
    let mut count = 0usize;
    let mut lightest = f64::INFINITY;
    for c in 0..grid.total() {
        grid.index_of(c, &mut idx);
        if grid.meets_ball(&idx) {
            count += 1;
            lightest = lightest.min(idx.iter().map(|&k| axis_mass[k]).product());
        }
    }
    let t = ((count as f64 / failure).ln() / -(-lightest).ln_1p()).ceil();
    if !t.is_finite() || t > u64::MAX as f64 / 2.0 {
        return Err(Error::Resource {
            what: "coverage samples".into(),
            requested: t,
            cap: u64::MAX as f64 / 2.0,
        });
    }
    Ok(t as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn multiples(step: f64) -> Vec<Vec<f64>> {
        (-11..=11)
            .map(|k| vec![k as f64 * step])
            .filter(|x| x[0].abs() <= 1.1 + 1e-12)
            .collect()
    }

    #[test]
    fn grid_of_multiples_covers_wide_cubes() {
        let s: Vec<Vec<f64>> = (-6..=6).map(|k| vec![k as f64 * 0.2]).collect();
        let r = coverage_check_with_side(&s, 0.25, 1, DEFAULT_CUBE_CAP).unwrap();
        assert!(r.covered, "{r:?}");
    }

    #[test]
    fn default_side_example() {
        // eps = 1, L = 1: side 0.125
        let r = coverage_check(&multiples(0.1), 1.0, 1.0, 1).unwrap();
        assert_eq!(r.cell_side, 0.125);
        assert!(r.covered, "{r:?}");
        let r = coverage_check(&multiples(0.2), 1.0, 1.0, 1).unwrap();
        assert!(!r.covered);
    }

    #[test]
    fn empty_sample_witness_is_first_cube() {
        let r = coverage_check::<Vec<f64>>(&[], 1.0, 1.0, 2).unwrap();
        assert!(!r.covered);
        let w = r.empty_cell_witness.unwrap();
        let grid = CubeGrid::new(2, r.cell_side, DEFAULT_CUBE_CAP).unwrap();
        let mut idx = vec![0; 2];
        let first = (0..grid.total())
            .find(|&c| {
                grid.index_of(c, &mut idx);
                grid.meets_ball(&idx)
            })
            .unwrap();
        grid.index_of(first, &mut idx);
        assert_eq!(w, idx);
    }

    #[test]
    fn boundary_witness_meets_ball() {
        // fill every cube whose centre is well inside
        let n = 2;
        let side = cell_side(1.0, 1.0, n).unwrap();
        let grid = CubeGrid::new(n, side, DEFAULT_CUBE_CAP).unwrap();
        let mut samples = Vec::new();
        let mut idx = vec![0; n];
        for c in 0..grid.total() {
            grid.index_of(c, &mut idx);
            let centre: Vec<f64> = idx.iter().map(|&k| grid.bounds(k).0 + side / 2.0).collect();
            if centre.iter().map(|v| v * v).sum::<f64>().sqrt() < 1.0 {
                samples.push(centre);
            }
        }
        let r = coverage_check(&samples, 1.0, 1.0, n).unwrap();
        let w = r.empty_cell_witness.unwrap();
        let near: f64 = w
            .iter()
            .map(|&k| 0f64.clamp(grid.bounds(k).0, grid.bounds(k).1).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(near <= cover_radius(n));
    }

    #[test]
    fn sample_count_one_dimension() {
        let t = coverage_sample_count(1, 0.0625, 0.01, DEFAULT_CUBE_CAP).unwrap();
        assert!((500..800).contains(&t), "{t}");
    }

    #[test]
    fn cap_is_enforced() {
        assert!(matches!(
            coverage_check_with_side::<Vec<f64>>(&[], 1e-3, 3, 1000),
            Err(Error::Resource { .. })
        ));
    }
}
