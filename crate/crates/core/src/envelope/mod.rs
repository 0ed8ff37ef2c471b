//! The empirical convex envelope and the one-sided convexity tester.

mod cece;
mod coverage;
mod tester;

pub use cece::{cece, cece_with, CeceOptions, EnvelopeQuery, SolverStatus};
pub use coverage::{
    cell_side, cover_radius, coverage_check, coverage_check_with_side, coverage_sample_count,
    CoverageReport, DEFAULT_CUBE_CAP,
};
pub use tester::{envelope_residual_scan, one_sided_test, one_sided_test_with, OneSidedConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{LabeledSample, Point};

/// Labeled anchor points and the Lipschitz bound of the envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    n: usize,
    coords: Vec<f64>,
    pub values: Vec<f64>,
    pub lipschitz: f64,
}

impl AnchorSet {
    pub fn new(points: &[Point], values: Vec<f64>, lipschitz: f64) -> Result<Self> {
        let n = points.first().map(Point::dim).unwrap_or(0);
        if points.iter().any(|p| p.dim() != n) {
            return Err(Error::invalid("anchors must share one dimension"));
        }
        let coords = points
            .iter()
            .flat_map(|p| p.coords().iter().copied())
            .collect();
        Self::from_flat(n, coords, values, lipschitz)
    }

    pub fn from_samples(samples: &[LabeledSample], lipschitz: f64) -> Result<Self> {
        let points: Vec<Point> = samples.iter().map(|s| s.point.clone()).collect();
        Self::new(
            &points,
            samples.iter().map(|s| s.value).collect(),
            lipschitz,
        )
    }

    /// Row-major coordinates.
    pub fn from_flat(n: usize, coords: Vec<f64>, values: Vec<f64>, lipschitz: f64) -> Result<Self> {
        if n == 0 || values.is_empty() {
            return Err(Error::invalid("the envelope needs at least one anchor"));
        }
        if coords.len() != n * values.len() {
            return Err(Error::DimensionMismatch {
                expected: n * values.len(),
                found: coords.len(),
            });
        }
        if values.iter().chain(&coords).any(|v| !v.is_finite()) {
            return Err(Error::invalid("anchors and labels must be finite"));
        }
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(Error::invalid("Lipschitz bound must be positive"));
        }
        Ok(AnchorSet {
            n,
            coords,
            values,
            lipschitz,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.n..(i + 1) * self.n]
    }
}
