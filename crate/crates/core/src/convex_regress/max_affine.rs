use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::RealFunction;

/// Relative slack allowed on slope norms.
pub const SLOPE_NORM_SLACK: f64 = 1e-9;

/// Affine function `x -> <slope, x> + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinePiece {
    #[serde(rename = "p")]
    pub slope: Vec<f64>,
    #[serde(rename = "a")]
    pub intercept: f64,
}

impl AffinePiece {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + self.slope.iter().zip(x).map(|(p, v)| p * v).sum::<f64>()
    }
}

/// Pointwise maximum of affine pieces whose slopes have norm at most `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxAffineFunction {
    #[serde(rename = "L")]
    lipschitz: f64,
    pieces: Vec<AffinePiece>,
}

impl MaxAffineFunction {
    pub fn new(lipschitz: f64, pieces: Vec<AffinePiece>) -> Result<Self> {
        let f = MaxAffineFunction { lipschitz, pieces };
        f.validate()?;
        Ok(f)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lipschitz > 0.0 && self.lipschitz.is_finite()) {
            return Err(Error::invalid("Lipschitz bound must be positive"));
        }
        let n = match self.pieces.first() {
            Some(p) => p.slope.len(),
            None => {
                return Err(Error::invalid(
                    "a max-affine function needs at least one piece",
                ))
            }
        };
        if n == 0 {
            return Err(Error::invalid("pieces need at least one slope coordinate"));
        }
        for p in &self.pieces {
            if p.slope.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: p.slope.len(),
                });
            }
            if !p.intercept.is_finite() || p.slope.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("pieces must be finite"));
            }
            let norm = p.slope.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > self.lipschitz * (1.0 + SLOPE_NORM_SLACK) {
                return Err(Error::invalid(format!(
                    "slope norm {norm} exceeds the Lipschitz bound {}",
                    self.lipschitz
                )));
            }
        }
        Ok(())
    }

    /// The constant function `c`.
    pub fn constant(n: usize, c: f64, lipschitz: f64) -> Result<Self> {
        Self::new(
            lipschitz,
            vec![AffinePiece {
                slope: vec![0.0; n.max(1)],
                intercept: c,
            }],
        )
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz
    }

    pub fn pieces(&self) -> &[AffinePiece] {
        &self.pieces
    }

    pub fn dim(&self) -> usize {
        self.pieces[0].slope.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_with_piece(x).0
    }

    /// Value and index of a maximizing piece.
    pub fn eval_with_piece(&self, x: &[f64]) -> (f64, usize) {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (k, p) in self.pieces.iter().enumerate() {
            let v = p.eval(x);
            if v > best {
                best = v;
                arg = k;
            }
        }
        (best, arg)
    }

    pub fn max_slope_norm(&self) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.slope.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// `x -> self(x) + c`.
    pub fn shifted(&self, c: f64) -> Self {
        MaxAffineFunction {
            lipschitz: self.lipschitz,
            pieces: self
                .pieces
                .iter()
                .map(|p| AffinePiece {
                    slope: p.slope.clone(),
                    intercept: p.intercept + c,
                })
                .collect(),
        }
    }

    /// Drops pieces that share a slope with a higher piece. The function is
    /// unchanged: among parallel pieces only the highest can be maximal.
    pub fn dedup_parallel(&self) -> Self {
        let mut best: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut order = Vec::new();
        for (k, p) in self.pieces.iter().enumerate() {
            let key: Vec<u64> = p.slope.iter().map(|v| (v + 0.0).to_bits()).collect();
            match best.get_mut(&key) {
                Some(slot) => {
                    if p.intercept > self.pieces[*slot].intercept {
                        *slot = k;
                    }
                }
                None => {
                    best.insert(key.clone(), k);
                    order.push(key);
                }
            }
        }
        MaxAffineFunction {
            lipschitz: self.lipschitz,
            pieces: order
                .iter()
                .map(|key| self.pieces[best[key]].clone())
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: MaxAffineFunction = serde_json::from_str(text)?;
        f.validate()?;
        Ok(f)
    }
}

impl RealFunction for MaxAffineFunction {
    fn dimension(&self) -> usize {
        self.dim()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        MaxAffineFunction::eval(self, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tent() -> MaxAffineFunction {
        MaxAffineFunction::new(
            1.0,
            vec![
                AffinePiece {
                    slope: vec![1.0],
                    intercept: 0.0,
                },
                AffinePiece {
                    slope: vec![-1.0],
                    intercept: 0.0,
                },
                AffinePiece {
                    slope: vec![1.0],
                    intercept: -2.0,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn evaluates_max() {
        let f = tent();
        assert_eq!(f.eval(&[-3.0]), 3.0);
        assert_eq!(f.eval(&[2.0]), 2.0);
        assert_eq!(f.eval_with_piece(&[-1.0]).1, 1);
    }

    #[test]
    fn dedup_keeps_function() {
        let f = tent();
        let g = f.dedup_parallel();
        assert_eq!(g.pieces().len(), 2);
        for k in -10..=10 {
            let x = [k as f64 * 0.37];
            assert_eq!(f.eval(&x), g.eval(&x));
        }
    }

    #[test]
    fn rejects_steep_slopes() {
        let bad = MaxAffineFunction::new(
            1.0,
            vec![AffinePiece {
                slope: vec![1.5],
                intercept: 0.0,
            }],
        );
        assert!(bad.is_err());
        assert!(MaxAffineFunction::new(1.0, vec![]).is_err());
    }

    #[test]
    fn json_schema() {
        let f = MaxAffineFunction::constant(2, 1.5, 1.0).unwrap();
        let text = f.to_json().unwrap();
        assert_eq!(text, r#"{"L":1.0,"pieces":[{"p":[0.0,0.0],"a":1.5}]}"#);
        assert_eq!(MaxAffineFunction::from_json(&text).unwrap(), f);
    }

    #[test]
    fn single_piece_is_affine() {
        let f = MaxAffineFunction::new(
            2.0,
            vec![AffinePiece {
                slope: vec![1.0, -1.0],
                intercept: 0.5,
            }],
        )
        .unwrap();
        let a = [0.3, -1.2];
        let b = [2.0, 0.7];
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        assert!((f.eval(&mid) - (f.eval(&a) + f.eval(&b)) / 2.0).abs() < 1e-15);
    }
}
