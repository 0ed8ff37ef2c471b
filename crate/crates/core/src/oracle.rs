//! Points, labeled samples and black-box function oracles over `N(0, I_n)`.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// A point of `R^n` with finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("a point needs at least one coordinate"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("point coordinates must be finite"));
        }
        Ok(Point(coords))
    }

    pub fn origin(n: usize) -> Self {
        Point(vec![0.0; n.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Point {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub point: Point,
    pub value: f64,
}

/// Anything that can be evaluated pointwise on `R^n`.
pub trait RealFunction {
    fn dimension(&self) -> usize;
    fn eval(&self, x: &[f64]) -> f64;
}

/// Lipschitz information declared by an oracle.
///
/// `Local` entries are only Lipschitz on bounded balls: on the ball of
/// radius `R` the gradient norm is at most `offset + slope * R`. The declared
/// constant of such an oracle is that bound at `reference_radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Lipschitz {
    Global(f64),
    Local {
        slope: f64,
        offset: f64,
        reference_radius: f64,
    },
}

impl Lipschitz {
    pub fn declared(&self) -> f64 {
        match *self {
            Lipschitz::Global(l) => l,
            Lipschitz::Local {
                slope,
                offset,
                reference_radius,
            } => offset + slope * reference_radius,
        }
    }

    /// Lipschitz constant valid on the Euclidean ball of the given radius.
    pub fn on_ball(&self, radius: f64) -> f64 {
        match *self {
            Lipschitz::Global(l) => l,
            Lipschitz::Local { slope, offset, .. } => offset + slope * radius,
        }
    }

    pub fn is_global(&self) -> bool {
        matches!(self, Lipschitz::Global(_))
    }
}

type Evaluator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Black-box access to `f : R^n -> R` with a declared Lipschitz bound.
///
/// Clones share one draw counter, so a pipeline can report exactly how many
/// labeled samples it consumed.
#[derive(Clone)]
pub struct FunctionOracle {
    name: String,
    dimension: usize,
    lipschitz: Lipschitz,
    evaluator: Evaluator,
    draws: Arc<AtomicU64>,
}

impl fmt::Debug for FunctionOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionOracle")
            .field("name", &self.name)
            .field("dimension", &self.dimension)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl FunctionOracle {
    /// Programmatic oracle with a global Lipschitz bound.
    pub fn new<F>(name: impl Into<String>, dimension: usize, lipschitz: f64, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::with_lipschitz(name, dimension, Lipschitz::Global(lipschitz), f)
    }

    pub fn with_lipschitz<F>(
        name: impl Into<String>,
        dimension: usize,
        lipschitz: Lipschitz,
        f: F,
    ) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if dimension == 0 {
            return Err(Error::invalid("oracle dimension must be at least 1"));
        }
        let declared = lipschitz.declared();
        if !(declared.is_finite() && declared > 0.0) {
            return Err(Error::invalid("declared Lipschitz bound must be positive"));
        }
        Ok(FunctionOracle {
            name: name.into(),
            dimension,
            lipschitz,
            evaluator: Arc::new(f),
            draws: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn lipschitz(&self) -> Lipschitz {
        self.lipschitz
    }

    /// The declared Lipschitz bound `L`.
    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz.declared()
    }

    /// Evaluates `f` without counting a draw (query access).
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        (self.evaluator)(x)
    }

    /// Draws `x ~ N(0, I_n)` into `buf` and returns the label `f(x)`.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, buf: &mut [f64]) -> f64 {
        fill_gaussian(rng, buf);
        self.draws.fetch_add(1, Ordering::Relaxed);
        (self.evaluator)(buf)
    }

    /// Labeled samples drawn so far through this oracle and its clones.
    pub fn draws(&self) -> u64 {
        self.draws.load(Ordering::Relaxed)
    }

    /// Same function with a fresh draw counter.
    pub fn detached(&self) -> Self {
        FunctionOracle {
            draws: Arc::new(AtomicU64::new(0)),
            ..self.clone()
        }
    }

    /// `x -> f(x) - c`, sharing the draw counter.
    pub fn shifted(&self, c: f64) -> Self {
        let inner = self.evaluator.clone();
        FunctionOracle {
            name: format!("{}-({c})", self.name),
            evaluator: Arc::new(move |x| inner(x) - c),
            ..self.clone()
        }
    }

    /// `x -> s * f(x)` with the Lipschitz bound scaled by `|s|`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        let inner = self.evaluator.clone();
        let lipschitz = match self.lipschitz {
            Lipschitz::Global(l) => Lipschitz::Global(l * s.abs()),
            Lipschitz::Local {
                slope,
                offset,
                reference_radius,
            } => Lipschitz::Local {
                slope: slope * s.abs(),
                offset: offset * s.abs(),
                reference_radius,
            },
        };
        Self::with_lipschitz(
            format!("{s}*{}", self.name),
            self.dimension,
            lipschitz,
            move |x| s * inner(x),
        )
    }
}

impl RealFunction for FunctionOracle {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn eval(&self, x: &[f64]) -> f64 {
        (self.evaluator)(x)
    }
}

#[inline]
pub(crate) fn fill_gaussian<R: Rng + ?Sized>(rng: &mut R, buf: &mut [f64]) {
    for c in buf.iter_mut() {
        *c = rng.sample(StandardNormal);
    }
}

/// One draw of `x ~ N(0, I_n)` from the start of `rng`.
pub fn sample_gaussian(n: usize, rng: &RngStream) -> Result<Point> {
    if n == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let mut g = rng.generator();
    let mut buf = vec![0.0; n];
    fill_gaussian(&mut g, &mut buf);
    Ok(Point(buf))
}

/// `count` i.i.d. labeled samples `(x, f(x))`.
pub fn draw_labeled(
    oracle: &FunctionOracle,
    count: usize,
    rng: &RngStream,
) -> Result<Vec<LabeledSample>> {
    if count == 0 {
        return Err(Error::invalid("count must be at least 1"));
    }
    let mut g = rng.generator();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut buf = vec![0.0; oracle.dimension];
        let value = oracle.draw(&mut g, &mut buf);
        if !value.is_finite() {
            return Err(Error::invalid(format!(
                "oracle returned non-finite value {value}"
            )));
        }
        out.push(LabeledSample {
            point: Point(buf),
            value,
        });
    }
    Ok(out)
}

/// Monte-Carlo estimate of `||f - g||_{L2(gamma)}`.
///
/// Returns `(estimate, half_width)` where the half-width is a 95% normal
/// approximation interval on the squared distance, mapped through the
/// square root (the wider of the two sides).
pub fn mc_l2_distance(
    f: &dyn RealFunction,
    g: &dyn RealFunction,
    count: usize,
    rng: &RngStream,
) -> Result<(f64, f64)> {
    if f.dimension() != g.dimension() {
        return Err(Error::DimensionMismatch {
            expected: f.dimension(),
            found: g.dimension(),
        });
    }
    if count < 100 {
        return Err(Error::invalid("mc_l2_distance needs at least 100 draws"));
    }
    let mut gen = rng.generator();
    let mut x = vec![0.0; f.dimension()];
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    for k in 0..count {
        fill_gaussian(&mut gen, &mut x);
        let d = f.eval(&x) - g.eval(&x);
        let sq = d * d;
        let delta = sq - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (sq - mean);
    }
    let var = if count > 1 {
        m2 / (count - 1) as f64
    } else {
        0.0
    };
    let hw_sq = 1.96 * (var / count as f64).sqrt();
    let est = mean.max(0.0).sqrt();
    let upper = (mean + hw_sq).max(0.0).sqrt() - est;
    let lower = est - (mean - hw_sq).max(0.0).sqrt();
    Ok((est, upper.max(lower)))
}

/// Writes samples as CSV with header `x_1,...,x_n,f`.
pub fn write_samples_csv<W: Write>(out: &mut W, samples: &[LabeledSample]) -> Result<()> {
    let n = samples.first().map(|s| s.point.dim()).unwrap_or(0);
    let header: Vec<String> = (1..=n)
        .map(|i| format!("x_{i}"))
        .chain(["f".to_string()])
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for s in samples {
        let row: Vec<String> = s
            .point
            .coords()
            .iter()
            .chain(std::iter::once(&s.value))
            .map(|v| format!("{v:.17e}"))
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads a CSV of numeric rows, skipping a header line if it does not parse.
pub fn read_csv_rows<R: BufRead>(input: R) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if lineno == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("line {}: {e}", lineno + 1))),
        }
    }
    if let Some(first) = rows.first() {
        let w = first.len();
        if rows.iter().any(|r| r.len() != w) {
            return Err(Error::Parse("ragged CSV rows".into()));
        }
    }
    Ok(rows)
}

/// Reads labeled samples from CSV `x_1,...,x_n,f`.
pub fn read_samples_csv<R: BufRead>(input: R) -> Result<Vec<LabeledSample>> {
    read_csv_rows(input)?
        .into_iter()
        .map(|mut row| {
            if row.len() < 2 {
                return Err(Error::Parse("sample rows need at least x_1 and f".into()));
            }
            let value = row.pop().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(Error::Parse("non-finite label".into()));
            }
            Ok(LabeledSample {
                point: Point::new(row)?,
                value,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn first_coord() -> FunctionOracle {
        FunctionOracle::new("x1", 2, 1.0, |x| x[0]).unwrap()
    }

    #[test]
    fn gaussian_moments() {
        let mut g = RngStream::new(3).generator();
        let mut buf = [0.0];
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            fill_gaussian(&mut g, &mut buf);
            s += buf[0];
            s2 += buf[0] * buf[0];
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn sample_gaussian_contract() {
        let s = RngStream::with_stream(9, 2);
        let p = sample_gaussian(3, &s).unwrap();
        assert_eq!(p.dim(), 3);
        assert_eq!(p, sample_gaussian(3, &s).unwrap());
        assert!(sample_gaussian(0, &s).is_err());
    }

    #[test]
    fn draw_labeled_contract() {
        let f = first_coord();
        let samples = draw_labeled(&f, 2, &RngStream::new(5)).unwrap();
        assert_eq!(samples.len(), 2);
        for s in &samples {
            assert_eq!(s.value, s.point.coords()[0]);
        }
        assert_eq!(f.draws(), 2);
        assert_eq!(samples, draw_labeled(&f, 2, &RngStream::new(5)).unwrap());
        assert!(draw_labeled(&f, 0, &RngStream::new(5)).is_err());
    }

    #[test]
    fn mc_distance_identical_is_zero() {
        let f = first_coord();
        let (d, hw) = mc_l2_distance(&f, &f, 1000, &RngStream::new(1)).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(hw, 0.0);
    }

    #[test]
    fn mc_distance_to_zero() {
        let f = first_coord();
        let zero = FunctionOracle::new("0", 2, 1.0, |_| 0.0).unwrap();
        let (d, hw) = mc_l2_distance(&f, &zero, 1_000_000, &RngStream::new(2)).unwrap();
        assert!((d - 1.0).abs() < 0.01, "{d}");
        assert!(hw > 0.0 && hw < 0.01);
        assert!(mc_l2_distance(&f, &zero, 99, &RngStream::new(2)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let f = first_coord();
        let samples = draw_labeled(&f, 5, &RngStream::new(8)).unwrap();
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &samples).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_1,x_2,f\n"));
        let back = read_samples_csv(&buf[..]).unwrap();
        assert_eq!(back, samples);
    }

    #[test]
    fn shifted_and_scaled() {
        let f = first_coord();
        let g = f.shifted(2.0);
        assert_eq!(g.value(&[5.0, 0.0]), 3.0);
        let h = f.scaled(-3.0).unwrap();
        assert_eq!(h.value(&[1.0, 0.0]), -3.0);
        assert_eq!(h.lipschitz_bound(), 3.0);
    }
}
