//! Degree-2 Hermite diagnostics.
//!
//! A convex function has `f^(2 e_i) >= 0` for every coordinate, so a
//! clearly negative pure second-order coefficient certifies non-convexity,
//! and the negative parts bound the distance to the convex class from
//! below: projecting `f - g` onto the span of the `h_{2 e_i}` gives
//! `|f - g|^2 >= sum_i (f^(2 e_i)^-)^2` for any convex `g`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::coeff_learn::{estimate_coefficient, estimate_mean};
use crate::error::{Error, Result};
use crate::hermite::{
    apply_noise_spectral, hermite_at_zero, HermiteExpansion, MultiIndex, NoiseParameter,
};
use crate::oracle::FunctionOracle;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumVerdict {
    Consistent,
    NonConvexCertificate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// `f^(2 e_i)` for `i = 1..n`.
    pub degree2_coeffs: Vec<f64>,
    /// Per-coordinate estimation tolerance; zero for exact coefficients.
    pub tolerance: f64,
    /// `sqrt(sum_i max(-c_i, 0)^2)` of the raw coefficients.
    pub negative_part_norm: f64,
    pub verdict: SpectrumVerdict,
}

impl SpectrumReport {
    /// Report for known coefficients. A certificate needs a strictly
    /// negative coefficient.
    pub fn from_exact(coeffs: Vec<f64>) -> Self {
        Self::build(coeffs, 0.0)
    }

    /// Reads `f^(2 e_i)` off an expansion.
    pub fn from_expansion(e: &HermiteExpansion) -> Self {
        let n = e.dim();
        Self::from_exact((0..n).map(|i| e.get(&MultiIndex::axis(n, i, 2))).collect())
    }

    fn build(coeffs: Vec<f64>, tolerance: f64) -> Self {
        let negative_part_norm = coeffs
            .iter()
            .map(|c| (-c).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt();
        let flagged = coeffs.iter().any(|&c| c < -2.0 * tolerance);
        SpectrumReport {
            degree2_coeffs: coeffs,
            tolerance,
            negative_part_norm,
            verdict: if flagged {
                SpectrumVerdict::NonConvexCertificate
            } else {
                SpectrumVerdict::Consistent
            },
        }
    }
}

/// Estimates every `f^(2 e_i)` to tolerance `xi` with confidence `1 - delta`
/// each, after centering `f` with its sample mean. Flags non-convexity when
/// an estimate falls below `-2 xi`, so a certificate is wrong with
/// probability at most `n delta`.
pub fn degree2_check(
    f: &FunctionOracle,
    xi: f64,
    delta: f64,
    rng: &RngStream,
) -> Result<SpectrumReport> {
    if !(xi > 0.0) {
        return Err(Error::invalid("xi must be positive"));
    }
    let n = f.dimension();
    let mean = estimate_mean(f, xi, &rng.named("mean"))?;
    let centered = f.shifted(mean);
    let coeffs = (0..n)
        .map(|i| {
            let alpha = MultiIndex::axis(n, i, 2);
            Ok(estimate_coefficient(&centered, &alpha, xi, delta, &rng.child(i as u64))?.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(SpectrumReport::build(coeffs, xi))
}

/// `sqrt(sum_i max(-c_i - tolerance, 0)^2)`: a lower bound on the distance
/// to the convex class whenever each coefficient is within `tolerance`.
pub fn dconv_lower_bound(report: &SpectrumReport) -> f64 {
    report
        .degree2_coeffs
        .iter()
        .map(|c| (-c - report.tolerance).max(0.0).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `d^2 (P_t f) / dx_i^2` at the origin from the expansion of `f`:
///
/// `sum_alpha P_t f^(2 alpha + 2 e_i) sqrt((2 alpha_i + 1)(2 alpha_i + 2))
///  prod_k h_{2 alpha_k}(0)`,
///
/// over `|alpha| <= truncation`. `None` uses the degree of the expansion,
/// which makes the sum exact.
pub fn second_derivative_pt_at_zero(
    e: &HermiteExpansion,
    i: usize,
    t: NoiseParameter,
    truncation: Option<usize>,
) -> Result<f64> {
    let n = e.dim();
    if i >= n {
        return Err(Error::invalid(format!(
            "coordinate {i} out of range for dimension {n}"
        )));
    }
    let limit = truncation.unwrap_or_else(|| e.max_degree());
    let noised = apply_noise_spectral(e, t);
    let mut total = 0.0;
    for (beta, c) in noised.iter() {
        let b = beta.entries();
        if b[i] < 2 || b.iter().any(|v| v % 2 == 1) {
            continue;
        }
        // alpha = (beta - 2 e_i) / 2
        let half = (beta.degree() - 2) / 2;
        if half > limit {
            continue;
        }
        let ai = (b[i] - 2) as f64 / 2.0;
        let mut term = c * ((2.0 * ai + 1.0) * (2.0 * ai + 2.0)).sqrt();
        for (k, &bk) in b.iter().enumerate() {
            let idx = if k == i { bk - 2 } else { bk };
            term *= hermite_at_zero(idx as usize);
        }
        total += term;
    }
    Ok(total)
}

/// A unit vector `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecretDirection {
    pub u: Vec<f64>,
}

/// Draws `u` uniformly from the sphere and returns `x -> <x, u>`.
pub fn sample_dlin(n: usize, rng: &RngStream) -> Result<(SecretDirection, FunctionOracle)> {
    if n == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let mut gen = rng.generator();
    let u = loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut gen)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            break v.into_iter().map(|x| x / norm).collect::<Vec<f64>>();
        }
    };
    let w = u.clone();
    let f = FunctionOracle::new("dlin", n, 1.0, move |x| {
        x.iter().zip(&w).map(|(a, b)| a * b).sum()
    })?;
    Ok((SecretDirection { u }, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::catalog_function;
    use crate::hermite::hermite_1d;

    fn pure(alpha: Vec<u32>) -> HermiteExpansion {
        HermiteExpansion::from_terms(alpha.len(), [(alpha, 1.0)]).unwrap()
    }

    fn finite_difference(j: usize, t: f64) -> f64 {
        let step = 1e-4;
        let p = |x: f64| (-(j as f64) * t).exp() * hermite_1d(j, x);
        (p(step) - 2.0 * p(0.0) + p(-step)) / (step * step)
    }

    #[test]
    fn second_derivative_of_h2() {
        let t = NoiseParameter::new(1.0).unwrap();
        let v = second_derivative_pt_at_zero(&pure(vec![2]), 0, t, None).unwrap();
        assert!((v - 2f64.sqrt() * (-2.0f64).exp()).abs() < 1e-14);
        let lin = second_derivative_pt_at_zero(&pure(vec![1]), 0, t, None).unwrap();
        assert_eq!(lin, 0.0);
    }

    #[test]
    fn series_matches_finite_differences() {
        for j in 1..=3 {
            for t in [0.25, 0.5, 1.0] {
                let e = pure(vec![2 * j as u32]);
                let v = second_derivative_pt_at_zero(&e, 0, NoiseParameter::new(t).unwrap(), None)
                    .unwrap();
                let fd = finite_difference(2 * j, t);
                assert!((v - fd).abs() < 1e-6, "j {j} t {t}: {v} vs {fd}");
            }
        }
    }

    #[test]
    fn mixed_index_uses_other_coordinates_at_zero() {
        // h_2(x) h_2(y): d^2/dx^2 at 0 is sqrt(2) h_2(0) = -1
        let e = pure(vec![2, 2]);
        let v =
            second_derivative_pt_at_zero(&e, 0, NoiseParameter::new(0.0).unwrap(), None).unwrap();
        assert!((v + 1.0).abs() < 1e-14);
        let cut = second_derivative_pt_at_zero(&e, 0, NoiseParameter::new(0.0).unwrap(), Some(0))
            .unwrap();
        assert_eq!(cut, 0.0);
    }

    #[test]
    fn exact_lower_bound() {
        let r = SpectrumReport::from_exact(vec![-0.3]);
        assert_eq!(dconv_lower_bound(&r), 0.3);
        assert_eq!(r.verdict, SpectrumVerdict::NonConvexCertificate);
        let r = SpectrumReport::from_exact(vec![-1.0, 0.5]);
        assert_eq!(dconv_lower_bound(&r), 1.0);
        let r = SpectrumReport::from_exact(vec![0.2, 0.0]);
        assert_eq!(dconv_lower_bound(&r), 0.0);
        assert_eq!(r.verdict, SpectrumVerdict::Consistent);
    }

    #[test]
    fn estimated_square() {
        let f = catalog_function("quadratic", 1, &[0.5]).unwrap();
        let r = degree2_check(&f, 0.1, 0.1, &RngStream::new(4)).unwrap();
        assert!((r.degree2_coeffs[0] - 2f64.sqrt()).abs() < 0.2, "{r:?}");
        assert_eq!(r.verdict, SpectrumVerdict::Consistent);
    }

    #[test]
    fn estimated_negated_h2() {
        let f = catalog_function("neg_h2", 1, &[1.0]).unwrap();
        let r = degree2_check(&f, 0.1, 0.1, &RngStream::new(5)).unwrap();
        assert!((r.degree2_coeffs[0] + 1.0).abs() < 0.2, "{r:?}");
        assert_eq!(r.verdict, SpectrumVerdict::NonConvexCertificate);
        assert!(dconv_lower_bound(&r) <= 1.0);
    }

    #[test]
    fn dlin_directions() {
        let mut signs = [0; 2];
        for seed in 0..20 {
            let (d, f) = sample_dlin(1, &RngStream::new(seed)).unwrap();
            assert_eq!(d.u[0].abs(), 1.0);
            signs[(d.u[0] > 0.0) as usize] += 1;
            assert_eq!(f.value(&d.u), 1.0);
        }
        assert!(signs[0] > 0 && signs[1] > 0);
        let mut mean = [0.0; 3];
        let draws = 10_000;
        for seed in 0..draws {
            let (d, f) = sample_dlin(3, &RngStream::new(seed)).unwrap();
            assert!((d.u.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((f.value(&d.u) - 1.0).abs() < 1e-12);
            for k in 0..3 {
                mean[k] += d.u[k] / draws as f64;
            }
        }
        assert!(mean.iter().all(|m| m.abs() < 0.05), "{mean:?}");
    }
}
