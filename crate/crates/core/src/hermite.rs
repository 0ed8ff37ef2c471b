//! Normalized probabilists' Hermite polynomials, multi-indices, expansions
//! and the Ornstein-Uhlenbeck noise operator.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::oracle::{fill_gaussian, RealFunction};
use crate::rng::RngStream;

/// `h_j(z)` by the normalized three-term recurrence
/// `sqrt(k+1) h_{k+1} = z h_k - sqrt(k) h_{k-1}`.
pub fn hermite_1d(j: usize, z: f64) -> f64 {
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..j {
        let next = (z * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    cur
}

/// Writes `h_0(z), ..., h_{out.len()-1}(z)` into `out`.
pub fn hermite_table(z: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = z;
    }
    for k in 1..out.len().saturating_sub(1) {
        out[k + 1] = (z * out[k] - (k as f64).sqrt() * out[k - 1]) / ((k + 1) as f64).sqrt();
    }
}

/// `h_j(0)`: zero for odd `j`, `(-1)^{j/2} sqrt((j-1)!! / j!!)` for even `j`.
pub fn hermite_at_zero(j: usize) -> f64 {
    if j % 2 == 1 {
        return 0.0;
    }
    let half = j / 2;
    let mut ratio = 1.0;
    for k in 1..=half {
        ratio *= (2 * k - 1) as f64 / (2 * k) as f64;
    }
    let sign = if half.is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * ratio.sqrt()
}

/// A multi-index `alpha` in `N^n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("a multi-index needs at least one entry"));
        }
        Ok(MultiIndex(entries))
    }

    pub fn zero(n: usize) -> Self {
        MultiIndex(vec![0; n.max(1)])
    }

    /// `k * e_i` in dimension `n`.
    pub fn axis(n: usize, i: usize, k: u32) -> Self {
        let mut e = vec![0; n.max(1)];
        e[i] = k;
        MultiIndex(e)
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Total degree `|alpha|`.
    pub fn degree(&self) -> usize {
        self.0.iter().map(|&a| a as usize).sum()
    }
}

/// Graded lexicographic order: by total degree, then lexicographically with
/// larger leading entries first, so `e_1` precedes `e_2`.
impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// `h_alpha(x) = prod_i h_{alpha_i}(x_i)`.
pub fn hermite_multi(alpha: &MultiIndex, x: &[f64]) -> Result<f64> {
    if alpha.dim() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: alpha.dim(),
            found: x.len(),
        });
    }
    Ok(alpha
        .0
        .iter()
        .zip(x)
        .map(|(&a, &z)| hermite_1d(a as usize, z))
        .product())
}

/// All `alpha` with `|alpha| <= d` in graded lexicographic order.
pub fn enumerate_indices(n: usize, d: usize) -> Result<Vec<MultiIndex>> {
    if n == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    fn fill(prefix: &mut Vec<u32>, remaining: usize, slots: usize, out: &mut Vec<MultiIndex>) {
        if slots == 1 {
            prefix.push(remaining as u32);
            out.push(MultiIndex(prefix.clone()));
            prefix.pop();
            return;
        }
        for first in (0..=remaining).rev() {
            prefix.push(first as u32);
            fill(prefix, remaining - first, slots - 1, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for degree in 0..=d {
        fill(&mut Vec::with_capacity(n), degree, n, &mut out);
    }
    Ok(out)
}

/// Ornstein-Uhlenbeck time `t >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NoiseParameter(f64);

impl NoiseParameter {
    pub fn new(t: f64) -> Result<Self> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::invalid(format!(
                "noise parameter must be finite and >= 0, got {t}"
            )));
        }
        Ok(NoiseParameter(t))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Sparse Hermite expansion `sum_alpha c_alpha h_alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteExpansion {
    n: usize,
    coeffs: BTreeMap<MultiIndex, f64>,
}

impl HermiteExpansion {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        Ok(HermiteExpansion {
            n,
            coeffs: BTreeMap::new(),
        })
    }

    /// Builds an expansion from `(alpha, c)` pairs; repeated keys add up.
    pub fn from_terms<I>(n: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u32>, f64)>,
    {
        let mut e = Self::new(n)?;
        for (alpha, c) in terms {
            let alpha = MultiIndex::new(alpha)?;
            let prev = e.get(&alpha);
            e.set(alpha, prev + c)?;
        }
        Ok(e)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn set(&mut self, alpha: MultiIndex, c: f64) -> Result<()> {
        if alpha.dim() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: alpha.dim(),
            });
        }
        if !c.is_finite() {
            return Err(Error::invalid("expansion coefficients must be finite"));
        }
        self.coeffs.insert(alpha, c);
        Ok(())
    }

    pub fn get(&self, alpha: &MultiIndex) -> f64 {
        self.coeffs.get(alpha).copied().unwrap_or(0.0)
    }

    /// Terms in graded lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.coeffs.iter().map(|(a, &c)| (a, c))
    }

    pub fn max_degree(&self) -> usize {
        self.coeffs
            .keys()
            .map(MultiIndex::degree)
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: x.len(),
            });
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        if self.coeffs.is_empty() {
            return 0.0;
        }
        let width = self.max_degree() + 1;
        let mut table = vec![0.0; width * self.n];
        for (i, &z) in x.iter().enumerate() {
            hermite_table(z, &mut table[i * width..(i + 1) * width]);
        }
        self.coeffs
            .iter()
            .map(|(alpha, &c)| {
                c * alpha
                    .0
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| table[i * width + a as usize])
                    .product::<f64>()
            })
            .sum()
    }

    /// `sum_alpha |alpha| c_alpha^2 = E ||grad f||^2`.
    pub fn gradient_sq_norm(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|(a, &c)| a.degree() as f64 * c * c)
            .sum()
    }

    /// `||f||^2_{L2(gamma)}` by Parseval.
    pub fn norm_sq(&self) -> f64 {
        self.coeffs.values().map(|c| c * c).sum()
    }

    /// `<f, g>_{L2(gamma)}` by Plancherel.
    pub fn inner(&self, other: &HermiteExpansion) -> Result<f64> {
        if other.n != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        Ok(self.coeffs.iter().map(|(a, &c)| c * other.get(a)).sum())
    }

    /// Coefficient-wise `self - other`.
    pub fn sub(&self, other: &HermiteExpansion) -> Result<HermiteExpansion> {
        if other.n != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        let mut out = self.clone();
        for (a, &c) in &other.coeffs {
            let v = out.get(a) - c;
            out.coeffs.insert(a.clone(), v);
        }
        Ok(out)
    }

    /// `P_t f`: each coefficient scaled by `exp(-t |alpha|)`.
    pub fn apply_noise(&self, t: NoiseParameter) -> HermiteExpansion {
        HermiteExpansion {
            n: self.n,
            coeffs: self
                .coeffs
                .iter()
                .map(|(a, &c)| (a.clone(), c * (-t.0 * a.degree() as f64).exp()))
                .collect(),
        }
    }

    /// JSON `{"n": n, "coeffs": [{"alpha": [..], "c": v}, ..]}` with 17
    /// significant digits.
    pub fn to_json(&self) -> String {
        let mut s = format!("{{\"n\":{},\"coeffs\":[", self.n);
        for (k, (alpha, c)) in self.coeffs.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            let entries: Vec<String> = alpha.0.iter().map(u32::to_string).collect();
            let _ = write!(s, "{{\"alpha\":[{}],\"c\":{:.16e}}}", entries.join(","), c);
        }
        s.push_str("]}");
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        Self::from_json_value(&v)
    }

    pub fn from_json_value(v: &serde_json::Value) -> Result<Self> {
        let bad = |m: &str| Error::Parse(format!("expansion JSON: {m}"));
        let n = v
            .get("n")
            .and_then(|n| n.as_u64())
            .ok_or_else(|| bad("missing n"))? as usize;
        let mut e = Self::new(n)?;
        let coeffs = v
            .get("coeffs")
            .and_then(|c| c.as_array())
            .ok_or_else(|| bad("missing coeffs"))?;
        for item in coeffs {
            let alpha = item
                .get("alpha")
                .and_then(|a| a.as_array())
                .ok_or_else(|| bad("missing alpha"))?
                .iter()
                .map(|x| {
                    x.as_u64()
                        .map(|x| x as u32)
                        .ok_or_else(|| bad("alpha entries must be integers"))
                })
                .collect::<Result<Vec<u32>>>()?;
            let c = item
                .get("c")
                .and_then(|c| c.as_f64())
                .ok_or_else(|| bad("missing c"))?;
            e.set(MultiIndex::new(alpha)?, c)?;
        }
        Ok(e)
    }
}

impl RealFunction for HermiteExpansion {
    fn dimension(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.eval_unchecked(x)
    }
}

pub fn eval_expansion(e: &HermiteExpansion, x: &[f64]) -> Result<f64> {
    e.eval(x)
}

pub fn expansion_gradient_sq_norm(e: &HermiteExpansion) -> f64 {
    e.gradient_sq_norm()
}

pub fn apply_noise_spectral(e: &HermiteExpansion, t: NoiseParameter) -> HermiteExpansion {
    e.apply_noise(t)
}

/// Monte-Carlo `P_t f(x) = E f(e^{-t} x + sqrt(1 - e^{-2t}) g)` with its
/// standard error.
pub fn apply_noise_mc_with_error(
    f: &dyn RealFunction,
    t: NoiseParameter,
    x: &[f64],
    count: usize,
    rng: &RngStream,
) -> Result<(f64, f64)> {
    if t.0 <= 0.0 {
        return Err(Error::invalid("Monte-Carlo noise needs t > 0"));
    }
    if count < 100 {
        return Err(Error::invalid("Monte-Carlo noise needs at least 100 draws"));
    }
    if x.len() != f.dimension() {
        return Err(Error::DimensionMismatch {
            expected: f.dimension(),
            found: x.len(),
        });
    }
    let decay = (-t.0).exp();
    let spread = (-(-2.0 * t.0).exp_m1()).sqrt();
    let mut gen = rng.generator();
    let mut g = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    for k in 0..count {
        fill_gaussian(&mut gen, &mut g);
        for i in 0..x.len() {
            y[i] = decay * x[i] + spread * g[i];
        }
        let v = f.eval(&y);
        let delta = v - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = m2 / (count - 1) as f64;
    Ok((mean, (var / count as f64).sqrt()))
}

pub fn apply_noise_mc(
    f: &dyn RealFunction,
    t: NoiseParameter,
    x: &[f64],
    count: usize,
    rng: &RngStream,
) -> Result<f64> {
    apply_noise_mc_with_error(f, t, x, count, rng).map(|(m, _)| m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::FunctionOracle;
    use crate::quadrature::{gauss_hermite, gaussian_expectation};

    #[test]
    fn hermite_examples() {
        assert!(hermite_1d(2, 1.0).abs() < 1e-15);
        assert_eq!(hermite_1d(3, 0.0), 0.0);
        assert!((hermite_1d(4, 0.0) - (3.0f64 / 8.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn recurrence_matches_closed_forms() {
        let closed = [
            |_: f64| 1.0,
            |z: f64| z,
            |z: f64| (z * z - 1.0) / 2f64.sqrt(),
            |z: f64| (z.powi(3) - 3.0 * z) / 6f64.sqrt(),
            |z: f64| (z.powi(4) - 6.0 * z * z + 3.0) / 24f64.sqrt(),
        ];
        for k in 0..=40 {
            let z = -4.0 + 0.2 * k as f64;
            for (j, f) in closed.iter().enumerate() {
                assert!((hermite_1d(j, z) - f(z)).abs() < 1e-10, "j={j} z={z}");
            }
        }
    }

    #[test]
    fn orthonormal_under_quadrature() {
        let rule = gauss_hermite(64);
        for j in 0..=8 {
            for k in 0..=8 {
                let ip = rule.integrate(|z| hermite_1d(j, z) * hermite_1d(k, z));
                let want = if j == k { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-8, "j={j} k={k} ip={ip}");
            }
        }
    }

    #[test]
    fn derivative_identity() {
        for j in 1..=8 {
            for k in 0..20 {
                let z = -3.0 + 6.0 * k as f64 / 19.0;
                let h = 1e-5;
                let fd = (hermite_1d(j, z + h) - hermite_1d(j, z - h)) / (2.0 * h);
                let exact = (j as f64).sqrt() * hermite_1d(j - 1, z);
                let scale = exact.abs().max(1e-3);
                assert!((fd - exact).abs() / scale < 1e-5, "j={j} z={z}");
            }
        }
    }

    #[test]
    fn values_at_zero() {
        for j in 0..=8 {
            assert!(
                (hermite_at_zero(j) - hermite_1d(j, 0.0)).abs() < 1e-12,
                "j={j}"
            );
        }
    }

    #[test]
    fn multi_examples() {
        let x = [2.0, 3.0];
        assert_eq!(hermite_multi(&MultiIndex::zero(2), &x).unwrap(), 1.0);
        assert_eq!(
            hermite_multi(&MultiIndex::new(vec![1, 1]).unwrap(), &x).unwrap(),
            6.0
        );
        assert!(
            hermite_multi(&MultiIndex::new(vec![2, 0]).unwrap(), &[1.0, 5.0])
                .unwrap()
                .abs()
                < 1e-15
        );
        assert!(hermite_multi(&MultiIndex::zero(3), &x).is_err());
    }

    #[test]
    fn enumeration() {
        let idx = enumerate_indices(2, 2).unwrap();
        let raw: Vec<Vec<u32>> = idx.iter().map(|a| a.entries().to_vec()).collect();
        assert_eq!(
            raw,
            vec![
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2]
            ]
        );
        assert_eq!(enumerate_indices(1, 0).unwrap().len(), 1);
        assert_eq!(enumerate_indices(3, 1).unwrap().len(), 4);
        let mut sorted = idx.clone();
        sorted.sort();
        assert_eq!(sorted, idx);
    }

    #[test]
    fn expansion_examples() {
        let e = HermiteExpansion::from_terms(1, [(vec![1], 1.0)]).unwrap();
        assert_eq!(e.eval(&[2.0]).unwrap(), 2.0);
        assert_eq!(HermiteExpansion::new(1).unwrap().eval(&[3.0]).unwrap(), 0.0);
        let e = HermiteExpansion::from_terms(1, [(vec![2], 1.0), (vec![0], 1.0)]).unwrap();
        assert!((e.eval(&[1.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_norm_examples() {
        let one = |a: u32, c: f64| HermiteExpansion::from_terms(1, [(vec![a], c)]).unwrap();
        assert_eq!(one(1, 1.0).gradient_sq_norm(), 1.0);
        assert_eq!(one(0, 7.0).gradient_sq_norm(), 0.0);
        assert_eq!(one(2, 1.0).gradient_sq_norm(), 2.0);
        // E[h_2'(z)^2] with h_2'(z) = sqrt(2) z, by quadrature
        let q = gaussian_expectation(|z| (2f64.sqrt() * z).powi(2), &[]);
        assert!((q - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_noise_examples() {
        let e = HermiteExpansion::from_terms(1, [(vec![1], 1.0)]).unwrap();
        assert_eq!(e.apply_noise(NoiseParameter::new(0.0).unwrap()), e);
        let half = e.apply_noise(NoiseParameter::new(2f64.ln()).unwrap());
        assert!((half.get(&MultiIndex::new(vec![1]).unwrap()) - 0.5).abs() < 1e-15);
        let e2 = HermiteExpansion::from_terms(1, [(vec![2], 1.0)]).unwrap();
        let n2 = e2.apply_noise(NoiseParameter::new(1.0).unwrap());
        assert!((n2.get(&MultiIndex::new(vec![2]).unwrap()) - (-2.0f64).exp()).abs() < 1e-16);
        assert!(NoiseParameter::new(-0.1).is_err());
    }

    #[test]
    fn mc_noise_examples() {
        let lin = FunctionOracle::new("x1", 2, 1.0, |x| x[0]).unwrap();
        let t = NoiseParameter::new(2f64.ln()).unwrap();
        let v = apply_noise_mc(&lin, t, &[4.0, 0.0], 1_000_000, &RngStream::new(4)).unwrap();
        assert!((v - 2.0).abs() < 0.01, "{v}");
        let c = FunctionOracle::new("c", 1, 1.0, |_| 0.1).unwrap();
        assert_eq!(
            apply_noise_mc(&c, t, &[1.0], 12_345, &RngStream::new(1)).unwrap(),
            0.1
        );
        let relu = FunctionOracle::new("relu", 1, 1.0, |x| x[0].max(0.0)).unwrap();
        let t = NoiseParameter::new(0.5).unwrap();
        let sigma = (1.0 - (-1.0f64).exp()).sqrt();
        let want = gaussian_expectation(|g| (sigma * g).max(0.0), &[0.0]);
        let got = apply_noise_mc(&relu, t, &[0.0], 1_000_000, &RngStream::new(2)).unwrap();
        assert!((got - want).abs() < 0.01, "{got} vs {want}");
        assert!(apply_noise_mc(
            &relu,
            NoiseParameter::new(0.0).unwrap(),
            &[0.0],
            1000,
            &RngStream::new(2)
        )
        .is_err());
    }

    #[test]
    fn json_round_trip() {
        let e =
            HermiteExpansion::from_terms(2, [(vec![0, 2], -0.1), (vec![1, 0], 1.0 / 3.0)]).unwrap();
        let text = e.to_json();
        assert!(text.starts_with("{\"n\":2,\"coeffs\":[{\"alpha\":[1,0]"));
        assert_eq!(HermiteExpansion::from_json(&text).unwrap(), e);
    }
}
