//! Gaussian quadrature and standard normal helpers.

use libm::erfc;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::hermite::hermite_1d;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF `Phi(z)`.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Upper tail `Q(z) = 1 - Phi(z)`, accurate for large `z`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// Gaussian mass of `[lo, hi]`, computed on the side that avoids
/// cancellation.
pub fn normal_interval(lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    if lo >= 0.0 {
        normal_sf(lo) - normal_sf(hi)
    } else if hi <= 0.0 {
        normal_cdf(hi) - normal_cdf(lo)
    } else {
        1.0 - normal_cdf(lo) - normal_sf(hi)
    }
}

/// Nodes and weights of a quadrature rule.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// `k`-node Gauss-Hermite rule for `E[f(z)]`, `z ~ N(0, 1)`.
///
/// Nodes come from the Golub-Welsch eigenproblem and are polished by Newton
/// steps on the normalized recurrence; weights are the Christoffel numbers
/// `1 / sum_j h_j(x)^2`, which stay accurate in the far tails.
pub fn gauss_hermite(k: usize) -> GaussRule {
    assert!(k >= 1, "a quadrature rule needs at least one node");
    let mut jacobi = DMatrix::<f64>::zeros(k, k);
    for i in 1..k {
        let b = (i as f64).sqrt();
        jacobi[(i, i - 1)] = b;
        jacobi[(i - 1, i)] = b;
    }
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    nodes.sort_by(f64::total_cmp);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let hk = hermite_1d(k, *x);
            let dk = (k as f64).sqrt() * hermite_1d(k - 1, *x);
            if dk == 0.0 {
                break;
            }
            *x -= hk / dk;
        }
    }
    let weights = nodes
        .iter()
        .map(|&x| {
            let mut prev = 0.0;
            let mut cur = 1.0;
            let mut sum = 1.0;
            for j in 0..k - 1 {
                let next = (x * cur - (j as f64).sqrt() * prev) / ((j + 1) as f64).sqrt();
                prev = cur;
                cur = next;
                sum += cur * cur;
            }
            1.0 / sum
        })
        .collect();
    GaussRule { nodes, weights }
}

/// `k`-node Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(k: usize) -> GaussRule {
    assert!(k >= 1, "a quadrature rule needs at least one node");
    let mut nodes = vec![0.0; k];
    let mut weights = vec![0.0; k];
    let kf = k as f64;
    for i in 0..k {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (kf + 0.5)).cos();
        let mut deriv = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=k {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let pk = if k == 1 { x } else { p1 };
            let pkm1 = if k == 1 { 1.0 } else { p0 };
            deriv = kf * (x * pk - pkm1) / (x * x - 1.0);
            let step = pk / deriv;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * deriv * deriv);
    }
    let mut pairs: Vec<(f64, f64)> = nodes.into_iter().zip(weights).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    GaussRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Truncation point for Gaussian integrals; `phi(12)` is below `1e-31`.
pub const GAUSS_CUTOFF: f64 = 12.0;

/// `E[f(z)]` for `z ~ N(0, 1)` by composite Gauss-Legendre on `[-12, 12]`.
///
/// `breakpoints` mark kinks of `f`; panels never straddle one, so piecewise
/// smooth integrands converge at the smooth rate.
pub fn gaussian_expectation<F: Fn(f64) -> f64>(f: F, breakpoints: &[f64]) -> f64 {
    integrate_gaussian_on(f, -GAUSS_CUTOFF, GAUSS_CUTOFF, breakpoints)
}

/// `E[f(z) 1{lo <= z <= hi}]` by composite Gauss-Legendre.
pub fn integrate_gaussian_on<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    breakpoints: &[f64],
) -> f64 {
    thread_local! {
        static RULE: GaussRule = gauss_legendre(20);
    }
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|b| *b > lo && *b < hi)
        .collect();
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    RULE.with(|rule| {
        let mut total = 0.0;
        for seg in cuts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let panels = ((b - a) / 0.25).ceil().max(1.0) as usize;
            let h = (b - a) / panels as f64;
            for p in 0..panels {
                let left = a + p as f64 * h;
                let mid = left + 0.5 * h;
                let half = 0.5 * h;
                total += half
                    * rule.integrate(|t| {
                        let z = mid + half * t;
                        f(z) * normal_pdf(z)
                    });
            }
        }
        total
    })
}
