//! Gaussian mass and moments outside the cube `[-r, r]^n`.

use crate::error::{Error, Result};
use crate::quadrature::{normal_pdf, normal_sf};

/// `|h(x)| <= constant + linear |x| + quadratic |x|^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthBound {
    pub constant: f64,
    pub linear: f64,
    pub quadratic: f64,
}

/// `E[z^2 1{|z| > r}]` for a standard normal `z`.
fn second_moment_1d(r: f64) -> f64 {
    2.0 * (r * normal_pdf(r) + normal_sf(r))
}

/// `E[z^4 1{|z| > r}]`.
fn fourth_moment_1d(r: f64) -> f64 {
    2.0 * (normal_pdf(r) * (r.powi(3) + 3.0 * r) + 3.0 * normal_sf(r))
}

/// Union bound on `P(x outside the cube)`.
pub fn outside_mass(n: usize, r: f64) -> f64 {
    (2.0 * n as f64 * normal_sf(r)).min(1.0)
}

/// Bound on `E[|x|^2 1{x outside the cube}]`.
pub fn outside_second_moment(n: usize, r: f64) -> f64 {
    let nf = n as f64;
    nf * (second_moment_1d(r) + (nf - 1.0) * 2.0 * normal_sf(r))
}

/// Bound on `E[|x|^4 1{x outside the cube}]`.
pub fn outside_fourth_moment(n: usize, r: f64) -> f64 {
    let nf = n as f64;
    let p = 2.0 * normal_sf(r);
    nf * (fourth_moment_1d(r)
        + 2.0 * second_moment_1d(r) * (nf - 1.0)
        + p * (nf - 1.0) * (nf + 1.0))
}

/// Bound on `E[h(x)^2 1{x outside the cube}]` for `h` with the given growth.
pub fn tail_sq_bound(n: usize, r: f64, growth: GrowthBound) -> f64 {
    3.0 * (growth.constant.powi(2) * outside_mass(n, r)
        + growth.linear.powi(2) * outside_second_moment(n, r)
        + growth.quadratic.powi(2) * outside_fourth_moment(n, r))
}

/// Smallest radius whose tail bound is at most `target^2`, to relative
/// precision `1e-9`.
pub fn radius_for_tail(n: usize, growth: GrowthBound, target: f64) -> Result<f64> {
    if !(target > 0.0) || n == 0 {
        return Err(Error::invalid(
            "tail radius needs n >= 1 and a positive target",
        ));
    }
    let goal = target * target;
    let mut hi = 1.0;
    while tail_sq_bound(n, hi, growth) > goal {
        hi *= 2.0;
        if hi > 64.0 {
            return Err(Error::Resource {
                what: "box radius".into(),
                requested: hi,
                cap: 64.0,
            });
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-9 * hi {
        let mid = 0.5 * (lo + hi);
        if tail_sq_bound(n, mid, growth) > goal {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}
