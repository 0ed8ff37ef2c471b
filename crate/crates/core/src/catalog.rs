//! Built-in test functions.
//!
//! Descriptors follow `name[:p1,p2,...]`, for example `abs_proj:1,0,0` or
//! `noised:0.5:relu_proj:1`. Directional entries take a unit vector `u` and
//! infer the dimension from it; the others need the dimension from the
//! caller.
//!
//! | name            | function                        | Lipschitz                              |
//! |-----------------|---------------------------------|----------------------------------------|
//! | `linear:u`      | `<x, u>`                        | 1                                      |
//! | `relu_proj:u`   | `max(<x, u>, 0)`                | 1                                      |
//! | `abs_proj:u`    | `abs(<x, u>)`                   | 1                                      |
//! | `neg_abs_proj:u`| `-abs(<x, u>)`                  | 1                                      |
//! | `sine_proj:u`   | `sin(<x, u>)`                   | 1                                      |
//! | `quadratic:c`   | `abs(x)^2 / (2c)`               | local: `R / c` on the ball of radius R |
//! | `neg_h2[:s]`    | `-s (x_1^2 - 1) / sqrt(2)`      | local: `sqrt(2) s R`                   |
//! | `constant:c`    | `c`                             | declared 1                             |
//! | `noised:t:base` | `P_t` of a base entry, in closed form                                    |
//!
//! Locally Lipschitz entries declare their bound on the ball of radius
//! `3 sqrt(n)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::oracle::{FunctionOracle, Lipschitz};
use crate::quadrature::{normal_cdf, normal_pdf};

const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Linear,
    Relu,
    Abs,
    NegAbs,
    Sine,
}

#[derive(Debug, Clone, PartialEq)]
enum Base {
    Projection { shape: Shape, u: Vec<f64> },
    Quadratic { c: f64 },
    NegH2 { scale: f64 },
    Constant { c: f64 },
}

fn parse_params(text: &str) -> Result<Vec<f64>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad parameter `{t}`")))
                .and_then(|v| {
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(Error::Parse(format!("non-finite parameter `{t}`")))
                    }
                })
        })
        .collect()
}

fn direction(name: &str, n: Option<usize>, params: &[f64]) -> Result<Vec<f64>> {
    let u = if params.is_empty() {
        let n =
            n.ok_or_else(|| Error::invalid(format!("`{name}` needs a direction or a dimension")))?;
        let mut e = vec![0.0; n];
        e[0] = 1.0;
        e
    } else {
        params.to_vec()
    };
    if u.is_empty() {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    if let Some(n) = n {
        if n != u.len() {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: u.len(),
            });
        }
    }
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::invalid(format!(
            "`{name}` needs a unit direction, got norm {norm}"
        )));
    }
    Ok(u)
}

fn parse_base(name: &str, n: Option<usize>, params: &[f64]) -> Result<(Base, usize)> {
    let shape = match name {
        "linear" => Some(Shape::Linear),
        "relu_proj" => Some(Shape::Relu),
        "abs_proj" => Some(Shape::Abs),
        "neg_abs_proj" => Some(Shape::NegAbs),
        "sine_proj" => Some(Shape::Sine),
        _ => None,
    };
    if let Some(shape) = shape {
        let u = direction(name, n, params)?;
        let dim = u.len();
        return Ok((Base::Projection { shape, u }, dim));
    }
    let need_dim = || {
        n.filter(|&n| n >= 1)
            .ok_or_else(|| Error::invalid(format!("`{name}` needs an explicit dimension")))
    };
    let single = |default: Option<f64>| -> Result<f64> {
        match (params, default) {
            ([v], _) => Ok(*v),
            ([], Some(d)) => Ok(d),
            _ => Err(Error::invalid(format!(
                "`{name}` takes exactly one parameter"
            ))),
        }
    };
    match name {
        "quadratic" => {
            let c = single(None)?;
            if c <= 0.0 {
                return Err(Error::invalid("quadratic needs c > 0"));
            }
            Ok((Base::Quadratic { c }, need_dim()?))
        }
        "neg_h2" => {
            let scale = single(Some(1.0))?;
            if scale <= 0.0 {
                return Err(Error::invalid("neg_h2 needs a positive scale"));
            }
            Ok((Base::NegH2 { scale }, need_dim()?))
        }
        "constant" => Ok((Base::Constant { c: single(None)? }, need_dim()?)),
        _ => Err(Error::UnknownFunction(name.to_string())),
    }
}

fn dot(x: &[f64], u: &[f64]) -> f64 {
    x.iter().zip(u).map(|(a, b)| a * b).sum()
}

fn reference_radius(n: usize) -> f64 {
    3.0 * (n as f64).sqrt()
}

fn lipschitz_of(base: &Base, n: usize) -> Lipschitz {
    match base {
        Base::Projection { .. } | Base::Constant { .. } => Lipschitz::Global(1.0),
        Base::Quadratic { c } => Lipschitz::Local {
            slope: 1.0 / c,
            offset: 0.0,
            reference_radius: reference_radius(n),
        },
        Base::NegH2 { scale } => Lipschitz::Local {
            slope: 2f64.sqrt() * scale,
            offset: 0.0,
            reference_radius: reference_radius(n),
        },
    }
}

fn build(label: String, base: Base, n: usize, noise: Option<f64>) -> Result<FunctionOracle> {
    let lipschitz = lipschitz_of(&base, n);
    match noise {
        None => match base {
            Base::Projection { shape, u } => {
                FunctionOracle::with_lipschitz(label, n, lipschitz, move |x| {
                    let s = dot(x, &u);
                    match shape {
                        Shape::Linear => s,
                        Shape::Relu => s.max(0.0),
                        Shape::Abs => s.abs(),
                        Shape::NegAbs => -s.abs(),
                        Shape::Sine => s.sin(),
                    }
                })
            }
            Base::Quadratic { c } => {
                FunctionOracle::with_lipschitz(label, n, lipschitz, move |x| dot(x, x) / (2.0 * c))
            }
            Base::NegH2 { scale } => {
                FunctionOracle::with_lipschitz(label, n, lipschitz, move |x| {
                    -scale * (x[0] * x[0] - 1.0) * FRAC_1_SQRT_2
                })
            }
            Base::Constant { c } => FunctionOracle::with_lipschitz(label, n, lipschitz, move |_| c),
        },
        Some(t) => {
            let decay = (-t).exp();
            let var = -(-2.0 * t).exp_m1();
            let sigma = var.sqrt();
            match base {
                Base::Projection { shape, u } => {
                    FunctionOracle::with_lipschitz(label, n, lipschitz, move |x| {
                        let m = decay * dot(x, &u);
                        match shape {
                            Shape::Linear => m,
                            Shape::Relu => relu_smoothed(m, sigma),
                            Shape::Abs => abs_smoothed(m, sigma),
                            Shape::NegAbs => -abs_smoothed(m, sigma),
                            Shape::Sine => m.sin() * (-0.5 * var).exp(),
                        }
                    })
                }
                Base::Quadratic { c } => {
                    FunctionOracle::with_lipschitz(label, n, lipschitz, move |x| {
                        (decay * decay * dot(x, x) + n as f64 * var) / (2.0 * c)
                    })
                }
                Base::NegH2 { scale } => {
                    FunctionOracle::with_lipschitz(label, n, lipschitz, move |x| {
                        -scale * decay * decay * (x[0] * x[0] - 1.0) * FRAC_1_SQRT_2
                    })
                }
                Base::Constant { c } => {
                    FunctionOracle::with_lipschitz(label, n, lipschitz, move |_| c)
                }
            }
        }
    }
}

/// `E[max(m + sigma z, 0)]`.
fn relu_smoothed(m: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return m.max(0.0);
    }
    m * normal_cdf(m / sigma) + sigma * normal_pdf(m / sigma)
}

/// `E[|m + sigma z|]`.
fn abs_smoothed(m: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return m.abs();
    }
    sigma * (2.0 / PI).sqrt() * (-0.5 * (m / sigma).powi(2)).exp()
        + m * (1.0 - 2.0 * normal_cdf(-m / sigma))
}

/// Catalog entry `name` with parameters `params` in dimension `n`.
pub fn catalog_function(name: &str, n: usize, params: &[f64]) -> Result<FunctionOracle> {
    let (base, dim) = parse_base(name, Some(n), params)?;
    build(name.to_string(), base, dim, None)
}

/// `P_t` applied to a base catalog entry, evaluated in closed form.
pub fn noised(t: f64, name: &str, n: usize, params: &[f64]) -> Result<FunctionOracle> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::invalid("noise time must be finite and >= 0"));
    }
    let (base, dim) = parse_base(name, Some(n), params)?;
    build(format!("noised:{t}:{name}"), base, dim, Some(t))
}

/// Parses a function descriptor. `dim` is required for non-directional entries and
/// checked against the direction length otherwise.
pub fn parse_function(desc: &str, dim: Option<usize>) -> Result<FunctionOracle> {
    let desc = desc.trim();
    if let Some(rest) = desc.strip_prefix("noised:") {
        let (t, inner) = rest
            .split_once(':')
            .ok_or_else(|| Error::Parse("expected noised:<t>:<function>".into()))?;
        let t: f64 = t
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad noise time `{t}`")))?;
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::invalid("noise time must be finite and >= 0"));
        }
        if inner.starts_with("noised:") {
            return Err(Error::invalid("nested noised entries are not supported"));
        }
        let (name, params) = split_descriptor(inner)?;
        let (base, n) = parse_base(name, dim, &params)?;
        return build(desc.to_string(), base, n, Some(t));
    }
    let (name, params) = split_descriptor(desc)?;
    let (base, n) = parse_base(name, dim, &params)?;
    build(desc.to_string(), base, n, None)
}

fn split_descriptor(desc: &str) -> Result<(&str, Vec<f64>)> {
    match desc.split_once(':') {
        Some((name, params)) => Ok((name.trim(), parse_params(params)?)),
        None => Ok((desc.trim(), Vec::new())),
    }
}
