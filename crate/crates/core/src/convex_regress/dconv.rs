//! Brute-force estimate of the distance from a function to the convex
//! `L`-Lipschitz class, with a two-sided error bound.
//!
//! The box `[-r, r]^n` is gridded finely, the grid regression is solved to a
//! certified gap, and the result is transported back to Gaussian space:
//!
//! * lower: any convex `g` restricted to the grid is feasible, so
//!   `|f - g|_box >= sqrt(D) - disc` where `D` is the certified lower bound
//!   and `disc = (L_f + L) * spacing * sqrt(n)` bounds the change of
//!   `f - g` inside a cell. Dropping the outside mass only lowers the norm.
//! * upper: the max-affine extension `g~` of the solution satisfies
//!   `|f - g~|_box <= sqrt(P) + disc`, and its outside contribution is
//!   bounded by the growth of `f - g~` and the Gaussian tail.

use serde::{Deserialize, Serialize};

use super::extend_max_affine;
use super::grid::{BoxRegion, GridModel};
use super::qcqp::{solve_qcqp, SolverOptions};
use super::tail::{radius_for_tail, tail_sq_bound, GrowthBound};
use crate::error::{Error, Result};
use crate::oracle::{FunctionOracle, Lipschitz};

#[derive(Debug, Clone, PartialEq)]
pub struct DconvOptions {
    pub max_points: usize,
    pub solver: SolverOptions,
}

impl Default for DconvOptions {
    fn default() -> Self {
        DconvOptions {
            max_points: 20_000,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DconvReport {
    /// Square root of the grid regression optimum.
    pub value: f64,
    /// Certified lower bound on the Gaussian-space distance.
    pub lower: f64,
    /// Certified upper bound on the Gaussian-space distance.
    pub upper: f64,
    /// `max(value - lower, upper - value)`.
    pub budget: f64,
    pub radius: f64,
    pub spacing: f64,
    pub points: usize,
    /// Bound on the contribution from outside the box.
    pub tail: f64,
}

impl DconvReport {
    /// True if the interval `[lower, upper]` lies within `tol` of `value`.
    pub fn within(&self, tol: f64) -> bool {
        self.budget <= tol
    }
}

fn growth_of(lipschitz: Lipschitz, extra: f64, constant: f64) -> GrowthBound {
    match lipschitz {
        Lipschitz::Global(l) => GrowthBound {
            constant,
            linear: l + extra,
            quadratic: 0.0,
        },
        Lipschitz::Local { slope, offset, .. } => GrowthBound {
            constant,
            linear: offset + extra,
            quadratic: slope / 2.0,
        },
    }
}

/// Estimate with the default options.
pub fn oracle_dconv(f: &FunctionOracle, lipschitz: f64, eps_oracle: f64) -> Result<DconvReport> {
    oracle_dconv_with(f, lipschitz, eps_oracle, &DconvOptions::default())
}

/// Chooses a box with outside contribution at most `eps_oracle / 20` and a
/// spacing with `disc = eps_oracle / 10`, then calls [`dconv_on_grid`].
pub fn oracle_dconv_with(
    f: &FunctionOracle,
    lipschitz: f64,
    eps_oracle: f64,
    opts: &DconvOptions,
) -> Result<DconvReport> {
    let n = f.dimension();
    if n > 2 {
        return Err(Error::Resource {
            what: "brute-force distance dimension".into(),
            requested: n as f64,
            cap: 2.0,
        });
    }
    if !(eps_oracle > 0.0 && lipschitz > 0.0) {
        return Err(Error::invalid("eps_oracle and L must be positive"));
    }
    let sqrt_n = (n as f64).sqrt();
    let a_priori = growth_of(
        f.lipschitz(),
        lipschitz,
        f.lipschitz().on_ball(0.0) + lipschitz,
    );
    let radius = radius_for_tail(n, a_priori, eps_oracle / 20.0)?;
    let lf = f.lipschitz().on_ball(radius * sqrt_n);
    let spacing = eps_oracle / (10.0 * (lf + lipschitz) * sqrt_n);
    dconv_on_grid(f, lipschitz, BoxRegion::new(radius, n)?, spacing, opts)
}

/// Estimate on an explicit box and spacing.
pub fn dconv_on_grid(
    f: &FunctionOracle,
    lipschitz: f64,
    region: BoxRegion,
    spacing: f64,
    opts: &DconvOptions,
) -> Result<DconvReport> {
    if region.dimension != f.dimension() {
        return Err(Error::DimensionMismatch {
            expected: f.dimension(),
            found: region.dimension,
        });
    }
    let n = region.dimension;
    let sqrt_n = (n as f64).sqrt();
    let mut grid = GridModel::new(region, spacing, opts.max_points)?;
    grid.label(|x| f.value(x))?;
    let lf = f.lipschitz().on_ball(region.radius * sqrt_n);
    let disc = (lf + lipschitz) * spacing * sqrt_n;
    // Any gap well below the discretization error is wasted effort.
    let gap_target = (disc / 4.0).powi(2).max(1e-14);
    let mut solver = opts.solver.clone();
    if solver.root_gap == 0.0 {
        solver.root_gap = disc / 4.0;
    }
    let sol = solve_qcqp(&grid, lipschitz, gap_target, &solver)?;
    let g = extend_max_affine(&sol, &grid, lipschitz)?;
    let origin = vec![0.0; n];
    let growth = growth_of(
        f.lipschitz(),
        lipschitz,
        (f.value(&origin) - g.eval(&origin)).abs(),
    );
    let tail = tail_sq_bound(n, region.radius, growth).sqrt();
    let mass = region.gaussian_mass();
    let value = sol.objective.max(0.0).sqrt();
    let lower = mass.sqrt() * (sol.dual_bound.max(0.0).sqrt() - disc).max(0.0);
    let upper = (mass * (value + disc).powi(2) + tail * tail).sqrt();
    Ok(DconvReport {
        value,
        lower,
        upper,
        budget: (value - lower).max(upper - value),
        radius: region.radius,
        spacing,
        points: grid.len(),
        tail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::catalog_function;

    #[test]
    fn convex_input_is_near_zero() {
        let f = catalog_function("abs_proj", 1, &[]).unwrap();
        let r = oracle_dconv(&f, 1.0, 0.05).unwrap();
        assert!(r.value <= 0.05 && r.upper <= 0.05, "{r:?}");
        assert_eq!(r.lower, 0.0);
    }

    #[test]
    fn negated_quadratic_brackets_exact_distance() {
        let f = catalog_function("neg_h2", 1, &[0.3]).unwrap();
        let r = oracle_dconv(&f, 1.0, 0.05).unwrap();
        assert!(r.lower <= 0.3 && 0.3 <= r.upper, "{r:?}");
        assert!(r.budget <= 0.05, "{r:?}");
    }

    #[test]
    fn negated_absolute_value_brackets_exact_distance() {
        // the projection is the constant E(-|z|), leaving Var|z| = 1 - 2/pi
        let exact = (1.0 - 2.0 / std::f64::consts::PI).sqrt();
        let f = catalog_function("neg_abs_proj", 1, &[]).unwrap();
        let r = oracle_dconv(&f, 1.0, 0.05).unwrap();
        assert!(r.lower <= exact && exact <= r.upper, "{r:?}");
        assert!((r.value - exact).abs() < 1e-3, "{r:?}");
    }

    #[test]
    fn guards() {
        let f = catalog_function("linear", 3, &[]).unwrap();
        assert!(matches!(
            oracle_dconv(&f, 1.0, 0.1),
            Err(Error::Resource { .. })
        ));
        let f = catalog_function("linear", 2, &[]).unwrap();
        assert!(matches!(
            oracle_dconv(&f, 1.0, 0.01),
            Err(Error::Resource { .. })
        ));
    }
}
