//! Lipschitz convex regression on a Gaussian-weighted grid.

mod dconv;
mod grid;
mod max_affine;
mod qcqp;
mod skyline;
mod tail;

pub use dconv::{dconv_on_grid, oracle_dconv, oracle_dconv_with, DconvOptions, DconvReport};
pub use grid::{
    axis_values, build_grid, build_grid_capped, cell_masses, regression_spacing, BoxRegion,
    GridModel, DEFAULT_GRID_CAP,
};
pub use max_affine::{AffinePiece, MaxAffineFunction, SLOPE_NORM_SLACK};
pub use qcqp::{
    constraint_violation, solve_lipschitz_convex_qcqp, solve_qcqp, KktResiduals, QcqpSolution,
    SolverOptions,
};
pub use skyline::{SkylineCholesky, SkylineMatrix};
pub use tail::{
    outside_fourth_moment, outside_mass, outside_second_moment, radius_for_tail, tail_sq_bound,
    GrowthBound,
};

use crate::error::Result;

/// Max-affine function with one piece per grid point: slope `u_hat(x)` and
/// intercept `g_hat(x) - <u_hat(x), x>`. Parallel pieces are merged, which
/// leaves the function unchanged.
pub fn extend_max_affine(
    sol: &QcqpSolution,
    grid: &GridModel,
    lipschitz: f64,
) -> Result<MaxAffineFunction> {
    let n = grid.dim();
    let pieces = (0..grid.len())
        .map(|k| {
            let x = grid.point(k);
            let slope = sol.u(k).to_vec();
            let intercept = sol.g_hat[k] - slope.iter().zip(x).map(|(p, v)| p * v).sum::<f64>();
            AffinePiece { slope, intercept }
        })
        .collect::<Vec<_>>();
    debug_assert!(pieces.iter().all(|p| p.slope.len() == n));
    Ok(MaxAffineFunction::new(lipschitz, pieces)?.dedup_parallel())
}
