use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::normal_interval;

/// Default cap on the number of grid points.
pub const DEFAULT_GRID_CAP: usize = 2_000_000;

/// The cube `[-r, r]^n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub radius: f64,
    pub dimension: usize,
}

impl BoxRegion {
    pub fn new(radius: f64, dimension: usize) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!(
                "box radius must be positive, got {radius}"
            )));
        }
        if dimension == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        Ok(BoxRegion { radius, dimension })
    }

    /// Standard Gaussian mass of the box.
    pub fn gaussian_mass(&self) -> f64 {
        normal_interval(-self.radius, self.radius).powi(self.dimension as i32)
    }
}

/// Grid spacing `eps / (10 L sqrt(n))`.
pub fn regression_spacing(lipschitz: f64, eps: f64, n: usize) -> Result<f64> {
    if !(lipschitz > 0.0 && eps > 0.0) {
        return Err(Error::invalid("Lipschitz bound and eps must be positive"));
    }
    Ok(eps / (10.0 * lipschitz * (n as f64).sqrt()))
}

/// Sorted, deduplicated `snap_r(k * spacing)` for `|k| <= ceil(r / spacing)`.
pub fn axis_values(radius: f64, spacing: f64) -> Result<Vec<f64>> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::invalid(format!(
            "grid spacing must be positive, got {spacing}"
        )));
    }
    let steps = (radius / spacing).ceil();
    if steps > 1e8 {
        return Err(Error::Resource {
            what: "grid points per axis".into(),
            requested: 2.0 * steps + 1.0,
            cap: 2e8 + 1.0,
        });
    }
    let steps = steps as i64;
    let mut out: Vec<f64> = (-steps..=steps)
        .map(|k| (k as f64 * spacing).clamp(-radius, radius))
        .collect();
    out.dedup();
    Ok(out)
}

/// A tensor grid on a box with Gaussian cell masses and labels.
///
/// Point `k` of an axis owns the cell `[x_k, x_{k+1}]`, so the cells tile
/// the box exactly; the last point of each axis owns an empty cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridModel {
    pub region: BoxRegion,
    pub spacing: f64,
    axis: Vec<f64>,
    coords: Vec<f64>,
    pub masses: Vec<f64>,
    pub values: Vec<f64>,
}

impl GridModel {
    pub fn new(region: BoxRegion, spacing: f64, cap: usize) -> Result<Self> {
        let axis = axis_values(region.radius, spacing)?;
        let n = region.dimension;
        let m = axis.len();
        let count = (m as f64).powi(n as i32);
        if count > cap as f64 {
            return Err(Error::Resource {
                what: "grid points".into(),
                requested: count,
                cap: cap as f64,
            });
        }
        let total = count as usize;
        let norm = normal_interval(-region.radius, region.radius);
        let axis_mass: Vec<f64> = (0..m)
            .map(|k| {
                if k + 1 < m {
                    normal_interval(axis[k], axis[k + 1]) / norm
                } else {
                    0.0
                }
            })
            .collect();
        let mut coords = Vec::with_capacity(total * n);
        let mut masses = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        for _ in 0..total {
            let mut w = 1.0;
            for &k in &idx {
                coords.push(axis[k]);
                w *= axis_mass[k];
            }
            masses.push(w);
            for d in (0..n).rev() {
                idx[d] += 1;
                if idx[d] < m {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(GridModel {
            region,
            spacing,
            axis,
            coords,
            masses,
            values: vec![0.0; total],
        })
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.region.dimension
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        let n = self.region.dimension;
        &self.coords[i * n..(i + 1) * n]
    }

    /// Index offset between neighbours along axis `d`.
    pub fn stride(&self, d: usize) -> usize {
        self.axis.len().pow((self.region.dimension - 1 - d) as u32)
    }

    /// Position of point `i` along axis `d`.
    pub fn axis_index(&self, i: usize, d: usize) -> usize {
        (i / self.stride(d)) % self.axis.len()
    }

    /// Sets the labels from a function.
    pub fn label<F: Fn(&[f64]) -> f64>(&mut self, f: F) -> Result<()> {
        for i in 0..self.len() {
            let v = f(self.point(i));
            if !v.is_finite() {
                return Err(Error::invalid("grid labels must be finite"));
            }
            self.values[i] = v;
        }
        Ok(())
    }

    /// Writes `x_1..x_n, mass, g, g_hat` rows.
    pub fn write_csv<W: Write>(&self, out: &mut W, g_hat: Option<&[f64]>) -> Result<()> {
        let n = self.dim();
        let mut header: Vec<String> = (1..=n).map(|i| format!("x_{i}")).collect();
        header.extend(["mass".to_string(), "g".to_string(), "g_hat".to_string()]);
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.point(i).iter().map(|v| format!("{v:.17e}")).collect();
            row.push(format!("{:.17e}", self.masses[i]));
            row.push(format!("{:.17e}", self.values[i]));
            row.push(g_hat.map(|g| format!("{:.17e}", g[i])).unwrap_or_default());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Grid with spacing `eps / (10 L sqrt(n))` on `region`, capped at
/// [`DEFAULT_GRID_CAP`] points.
pub fn build_grid(region: BoxRegion, lipschitz: f64, eps: f64) -> Result<GridModel> {
    build_grid_capped(region, lipschitz, eps, DEFAULT_GRID_CAP)
}

pub fn build_grid_capped(
    region: BoxRegion,
    lipschitz: f64,
    eps: f64,
    cap: usize,
) -> Result<GridModel> {
    let spacing = regression_spacing(lipschitz, eps, region.dimension)?;
    GridModel::new(region, spacing, cap)
}

/// Recomputes the normalized cell masses of a grid.
pub fn cell_masses(grid: &GridModel) -> Vec<f64> {
    GridModel::new(grid.region, grid.spacing, usize::MAX)
        .map(|g| g.masses)
        .unwrap_or_else(|_| grid.masses.clone())
}
