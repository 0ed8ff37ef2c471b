//! Pointwise evaluation of the empirical convex envelope.
//!
//! Eliminating the intercept turns the program into
//! `max_{|p| <= L} min_i f_i + <p, x - y_i>`, an LP-type problem in
//! `(p, t)` with combinatorial dimension `n + 1`. It is solved by an active
//! set method: the optimum over a small working set of anchors is found by
//! enumerating the candidate optima of each subset of at most `n + 1`
//! anchors, and the most violated anchor joins the working set.
//!
//! Optimality is certified by duality: for any `lambda` in the simplex,
//! `sum lambda_i f_i + L |sum lambda_i (x - y_i)|` bounds the optimum from
//! above, while any `p` in the ball gives a lower bound. Multipliers are
//! recovered from the active anchors by least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::AnchorSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Optimal,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeceOptions {
    /// Gap target relative to `1 + max |f(y)|`.
    pub relative_gap: f64,
    pub max_iterations: usize,
}

impl Default for CeceOptions {
    fn default() -> Self {
        CeceOptions {
            relative_gap: 1e-8,
            max_iterations: 2000,
        }
    }
}

impl CeceOptions {
    /// Hundredfold tighter gap and tenfold more iterations.
    pub fn tightened(&self) -> Self {
        CeceOptions {
            relative_gap: self.relative_gap * 1e-2,
            max_iterations: self.max_iterations * 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeQuery {
    pub x: Vec<f64>,
    pub value: f64,
    pub slope: Vec<f64>,
    pub intercept: f64,
    pub status: SolverStatus,
    /// Certified upper bound minus `value`.
    pub gap: f64,
    pub iterations: usize,
}

/// `f_i + <p, x - y_i>` for every anchor in `set`, minimized.
fn min_over(
    anchors: &AnchorSet,
    x: &[f64],
    p: &[f64],
    set: impl Iterator<Item = usize>,
) -> (f64, usize) {
    let mut best = f64::INFINITY;
    let mut arg = usize::MAX;
    for i in set {
        let y = anchors.point(i);
        let mut v = anchors.values[i];
        for a in 0..x.len() {
            v += p[a] * (x[a] - y[a]);
        }
        if v < best {
            best = v;
            arg = i;
        }
    }
    (best, arg)
}

fn direction(anchors: &AnchorSet, x: &[f64], i: usize) -> DVector<f64> {
    let y = anchors.point(i);
    DVector::from_iterator(x.len(), x.iter().zip(y).map(|(a, b)| a - b))
}

/// Candidate optima generated by the anchors in `subset`.
fn candidates(anchors: &AnchorSet, x: &[f64], subset: &[usize], out: &mut Vec<DVector<f64>>) {
    let n = x.len();
    let l = anchors.lipschitz;
    let k = subset.len();
    let v1 = direction(anchors, x, subset[0]);
    let c1 = anchors.values[subset[0]];
    if k == 1 {
        let norm = v1.norm();
        if norm > 0.0 {
            out.push(&v1 * (l / norm));
        } else {
            out.push(DVector::zeros(n));
        }
        return;
    }
    // rows v_i - v_1, rhs c_1 - c_i: all anchors in the subset tie
    let mut m = DMatrix::zeros(k - 1, n);
    let mut r = DVector::zeros(k - 1);
    for (row, &i) in subset[1..].iter().enumerate() {
        let vi = direction(anchors, x, i);
        for a in 0..n {
            m[(row, a)] = vi[a] - v1[a];
        }
        r[row] = c1 - anchors.values[i];
    }
    let svd = m.clone().svd(true, true);
    let scale = svd.singular_values.max().max(1e-300);
    let Ok(p0) = svd.solve(&r, 1e-12 * scale) else {
        return;
    };
    if (&m * &p0 - &r).amax() > 1e-9 * (1.0 + r.amax()) {
        return;
    }
    let sq = p0.norm_squared();
    if sq > l * l * (1.0 + 1e-12) {
        return;
    }
    if k == n + 1 {
        out.push(p0.clone());
    }
    let Ok(back) = svd.solve(&(&m * &v1), 1e-12 * scale) else {
        return;
    };
    let w = &v1 - back;
    let wn = w.norm();
    if wn > 1e-12 * (1.0 + v1.norm()) {
        out.push(&p0 + &w * ((l * l - sq).max(0.0).sqrt() / wn));
    }
}

/// Exact optimum over a small working set.
fn solve_small(anchors: &AnchorSet, x: &[f64], work: &[usize]) -> (DVector<f64>, f64) {
    let n = x.len();
    let w = work.len();
    let mut cands = Vec::new();
    let mut subset = Vec::with_capacity(n + 1);
    for mask in 1u32..(1u32 << w) {
        if mask.count_ones() as usize > n + 1 {
            continue;
        }
        subset.clear();
        subset.extend((0..w).filter(|b| mask >> b & 1 == 1).map(|b| work[b]));
        candidates(anchors, x, &subset, &mut cands);
    }
    let mut best = (DVector::zeros(n), f64::NEG_INFINITY);
    for p in cands {
        let (v, _) = min_over(anchors, x, p.as_slice(), work.iter().copied());
        if v > best.1 {
            best = (p, v);
        }
    }
    best
}

/// Smallest dual upper bound over multipliers supported on subsets of
/// `active`.
fn dual_bound(anchors: &AnchorSet, x: &[f64], active: &[usize], p: &DVector<f64>) -> Option<f64> {
    let n = x.len();
    let l = anchors.lipschitz;
    let k = active.len().min(12);
    let mut best: Option<f64> = None;
    let dirs: Vec<DVector<f64>> = active[..k]
        .iter()
        .map(|&i| direction(anchors, x, i))
        .collect();
    let mut consider = |lambda: &[f64], members: &[usize]| {
        if lambda.iter().any(|&v| !(v >= -1e-12)) {
            return;
        }
        let total: f64 = lambda.iter().map(|v| v.max(0.0)).sum();
        if total <= 0.0 {
            return;
        }
        let mut s = DVector::zeros(n);
        let mut c = 0.0;
        for (&lam, &b) in lambda.iter().zip(members) {
            let lam = lam.max(0.0) / total;
            s += &dirs[b] * lam;
            c += lam * anchors.values[active[b]];
        }
        let d = c + l * s.norm();
        best = Some(best.map_or(d, |v: f64| v.min(d)));
    };
    let mut members = Vec::new();
    for mask in 1u32..(1u32 << k) {
        if mask.count_ones() as usize > n + 1 {
            continue;
        }
        members.clear();
        members.extend((0..k).filter(|b| mask >> b & 1 == 1));
        let m = members.len();
        if m == 1 {
            consider(&[1.0], &members);
            continue;
        }
        // sum lambda v = kappa p, sum lambda = 1
        let mut a = DMatrix::zeros(n + 1, m + 1);
        let mut rhs = DVector::zeros(n + 1);
        for (col, &b) in members.iter().enumerate() {
            for r in 0..n {
                a[(r, col)] = dirs[b][r];
            }
            a[(n, col)] = 1.0;
        }
        for r in 0..n {
            a[(r, m)] = -p[r];
        }
        rhs[n] = 1.0;
        if let Ok(sol) = a.svd(true, true).solve(&rhs, 1e-13) {
            if sol[m] >= -1e-12 {
                consider(&sol.as_slice()[..m], &members);
            }
        }
    }
    best
}

/// Evaluates the envelope at `x`.
pub fn cece(anchors: &AnchorSet, x: &[f64]) -> Result<EnvelopeQuery> {
    cece_with(anchors, x, &CeceOptions::default())
}

pub fn cece_with(anchors: &AnchorSet, x: &[f64], opts: &CeceOptions) -> Result<EnvelopeQuery> {
    let n = anchors.dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("query point must be finite"));
    }
    let m = anchors.len();
    let l = anchors.lipschitz;
    let scale = 1.0 + anchors.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let target = opts.relative_gap * scale;

    let start = (0..m)
        .map(|i| {
            let y = anchors.point(i);
            let d = x
                .iter()
                .zip(y)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            (anchors.values[i] + l * d, i)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, i)| i)
        .ok_or_else(|| Error::invalid("the envelope needs at least one anchor"))?;
    let mut work = vec![start];
    let mut best_p = DVector::zeros(n);
    let mut best_value = f64::NEG_INFINITY;
    let mut best_gap = f64::INFINITY;
    let mut iterations = 0;
    let mut status = SolverStatus::NumericalFailure;
    while iterations < opts.max_iterations {
        iterations += 1;
        let (p, local) = solve_small(anchors, x, &work);
        let (value, violator) = min_over(anchors, x, p.as_slice(), 0..m);
        if value > best_value {
            best_value = value;
            best_p = p.clone();
        }
        let tie = 1e-10 * (scale + l * p.norm());
        let active: Vec<usize> = work
            .iter()
            .copied()
            .filter(|&i| min_over(anchors, x, p.as_slice(), std::iter::once(i)).0 <= local + tie)
            .collect();
        let upper = if local - value <= target {
            let mut with_global = active.clone();
            if !with_global.contains(&violator) {
                with_global.push(violator);
            }
            dual_bound(anchors, x, &with_global, &p)
        } else {
            None
        };
        if let Some(upper) = upper {
            best_gap = best_gap.min(upper - best_value);
            if best_gap <= target {
                status = SolverStatus::Optimal;
                break;
            }
        }
        // Cutting planes: the working set only grows, so the local optimum
        // never increases; the oldest slack anchors go once it is full.
        let mut next = work.clone();
        if !next.contains(&violator) {
            next.push(violator);
        } else if local - value <= target {
            // certified by the primal bound but not by the multipliers
            best_gap = best_gap.min(local - best_value);
            if best_gap <= target {
                status = SolverStatus::Optimal;
                break;
            }
        }
        let cap = 4 * (n + 2);
        let mut k = 0;
        while next.len() > cap && k < next.len() {
            if active.contains(&next[k]) || next[k] == violator {
                k += 1;
            } else {
                next.remove(k);
            }
        }
        work = next;
    }
    let p: Vec<f64> = best_p.iter().copied().collect();
    let (floor, _) = min_over(anchors, &vec![0.0; n], &p, 0..m);
    Ok(EnvelopeQuery {
        x: x.to_vec(),
        value: best_value,
        slope: p,
        intercept: floor,
        status,
        gap: best_gap.max(0.0),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abs_anchors(ys: &[f64]) -> AnchorSet {
        AnchorSet::from_flat(1, ys.to_vec(), ys.iter().map(|y| y.abs()).collect(), 1.0).unwrap()
    }

    #[test]
    fn abs_example() {
        let a = abs_anchors(&[-1.0, 0.0, 1.0]);
        let q = cece(&a, &[0.5]).unwrap();
        assert_eq!(q.status, SolverStatus::Optimal);
        assert!((q.value - 0.5).abs() < 1e-12, "{q:?}");
        assert!(q.gap <= 1e-8);
    }

    #[test]
    fn anchors_are_reproduced_for_convex_labels() {
        let ys = [-2.0, -1.3, -0.2, 0.4, 1.1, 2.5];
        let a = abs_anchors(&ys);
        for y in ys {
            let q = cece(&a, &[y]).unwrap();
            assert!((q.value - y.abs()).abs() < 1e-10);
        }
    }

    #[test]
    fn single_anchor_is_a_cone() {
        let a = AnchorSet::from_flat(2, vec![0.5, -0.5], vec![1.0], 2.0).unwrap();
        let x = [1.5, 1.0];
        let q = cece(&a, &x).unwrap();
        let d = ((1.0f64).powi(2) + 1.5f64.powi(2)).sqrt();
        assert!((q.value - (1.0 + 2.0 * d)).abs() < 1e-12);
        // brute force over slopes on the circle
        let mut best = f64::NEG_INFINITY;
        for k in 0..10_000 {
            let th = k as f64 * std::f64::consts::TAU / 10_000.0;
            let p = [2.0 * th.cos(), 2.0 * th.sin()];
            best = best.max(1.0 + p[0] * (x[0] - 0.5) + p[1] * (x[1] + 0.5));
        }
        assert!(best <= q.value + 1e-12 && q.value - best < 1e-6);
    }

    #[test]
    fn piece_is_feasible() {
        let ys = vec![0.3, -1.0, 1.2, 0.4, -0.7, -0.9, 2.0, 0.1];
        let vals = vec![0.5, 0.2, -0.3, 1.0];
        let a = AnchorSet::from_flat(2, ys, vals, 1.0).unwrap();
        let q = cece(&a, &[0.0, 0.5]).unwrap();
        let pn = q.slope.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(pn <= 1.0 + 1e-9);
        for i in 0..a.len() {
            let y = a.point(i);
            let v = q.intercept + q.slope[0] * y[0] + q.slope[1] * y[1];
            assert!(v <= a.values[i] + 1e-12);
        }
    }
}
