//! Envelope (skyline) storage and Cholesky factorization for sparse SPD
//! matrices with a small profile.

use crate::error::{Error, Result};

/// Lower triangle of a symmetric matrix; row `i` stores columns
/// `first[i]..=i` contiguously.
#[derive(Debug, Clone)]
pub struct SkylineMatrix {
    first: Vec<usize>,
    start: Vec<usize>,
    vals: Vec<f64>,
}

impl SkylineMatrix {
    pub fn new(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            debug_assert!(f <= i);
            start.push(acc);
            acc += i - f + 1;
        }
        start.push(acc);
        SkylineMatrix {
            first,
            start,
            vals: vec![0.0; acc],
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn stored(&self) -> usize {
        self.vals.len()
    }

    /// Adds `v` at `(i, j)`; the pair is reordered into the lower triangle.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(c >= self.first[r], "entry outside the profile");
        let pos = self.start[r] + c - self.first[r];
        self.vals[pos] += v;
    }

    /// In-place `L L^T` factorization.
    pub fn factor(mut self) -> Result<SkylineCholesky> {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let k0 = fi.max(fj);
                let mut s = self.vals[si + j - fi];
                let (ri, rj) = (si + k0 - fi, sj + k0 - fj);
                for t in 0..(j - k0) {
                    s -= self.vals[ri + t] * self.vals[rj + t];
                }
                let djj = self.vals[sj + j - fj];
                self.vals[si + j - fi] = s / djj;
            }
            let row = &self.vals[si..si + i - fi];
            let d = self.vals[si + i - fi] - row.iter().map(|v| v * v).sum::<f64>();
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::invalid(format!(
                    "matrix is not positive definite at row {i}"
                )));
            }
            self.vals[si + i - fi] = d.sqrt();
        }
        Ok(SkylineCholesky { m: self })
    }
}

#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    m: SkylineMatrix,
}

impl SkylineCholesky {
    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let m = &self.m;
        let n = m.dim();
        for i in 0..n {
            let fi = m.first[i];
            let si = m.start[i];
            let mut s = b[i];
            for (t, j) in (fi..i).enumerate() {
                s -= m.vals[si + t] * b[j];
            }
            b[i] = s / m.vals[si + i - fi];
        }
        for i in (0..n).rev() {
            let fi = m.first[i];
            let si = m.start[i];
            b[i] /= m.vals[si + i - fi];
            let bi = b[i];
            for (t, j) in (fi..i).enumerate() {
                b[j] -= m.vals[si + t] * bi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn matches_dense_solve() {
        // arrowhead-plus-band matrix with a ragged profile
        let n = 9;
        let first = vec![0, 0, 1, 0, 2, 4, 3, 6, 0];
        let mut sky = SkylineMatrix::new(first.clone());
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in first[i]..i {
                let v = 0.1 * ((i * 7 + j * 3) % 5) as f64 - 0.2;
                sky.add(i, j, v);
                dense[(i, j)] += v;
                dense[(j, i)] += v;
            }
            sky.add(i, i, 4.0 + i as f64);
            dense[(i, i)] += 4.0 + i as f64;
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let want = dense
            .clone()
            .cholesky()
            .unwrap()
            .solve(&DVector::from_vec(b.clone()));
        let mut x = b;
        sky.factor().unwrap().solve(&mut x);
        for i in 0..n {
            assert!((x[i] - want[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut sky = SkylineMatrix::new(vec![0, 0]);
        sky.add(0, 0, 1.0);
        sky.add(1, 0, 2.0);
        sky.add(1, 1, 1.0);
        assert!(sky.factor().is_err());
    }
}
