use serde_json::{Map, Value};

use super::cece::{cece_with, CeceOptions, SolverStatus};
use super::coverage::{
    cell_side, cover_radius, coverage_check_with_side, coverage_sample_count, DEFAULT_CUBE_CAP,
};
use super::AnchorSet;
use crate::error::{Error, Result};
use crate::oracle::FunctionOracle;
use crate::rng::RngStream;
use crate::{TestVerdict, Verdict};

#[derive(Debug, Clone, PartialEq)]
pub struct OneSidedConfig {
    pub lipschitz: f64,
    pub eps: f64,
    /// When set, draw `(c L sqrt(n) / eps)^n` anchors instead of the
    /// union-bound count.
    pub c_constant: Option<f64>,
    /// Target probability that the anchors miss a cube.
    pub coverage_failure: f64,
    pub max_samples: f64,
    pub cube_cap: usize,
    pub cece: CeceOptions,
}

impl OneSidedConfig {
    pub fn new(lipschitz: f64, eps: f64) -> Result<Self> {
        if !(lipschitz > 0.0 && eps > 0.0) {
            return Err(Error::invalid("L and eps must be positive"));
        }
        Ok(OneSidedConfig {
            lipschitz,
            eps,
            c_constant: None,
            coverage_failure: 0.01,
            max_samples: 1e8,
            cube_cap: DEFAULT_CUBE_CAP,
            cece: CeceOptions::default(),
        })
    }

    /// Anchors drawn in the first step.
    pub fn anchor_count(&self, n: usize) -> Result<u64> {
        let t = match self.c_constant {
            Some(c) => (c * self.lipschitz * (n as f64).sqrt() / self.eps)
                .powi(n as i32)
                .ceil(),
            None => {
                let side = cell_side(self.lipschitz, self.eps, n)?;
                coverage_sample_count(n, side, self.coverage_failure, self.cube_cap)? as f64
            }
        };
        if t > self.max_samples {
            return Err(Error::Resource {
                what: "one-sided tester anchors".into(),
                requested: t,
                cap: self.max_samples,
            });
        }
        Ok(t.max(1.0) as u64)
    }

    /// `ceil(5 / eps^4)`.
    pub fn query_count(&self) -> u64 {
        (5.0 / self.eps.powi(4)).ceil() as u64
    }
}

/// One-sided test with the default configuration.
pub fn one_sided_test(
    f: &FunctionOracle,
    lipschitz: f64,
    eps: f64,
    rng: &RngStream,
) -> Result<TestVerdict> {
    one_sided_test_with(f, &OneSidedConfig::new(lipschitz, eps)?, rng)
}

/// Draws anchors, accepts if they fail to cover the ball, then rejects if
/// the envelope misses `f` by at least `eps / 2` at a fresh sample inside
/// the ball. A convex `L`-Lipschitz input is never rejected: the envelope
/// lies above it and, on covered cubes, within `eps / 4` of it.
pub fn one_sided_test_with(
    f: &FunctionOracle,
    cfg: &OneSidedConfig,
    rng: &RngStream,
) -> Result<TestVerdict> {
    let n = f.dimension();
    let threshold = cfg.eps / 2.0;
    let t1 = cfg.anchor_count(n)?;
    let t2 = cfg.query_count();
    let side = cell_side(cfg.lipschitz, cfg.eps, n)?;
    let mut diagnostics = Map::new();
    diagnostics.insert("t1".into(), t1.into());
    diagnostics.insert("t2".into(), t2.into());
    diagnostics.insert("cell_side".into(), side.into());
    let effective_c =
        (t1 as f64).powf(1.0 / n as f64) * cfg.eps / (cfg.lipschitz * (n as f64).sqrt());
    diagnostics.insert("c_constant".into(), effective_c.into());

    let mut gen = rng.named("anchors").generator();
    let mut coords = Vec::with_capacity(t1 as usize * n);
    let mut values = Vec::with_capacity(t1 as usize);
    let mut x = vec![0.0; n];
    for _ in 0..t1 {
        values.push(f.draw(&mut gen, &mut x));
        coords.extend_from_slice(&x);
    }
    let points: Vec<&[f64]> = coords.chunks(n).collect();
    let coverage = coverage_check_with_side(&points, side, n, cfg.cube_cap)?;
    diagnostics.insert("cube_count".into(), coverage.cube_count.into());
    if !coverage.covered {
        diagnostics.insert("reason".into(), "anchors do not cover the ball".into());
        diagnostics.insert(
            "empty_cell_witness".into(),
            serde_json::to_value(&coverage.empty_cell_witness)?,
        );
        return Ok(TestVerdict {
            verdict: Verdict::Accept,
            statistic: 0.0,
            threshold,
            diagnostics,
        });
    }
    let anchors = AnchorSet::from_flat(n, coords, values, cfg.lipschitz)?;

    let radius = cover_radius(n);
    let mut gen = rng.named("queries").generator();
    let mut worst: f64 = 0.0;
    let mut checked = 0u64;
    for _ in 0..t2 {
        let y = f.draw(&mut gen, &mut x);
        if x.iter().map(|v| v * v).sum::<f64>() > radius * radius {
            continue;
        }
        checked += 1;
        let mut q = cece_with(&anchors, &x, &cfg.cece)?;
        if q.status == SolverStatus::NumericalFailure {
            q = cece_with(&anchors, &x, &cfg.cece.tightened())?;
        }
        let witness = |d: &mut Map<String, Value>| {
            d.insert("witness".into(), Value::from(x.clone()));
            d.insert("queries_checked".into(), checked.into());
        };
        if q.status == SolverStatus::NumericalFailure {
            witness(&mut diagnostics);
            diagnostics.insert("reason".into(), "envelope solver failed".into());
            return Ok(TestVerdict {
                verdict: Verdict::Reject,
                statistic: threshold.max(worst),
                threshold,
                diagnostics,
            });
        }
        let residual = (y - q.value).abs();
        worst = worst.max(residual);
        if residual >= threshold {
            witness(&mut diagnostics);
            diagnostics.insert("reason".into(), "envelope residual".into());
            return Ok(TestVerdict {
                verdict: Verdict::Reject,
                statistic: worst,
                threshold,
                diagnostics,
            });
        }
    }
    diagnostics.insert("queries_checked".into(), checked.into());
    Ok(TestVerdict {
        verdict: Verdict::Accept,
        statistic: worst,
        threshold,
        diagnostics,
    })
}

/// `|f(x) - envelope(x)|` at each query.
pub fn envelope_residual_scan<Q: AsRef<[f64]>>(
    anchors: &AnchorSet,
    f: &FunctionOracle,
    queries: &[Q],
) -> Result<Vec<f64>> {
    queries
        .iter()
        .map(|q| {
            let x = q.as_ref();
            let mut e = cece_with(anchors, x, &CeceOptions::default())?;
            if e.status == SolverStatus::NumericalFailure {
                e = cece_with(anchors, x, &CeceOptions::default().tightened())?;
            }
            Ok((f.value(x) - e.value).abs())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::catalog_function;

    #[test]
    fn convex_input_accepted() {
        let f = catalog_function("abs_proj", 1, &[]).unwrap();
        for seed in 0..5 {
            let v = one_sided_test(&f, 1.0, 0.5, &RngStream::new(seed)).unwrap();
            assert_eq!(v.verdict, Verdict::Accept, "{v:?}");
        }
    }

    #[test]
    fn far_input_rejected() {
        let f = catalog_function("neg_abs_proj", 1, &[]).unwrap();
        let v = one_sided_test(&f, 1.0, 0.5, &RngStream::new(11)).unwrap();
        assert_eq!(v.verdict, Verdict::Reject, "{v:?}");
        assert!(v.statistic >= v.threshold);
    }

    #[test]
    fn anchor_budget() {
        let cfg = OneSidedConfig::new(1.0, 0.5).unwrap();
        let t = cfg.anchor_count(1).unwrap();
        assert!((500..800).contains(&t));
        assert_eq!(cfg.query_count(), 80);
        let pinned = OneSidedConfig {
            c_constant: Some(50.0),
            ..cfg.clone()
        };
        assert_eq!(pinned.anchor_count(1).unwrap(), 100);
        let tight = OneSidedConfig {
            max_samples: 10.0,
            ..cfg
        };
        assert!(matches!(tight.anchor_count(1), Err(Error::Resource { .. })));
    }

    #[test]
    fn scan_at_anchors_is_tight() {
        let f = catalog_function("relu_proj", 2, &[0.6, 0.8]).unwrap();
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|k| vec![(k as f64 * 0.37).sin() * 1.5, (k as f64 * 0.91).cos() * 1.5])
            .collect();
        let vals = pts.iter().map(|p| f.value(p)).collect();
        let anchors = AnchorSet::from_flat(2, pts.concat(), vals, 1.0).unwrap();
        let r = envelope_residual_scan(&anchors, &f, &pts).unwrap();
        assert!(r.iter().all(|&v| v <= 1e-8), "{r:?}");
    }
}
