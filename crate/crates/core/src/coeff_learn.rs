//! Sample-based estimation of means and Hermite coefficients.
//!
//! Coefficients are estimated by median-of-means: `B` independent batches of
//! `s` labeled samples each, where
//!
//! * `s = ceil(8 (L^2 3^|alpha| + 4) / xi^2)` makes each batch mean
//!   `xi`-accurate with probability at least 7/8 by Chebyshev, and
//! * `B = 2 ceil(9 ln(1/delta)) + 1` boosts that to `1 - delta`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{enumerate_indices, hermite_table, HermiteExpansion, MultiIndex};
use crate::oracle::FunctionOracle;
use crate::rng::RngStream;

/// Default ceiling on labeled draws for a single estimation call.
pub const DEFAULT_SAMPLE_CAP: f64 = 5e9;

/// Batch layout of one median-of-means estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnBudget {
    pub samples_per_batch: u64,
    pub batch_count: u64,
}

impl LearnBudget {
    pub fn for_coefficient(lipschitz: f64, degree: usize, xi: f64, delta: f64) -> Result<Self> {
        check_xi_delta(xi, delta)?;
        let s = (8.0 * (lipschitz * lipschitz * 3f64.powi(degree as i32) + 4.0) / (xi * xi)).ceil();
        let b = 2.0 * (9.0 * (1.0 / delta).ln()).ceil() + 1.0;
        if !(s.is_finite() && s <= u64::MAX as f64 / 4.0) {
            return Err(Error::Resource {
                what: "samples per batch".into(),
                requested: s,
                cap: u64::MAX as f64 / 4.0,
            });
        }
        Ok(LearnBudget {
            samples_per_batch: s as u64,
            batch_count: b as u64,
        })
    }

    pub fn total(&self) -> f64 {
        self.samples_per_batch as f64 * self.batch_count as f64
    }
}

fn check_xi_delta(xi: f64, delta: f64) -> Result<()> {
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::invalid(format!(
            "tolerance must be positive, got {xi}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!(
            "confidence parameter must lie in (0, 1), got {delta}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub alpha: Vec<u32>,
    pub value: f64,
    pub tolerance_target: f64,
    pub confidence_target: f64,
    pub budget: LearnBudget,
}

/// Number of samples used by [`estimate_mean`].
pub fn mean_sample_count(lipschitz: f64, target_error: f64) -> Result<u64> {
    if !(target_error > 0.0 && target_error.is_finite()) {
        return Err(Error::invalid("target error must be positive"));
    }
    let count = (100.0 * lipschitz * lipschitz / (target_error * target_error)).ceil();
    if count > DEFAULT_SAMPLE_CAP {
        return Err(Error::Resource {
            what: "mean estimation samples".into(),
            requested: count,
            cap: DEFAULT_SAMPLE_CAP,
        });
    }
    Ok(count.max(1.0) as u64)
}

/// Sample mean over `ceil(100 L^2 / target^2)` draws; within `target` of
/// `E[f]` with probability at least 9/10 since `Var f <= L^2`.
pub fn estimate_mean(f: &FunctionOracle, target_error: f64, rng: &RngStream) -> Result<f64> {
    let count = mean_sample_count(f.lipschitz_bound(), target_error)?;
    let mut gen = rng.generator();
    let mut x = vec![0.0; f.dimension()];
    let mut mean = 0.0f64;
    for k in 0..count {
        let v = f.draw(&mut gen, &mut x);
        mean += (v - mean) / (k + 1) as f64;
    }
    Ok(mean)
}

fn median(values: &mut [f64]) -> f64 {
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Median-of-means estimate of the Hermite coefficient at `alpha`.
///
/// The caller should center `f` first; the batch size assumes
/// `|E f| = O(1)`.
pub fn estimate_coefficient(
    f: &FunctionOracle,
    alpha: &MultiIndex,
    xi: f64,
    delta: f64,
    rng: &RngStream,
) -> Result<CoefficientEstimate> {
    if alpha.dim() != f.dimension() {
        return Err(Error::DimensionMismatch {
            expected: f.dimension(),
            found: alpha.dim(),
        });
    }
    let budget = LearnBudget::for_coefficient(f.lipschitz_bound(), alpha.degree(), xi, delta)?;
    if budget.total() > DEFAULT_SAMPLE_CAP {
        return Err(Error::Resource {
            what: "coefficient estimation samples".into(),
            requested: budget.total(),
            cap: DEFAULT_SAMPLE_CAP,
        });
    }
    let plan = ExpansionPlan {
        indices: vec![alpha.clone()],
        xi,
        delta,
        sample_cap: DEFAULT_SAMPLE_CAP,
    };
    let learned = learn_with_plan(f, &plan, rng)?;
    Ok(CoefficientEstimate {
        alpha: alpha.entries().to_vec(),
        value: learned.expansion.get(alpha),
        tolerance_target: xi,
        confidence_target: 1.0 - delta,
        budget,
    })
}

/// `ceil(L^2 / eps^2)`: the degree past which an `L`-Lipschitz function has
/// at most `eps^2` of its squared norm.
pub fn truncation_degree(lipschitz: f64, eps: f64) -> Result<usize> {
    if !(lipschitz > 0.0 && eps > 0.0) {
        return Err(Error::invalid("Lipschitz bound and eps must be positive"));
    }
    let d = (lipschitz * lipschitz / (eps * eps)).ceil();
    if !(d.is_finite() && d <= u32::MAX as f64) {
        return Err(Error::Resource {
            what: "truncation degree".into(),
            requested: d,
            cap: u32::MAX as f64,
        });
    }
    Ok(d as usize)
}

/// Which coefficients to estimate and at what per-coefficient accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionPlan {
    pub indices: Vec<MultiIndex>,
    pub xi: f64,
    pub delta: f64,
    pub sample_cap: f64,
}

impl ExpansionPlan {
    /// `xi = eps / (2en)^{d/2}`, `delta' = delta / (2en)^d`: the union bound
    /// over the crude count `(2en)^d` of indices of degree at most `d`.
    pub fn worst_case(n: usize, d: usize, eps: f64, delta: f64) -> Result<Self> {
        check_xi_delta(eps, delta)?;
        let base = 2.0 * std::f64::consts::E * n as f64;
        Ok(ExpansionPlan {
            indices: enumerate_indices(n, d)?,
            xi: eps / base.powf(d as f64 / 2.0),
            delta: delta / base.powf(d as f64),
            sample_cap: DEFAULT_SAMPLE_CAP,
        })
    }

    /// `xi = eps / sqrt(K)`, `delta' = delta / K` with `K` the exact number
    /// of indices, which gives the same `L2` guarantee.
    pub fn balanced(n: usize, d: usize, eps: f64, delta: f64) -> Result<Self> {
        check_xi_delta(eps, delta)?;
        let indices = enumerate_indices(n, d)?;
        let k = indices.len() as f64;
        Ok(ExpansionPlan {
            indices,
            xi: eps / k.sqrt(),
            delta: delta / k,
            sample_cap: DEFAULT_SAMPLE_CAP,
        })
    }

    pub fn with_sample_cap(mut self, cap: f64) -> Self {
        self.sample_cap = cap;
        self
    }

    /// Labeled draws the plan will consume.
    pub fn sample_count(&self, lipschitz: f64) -> Result<f64> {
        let top = self
            .indices
            .iter()
            .map(MultiIndex::degree)
            .max()
            .unwrap_or(0);
        Ok(LearnBudget::for_coefficient(lipschitz, top, self.xi, self.delta)?.total())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedExpansion {
    pub expansion: HermiteExpansion,
    pub xi: f64,
    pub delta: f64,
    pub samples_used: u64,
}

/// Estimates every coefficient in `plan`.
///
/// All coefficients share batches: batch `b` draws `s_max` samples and the
/// coefficient at `alpha` uses the first `s_alpha` of them. Each estimate
/// therefore has exactly the distribution it would have if computed alone.
pub fn learn_with_plan(
    f: &FunctionOracle,
    plan: &ExpansionPlan,
    rng: &RngStream,
) -> Result<LearnedExpansion> {
    let n = f.dimension();
    if plan.indices.iter().any(|a| a.dim() != n) {
        return Err(Error::invalid(
            "plan indices do not match the oracle dimension",
        ));
    }
    let lipschitz = f.lipschitz_bound();
    let budgets = plan
        .indices
        .iter()
        .map(|a| LearnBudget::for_coefficient(lipschitz, a.degree(), plan.xi, plan.delta))
        .collect::<Result<Vec<_>>>()?;
    let batches = budgets.first().map(|b| b.batch_count).unwrap_or(0);
    let s_max = budgets
        .iter()
        .map(|b| b.samples_per_batch)
        .max()
        .unwrap_or(0);
    let total = s_max as f64 * batches as f64;
    if total > plan.sample_cap {
        return Err(Error::Resource {
            what: "coefficient estimation samples".into(),
            requested: total,
            cap: plan.sample_cap,
        });
    }
    let width = plan
        .indices
        .iter()
        .map(MultiIndex::degree)
        .max()
        .unwrap_or(0)
        + 1;
    let k = plan.indices.len();
    let mut means = vec![vec![0.0; batches as usize]; k];
    let mut gen = rng.generator();
    let mut x = vec![0.0; n];
    let mut table = vec![0.0; width * n];
    let mut sums = vec![0.0; k];
    for b in 0..batches as usize {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for sample in 0..s_max {
            let y = f.draw(&mut gen, &mut x);
            for (i, &z) in x.iter().enumerate() {
                hermite_table(z, &mut table[i * width..(i + 1) * width]);
            }
            for (j, alpha) in plan.indices.iter().enumerate() {
                if sample < budgets[j].samples_per_batch {
                    let h: f64 = alpha
                        .entries()
                        .iter()
                        .enumerate()
                        .map(|(i, &a)| table[i * width + a as usize])
                        .product();
                    sums[j] += y * h;
                }
            }
        }
        for j in 0..k {
            means[j][b] = sums[j] / budgets[j].samples_per_batch as f64;
        }
    }
    let mut expansion = HermiteExpansion::new(n)?;
    for (j, alpha) in plan.indices.iter().enumerate() {
        let value = median(&mut means[j]);
        if !value.is_finite() {
            return Err(Error::invalid(
                "oracle produced a non-finite coefficient estimate",
            ));
        }
        expansion.set(alpha.clone(), value)?;
    }
    Ok(LearnedExpansion {
        expansion,
        xi: plan.xi,
        delta: plan.delta,
        samples_used: (s_max * batches),
    })
}

/// Learns every coefficient of degree at most `d` with the worst-case
/// per-coefficient parameters, so that the `L2` error of the truncation is
/// at most `eps` with probability `1 - delta`.
pub fn learn_expansion(
    f: &FunctionOracle,
    d: usize,
    eps: f64,
    delta: f64,
    rng: &RngStream,
) -> Result<HermiteExpansion> {
    let plan = ExpansionPlan::worst_case(f.dimension(), d, eps, delta)?;
    learn_with_plan(f, &plan, rng).map(|l| l.expansion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::catalog_function;
    use crate::hermite::hermite_1d;
    use crate::oracle::fill_gaussian;
    use crate::quadrature::gaussian_expectation;

    #[test]
    fn truncation_degree_examples() {
        assert_eq!(truncation_degree(1.0, 0.5).unwrap(), 4);
        assert_eq!(truncation_degree(1.0, 1.0).unwrap(), 1);
        assert_eq!(truncation_degree(2.0, 0.5).unwrap(), 16);
        assert!(truncation_degree(0.0, 1.0).is_err());
    }

    #[test]
    fn budget_formula() {
        let b = LearnBudget::for_coefficient(1.0, 1, 0.05, 0.1).unwrap();
        assert_eq!(b.samples_per_batch, 22_400);
        assert_eq!(b.batch_count, 43);
        assert!(LearnBudget::for_coefficient(1.0, 1, 0.05, 1.0).is_err());
    }

    #[test]
    fn mean_of_constant_is_exact() {
        let c = catalog_function("constant", 2, &[3.0]).unwrap();
        assert_eq!(estimate_mean(&c, 0.1, &RngStream::new(1)).unwrap(), 3.0);
    }

    #[test]
    fn mean_of_shifted_linear() {
        let f = FunctionOracle::new("x1+5", 1, 1.0, |x| x[0] + 5.0).unwrap();
        let mut hits = 0;
        for trial in 0..50 {
            let m = estimate_mean(&f, 0.1, &RngStream::with_stream(2, trial)).unwrap();
            hits += usize::from((m - 5.0).abs() <= 0.1);
        }
        assert!(hits >= 45, "{hits}/50");
        assert_eq!(f.draws(), 50 * 10_000);
    }

    #[test]
    fn relu_mean() {
        let relu = catalog_function("relu_proj", 1, &[1.0]).unwrap();
        let truth = gaussian_expectation(|z| z.max(0.0), &[0.0]);
        let mut hits = 0;
        for trial in 0..20 {
            let m = estimate_mean(&relu, 0.05, &RngStream::with_stream(3, trial)).unwrap();
            hits += usize::from((m - truth).abs() <= 0.05);
        }
        assert!(hits >= 18, "{hits}/20");
    }

    #[test]
    fn coefficient_examples() {
        let f = catalog_function("linear", 1, &[1.0]).unwrap();
        let e1 = MultiIndex::axis(1, 0, 1);
        let est = estimate_coefficient(&f, &e1, 0.05, 0.1, &RngStream::new(5)).unwrap();
        assert!((est.value - 1.0).abs() <= 0.05);
        let e2 = MultiIndex::axis(1, 0, 2);
        let est = estimate_coefficient(&f, &e2, 0.05, 0.1, &RngStream::new(6)).unwrap();
        assert!(est.value.abs() <= 0.05);
        let relu = catalog_function("relu_proj", 1, &[1.0]).unwrap();
        let centered = relu.shifted(gaussian_expectation(|z| z.max(0.0), &[0.0]));
        let est = estimate_coefficient(
            &centered,
            &MultiIndex::zero(1),
            0.05,
            0.1,
            &RngStream::new(7),
        )
        .unwrap();
        assert!(est.value.abs() <= 0.05);
        assert!(
            estimate_coefficient(&f, &MultiIndex::zero(2), 0.05, 0.1, &RngStream::new(7)).is_err()
        );
    }

    #[test]
    fn single_batch_mean_is_unbiased() {
        // f = 2 h_1(x) + 0.5 h_2(x), exact coefficient at alpha = 2 is 0.5
        let f = |z: f64| 2.0 * z + 0.5 * (z * z - 1.0) / 2f64.sqrt();
        let mut gen = RngStream::new(8).generator();
        let mut x = [0.0];
        let count = 1_000_000;
        let (mut mean, mut m2) = (0.0, 0.0);
        for k in 0..count {
            fill_gaussian(&mut gen, &mut x);
            let v = f(x[0]) * hermite_1d(2, x[0]);
            let d = v - mean;
            mean += d / (k + 1) as f64;
            m2 += d * (v - mean);
        }
        let se = (m2 / (count - 1) as f64 / count as f64).sqrt();
        assert!((mean - 0.5).abs() <= 5.0 * se, "{mean} se {se}");
    }

    #[test]
    fn learn_expansion_of_linear() {
        let f = catalog_function("linear", 2, &[1.0, 0.0]).unwrap();
        let plan = ExpansionPlan::balanced(2, 1, 0.05, 0.1).unwrap();
        let learned = learn_with_plan(&f, &plan, &RngStream::new(9)).unwrap();
        assert_eq!(learned.samples_used, f.draws());
        for (alpha, c) in learned.expansion.iter() {
            let want = if alpha.entries() == [1, 0] { 1.0 } else { 0.0 };
            assert!((c - want).abs() <= plan.xi, "{alpha:?}: {c}");
        }
    }

    #[test]
    fn learn_expansion_of_zero() {
        let f = catalog_function("constant", 1, &[0.0]).unwrap();
        let e = learn_expansion(&f, 3, 0.5, 0.1, &RngStream::new(10)).unwrap();
        assert_eq!(e.len(), 4);
        assert!(e.iter().all(|(_, c)| c == 0.0));
    }

    #[test]
    fn learn_expansion_of_centered_relu() {
        let relu = catalog_function("relu_proj", 1, &[1.0]).unwrap();
        let mean = gaussian_expectation(|z| z.max(0.0), &[0.0]);
        let centered = relu.shifted(mean);
        let plan = ExpansionPlan::worst_case(1, 2, 0.05, 0.1).unwrap();
        let learned = learn_with_plan(&centered, &plan, &RngStream::new(12)).unwrap();
        for j in 0..=2usize {
            let truth = gaussian_expectation(|z| (z.max(0.0) - mean) * hermite_1d(j, z), &[0.0]);
            let got = learned.expansion.get(&MultiIndex::axis(1, 0, j as u32));
            assert!((got - truth).abs() <= plan.xi, "j={j}: {got} vs {truth}");
        }
        let one_half = gaussian_expectation(|z| z.max(0.0) * z, &[0.0]);
        assert!((one_half - 0.5).abs() < 1e-12);
    }
}
