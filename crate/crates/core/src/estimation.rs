//! Exponent regression, tail-index estimation, seeded replica execution and
//! Galton-Watson extinction probabilities, plus the goodness-of-fit tests
//! used to check simulated laws.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Least-squares fit of `log value = intercept + slope * log n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope from the residual variance.
    pub stderr: f64,
    /// `(log n, log value)` pairs.
    pub points: Vec<(f64, f64)>,
}

pub fn fit_exponent(points: &[(f64, f64)]) -> Result<ExponentFit> {
    if points.len() < 3 {
        return Err(Error::Usage(format!(
            "exponent fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let mut logs = Vec::with_capacity(points.len());
    for &(n, value) in points {
        if !(n > 0.0 && value > 0.0 && n.is_finite() && value.is_finite()) {
            return Err(Error::Domain(format!(
                "exponent fit needs positive finite points, got ({n}, {value})"
            )));
        }
        logs.push((n.ln(), value.ln()));
    }
    let k = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Domain("exponent fit needs at least two distinct n".into()));
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ssr: f64 = logs
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let stderr = (ssr / (k - 2.0) / sxx).sqrt();
    Ok(ExponentFit {
        slope,
        intercept,
        stderr,
        points: logs,
    })
}

/// Hill estimate `(1/k sum_{i<=k} log(x_(i)/x_(k+1)))^{-1}` of the tail index
/// from the `k` largest order statistics.
pub fn hill_estimator(samples: &[f64], k: usize) -> Result<f64> {
    if k < 2 || k >= samples.len() {
        return Err(Error::Usage(format!(
            "Hill estimator needs 2 <= k < sample size, got k = {k} with {} samples",
            samples.len()
        )));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::Domain("Hill estimator got NaN samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let threshold = sorted[k];
    if !(threshold > 0.0) {
        return Err(Error::Domain(format!(
            "order statistic x_(k+1) = {threshold} is not positive"
        )));
    }
    let sum: f64 = sorted[..k].iter().map(|x| (x / threshold).ln()).sum();
    if !(sum > 0.0) {
        return Err(Error::Domain("degenerate sample: top order statistics tie".into()));
    }
    Ok(k as f64 / sum)
}

/// Default Hill order `floor(n^{2/3})`, kept inside `[2, n - 1]`.
pub fn default_hill_k(n: usize) -> usize {
    // exact integer floor: largest k with k^3 <= n^2
    let target = (n as u128) * (n as u128);
    let mut k = (n as f64).powf(2.0 / 3.0).round() as u128;
    while k * k * k > target {
        k -= 1;
    }
    while (k + 1) * (k + 1) * (k + 1) <= target {
        k += 1;
    }
    (k as usize).clamp(2, n.saturating_sub(1).max(2))
}

/// Replicas of one task; replica `i` runs with `derive_seed(master_seed, task_id, i)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaPlan {
    pub master_seed: u64,
    pub replica_count: u64,
    pub task_id: String,
}

impl ReplicaPlan {
    pub fn new(master_seed: u64, replica_count: u64, task_id: impl Into<String>) -> Self {
        Self {
            master_seed,
            replica_count,
            task_id: task_id.into(),
        }
    }

    pub fn seed(&self, index: u64) -> u64 {
        derive_seed(self.master_seed, &self.task_id, index)
    }
}

/// What to do when a replica panics or returns an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailurePolicy {
    /// Record the failure and keep going.
    #[default]
    Continue,
    /// Fail the whole run with the lowest failing index.
    Abort,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplicaFailure {
    pub index: u64,
    pub seed: u64,
    pub message: String,
}

/// Merged replica results, ordered by index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaRun<T> {
    pub task_id: String,
    pub master_seed: u64,
    /// `(index, value)` for every successful replica.
    pub results: Vec<(u64, T)>,
    pub failures: Vec<ReplicaFailure>,
}

impl<T> ReplicaRun<T> {
    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.results.iter().map(|(_, v)| v)
    }

    pub fn requested(&self) -> u64 {
        (self.results.len() + self.failures.len()) as u64
    }
}

/// Runs `task(index, seed)` for every replica of `plan` on `workers` threads
/// (`0` means the rayon default). Panics and errors are caught per replica.
/// The merged output is independent of the worker count.
pub fn run_replicas<T, F>(
    plan: &ReplicaPlan,
    workers: usize,
    policy: FailurePolicy,
    task: F,
) -> Result<ReplicaRun<T>>
where
    T: Send,
    F: Fn(u64, u64) -> Result<T> + Sync,
{
    let run_one = |index: u64| {
        let seed = plan.seed(index);
        let outcome = catch_unwind(AssertUnwindSafe(|| task(index, seed)));
        let outcome = match outcome {
            Ok(Ok(value)) => Ok(value),
            Ok(Err(err)) => Err(err.to_string()),
            Err(payload) => Err(panic_message(payload.as_ref())),
        };
        (index, seed, outcome)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Usage(format!("cannot build worker pool: {e}")))?;
    let outcomes: Vec<_> = pool.install(|| {
        (0..plan.replica_count)
            .into_par_iter()
            .map(run_one)
            .collect()
    });
    let mut run = ReplicaRun {
        task_id: plan.task_id.clone(),
        master_seed: plan.master_seed,
        results: Vec::with_capacity(outcomes.len()),
        failures: Vec::new(),
    };
    for (index, seed, outcome) in outcomes {
        match outcome {
            Ok(value) => run.results.push((index, value)),
            Err(message) => {
                if policy == FailurePolicy::Abort {
                    return Err(Error::Numeric(format!(
                        "replica {index} of {} (seed {seed}) failed: {message}",
                        plan.task_id
                    )));
                }
                run.failures.push(ReplicaFailure {
                    index,
                    seed,
                    message,
                });
            }
        }
    }
    Ok(run)
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        format!("panic: {s}")
    } else if let Some(s) = payload.downcast_ref::<String>() {
        format!("panic: {s}")
    } else {
        "panic".to_string()
    }
}

/// Extinction probability of the Galton-Watson process with offspring law
/// `P(X = k) = epsilon`, `P(X = 0) = 1 - epsilon`: the smallest fixed point of
/// `s = 1 - epsilon + epsilon s^k`, by monotone iteration from 0.
///
/// Without supercriticality (`epsilon k <= 1`) the answer is 1 unless the
/// process is the deterministic `k = 1` chain, and iteration towards 1 is
/// slow, so those cases are answered directly.
pub fn gw_extinction_prob(epsilon: f64, k: u64, tol: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::validation("epsilon", format!("must lie in (0, 1], got {epsilon}")));
    }
    if k == 0 {
        return Err(Error::validation("k", "must be at least 1"));
    }
    if !(tol > 0.0) {
        return Err(Error::validation("tol", format!("must be positive, got {tol}")));
    }
    if epsilon == 1.0 {
        return Ok(0.0);
    }
    if epsilon * k as f64 <= 1.0 {
        return Ok(1.0);
    }
    let f = |s: f64| 1.0 - epsilon + epsilon * s.powi(k.min(i32::MAX as u64) as i32);
    let mut s = 0.0;
    for _ in 0..10_000_000 {
        let next = f(s);
        if (next - s).abs() <= tol {
            return Ok(next);
        }
        s = next;
    }
    Err(Error::Numeric(format!(
        "extinction iteration did not converge for epsilon = {epsilon}, k = {k}"
    )))
}

/// `P(generation r is empty) = f^r(0)` for the same offspring law.
pub fn gw_extinction_by_generation(epsilon: f64, k: u64, generations: u32) -> f64 {
    let mut s = 0.0f64;
    for _ in 0..generations {
        s = 1.0 - epsilon + epsilon * s.powi(k as i32);
    }
    s
}

/// Two-sample Kolmogorov-Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsTest {
    pub statistic: f64,
    /// Asymptotic p-value; conservative for discrete samples.
    pub p_value: f64,
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Usage("KS test needs two nonempty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    Ok(KsTest {
        statistic: d,
        p_value: kolmogorov_survival(lambda),
    })
}

/// `P(K > lambda)` for the Kolmogorov distribution.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let term = 2.0 * (-2.0 * (j as f64 * lambda).powi(2)).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Pearson chi-square goodness of fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: u64,
    pub p_value: f64,
}

/// Tests observed cell counts against cell probabilities with
/// `cells - 1 - fitted` degrees of freedom.
pub fn chi_square_gof(observed: &[u64], probs: &[f64], fitted: u64) -> Result<ChiSquareTest> {
    if observed.len() != probs.len() || observed.len() < 2 {
        return Err(Error::Usage("chi-square needs matching cells, at least 2".into()));
    }
    let total: u64 = observed.iter().sum();
    let mut statistic = 0.0;
    for (&o, &p) in observed.iter().zip(probs) {
        if !(p > 0.0) {
            return Err(Error::Domain(format!("cell probability {p} is not positive")));
        }
        let e = p * total as f64;
        statistic += (o as f64 - e).powi(2) / e;
    }
    let dof = (observed.len() as u64 - 1)
        .checked_sub(fitted)
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::Usage("no degrees of freedom left".into()))?;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(ChiSquareTest {
        statistic,
        dof,
        p_value: 1.0 - dist.cdf(statistic),
    })
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Median of a nonempty sample (mean of the two middle values for even size).
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn exact_power_law_fit() {
        let pts: Vec<(f64, f64)> = (10..17).map(|e| {
            let n = 2f64.powi(e);
            (n, 3.0 * n.powf(0.4))
        }).collect();
        let fit = fit_exponent(&pts).unwrap();
        assert!((fit.slope - 0.4).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-10);
        let flat: Vec<(f64, f64)> = (1..6).map(|e| (10f64.powi(e), 7.0)).collect();
        assert!(fit_exponent(&flat).unwrap().slope.abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(fit_exponent(&[(1.0, 1.0), (2.0, 2.0)]).is_err());
        assert!(fit_exponent(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
        assert!(fit_exponent(&[(2.0, 1.0), (2.0, 2.0), (2.0, 3.0)]).is_err());
    }

    #[test]
    fn noisy_fit_covers_true_slope() {
        let mut rng = rng_from_seed(21);
        let pts: Vec<(f64, f64)> = (8..20)
            .map(|e| {
                let n = 2f64.powi(e);
                let z: f64 = StandardNormal.sample(&mut rng);
                (n, n.powf(0.39) * (0.1 * z).exp())
            })
            .collect();
        let fit = fit_exponent(&pts).unwrap();
        assert!((fit.slope - 0.39).abs() < 3.0 * fit.stderr, "{fit:?}");
    }

    fn pareto(alpha: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / alpha))
            .collect()
    }

    #[test]
    fn hill_on_pareto() {
        for seed in 0..5 {
            let xs = pareto(2.0, 100_000, 100 + seed);
            let h = hill_estimator(&xs, 1000).unwrap();
            assert!((1.8..=2.2).contains(&h), "seed {seed}: {h}");
            assert!((h - 2.0).abs() / 2.0 < 0.1);
        }
    }

    #[test]
    fn hill_rejects_degenerate_input() {
        assert!(hill_estimator(&[1.0; 100], 10).is_err());
        assert!(hill_estimator(&[1.0, 2.0, 3.0], 3).is_err());
        assert!(hill_estimator(&[1.0, 2.0, 3.0], 1).is_err());
        let mut xs = vec![0.0; 50];
        xs.extend([1.0, 2.0, 3.0]);
        assert!(hill_estimator(&xs, 5).is_err());
    }

    proptest! {
        #[test]
        fn hill_is_scale_invariant(seed in 0u64..1000, c in 1e-3f64..1e3) {
            let xs = pareto(1.5, 500, seed);
            let scaled: Vec<f64> = xs.iter().map(|x| c * x).collect();
            let a = hill_estimator(&xs, 50).unwrap();
            let b = hill_estimator(&scaled, 50).unwrap();
            prop_assert!((a - b).abs() < 1e-9 * a);
        }

        #[test]
        fn extinction_below_one_iff_supercritical(eps in 0.01f64..0.99, k in 1u64..40) {
            let q = gw_extinction_prob(eps, k, 1e-13).unwrap();
            let supercritical = eps * k as f64 > 1.0;
            prop_assert_eq!(q < 1.0, supercritical);
            if supercritical {
                let residual = 1.0 - eps + eps * q.powi(k as i32) - q;
                prop_assert!(residual.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn extinction_reference_values() {
        assert_eq!(gw_extinction_prob(0.5, 2, 1e-12).unwrap(), 1.0);
        let q = gw_extinction_prob(0.5, 3, 1e-14).unwrap();
        assert!((q - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-12, "{q}");
        assert!((q - 0.618034).abs() < 1e-6);
        assert_eq!(gw_extinction_prob(1.0, 2, 1e-12).unwrap(), 0.0);
        assert_eq!(gw_extinction_prob(1.0, 1, 1e-12).unwrap(), 0.0);
        assert!(gw_extinction_prob(0.0, 2, 1e-12).is_err());
        assert!(gw_extinction_prob(0.5, 0, 1e-12).is_err());
        // f^r(0) increases to q
        let mut prev = 0.0;
        for r in 1..60 {
            let s = gw_extinction_by_generation(0.5, 3, r);
            assert!(s >= prev && s <= q + 1e-12);
            prev = s;
        }
        assert!((prev - q).abs() < 1e-9);
    }

    #[test]
    fn replicas_are_ordered_and_worker_independent() {
        let plan = ReplicaPlan::new(99, 64, "unit");
        let task = |i: u64, seed: u64| -> Result<(u64, f64)> {
            let mut rng = rng_from_seed(seed);
            Ok((i, rng.random::<f64>()))
        };
        let one = run_replicas(&plan, 1, FailurePolicy::Continue, task).unwrap();
        for workers in [4, 8] {
            let many = run_replicas(&plan, workers, FailurePolicy::Continue, task).unwrap();
            assert_eq!(one, many);
        }
        assert!(one.results.iter().enumerate().all(|(k, (i, v))| *i == k as u64 && v.0 == *i));
        let empty = run_replicas(&ReplicaPlan::new(1, 0, "x"), 2, FailurePolicy::Continue, task).unwrap();
        assert!(empty.results.is_empty() && empty.failures.is_empty());
    }

    #[test]
    fn failures_are_recorded_or_abort() {
        let plan = ReplicaPlan::new(5, 10, "failing");
        let task = |i: u64, _seed: u64| -> Result<u64> {
            if i == 3 {
                panic!("boom");
            }
            if i == 7 {
                return Err(Error::Numeric("bad".into()));
            }
            Ok(i)
        };
        let run = run_replicas(&plan, 2, FailurePolicy::Continue, task).unwrap();
        assert_eq!(run.results.len(), 8);
        let failed: Vec<u64> = run.failures.iter().map(|f| f.index).collect();
        assert_eq!(failed, vec![3, 7]);
        assert!(run.failures[0].message.contains("boom"));
        assert_eq!(run.requested(), 10);
        let err = run_replicas(&plan, 2, FailurePolicy::Abort, task).unwrap_err();
        assert!(err.to_string().contains("replica 3"));
    }

    #[test]
    fn ks_detects_shift_and_accepts_same_law() {
        let mut rng = rng_from_seed(31);
        let a: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let c: Vec<f64> = (0..5000).map(|_| rng.random::<f64>() + 0.1).collect();
        assert!(ks_two_sample(&a, &b).unwrap().p_value > 0.01);
        assert!(ks_two_sample(&a, &c).unwrap().p_value < 1e-6);
        // identical samples
        let t = ks_two_sample(&a, &a).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, 1.0);
    }

    #[test]
    fn kolmogorov_quantiles() {
        // standard critical values
        assert!((kolmogorov_survival(1.628) - 0.01).abs() < 2e-4);
        assert!((kolmogorov_survival(1.358) - 0.05).abs() < 2e-4);
    }

    #[test]
    fn chi_square_quantiles() {
        // statistic at the 1% critical value of 3 dof
        let t = chi_square_gof(&[100, 100, 100, 100], &[0.25; 4], 0).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.dof, 3);
        assert!((t.p_value - 1.0).abs() < 1e-12);
        let dist = ChiSquared::new(3.0).unwrap();
        assert!((1.0 - dist.cdf(11.344_866_730_144_37) - 0.01).abs() < 1e-9);
        assert!(chi_square_gof(&[1, 2], &[0.5, 0.5], 1).is_err());
    }

    #[test]
    fn mean_median_helpers() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        let (m, se) = mean_and_stderr(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn default_hill_order() {
        assert_eq!(default_hill_k(1000), 100);
        assert_eq!(default_hill_k(100_000), 2154);
        assert_eq!(default_hill_k(3), 2);
    }
}
