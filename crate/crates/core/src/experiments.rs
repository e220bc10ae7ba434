//! The named batch experiments.
//!
//! An [`ExperimentConfig`] names one experiment and its parameters. Running it
//! produces a plot-ready [`Table`] and a [`Provenance`] record whose `summary`
//! holds the run-level estimates. Every stochastic step draws its seed from
//! `derive_seed(master_seed, task_id, index)`, so outputs do not depend on the
//! worker count. Rows are emitted only for cells with at least one successful
//! replica; a run with zero replicas yields a header-only table.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::brw::{
    frozen_decompose, martingale_w, sample_brw_truncated, sample_killed_tree, Caps, Intensity,
};
use crate::error::{Error, Result};
use crate::estimation::{
    default_hill_k, fit_exponent, gw_extinction_by_generation, gw_extinction_prob, hill_estimator,
    mean_and_stderr, median, run_replicas, FailurePolicy, ReplicaFailure, ReplicaPlan, ReplicaRun,
};
use crate::exploration::{
    calibrate_constants, dominating_tree_sim, embed_gw, m_chain, CalibrationBudget,
    EmbeddingConfig, ExplorationConfig, SuccessModel,
};
use crate::graph::{connected_components, degree_stats, SamplerId};
use crate::output::{Cell, OutputFormat, Provenance, Table};
use crate::params::ModelParams;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub experiment: ExperimentSetup,
    pub seeds: SeedSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub failure_policy: FailurePolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub gamma: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum ExperimentSetup {
    LargestComponentExponent(ComponentScalingSetup),
    MaxDegreeExponent(ComponentScalingSetup),
    DegreeTail(DegreeTailSetup),
    KilledBrwScaling(KilledScalingSetup),
    YTail(YTailSetup),
    Malthusian(MalthusianSetup),
    GwEmbedding(GwEmbeddingSetup),
    DominatingTail(DominatingTailSetup),
}

impl ExperimentSetup {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentSetup::LargestComponentExponent(_) => "largest-component-exponent",
            ExperimentSetup::MaxDegreeExponent(_) => "max-degree-exponent",
            ExperimentSetup::DegreeTail(_) => "degree-tail",
            ExperimentSetup::KilledBrwScaling(_) => "killed-brw-scaling",
            ExperimentSetup::YTail(_) => "y-tail",
            ExperimentSetup::Malthusian(_) => "malthusian",
            ExperimentSetup::GwEmbedding(_) => "gw-embedding",
            ExperimentSetup::DominatingTail(_) => "dominating-tail",
        }
    }
}

fn pow2_grid(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|k| 2f64.powi(k)).collect()
}

fn default_n_grid() -> Vec<u32> {
    (10..=16).map(|k| 1u32 << k).collect()
}
fn default_50() -> u64 {
    50
}
fn default_fast() -> SamplerId {
    SamplerId::Fast
}
fn default_degree_n() -> u32 {
    1 << 17
}
fn default_20() -> u64 {
    20
}
fn default_half() -> f64 {
    0.5
}
fn default_u_grid() -> Vec<f64> {
    pow2_grid(-9, -4).into_iter().rev().collect()
}
fn default_10k() -> u64 {
    10_000
}
fn default_100k() -> u64 {
    100_000
}
fn default_y_u() -> f64 {
    2f64.powi(-9)
}
fn default_bias() -> f64 {
    0.05
}
fn default_max_particles() -> usize {
    1_000_000
}
fn default_1000() -> u64 {
    1000
}
fn default_grid_points() -> usize {
    9
}
fn default_4000() -> u64 {
    4000
}
fn default_dominating_n() -> u64 {
    1 << 16
}
fn default_tilde_beta() -> f64 {
    0.11
}
fn default_eps() -> f64 {
    0.1
}

/// Graph sizes for the component and degree exponents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentScalingSetup {
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<u32>,
    #[serde(default = "default_50")]
    pub replicas: u64,
    #[serde(default = "default_fast")]
    pub sampler: SamplerId,
}

impl Default for ComponentScalingSetup {
    fn default() -> Self {
        Self {
            n_grid: default_n_grid(),
            replicas: default_50(),
            sampler: default_fast(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegreeTailSetup {
    #[serde(default = "default_degree_n")]
    pub n: u32,
    #[serde(default = "default_20")]
    pub replicas: u64,
    #[serde(default = "default_fast")]
    pub sampler: SamplerId,
    /// Hill order; `floor(N^{2/3})` of the pooled sample size when absent.
    #[serde(default)]
    pub hill_k: Option<usize>,
}

impl Default for DegreeTailSetup {
    fn default() -> Self {
        Self {
            n: default_degree_n(),
            replicas: default_20(),
            sampler: default_fast(),
            hill_k: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KilledScalingSetup {
    #[serde(default = "default_half")]
    pub b: f64,
    #[serde(default = "default_u_grid")]
    pub u_grid: Vec<f64>,
    #[serde(default = "default_10k")]
    pub replicas: u64,
    #[serde(default)]
    pub caps: Caps,
}

impl Default for KilledScalingSetup {
    fn default() -> Self {
        Self {
            b: default_half(),
            u_grid: default_u_grid(),
            replicas: default_10k(),
            caps: Caps::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YTailSetup {
    #[serde(default = "default_half")]
    pub b: f64,
    #[serde(default = "default_y_u")]
    pub u: f64,
    #[serde(default = "default_100k")]
    pub replicas: u64,
    #[serde(default)]
    pub hill_k: Option<usize>,
    #[serde(default)]
    pub caps: Caps,
}

impl Default for YTailSetup {
    fn default() -> Self {
        Self {
            b: default_half(),
            u: default_y_u(),
            replicas: default_100k(),
            hill_k: None,
            caps: Caps::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MalthusianSetup {
    #[serde(default = "default_100k")]
    pub replicas: u64,
    /// Picks the right cutoff `R` through [`Intensity::right_cutoff_for_bias`].
    #[serde(default = "default_bias")]
    pub bias_target: f64,
    /// Overrides `bias_target`.
    #[serde(default)]
    pub right_cutoff: Option<f64>,
    #[serde(default = "default_max_particles")]
    pub max_particles: usize,
}

impl Default for MalthusianSetup {
    fn default() -> Self {
        Self {
            replicas: default_100k(),
            bias_target: default_bias(),
            right_cutoff: None,
            max_particles: default_max_particles(),
        }
    }
}

/// Calibrated `epsilon`, `a` and `u0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibratedConstants {
    pub epsilon: f64,
    pub a: f64,
    pub u0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GwEmbeddingSetup {
    pub n: u64,
    pub o_n: u64,
    pub u: f64,
    #[serde(default = "default_half")]
    pub b: f64,
    pub tilde_beta: f64,
    #[serde(default = "default_1000")]
    pub replicas: u64,
    #[serde(default)]
    pub boost: Option<usize>,
    /// Calibrated with the default budget when absent.
    #[serde(default)]
    pub calibration: Option<CalibratedConstants>,
    #[serde(default = "default_grid_points")]
    pub success_grid_points: usize,
    #[serde(default = "default_4000")]
    pub success_replicas: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DominatingTailSetup {
    #[serde(default = "default_dominating_n")]
    pub n: u64,
    #[serde(default = "default_tilde_beta")]
    pub tilde_beta: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default = "default_100k")]
    pub replicas: u64,
    #[serde(default)]
    pub caps: Caps,
}

impl Default for DominatingTailSetup {
    fn default() -> Self {
        Self {
            n: default_dominating_n(),
            tilde_beta: default_tilde_beta(),
            epsilon: default_eps(),
            replicas: default_100k(),
            caps: Caps::default(),
        }
    }
}

/// How a run is executed; not part of its results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub master_seed: u64,
    /// `0` uses every core.
    pub workers: usize,
    pub policy: FailurePolicy,
}

/// Table, typed summary and replica bookkeeping of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Report<S> {
    pub table: Table,
    pub summary: S,
    pub replicas_requested: u64,
    pub failures: Vec<ReplicaFailure>,
    pub notes: Vec<String>,
}

impl<S> Report<S> {
    fn new(table: Table, summary: S) -> Self {
        Self {
            table,
            summary,
            replicas_requested: 0,
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn absorb<T>(&mut self, run: &ReplicaRun<T>) {
        self.replicas_requested += run.requested();
        self.failures.extend(run.failures.iter().cloned());
    }
}

impl<S: Serialize> Report<S> {
    fn into_output(self, command: &str, parameters: Value, master_seed: u64) -> Result<(Table, Provenance)> {
        let mut provenance = Provenance::new(command, parameters);
        provenance.master_seed = Some(master_seed);
        provenance.replicas_requested = self.replicas_requested;
        provenance.replicas_failed = self.failures.len() as u64;
        provenance.failures = self.failures;
        provenance.summary = serde_json::to_value(&self.summary)?;
        provenance.notes = self.notes;
        Ok((self.table, provenance))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.model.gamma, self.model.beta)
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        Ok(())
    }
}

/// Runs the configured experiment with `master_seed` taken from the config.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<(Table, Provenance)> {
    let params = cfg.params()?;
    let opts = RunOptions {
        master_seed: cfg.seeds.master_seed,
        workers,
        policy: cfg.failure_policy,
    };
    let command = format!("experiment {}", cfg.experiment.name());
    let parameters = json!({
        "model": cfg.model,
        "experiment": cfg.experiment,
        "failure_policy": cfg.failure_policy,
    });
    let seed = opts.master_seed;
    match &cfg.experiment {
        ExperimentSetup::LargestComponentExponent(setup) | ExperimentSetup::MaxDegreeExponent(setup) => {
            component_scaling(&params, setup, opts)?.into_output(&command, parameters, seed)
        }
        ExperimentSetup::DegreeTail(setup) => degree_tail(&params, setup, opts)?.into_output(&command, parameters, seed),
        ExperimentSetup::KilledBrwScaling(setup) => {
            killed_brw_scaling(&params, setup, opts)?.into_output(&command, parameters, seed)
        }
        ExperimentSetup::YTail(setup) => y_tail(&params, setup, opts)?.into_output(&command, parameters, seed),
        ExperimentSetup::Malthusian(setup) => malthusian(&params, setup, opts)?.into_output(&command, parameters, seed),
        ExperimentSetup::GwEmbedding(setup) => gw_embedding(&params, setup, opts)?.into_output(&command, parameters, seed),
        ExperimentSetup::DominatingTail(setup) => {
            dominating_tail(&params, setup, opts)?.into_output(&command, parameters, seed)
        }
    }
}

fn require_subcritical(params: &ModelParams) -> Result<(f64, f64)> {
    params.rho_pm()
}

fn successes<T: Clone>(run: &ReplicaRun<T>) -> Vec<T> {
    run.values().cloned().collect()
}

/// Exponent fits of the largest component and the maximum degree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentScalingSummary {
    pub rho_minus: f64,
    pub gamma: f64,
    pub largest_slope: Option<f64>,
    pub largest_slope_stderr: Option<f64>,
    pub max_degree_slope: Option<f64>,
    pub max_degree_slope_stderr: Option<f64>,
    /// `largest_slope - max_degree_slope`.
    pub slope_gap: Option<f64>,
}

/// Largest component and maximum degree over a grid of graph sizes. The
/// slopes regress the replica mean of `log S_max` (and `log max deg`) on
/// `log n`. A maximum degree of 0 enters as `log 1`.
pub fn component_scaling(
    params: &ModelParams,
    setup: &ComponentScalingSetup,
    opts: RunOptions,
) -> Result<Report<ComponentScalingSummary>> {
    let (rho_minus, _) = require_subcritical(params)?;
    let table = Table::new([
        "n",
        "replicas_ok",
        "replicas_failed",
        "mean_log_largest",
        "stderr_log_largest",
        "mean_log_max_degree",
        "stderr_log_max_degree",
        "median_largest",
        "median_max_degree",
    ]);
    let mut report = Report::new(
        table,
        ComponentScalingSummary {
            rho_minus,
            gamma: params.gamma(),
            largest_slope: None,
            largest_slope_stderr: None,
            max_degree_slope: None,
            max_degree_slope_stderr: None,
            slope_gap: None,
        },
    );
    let mut largest_points = Vec::new();
    let mut degree_points = Vec::new();
    for &n in &setup.n_grid {
        let plan = ReplicaPlan::new(opts.master_seed, setup.replicas, format!("component-scaling/n={n}"));
        let run = run_replicas(&plan, opts.workers, opts.policy, |_, seed| {
            let graph = setup.sampler.sample(params, n, seed)?;
            let stats = connected_components(&graph);
            Ok((stats.largest, stats.max_degree))
        })?;
        report.absorb(&run);
        let values = successes(&run);
        if values.is_empty() {
            continue;
        }
        let log_largest: Vec<f64> = values.iter().map(|&(s, _)| (s as f64).ln()).collect();
        let log_degree: Vec<f64> = values.iter().map(|&(_, d)| (d.max(1) as f64).ln()).collect();
        let (ml, sl) = mean_and_stderr(&log_largest);
        let (md, sd) = mean_and_stderr(&log_degree);
        let largest: Vec<f64> = values.iter().map(|&(s, _)| s as f64).collect();
        let degrees: Vec<f64> = values.iter().map(|&(_, d)| d as f64).collect();
        largest_points.push((n as f64, ml.exp()));
        degree_points.push((n as f64, md.exp()));
        report.table.push(vec![
            n.into(),
            values.len().into(),
            run.failures.len().into(),
            ml.into(),
            sl.into(),
            md.into(),
            sd.into(),
            median(&largest).into(),
            median(&degrees).into(),
        ])?;
    }
    if let (Ok(fl), Ok(fd)) = (fit_exponent(&largest_points), fit_exponent(&degree_points)) {
        let s = &mut report.summary;
        s.largest_slope = Some(fl.slope);
        s.largest_slope_stderr = Some(fl.stderr);
        s.max_degree_slope = Some(fd.slope);
        s.max_degree_slope_stderr = Some(fd.stderr);
        s.slope_gap = Some(fl.slope - fd.slope);
    } else {
        report.notes.push("fewer than 3 graph sizes with data: no exponent fit".into());
    }
    Ok(report)
}

fn hill_orders(k: usize, samples: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = [k / 4, k / 2, k, 2 * k, 4 * k]
        .into_iter()
        .filter(|&j| j >= 2 && j < samples)
        .collect();
    ks.dedup();
    ks
}

/// Hill estimates over a sweep of orders around `k`; `(k, estimate, is_default)`.
fn hill_sweep(samples: &[f64], k: usize, table: &mut Table) -> Result<Option<f64>> {
    let mut at_default = None;
    for j in hill_orders(k, samples.len()) {
        let estimate = hill_estimator(samples, j).ok();
        if j == k {
            at_default = estimate;
        }
        table.push(vec![j.into(), estimate.into(), (j == k).into()])?;
    }
    Ok(at_default)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailSummary {
    pub samples: usize,
    pub hill_k: Option<usize>,
    pub hill_estimate: Option<f64>,
    pub target: f64,
    /// Fraction of zero samples.
    pub zero_fraction: Option<f64>,
}

/// Hill estimate of the degree survival exponent, pooled over replicas.
pub fn degree_tail(params: &ModelParams, setup: &DegreeTailSetup, opts: RunOptions) -> Result<Report<TailSummary>> {
    let plan = ReplicaPlan::new(opts.master_seed, setup.replicas, format!("degree-tail/n={}", setup.n));
    let run = run_replicas(&plan, opts.workers, opts.policy, |_, seed| {
        let graph = setup.sampler.sample(params, setup.n, seed)?;
        Ok(degree_stats(&graph).degrees)
    })?;
    let pooled: Vec<f64> = run.values().flatten().map(|&d| d as f64).collect();
    let summary = TailSummary {
        samples: pooled.len(),
        hill_k: None,
        hill_estimate: None,
        target: 1.0 / params.gamma(),
        zero_fraction: (!pooled.is_empty())
            .then(|| pooled.iter().filter(|&&d| d == 0.0).count() as f64 / pooled.len() as f64),
    };
    let mut report = Report::new(Table::new(["k", "hill_estimate", "default_k"]), summary);
    report.absorb(&run);
    if pooled.len() >= 3 {
        let k = setup.hill_k.unwrap_or_else(|| default_hill_k(pooled.len()));
        report.summary.hill_k = Some(k);
        report.summary.hill_estimate = hill_sweep(&pooled, k, &mut report.table)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KilledScalingSummary {
    pub rho_minus: f64,
    /// Medians of `u^rho I(0, b)` at the three smallest `u`.
    pub last_medians: Vec<f64>,
    /// `max / min` of `last_medians`; absent when a median is 0.
    pub median_ratio: Option<f64>,
    /// The same ratio for medians conditional on `I(0, b) > 0`.
    pub positive_median_ratio: Option<f64>,
}

fn killed_count(
    intensity: &Intensity,
    u: f64,
    b: f64,
    caps: Caps,
    seed: u64,
) -> Result<u64> {
    let mut rng = rng_from_seed(seed);
    let tree = sample_killed_tree(intensity, u.ln(), f64::NEG_INFINITY, 0.0, caps, &mut rng)?;
    if tree.truncated {
        return Err(Error::Numeric(format!("tree from log u = {} hit the particle cap", u.ln())));
    }
    tree.count_i(b.ln())
}

/// `u^rho I(0, b)` over a grid of `u`; `I(0, b)` counts the particles in
/// `(log b, 0]` of the walk started at `log u` and killed above 0.
pub fn killed_brw_scaling(
    params: &ModelParams,
    setup: &KilledScalingSetup,
    opts: RunOptions,
) -> Result<Report<KilledScalingSummary>> {
    let (rho, _) = require_subcritical(params)?;
    let intensity = Intensity::from_params(params)?;
    check_b(setup.b)?;
    let mut grid = setup.u_grid.clone();
    if let Some(&u) = grid.iter().find(|&&u| !(u > 0.0 && u < setup.b)) {
        return Err(Error::validation("u_grid", format!("{u} outside (0, b)")));
    }
    grid.sort_unstable_by(|a, b| b.total_cmp(a));
    let table = Table::new([
        "u",
        "replicas_ok",
        "replicas_failed",
        "median_scaled",
        "mean_scaled",
        "stderr_scaled",
        "zero_fraction",
        "median_scaled_positive",
    ]);
    let mut report = Report::new(
        table,
        KilledScalingSummary {
            rho_minus: rho,
            last_medians: Vec::new(),
            median_ratio: None,
            positive_median_ratio: None,
        },
    );
    let mut medians = Vec::new();
    let mut positive_medians = Vec::new();
    for &u in &grid {
        let plan = ReplicaPlan::new(opts.master_seed, setup.replicas, format!("killed-brw-scaling/u={u:e}"));
        let run = run_replicas(&plan, opts.workers, opts.policy, |_, seed| {
            killed_count(&intensity, u, setup.b, setup.caps, seed)
        })?;
        report.absorb(&run);
        let scale = u.powf(rho);
        let scaled: Vec<f64> = run.values().map(|&c| scale * c as f64).collect();
        let Some(med) = median(&scaled) else { continue };
        let (mean, se) = mean_and_stderr(&scaled);
        let zeros = scaled.iter().filter(|&&y| y == 0.0).count() as f64 / scaled.len() as f64;
        let positive: Vec<f64> = scaled.iter().copied().filter(|&y| y > 0.0).collect();
        let positive_median = median(&positive);
        medians.push(med);
        positive_medians.push(positive_median.unwrap_or(0.0));
        report.table.push(vec![
            u.into(),
            scaled.len().into(),
            run.failures.len().into(),
            med.into(),
            mean.into(),
            se.into(),
            zeros.into(),
            positive_median.into(),
        ])?;
    }
    if medians.len() >= 3 {
        let last = medians[medians.len() - 3..].to_vec();
        report.summary.median_ratio = spread(&last);
        report.summary.positive_median_ratio = spread(&positive_medians[positive_medians.len() - 3..]);
        report.summary.last_medians = last;
    }
    Ok(report)
}

/// `max / min`, absent unless every value is positive.
fn spread(values: &[f64]) -> Option<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo > 0.0).then_some(hi / lo)
}

fn check_b(b: f64) -> Result<()> {
    if b > 0.0 && b < 1.0 {
        Ok(())
    } else {
        Err(Error::validation("b", format!("must lie in (0, 1), got {b}")))
    }
}

/// Hill estimate of the tail of `u^rho I(0, b)` at one small `u`.
pub fn y_tail(params: &ModelParams, setup: &YTailSetup, opts: RunOptions) -> Result<Report<TailSummary>> {
    let (rho_minus, rho_plus) = require_subcritical(params)?;
    let intensity = Intensity::from_params(params)?;
    check_b(setup.b)?;
    if !(setup.u > 0.0 && setup.u < setup.b) {
        return Err(Error::validation("u", format!("must lie in (0, b), got {}", setup.u)));
    }
    let plan = ReplicaPlan::new(opts.master_seed, setup.replicas, format!("y-tail/u={:e}", setup.u));
    let run = run_replicas(&plan, opts.workers, opts.policy, |_, seed| {
        killed_count(&intensity, setup.u, setup.b, setup.caps, seed)
    })?;
    let scale = setup.u.powf(rho_minus);
    let samples: Vec<f64> = run.values().map(|&c| scale * c as f64).collect();
    let summary = TailSummary {
        samples: samples.len(),
        hill_k: None,
        hill_estimate: None,
        target: rho_plus / rho_minus,
        zero_fraction: (!samples.is_empty())
            .then(|| samples.iter().filter(|&&y| y == 0.0).count() as f64 / samples.len() as f64),
    };
    let mut report = Report::new(Table::new(["k", "hill_estimate", "default_k"]), summary);
    report.absorb(&run);
    if samples.len() >= 3 {
        let k = setup.hill_k.unwrap_or_else(|| default_hill_k(samples.len()));
        report.summary.hill_k = Some(k);
        report.summary.hill_estimate = hill_sweep(&samples, k, &mut report.table)?;
    }
    Ok(report)
}

/// A Monte Carlo mean against its expected value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanCheck {
    pub mean: f64,
    pub stderr: f64,
    pub expected: f64,
    /// `(mean - expected) / stderr`.
    pub z: f64,
}

impl MeanCheck {
    fn new(samples: &[f64], expected: f64) -> Self {
        let (mean, stderr) = mean_and_stderr(samples);
        Self {
            mean,
            stderr,
            expected,
            z: (mean - expected) / stderr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MalthusianSummary {
    pub rho_minus: f64,
    pub right_cutoff: f64,
    /// `sum_{x in xi} e^{-rho x}` plus the conditional mean of the weight
    /// beyond the cutoff; expected value 1.
    pub frozen: Option<MeanCheck>,
    /// `W_1` of the walk from 0 with displacements truncated at the cutoff.
    pub w1: Option<MeanCheck>,
    pub truncated_decompositions: u64,
}

/// Malthusian identity of the frozen point process and the mean of `W_1`.
pub fn malthusian(params: &ModelParams, setup: &MalthusianSetup, opts: RunOptions) -> Result<Report<MalthusianSummary>> {
    let (rho, _) = require_subcritical(params)?;
    let intensity = Intensity::from_params(params)?;
    let right_cutoff = match setup.right_cutoff {
        Some(r) => r,
        None => intensity.right_cutoff_for_bias(setup.bias_target)?,
    };
    let w1_expected = intensity.truncated_laplace(rho, right_cutoff)?;
    let plan = ReplicaPlan::new(opts.master_seed, setup.replicas, "malthusian");
    let run = run_replicas(&plan, opts.workers, opts.policy, |_, seed| {
        let mut rng = rng_from_seed(seed);
        let d = frozen_decompose(&intensity, right_cutoff, setup.max_particles, &mut rng)?;
        let frozen = d.malthusian_weight(rho) + d.tail_compensation(&intensity, rho);
        let walk = sample_brw_truncated(&intensity, 0.0, 1, right_cutoff, setup.max_particles, &mut rng)?;
        let w1 = martingale_w(&walk.arena, 1, rho)?;
        Ok((frozen, w1, d.truncated || walk.truncated))
    })?;
    let frozen: Vec<f64> = run.values().map(|v| v.0).collect();
    let w1: Vec<f64> = run.values().map(|v| v.1).collect();
    let truncated = run.values().filter(|v| v.2).count() as u64;
    let summary = MalthusianSummary {
        rho_minus: rho,
        right_cutoff,
        frozen: (frozen.len() >= 2).then(|| MeanCheck::new(&frozen, 1.0)),
        w1: (w1.len() >= 2).then(|| MeanCheck::new(&w1, w1_expected)),
        truncated_decompositions: truncated,
    };
    let mut table = Table::new(["quantity", "replicas_ok", "mean", "stderr", "expected", "z"]);
    for (name, check) in [("frozen_weight", summary.frozen), ("w1_truncated", summary.w1)] {
        if let Some(c) = check {
            table.push(vec![name.into(), frozen.len().into(), c.mean.into(), c.stderr.into(), c.expected.into(), c.z.into()])?;
        }
    }
    let mut report = Report::new(table, summary);
    report.absorb(&run);
    if truncated > 0 {
        report.notes.push(format!("{truncated} replicas hit the particle cap"));
    }
    report
        .notes
        .push("W_1 has infinite variance when 2 rho > 1 - gamma; its stderr is then only indicative".into());
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GwEmbeddingSummary {
    pub constants: CalibratedConstants,
    pub rho: f64,
    pub offspring_size: usize,
    pub m_chain: Vec<u64>,
    pub rounds: usize,
    pub min_success_probability: f64,
    /// Extinction probability of the Galton-Watson process.
    pub q: f64,
    /// Extinction probability by the last round, `f^rounds(0)`.
    pub q_rounds: f64,
    pub survival_frequency: Option<f64>,
    /// Binomial standard error of the survival frequency under `1 - q`.
    pub sigma: Option<f64>,
    /// `(frequency - (1 - q)) / sigma`.
    pub z: Option<f64>,
    pub warnings: Vec<String>,
}

/// Repeated Galton-Watson embeddings from one root; survival means a nonempty
/// last generation.
pub fn gw_embedding(params: &ModelParams, setup: &GwEmbeddingSetup, opts: RunOptions) -> Result<Report<GwEmbeddingSummary>> {
    let constants = match setup.calibration {
        Some(c) => c,
        None => {
            let intensity = Intensity::new(setup.tilde_beta, params.gamma())?;
            let budget = CalibrationBudget {
                seed: derive_seed(opts.master_seed, "gw-embedding/calibration", 0),
                ..CalibrationBudget::default()
            };
            let c = calibrate_constants(&intensity, setup.b, &budget)?;
            CalibratedConstants {
                epsilon: c.epsilon,
                a: c.a,
                u0: c.u0,
            }
        }
    };
    let chain = m_chain(setup.n, setup.o_n, setup.u, setup.b, setup.boost.is_some())?;
    let ecfg = ExplorationConfig::new(params, setup.u, setup.b, constants.epsilon, constants.a, setup.tilde_beta, chain[0])?;
    let success_model = SuccessModel::estimate(
        params.gamma(),
        &ecfg,
        setup.success_grid_points,
        setup.success_replicas,
        derive_seed(opts.master_seed, "gw-embedding/success-model", 0),
    )?;
    let min_success = success_model.min_probability();
    let cfg = EmbeddingConfig {
        u: setup.u,
        b: setup.b,
        epsilon: constants.epsilon,
        a: constants.a,
        tilde_beta: setup.tilde_beta,
        u0: constants.u0,
        boost: setup.boost,
        success_model,
    };
    let k = ecfg.y_threshold();
    let q = gw_extinction_prob(constants.epsilon, k as u64, 1e-14)?;
    let rounds = chain.len();
    let plan = ReplicaPlan::new(opts.master_seed, setup.replicas, "gw-embedding");
    let run = run_replicas(&plan, opts.workers, opts.policy, |_, seed| {
        embed_gw(params, &cfg, setup.n, setup.o_n, seed).map(|r| (seed, r))
    })?;
    let mut table = Table::new([
        "replica",
        "seed",
        "generation_sizes",
        "dropped_targets",
        "component_lower_bound",
        "survived",
    ]);
    let mut warnings = Vec::new();
    for (index, (seed, result)) in &run.results {
        let sizes: Vec<String> = result.generation_sizes.iter().map(u64::to_string).collect();
        let dropped: usize = result.rounds.iter().map(|r| r.dropped_targets).sum();
        table.push(vec![
            (*index).into(),
            (*seed).into(),
            Cell::Text(sizes.join(" ")),
            dropped.into(),
            result.component_lower_bound.into(),
            result.survived().into(),
        ])?;
        for w in &result.warnings {
            if !warnings.contains(w) {
                warnings.push(w.clone());
            }
        }
    }
    let runs = run.results.len();
    let survived = run.values().filter(|(_, r)| r.survived()).count();
    let frequency = (runs > 0).then(|| survived as f64 / runs as f64);
    let sigma = (runs > 0).then(|| (q * (1.0 - q) / runs as f64).sqrt());
    let summary = GwEmbeddingSummary {
        constants,
        rho: ecfg.rho,
        offspring_size: k,
        m_chain: chain,
        rounds,
        min_success_probability: min_success,
        q,
        q_rounds: gw_extinction_by_generation(constants.epsilon, k as u64, rounds as u32),
        survival_frequency: frequency,
        sigma,
        z: frequency.zip(sigma).map(|(f, s)| (f - (1.0 - q)) / s),
        warnings,
    };
    let mut report = Report::new(table, summary);
    report.absorb(&run);
    Ok(report)
}

/// An event frequency against an upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrequencyBound {
    pub frequency: f64,
    /// Binomial standard error of the frequency.
    pub sigma: f64,
    pub bound: f64,
    /// `frequency <= bound + 3 sigma`.
    pub within: bool,
}

impl FrequencyBound {
    fn new(hits: usize, total: usize, bound: f64) -> Self {
        let frequency = hits as f64 / total as f64;
        let sigma = (frequency * (1.0 - frequency) / total as f64).sqrt();
        Self {
            frequency,
            sigma,
            bound,
            within: frequency <= bound + 3.0 * sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominatingSummary {
    /// `rho_-` and `rho_+` of `tilde_beta`.
    pub rho_minus: f64,
    pub rho_plus: f64,
    /// `n^{rho_- + epsilon}`.
    pub progeny_threshold: f64,
    /// `n^{-rho_+ + epsilon}`.
    pub bound: f64,
    pub escape: Option<FrequencyBound>,
    pub progeny_tail: Option<FrequencyBound>,
    /// Runs stopped by the particle cap, counted as escapes and large progeny.
    pub truncated: u64,
}

/// Escape and progeny tail of the dominating tree started at `-Exp(1)`.
pub fn dominating_tail(params: &ModelParams, setup: &DominatingTailSetup, opts: RunOptions) -> Result<Report<DominatingSummary>> {
    let dominating = params.with_beta(setup.tilde_beta)?;
    let (rho_minus, rho_plus) = dominating.rho_pm()?;
    let n = setup.n as f64;
    let progeny_threshold = n.powf(rho_minus + setup.epsilon);
    let bound = n.powf(-rho_plus + setup.epsilon);
    let plan = ReplicaPlan::new(opts.master_seed, setup.replicas, format!("dominating-tail/n={}", setup.n));
    let run = run_replicas(&plan, opts.workers, opts.policy, |_, seed| {
        let mut rng = rng_from_seed(seed);
        dominating_tree_sim(params, setup.tilde_beta, setup.n, setup.epsilon, setup.caps, &mut rng)
    })?;
    let total = run.results.len();
    let truncated = run.values().filter(|s| s.truncated).count();
    let escapes = run.values().filter(|s| s.escape || s.truncated).count();
    let large = run
        .values()
        .filter(|s| s.truncated || s.progeny as f64 >= progeny_threshold)
        .count();
    let summary = DominatingSummary {
        rho_minus,
        rho_plus,
        progeny_threshold,
        bound,
        escape: (total > 0).then(|| FrequencyBound::new(escapes, total, bound)),
        progeny_tail: (total > 0).then(|| FrequencyBound::new(large, total, bound)),
        truncated: truncated as u64,
    };
    let mut table = Table::new(["event", "replicas_ok", "frequency", "sigma", "bound", "within_bound"]);
    for (name, check) in [("escape", summary.escape), ("progeny_tail", summary.progeny_tail)] {
        if let Some(c) = check {
            table.push(vec![name.into(), total.into(), c.frequency.into(), c.sigma.into(), c.bound.into(), c.within.into()])?;
        }
    }
    let mut report = Report::new(table, summary);
    report.absorb(&run);
    Ok(report)
}
