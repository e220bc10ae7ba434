//! Vertex/position projections, the branching random walk exploration of a
//! graph, the decoupling of explored sets, the Galton-Watson embedding built
//! from repeated explorations, and the coupling inequalities between the
//! graph and killed branching random walks.
//!
//! Vertex `i` of `{1..m}` corresponds to the cell `(phi_m(i-1), phi_m(i)]` on
//! the negative half-line, where `phi_m(i) = -(H(m) - H(i))` and `H` is the
//! harmonic sum (`phi_m(0) = -H(m)`).

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::brw::{sample_killed_tree, sample_offspring, Caps, Intensity};
use crate::error::{Error, Result};
use crate::estimation::mean_and_stderr;
use crate::graph::edge_probability;
use crate::params::ModelParams;
use crate::rng::{derive_seed, rng_from_seed};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Below this index harmonic sums are summed term by term; from here on the
/// Euler-Maclaurin expansion is exact to double precision.
const SERIES_FROM: u64 = 256;

/// Relative slack for comparing integer vertex indices with real thresholds
/// such as `u * m`.
const RANGE_SLACK: f64 = 1e-12;

fn small_harmonic(i: u64) -> f64 {
    (1..=i).map(|k| 1.0 / k as f64).sum()
}

/// `H(i) - ln i - gamma_E`, valid for `i >= SERIES_FROM`.
fn harmonic_correction(i: u64) -> f64 {
    let x = i as f64;
    let x2 = x * x;
    1.0 / (2.0 * x) - 1.0 / (12.0 * x2) + 1.0 / (120.0 * x2 * x2) - 1.0 / (252.0 * x2 * x2 * x2)
}

/// `H(i) = sum_{k<=i} 1/k`.
pub fn harmonic(i: u64) -> f64 {
    if i < SERIES_FROM {
        small_harmonic(i)
    } else {
        (i as f64).ln() + EULER_GAMMA + harmonic_correction(i)
    }
}

/// `H(j) - H(i) = sum_{k=i+1}^{j} 1/k` for `i <= j`, without cancellation
/// for large neighbouring indices.
pub fn harmonic_gap(i: u64, j: u64) -> f64 {
    debug_assert!(i <= j);
    if i == j {
        0.0
    } else if j < SERIES_FROM {
        (i + 1..=j).rev().map(|k| 1.0 / k as f64).sum()
    } else if i < SERIES_FROM {
        harmonic(j) - small_harmonic(i)
    } else {
        ((j - i) as f64 / i as f64).ln_1p() + (harmonic_correction(j) - harmonic_correction(i))
    }
}

/// The maps `phi_m` (vertex to position) and `pi_m` (position to vertex).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProjectionContext {
    m: u64,
    h_m: f64,
}

impl ProjectionContext {
    pub fn new(m: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::validation("m", "must be at least 1"));
        }
        Ok(Self { m, h_m: harmonic(m) })
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    /// `phi_m(i) = -sum_{j=i+1}^{m} 1/j`.
    pub fn phi_m(&self, i: u64) -> Result<f64> {
        if i == 0 || i > self.m {
            return Err(Error::Domain(format!("vertex {i} outside 1..={}", self.m)));
        }
        Ok(-harmonic_gap(i, self.m))
    }

    /// Lower end `-H(m)` of the projected range.
    pub fn lower_limit(&self) -> f64 {
        -self.h_m
    }

    /// The vertex `i` with `phi_m(i-1) < x <= phi_m(i)`.
    pub fn pi_m(&self, x: f64) -> Result<u64> {
        if x.is_nan() || x > 0.0 {
            return Err(Error::Domain(format!("position {x} is not in (-H(m), 0]")));
        }
        if x <= -self.h_m {
            return Err(Error::Domain(format!(
                "position {x} lies below vertex 1 (limit {})",
                -self.h_m
            )));
        }
        let (mut lo, mut hi) = (1u64, self.m);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if x <= -harmonic_gap(mid, self.m) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Ok(lo)
    }
}

/// A graph on a vertex subset, with the edges inserted by the exploration.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexGraph {
    pub vertices: BTreeSet<u64>,
    pub edges: Vec<(u64, u64)>,
}

impl VertexGraph {
    pub fn from_vertices(vertices: impl IntoIterator<Item = u64>) -> Self {
        Self {
            vertices: vertices.into_iter().collect(),
            edges: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

/// Constants of one exploration at scale `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationConfig {
    pub u: f64,
    pub b: f64,
    pub epsilon: f64,
    pub a: f64,
    /// Exponent in the set-size thresholds.
    pub rho: f64,
    pub tilde_beta: f64,
    pub m: u64,
}

impl ExplorationConfig {
    /// Uses `rho_-` of `tilde_beta` as the threshold exponent.
    pub fn new(
        params: &ModelParams,
        u: f64,
        b: f64,
        epsilon: f64,
        a: f64,
        tilde_beta: f64,
        m: u64,
    ) -> Result<Self> {
        let rho = params.with_beta(tilde_beta)?.rho_pm()?.0;
        let cfg = Self {
            u,
            b,
            epsilon,
            a,
            rho,
            tilde_beta,
            m,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.b < 1.0) {
            return Err(Error::validation("b", format!("must lie in (0, 1), got {}", self.b)));
        }
        if !(self.u > 0.0 && self.u < self.b) {
            return Err(Error::validation("u", format!("must lie in (0, b), got {}", self.u)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::validation(
                "epsilon",
                format!("must lie in (0, 1), got {}", self.epsilon),
            ));
        }
        if !(self.a > 1.0 && self.a.is_finite()) {
            return Err(Error::validation("a", format!("must exceed 1, got {}", self.a)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::validation("rho", format!("must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.tilde_beta > 0.0) {
            return Err(Error::validation("tilde_beta", "must be positive"));
        }
        if self.m == 0 {
            return Err(Error::validation("m", "must be at least 1"));
        }
        Ok(())
    }

    pub fn with_m(&self, m: u64) -> Self {
        Self { m, ..*self }
    }

    /// `ceil(epsilon u^{-rho})`, the size of a successful set.
    pub fn y_threshold(&self) -> usize {
        (self.epsilon * self.u.powf(-self.rho)).ceil().max(1.0) as usize
    }

    /// `ceil((a/2) u^{-rho})`: exploration stops once this many vertices are found.
    pub fn overflow_threshold(&self) -> usize {
        (0.5 * self.a * self.u.powf(-self.rho)).ceil().max(1.0) as usize
    }

    pub fn log_b(&self) -> f64 {
        self.b.ln()
    }

    /// Left barrier `log(u b)` of the explored trees.
    pub fn log_ub(&self) -> f64 {
        (self.u * self.b).ln()
    }

    /// Bound `a (m/u)^rho` on the explored graph.
    pub fn graph_bound(&self) -> f64 {
        self.a * (self.m as f64 / self.u).powf(self.rho)
    }

    fn thresholds(&self) -> Thresholds {
        Thresholds {
            y_target: self.y_threshold(),
            overflow: self.overflow_threshold(),
            log_b: self.log_b(),
            log_ub: self.log_ub(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Thresholds {
    y_target: usize,
    overflow: usize,
    log_b: f64,
    log_ub: f64,
}

/// How the exploration of one target ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplorationOutcome {
    Success,
    /// A particle projected onto a vertex already in the graph.
    Collision,
    /// Too many vertices were explored.
    Overflow,
    /// The tree died out before enough vertices landed in `[log b, 0]`.
    Underfill,
}

impl ExplorationOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExplorationOutcome::Success => "none",
            ExplorationOutcome::Collision => "collision",
            ExplorationOutcome::Overflow => "overflow",
            ExplorationOutcome::Underfill => "underfill",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplorationResult {
    pub u_graph: VertexGraph,
    /// Sorted vertex sets; empty unless the exploration succeeded.
    pub y_sets: Vec<Vec<u64>>,
    /// Decoupled subsets, filled by [`ExplorationResult::decouple`].
    pub x_sets: Vec<Vec<u64>>,
    pub outcomes: Vec<ExplorationOutcome>,
    /// Start of each explored tree relative to `log u`.
    pub start_offsets: Vec<f64>,
    pub y_threshold: usize,
    pub overflow_threshold: usize,
}

impl ExplorationResult {
    pub fn success_flags(&self) -> Vec<bool> {
        self.outcomes
            .iter()
            .map(|o| *o == ExplorationOutcome::Success)
            .collect()
    }

    /// Thins the explored sets with [`decouple`] and stores the result.
    pub fn decouple<R: Rng + ?Sized>(&mut self, epsilon: f64, witnesses: &Witnesses, rng: &mut R) -> Result<()> {
        self.x_sets = decouple(&self.y_sets, self.y_threshold, epsilon, witnesses, rng)?;
        Ok(())
    }

    /// Checks disjointness, sizes, membership ranges and the graph bound.
    pub fn check_invariants(&self, cfg: &ExplorationConfig, u_prime: &VertexGraph) -> Result<()> {
        let fail = |msg: String| Err(Error::Numeric(format!("exploration invariant violated: {msg}")));
        let d = self.outcomes.len();
        if self.y_sets.len() != d || self.start_offsets.len() != d {
            return fail("per-target vectors differ in length".into());
        }
        let ctx = ProjectionContext::new(cfg.m)?;
        let y_floor = ctx.pi_m(cfg.log_b())?;
        let mut seen = BTreeSet::new();
        for (i, (y, outcome)) in self.y_sets.iter().zip(&self.outcomes).enumerate() {
            let success = *outcome == ExplorationOutcome::Success;
            if success != !y.is_empty() {
                return fail(format!("set {i} disagrees with its outcome {outcome:?}"));
            }
            if !y.is_empty() && y.len() != self.y_threshold {
                return fail(format!("set {i} has {} elements, expected {}", y.len(), self.y_threshold));
            }
            for &v in y {
                if v < y_floor || v > cfg.m {
                    return fail(format!("vertex {v} of set {i} outside {y_floor}..={}", cfg.m));
                }
                if !self.u_graph.vertices.contains(&v) {
                    return fail(format!("vertex {v} of set {i} missing from the graph"));
                }
                if !seen.insert(v) {
                    return fail(format!("vertex {v} appears in two sets"));
                }
            }
        }
        if !u_prime.vertices.is_subset(&self.u_graph.vertices) {
            return fail("input graph is not embedded".into());
        }
        if self.u_graph.len() as f64 > cfg.graph_bound() * (1.0 + RANGE_SLACK) {
            return fail(format!(
                "graph has {} vertices, bound {}",
                self.u_graph.len(),
                cfg.graph_bound()
            ));
        }
        if !self.x_sets.is_empty() {
            if self.x_sets.len() != d {
                return fail("decoupled sets differ in number".into());
            }
            for (i, (x, y)) in self.x_sets.iter().zip(&self.y_sets).enumerate() {
                if !(x.is_empty() || x.len() == self.y_threshold) {
                    return fail(format!("decoupled set {i} has {} elements", x.len()));
                }
                if !x.iter().all(|v| y.binary_search(v).is_ok()) {
                    return fail(format!("decoupled set {i} is not a subset"));
                }
            }
        }
        Ok(())
    }
}

enum Visit {
    Continue,
    Stop(ExplorationOutcome),
}

/// Depth-first traversal of a tree started at `start` and killed outside
/// `(log_ub, 0]`. The root is not visited; children are visited in
/// increasing position order. `visit(parent_id, id, position)` sees each
/// particle once, with the root as id 0.
fn explore_dfs<R: Rng + ?Sized>(
    intensity: &Intensity,
    start: f64,
    log_ub: f64,
    rng: &mut R,
    mut visit: impl FnMut(usize, usize, f64) -> Result<Visit>,
) -> Result<ExplorationOutcome> {
    let mut stack: Vec<(f64, usize)> = Vec::new();
    let push_children = |stack: &mut Vec<(f64, usize)>, pos: f64, id: usize, rng: &mut R| -> Result<()> {
        let mut kids = sample_offspring(intensity, pos, log_ub, 0.0, rng)?;
        kids.sort_unstable_by(|a, b| b.total_cmp(a));
        stack.extend(kids.into_iter().map(|x| (x, id)));
        Ok(())
    };
    push_children(&mut stack, start, 0, rng)?;
    let mut next_id = 1;
    while let Some((pos, parent)) = stack.pop() {
        let id = next_id;
        next_id += 1;
        if let Visit::Stop(outcome) = visit(parent, id, pos)? {
            return Ok(outcome);
        }
        push_children(&mut stack, pos, id, rng)?;
    }
    Ok(ExplorationOutcome::Underfill)
}

fn in_range(v: u64, lo_exclusive: f64, hi_inclusive: f64) -> bool {
    let x = v as f64;
    x > lo_exclusive * (1.0 - RANGE_SLACK) && x <= hi_inclusive * (1.0 + RANGE_SLACK)
}

/// Explores the targets in order. For each target a tree killed outside
/// `(log(ub), 0]` is started at `phi_m(target)` and traversed depth first;
/// every particle is projected to a vertex with `pi_m`. The exploration of a
/// target stops on a collision with the graph, once `overflow_threshold`
/// vertices were found, once `y_threshold` of them lie in `[log b, 0]`
/// (success), or when the tree is exhausted.
pub fn algorithm1<R: Rng + ?Sized>(
    params: &ModelParams,
    cfg: &ExplorationConfig,
    u_prime: &VertexGraph,
    targets: &[u64],
    rng: &mut R,
) -> Result<ExplorationResult> {
    cfg.validate()?;
    let intensity = Intensity::new(cfg.tilde_beta, params.gamma())?;
    let m = cfg.m as f64;
    let um = cfg.u * m;
    if let Some(&v) = u_prime.vertices.iter().next_back() {
        if !in_range(v, 0.0, um) || *u_prime.vertices.iter().next().unwrap() == 0 {
            return Err(Error::Usage(format!("input graph vertex {v} outside 1..=u m = {um}")));
        }
    }
    let size_cap = cfg.a * m.powf(cfg.rho);
    if u_prime.len() as f64 > size_cap {
        return Err(Error::Usage(format!(
            "input graph has {} vertices, more than a m^rho = {size_cap}",
            u_prime.len()
        )));
    }
    if targets.len() as f64 > m.powf(cfg.rho) {
        return Err(Error::Usage(format!(
            "{} targets exceed m^rho = {}",
            targets.len(),
            m.powf(cfg.rho)
        )));
    }
    let mut distinct = BTreeSet::new();
    for &t in targets {
        if !distinct.insert(t) {
            return Err(Error::Usage(format!("target {t} repeated")));
        }
        if !u_prime.vertices.contains(&t) {
            return Err(Error::Usage(format!("target {t} is not in the input graph")));
        }
        if !in_range(t, cfg.b * um, um) {
            return Err(Error::Usage(format!(
                "target {t} outside (b u m, u m] = ({}, {um}]",
                cfg.b * um
            )));
        }
    }

    let ctx = ProjectionContext::new(cfg.m)?;
    let th = cfg.thresholds();
    let log_u = cfg.u.ln();
    let mut graph = u_prime.clone();
    let mut result = ExplorationResult {
        u_graph: VertexGraph::default(),
        y_sets: Vec::with_capacity(targets.len()),
        x_sets: Vec::new(),
        outcomes: Vec::with_capacity(targets.len()),
        start_offsets: Vec::with_capacity(targets.len()),
        y_threshold: th.y_target,
        overflow_threshold: th.overflow,
    };
    let mut vertex_of: Vec<u64> = Vec::new();
    let mut y: Vec<u64> = Vec::new();
    for &target in targets {
        let start = ctx.phi_m(target)?;
        vertex_of.clear();
        vertex_of.push(target);
        y.clear();
        let mut explored = 0usize;
        let outcome = explore_dfs(&intensity, start, th.log_ub, rng, |parent, id, pos| {
            let v = ctx.pi_m(pos)?;
            debug_assert_eq!(id, vertex_of.len());
            if graph.vertices.contains(&v) {
                return Ok(Visit::Stop(ExplorationOutcome::Collision));
            }
            graph.vertices.insert(v);
            graph.edges.push((vertex_of[parent], v));
            vertex_of.push(v);
            explored += 1;
            if explored >= th.overflow {
                return Ok(Visit::Stop(ExplorationOutcome::Overflow));
            }
            if pos >= th.log_b {
                y.push(v);
            }
            if y.len() >= th.y_target {
                return Ok(Visit::Stop(ExplorationOutcome::Success));
            }
            Ok(Visit::Continue)
        })?;
        let set = if outcome == ExplorationOutcome::Success {
            let mut s = y.clone();
            s.sort_unstable();
            s
        } else {
            Vec::new()
        };
        result.y_sets.push(set);
        result.outcomes.push(outcome);
        result.start_offsets.push(start - log_u);
    }
    result.u_graph = graph;
    result.check_invariants(cfg, u_prime)?;
    Ok(result)
}

/// The probabilities `p_i = P(|Y_i| >= k | past)` used by [`decouple`]. A
/// lower bound in place of `p_i` only gives `P(|X_i| = k | past) >= epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Witnesses {
    /// One probability per set.
    Given(Vec<f64>),
    /// The frequency of sets with at least `k` elements, for exchangeable sets.
    Empirical,
}

/// Thins `y_sets` to sets of size 0 or `k` whose sizes are independent with
/// `P(|X_i| = k) = epsilon`: `X_i` is a uniform `k`-subset of `Y_i` when
/// `|Y_i| >= k` and an independent uniform `U_i <= epsilon / p_i`, and empty
/// otherwise. Needs `p_i >= epsilon`.
pub fn decouple<R: Rng + ?Sized>(
    y_sets: &[Vec<u64>],
    k: usize,
    epsilon: f64,
    witnesses: &Witnesses,
    rng: &mut R,
) -> Result<Vec<Vec<u64>>> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::validation("epsilon", format!("must lie in (0, 1], got {epsilon}")));
    }
    if k == 0 {
        return Err(Error::validation("k", "must be at least 1"));
    }
    let probs: Vec<f64> = match witnesses {
        Witnesses::Given(p) => {
            if p.len() != y_sets.len() {
                return Err(Error::Usage(format!(
                    "{} witnesses for {} sets",
                    p.len(),
                    y_sets.len()
                )));
            }
            p.clone()
        }
        Witnesses::Empirical => {
            let hits = y_sets.iter().filter(|y| y.len() >= k).count();
            let p = if y_sets.is_empty() {
                1.0
            } else {
                hits as f64 / y_sets.len() as f64
            };
            vec![p; y_sets.len()]
        }
    };
    if let Some((i, p)) = probs.iter().enumerate().find(|(_, &p)| !(p >= epsilon)) {
        return Err(Error::Infeasible(format!(
            "epsilon = {epsilon} exceeds the success probability {p} of set {i}"
        )));
    }
    let mut out = Vec::with_capacity(y_sets.len());
    for (y, &p) in y_sets.iter().zip(&probs) {
        let uniform: f64 = rng.random();
        if y.len() >= k && uniform <= epsilon / p {
            let mut x: Vec<u64> = sample_indices(rng, y.len(), k).into_iter().map(|i| y[i]).collect();
            x.sort_unstable();
            out.push(x);
        } else {
            out.push(Vec::new());
        }
    }
    Ok(out)
}

/// Monte Carlo success probability of one exploration as a function of the
/// start offset `phi_m(target) - log u` in `(log b, 0]`, ignoring collisions
/// (which vanish as `m` grows). Linear interpolation between grid nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessModel {
    pub u: f64,
    pub b: f64,
    pub epsilon: f64,
    pub a: f64,
    pub rho: f64,
    pub tilde_beta: f64,
    pub gamma: f64,
    pub offsets: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub replicas: u64,
}

impl SuccessModel {
    pub fn estimate(
        gamma: f64,
        cfg: &ExplorationConfig,
        grid_points: usize,
        replicas: u64,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if grid_points < 2 || replicas == 0 {
            return Err(Error::Usage("success model needs 2 grid points and 1 replica".into()));
        }
        let intensity = Intensity::new(cfg.tilde_beta, gamma)?;
        let th = cfg.thresholds();
        let log_u = cfg.u.ln();
        let mut model = SuccessModel {
            u: cfg.u,
            b: cfg.b,
            epsilon: cfg.epsilon,
            a: cfg.a,
            rho: cfg.rho,
            tilde_beta: cfg.tilde_beta,
            gamma,
            offsets: Vec::with_capacity(grid_points),
            probabilities: Vec::with_capacity(grid_points),
            stderrs: Vec::with_capacity(grid_points),
            replicas,
        };
        for g in 0..grid_points {
            let offset = th.log_b + (0.0 - th.log_b) * g as f64 / (grid_points - 1) as f64;
            let mut rng = rng_from_seed(derive_seed(seed, "success-model", g as u64));
            let mut hits = 0u64;
            for _ in 0..replicas {
                if explore_without_projection(&intensity, log_u + offset, &th, &mut rng)? {
                    hits += 1;
                }
            }
            let p = hits as f64 / replicas as f64;
            model.offsets.push(offset);
            model.probabilities.push(p);
            model.stderrs.push((p * (1.0 - p) / replicas as f64).sqrt());
        }
        Ok(model)
    }

    /// Whether the model was estimated for these constants.
    pub fn matches(&self, gamma: f64, cfg: &ExplorationConfig) -> bool {
        self.u == cfg.u
            && self.b == cfg.b
            && self.epsilon == cfg.epsilon
            && self.a == cfg.a
            && self.rho == cfg.rho
            && self.tilde_beta == cfg.tilde_beta
            && self.gamma == gamma
    }

    pub fn probability(&self, offset: f64) -> f64 {
        let xs = &self.offsets;
        let ps = &self.probabilities;
        if offset <= xs[0] {
            return ps[0];
        }
        if offset >= xs[xs.len() - 1] {
            return ps[ps.len() - 1];
        }
        let j = xs.partition_point(|&x| x <= offset);
        let t = (offset - xs[j - 1]) / (xs[j] - xs[j - 1]);
        ps[j - 1] + t * (ps[j] - ps[j - 1])
    }

    pub fn min_probability(&self) -> f64 {
        self.probabilities.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn explore_without_projection<R: Rng + ?Sized>(
    intensity: &Intensity,
    start: f64,
    th: &Thresholds,
    rng: &mut R,
) -> Result<bool> {
    let mut explored = 0usize;
    let mut in_window = 0usize;
    let outcome = explore_dfs(intensity, start, th.log_ub, rng, |_, _, pos| {
        explored += 1;
        if explored >= th.overflow {
            return Ok(Visit::Stop(ExplorationOutcome::Overflow));
        }
        if pos >= th.log_b {
            in_window += 1;
        }
        if in_window >= th.y_target {
            return Ok(Visit::Stop(ExplorationOutcome::Success));
        }
        Ok(Visit::Continue)
    })?;
    Ok(outcome == ExplorationOutcome::Success)
}

/// Constants of the Galton-Watson embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub u: f64,
    pub b: f64,
    pub epsilon: f64,
    pub a: f64,
    pub tilde_beta: f64,
    pub u0: f64,
    /// Start from up to this many neighbours of the root instead of the root.
    pub boost: Option<usize>,
    pub success_model: SuccessModel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTrace {
    pub m: u64,
    pub seed: u64,
    pub targets: Vec<u64>,
    /// Offspring of the previous round outside `(b u m, u m]`.
    pub dropped_targets: usize,
    pub success_flags: Vec<bool>,
    pub failure_reasons: Vec<&'static str>,
    pub y_sizes: Vec<usize>,
    pub x_sizes: Vec<usize>,
    pub graph_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingResult {
    pub n: u64,
    pub o_n: u64,
    /// Scales `m_1 < m_2 < ... <= n`, `m_1 = ceil(o_n / u)` (or
    /// `ceil(o_n / (b u))` with the boost) and `m_{j+1} = ceil(m_j / u)`.
    pub m_chain: Vec<u64>,
    /// Generation 0 (the root or the boosted roots) and one entry per round.
    pub generation_sizes: Vec<u64>,
    pub component_lower_bound: u64,
    pub offspring_size: usize,
    pub rounds: Vec<RoundTrace>,
    /// Sanity conditions of the asymptotic argument that fail for this config.
    pub warnings: Vec<String>,
}

impl EmbeddingResult {
    pub fn survived(&self) -> bool {
        self.generation_sizes.last().is_some_and(|&g| g > 0)
    }

    pub fn write_trace_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

fn ceil_div_u(m: u64, u: f64) -> Option<u64> {
    let x = (m as f64 / u).ceil();
    (x.is_finite() && x < u64::MAX as f64).then_some(x as u64)
}

/// Rounds of the embedding for root `o_n` in the graph on `n` vertices.
pub fn m_chain(n: u64, o_n: u64, u: f64, b: f64, boost: bool) -> Result<Vec<u64>> {
    let first = if boost {
        ceil_div_u(o_n, u * b)
    } else {
        ceil_div_u(o_n, u)
    };
    let first = first.filter(|&m| m <= n).ok_or_else(|| {
        Error::Usage(format!("root {o_n} too late: first scale exceeds n = {n}"))
    })?;
    let mut chain = vec![first];
    while let Some(next) = ceil_div_u(*chain.last().unwrap(), u).filter(|&m| m <= n) {
        chain.push(next);
    }
    Ok(chain)
}

/// Builds the Galton-Watson tree of decoupled explored sets rooted at `o_n`:
/// round `j` explores the previous generation at scale `m_j` and keeps the
/// decoupled sets as the next generation.
pub fn embed_gw(
    params: &ModelParams,
    cfg: &EmbeddingConfig,
    n: u64,
    o_n: u64,
    seed: u64,
) -> Result<EmbeddingResult> {
    if !(cfg.u > 0.0 && cfg.u < cfg.u0) {
        return Err(Error::Usage(format!(
            "u = {} must lie below the calibrated u0 = {}",
            cfg.u, cfg.u0
        )));
    }
    if o_n == 0 || o_n > n {
        return Err(Error::Usage(format!("root {o_n} outside 1..={n}")));
    }
    let chain = m_chain(n, o_n, cfg.u, cfg.b, cfg.boost.is_some())?;
    let base = ExplorationConfig::new(params, cfg.u, cfg.b, cfg.epsilon, cfg.a, cfg.tilde_beta, chain[0])?;
    if !cfg.success_model.matches(params.gamma(), &base) {
        return Err(Error::Usage("success model was estimated for other constants".into()));
    }
    let k = base.y_threshold();
    let mut warnings = Vec::new();
    if cfg.epsilon * cfg.epsilon <= cfg.u.powf(base.rho) {
        warnings.push(format!(
            "epsilon^2 = {} does not exceed u^rho = {}",
            cfg.epsilon * cfg.epsilon,
            cfg.u.powf(base.rho)
        ));
    }
    if cfg.epsilon * k as f64 <= 1.0 {
        warnings.push(format!("mean offspring {} is not above 1", cfg.epsilon * k as f64));
    }

    let mut graph = VertexGraph::from_vertices([o_n]);
    let mut generation: Vec<u64> = vec![o_n];
    if let Some(d) = cfg.boost {
        let m1 = chain[0] as f64;
        let (lo, hi) = (cfg.b * cfg.u * m1, cfg.u * m1);
        let mut rng = rng_from_seed(derive_seed(seed, "embed-gw-boost", 0));
        generation.clear();
        let mut j = (lo.floor() as u64 + 1).max(o_n + 1);
        while j as f64 <= hi * (1.0 + RANGE_SLACK) && generation.len() < d {
            if rng.random::<f64>() < edge_probability(params, o_n, j)? {
                generation.push(j);
                graph.vertices.insert(j);
                graph.edges.push((o_n, j));
            }
            j += 1;
        }
    }
    let mut result = EmbeddingResult {
        n,
        o_n,
        m_chain: chain.clone(),
        generation_sizes: vec![generation.len() as u64],
        component_lower_bound: 0,
        offspring_size: k,
        rounds: Vec::with_capacity(chain.len()),
        warnings,
    };
    for (j, &m) in chain.iter().enumerate() {
        let round_seed = derive_seed(seed, "embed-gw-round", j as u64);
        let ecfg = base.with_m(m);
        let (lo, hi) = (cfg.b * cfg.u * m as f64, cfg.u * m as f64);
        let mut targets: Vec<u64> = generation.iter().copied().filter(|&v| in_range(v, lo, hi)).collect();
        targets.sort_unstable();
        let dropped = generation.len() - targets.len();
        let mut trace = RoundTrace {
            m,
            seed: round_seed,
            targets: targets.clone(),
            dropped_targets: dropped,
            success_flags: Vec::new(),
            failure_reasons: Vec::new(),
            y_sizes: Vec::new(),
            x_sizes: Vec::new(),
            graph_size: graph.len(),
        };
        let mut rng = rng_from_seed(round_seed);
        let mut explored = algorithm1(params, &ecfg, &graph, &targets, &mut rng)?;
        let witnesses: Vec<f64> = explored
            .start_offsets
            .iter()
            .map(|&s| cfg.success_model.probability(s))
            .collect();
        explored.decouple(cfg.epsilon, &Witnesses::Given(witnesses), &mut rng)?;
        explored.check_invariants(&ecfg, &graph)?;
        trace.success_flags = explored.success_flags();
        trace.failure_reasons = explored.outcomes.iter().map(|o| o.as_str()).collect();
        trace.y_sizes = explored.y_sets.iter().map(Vec::len).collect();
        trace.x_sizes = explored.x_sets.iter().map(Vec::len).collect();
        trace.graph_size = explored.u_graph.len();
        generation = explored.x_sets.iter().flatten().copied().collect();
        generation.sort_unstable();
        debug_assert!(generation.len().is_multiple_of(k));
        graph = explored.u_graph;
        result.generation_sizes.push(generation.len() as u64);
        result.rounds.push(trace);
    }
    result.component_lower_bound = *result.generation_sizes.last().unwrap();
    Ok(result)
}

/// Grids and budgets for [`calibrate_constants`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBudget {
    pub seed: u64,
    /// Trees for the infimum condition.
    pub inf_replicas: u64,
    /// Samples of `u^rho I(0, b)` for the tail condition.
    pub y_replicas: u64,
    /// The small `u` at which `u^rho I(0, b)` stands in for its limit.
    pub y_u: f64,
    /// Trees per `(u, start)` pair for the overflow condition.
    pub overflow_replicas: u64,
    pub overflow_u_grid: Vec<f64>,
    pub epsilon_grid: Vec<f64>,
    pub a_grid: Vec<f64>,
    /// Right barrier of the trees simulated for the infimum condition.
    pub right_barrier: f64,
    pub caps: Caps,
}

impl Default for CalibrationBudget {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            inf_replicas: 100_000,
            y_replicas: 100_000,
            y_u: 2f64.powi(-9),
            overflow_replicas: 20_000,
            overflow_u_grid: (4..=9).map(|k| 2f64.powi(-k)).collect(),
            epsilon_grid: (1..=40).map(|k| k as f64 * 0.005).collect(),
            a_grid: (2..=400).map(|k| k as f64 * 0.5).collect(),
            right_barrier: 12.0,
            caps: Caps::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub gamma: f64,
    pub beta: f64,
    pub b: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub a: f64,
    pub u0: f64,
    /// Estimated `P_1(inf V > log b)` and its standard error.
    pub inf_probability: f64,
    pub inf_stderr: f64,
    /// Estimated `P(u^rho I(0, b) >= epsilon)` at `y_u`.
    pub y_tail_probability: f64,
    /// Largest estimated overflow probability over the `u` grid at `a`.
    pub overflow_probability: f64,
    pub truncated_trees: u64,
    pub budget: CalibrationBudget,
}

/// Monte Carlo choice of `epsilon`, `a` and `u0` for an intensity and `b`:
///
/// * `epsilon` is the largest grid value with `P_1(inf V > log b) >= epsilon`
///   and `P(u^rho I(0, b) >= epsilon) >= 5 epsilon`,
/// * `a` is the smallest grid value with
///   `P_{u'}(I(ub, 0) >= (a/2) u^{-rho}) <= epsilon` for every grid `u` and
///   `u' in {ub, u}`,
/// * `u0 = min(b, (2 (1 + 1/a))^{-1/rho})`, shrunk by one part in `10^9`;
///   below it `|U'| + d((a/2)u^{-rho} + 1) <= a (m/u)^rho`.
///
/// The infimum probability is Rao-Blackwellized: a tree is grown inside
/// `(log b, right_barrier]` and scored by the probability that no particle
/// has a child at or below `log b`.
pub fn calibrate_constants(intensity: &Intensity, b: f64, budget: &CalibrationBudget) -> Result<Calibration> {
    if !(b > 0.0 && b < 1.0) {
        return Err(Error::validation("b", format!("must lie in (0, 1), got {b}")));
    }
    let rho = intensity.rho_minus()?;
    let log_b = b.ln();
    let left_rate = 1.0 - intensity.gamma();
    let mut truncated = 0u64;

    let mut rng = rng_from_seed(derive_seed(budget.seed, "calibrate-inf", 0));
    let mut scores = Vec::with_capacity(budget.inf_replicas as usize);
    for _ in 0..budget.inf_replicas {
        let tree = sample_killed_tree(intensity, 0.0, log_b, budget.right_barrier, budget.caps, &mut rng)?;
        truncated += tree.truncated as u64;
        let escape_mass: f64 = tree
            .particles()
            .iter()
            .map(|p| intensity.beta() / left_rate * (left_rate * (log_b - p.position)).exp())
            .sum();
        scores.push((-escape_mass).exp());
    }
    let (inf_probability, inf_stderr) = mean_and_stderr(&scores);

    let mut rng = rng_from_seed(derive_seed(budget.seed, "calibrate-y", 0));
    let scale = budget.y_u.powf(rho);
    let mut y_samples = Vec::with_capacity(budget.y_replicas as usize);
    for _ in 0..budget.y_replicas {
        let tree = sample_killed_tree(intensity, budget.y_u.ln(), f64::NEG_INFINITY, 0.0, budget.caps, &mut rng)?;
        truncated += tree.truncated as u64;
        y_samples.push(scale * tree.count_i(log_b)? as f64);
    }
    let tail = |eps: f64| y_samples.iter().filter(|&&y| y >= eps).count() as f64 / y_samples.len() as f64;

    let mut eps_grid = budget.epsilon_grid.clone();
    eps_grid.sort_unstable_by(|a, b| b.total_cmp(a));
    let epsilon = eps_grid
        .iter()
        .copied()
        .find(|&eps| inf_probability >= eps && tail(eps) >= 5.0 * eps)
        .ok_or_else(|| {
            Error::Calibration(format!(
                "no epsilon in the grid passes: P(inf V > log b) = {inf_probability:.4}, \
                 P(Y >= eps) at the smallest grid value = {:.4}",
                eps_grid.last().map_or(f64::NAN, |&e| tail(e))
            ))
        })?;

    // total progeny of T_{ub,1} started at u' in {ub, u}, per grid u
    let mut sizes: Vec<(f64, Vec<u64>)> = Vec::new();
    for (g, &u) in budget.overflow_u_grid.iter().enumerate() {
        let log_ub = (u * b).ln();
        for (s, start) in [log_ub + 1e-12, u.ln()].into_iter().enumerate() {
            let mut rng = rng_from_seed(derive_seed(budget.seed, "calibrate-a", (2 * g + s) as u64));
            let mut counts = Vec::with_capacity(budget.overflow_replicas as usize);
            for _ in 0..budget.overflow_replicas {
                let tree = sample_killed_tree(intensity, start, log_ub, 0.0, budget.caps, &mut rng)?;
                truncated += tree.truncated as u64;
                counts.push(if tree.truncated { u64::MAX } else { tree.len() as u64 });
            }
            sizes.push((u, counts));
        }
    }
    let overflow = |a: f64| {
        sizes
            .iter()
            .map(|(u, counts)| {
                let threshold = 0.5 * a * u.powf(-rho);
                counts.iter().filter(|&&c| c as f64 >= threshold).count() as f64 / counts.len() as f64
            })
            .fold(0.0, f64::max)
    };
    let mut a_grid = budget.a_grid.clone();
    a_grid.sort_unstable_by(f64::total_cmp);
    let a = a_grid
        .iter()
        .copied()
        .filter(|&a| a > 1.0)
        .find(|&a| overflow(a) <= epsilon)
        .ok_or_else(|| {
            Error::Calibration(format!(
                "no a in the grid keeps the overflow probability below epsilon = {epsilon}"
            ))
        })?;
    let u0 = b.min((2.0 * (1.0 + 1.0 / a)).powf(-1.0 / rho)) * (1.0 - 1e-9);
    Ok(Calibration {
        gamma: intensity.gamma(),
        beta: intensity.beta(),
        b,
        rho,
        epsilon,
        a,
        u0,
        inf_probability,
        inf_stderr,
        y_tail_probability: tail(epsilon),
        overflow_probability: overflow(a),
        truncated_trees: truncated,
        budget: budget.clone(),
    })
}

/// Both sides of a coupling inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

fn kernel_bound(params: &ModelParams, r: u64, s: u64) -> f64 {
    let (lo, hi) = (r.min(s) as f64, r.max(s) as f64);
    params.beta() * lo.powf(-params.gamma()) * hi.powf(params.gamma() - 1.0)
}

/// Worst-case probability that a particle projected to `r` has a child
/// projected to `s` under the intensity with `tilde_beta`, against the edge
/// probability `beta (r ^ s)^{-gamma} (r v s)^{gamma-1}`. The worst case puts
/// the particle at the left end of its cell, giving the windows
/// `(-sum_{k=s}^{r-1} 1/k, -sum_{k=s+1}^{r-1} 1/k]` for `s < r` and
/// `(sum_{k=r}^{s-1} 1/k, sum_{k=r}^{s} 1/k]` for `r < s`.
pub fn coupling_bound_check(
    params: &ModelParams,
    tilde_beta: f64,
    m: u64,
    u: f64,
    b: f64,
    r: u64,
    s: u64,
) -> Result<CouplingCheck> {
    let floor = b * u * m as f64;
    if r == s || (r.min(s) as f64) < floor || r.max(s) > m || r.min(s) == 0 {
        return Err(Error::Usage(format!(
            "need b u m = {floor} <= r, s <= m = {m} with r != s, got r = {r}, s = {s}"
        )));
    }
    let pi = Intensity::new(tilde_beta, params.gamma())?;
    let (lo, hi) = if s < r {
        (-harmonic_gap(s - 1, r - 1), -harmonic_gap(s, r - 1))
    } else {
        (harmonic_gap(r - 1, s - 1), harmonic_gap(r - 1, s))
    };
    let lhs = -(-pi.window_mass(lo, hi)?).exp_m1();
    let rhs = kernel_bound(params, r, s);
    Ok(CouplingCheck { lhs, rhs, ok: lhs <= rhs })
}

/// The two statements compared by [`lower_coupling_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LowerCouplingPart {
    /// A particle projected to `r` has a child projected to `m`.
    Pair { m: u64 },
    /// A particle projected to `r` has a child projected to `{1..n0}`.
    Escape,
}

/// Best-case-from-below version of [`coupling_bound_check`] for the
/// dominating walk with `tilde_beta > beta`: the particle sits at the right
/// end of its cell, giving `(-sum_{k=m}^{r} 1/k, -sum_{k=m+1}^{r} 1/k]` for
/// `m < r` and `(sum_{k=r+1}^{m-1} 1/k, sum_{k=r+1}^{m} 1/k]` for `r < m`,
/// compared with the edge probability; the escape part compares
/// `1 - exp(-pi(-inf, -sum_{k=n0+1}^{r} 1/k])` with
/// `1 - prod_{m<=n0} (1 - beta m^{-gamma} r^{gamma-1})`.
pub fn lower_coupling_check(
    params: &ModelParams,
    tilde_beta: f64,
    n: u64,
    n0: u64,
    r: u64,
    part: LowerCouplingPart,
) -> Result<CouplingCheck> {
    let pi = Intensity::new(tilde_beta, params.gamma())?;
    match part {
        LowerCouplingPart::Pair { m } => {
            if m == r || m.min(r) < n0.max(1) || m.max(r) > n {
                return Err(Error::Usage(format!(
                    "need n0 = {n0} <= m, r <= n = {n} with m != r, got m = {m}, r = {r}"
                )));
            }
            let (lo, hi) = if m < r {
                (-harmonic_gap(m - 1, r), -harmonic_gap(m, r))
            } else {
                (harmonic_gap(r, m - 1), harmonic_gap(r, m))
            };
            let lhs = -(-pi.window_mass(lo, hi)?).exp_m1();
            let rhs = kernel_bound(params, r, m);
            Ok(CouplingCheck { lhs, rhs, ok: lhs >= rhs })
        }
        LowerCouplingPart::Escape => {
            if !(r > n0 && r <= n && n0 >= 1) {
                return Err(Error::Usage(format!("need n >= r > n0 >= 1, got n = {n}, r = {r}, n0 = {n0}")));
            }
            let lhs = -(-pi.window_mass(f64::NEG_INFINITY, -harmonic_gap(n0, r))?).exp_m1();
            let g = params.gamma();
            let log_keep: f64 = (1..=n0)
                .map(|m| (-params.beta() * (m as f64).powf(-g) * (r as f64).powf(g - 1.0)).ln_1p())
                .sum();
            let rhs = -log_keep.exp_m1();
            Ok(CouplingCheck { lhs, rhs, ok: lhs >= rhs })
        }
    }
}

/// One run of the dominating tree `T_{0,1}(-X)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominatingSample {
    pub x: f64,
    pub progeny: u64,
    pub min_position: f64,
    /// Some particle reached `-(1 - epsilon) log n`.
    pub escape: bool,
    pub truncated: bool,
}

/// Samples `X ~ Exp(1)` and the walk with intensity `tilde_beta`, started at
/// `-X` and killed on the positive half-line.
pub fn dominating_tree_sim<R: Rng + ?Sized>(
    params: &ModelParams,
    tilde_beta: f64,
    n: u64,
    epsilon: f64,
    caps: Caps,
    rng: &mut R,
) -> Result<DominatingSample> {
    let x = -(1.0 - rng.random::<f64>()).ln();
    dominating_tree_from(params, tilde_beta, n, epsilon, x, caps, rng)
}

/// [`dominating_tree_sim`] with a given start `-x`.
pub fn dominating_tree_from<R: Rng + ?Sized>(
    params: &ModelParams,
    tilde_beta: f64,
    n: u64,
    epsilon: f64,
    x: f64,
    caps: Caps,
    rng: &mut R,
) -> Result<DominatingSample> {
    let bc = params.critical_beta();
    if !(tilde_beta > params.beta() && tilde_beta < bc) {
        return Err(Error::Usage(format!(
            "tilde_beta = {tilde_beta} must lie in (beta, beta_c) = ({}, {bc})",
            params.beta()
        )));
    }
    if n < 2 || !(epsilon > 0.0 && epsilon < 1.0) || !(x >= 0.0) {
        return Err(Error::Usage(format!("need n >= 2, epsilon in (0, 1), x >= 0; got {n}, {epsilon}, {x}")));
    }
    let pi = Intensity::new(tilde_beta, params.gamma())?;
    let tree = sample_killed_tree(&pi, -x, f64::NEG_INFINITY, 0.0, caps, rng)?;
    let min_position = tree.min_position();
    Ok(DominatingSample {
        x,
        progeny: tree.len() as u64,
        min_position,
        escape: min_position <= -(1.0 - epsilon) * (n as f64).ln(),
        truncated: tree.truncated,
    })
}
