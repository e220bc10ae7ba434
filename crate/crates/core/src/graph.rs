//! The inhomogeneous random graph on `{1, ..., n}`.
//!
//! Edges are stored as a sorted list of pairs `(i, j)` with `i < j` plus a CSR
//! adjacency index. Vertices are 1-based in every public interface.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::rng::rng_with_stream;

/// Edge probability `beta * (i v j)^(gamma-1) * (i ^ j)^-gamma ^ 1`. Does not
/// depend on the graph size.
pub fn edge_probability(params: &ModelParams, i: u64, j: u64) -> Result<f64> {
    if i == 0 || j == 0 {
        return Err(Error::Usage("vertices are numbered from 1".into()));
    }
    if i == j {
        return Err(Error::Usage(format!("no self-loops: i = j = {i}")));
    }
    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
    Ok(pair_probability(params.gamma(), params.beta(), lo as f64, hi as f64))
}

#[inline]
fn pair_probability(gamma: f64, beta: f64, lo: f64, hi: f64) -> f64 {
    (beta * hi.powf(gamma - 1.0) * lo.powf(-gamma)).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerId {
    Naive,
    Fast,
}

impl SamplerId {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplerId::Naive => "naive",
            SamplerId::Fast => "fast",
        }
    }

    pub fn sample(&self, params: &ModelParams, n: u32, seed: u64) -> Result<GraphSample> {
        match self {
            SamplerId::Naive => sample_graph_naive(params, n, seed),
            SamplerId::Fast => sample_graph_fast(params, n, seed),
        }
    }
}

impl std::str::FromStr for SamplerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(SamplerId::Naive),
            "fast" => Ok(SamplerId::Fast),
            other => Err(Error::Usage(format!("unknown sampler {other:?}"))),
        }
    }
}

/// A sampled graph with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSample {
    n: u32,
    /// Sorted by `(i, j)`, every pair with `1 <= i < j <= n`, no duplicates.
    edges: Vec<(u32, u32)>,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    pub seed: u64,
    pub sampler: SamplerId,
    pub params: ModelParams,
}

impl GraphSample {
    /// Builds a graph from an edge list; the list is normalised (each pair
    /// ordered, sorted, deduplicated) and checked against `1..=n`.
    pub fn from_edges(
        params: ModelParams,
        n: u32,
        mut edges: Vec<(u32, u32)>,
        seed: u64,
        sampler: SamplerId,
    ) -> Result<Self> {
        for e in edges.iter_mut() {
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
            if e.0 == e.1 {
                return Err(Error::Usage(format!("self-loop at vertex {}", e.0)));
            }
            if e.0 == 0 || e.1 > n {
                return Err(Error::Usage(format!(
                    "edge ({}, {}) outside 1..={n}",
                    e.0, e.1
                )));
            }
        }
        edges.sort_unstable();
        edges.dedup();

        let mut degree = vec![0usize; n as usize + 1];
        for &(i, j) in &edges {
            degree[i as usize] += 1;
            degree[j as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n as usize + 2);
        offsets.push(0);
        let mut total = 0;
        for d in &degree[1..=n as usize] {
            total += d;
            offsets.push(total);
        }
        let mut fill = offsets.clone();
        let mut neighbors = vec![0u32; total];
        for &(i, j) in &edges {
            neighbors[fill[i as usize - 1]] = j;
            fill[i as usize - 1] += 1;
            neighbors[fill[j as usize - 1]] = i;
            fill[j as usize - 1] += 1;
        }
        Ok(Self {
            n,
            edges,
            offsets,
            neighbors,
            seed,
            sampler,
            params,
        })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, v: u32) -> &[u32] {
        let v = v as usize - 1;
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: u32) -> usize {
        let v = v as usize - 1;
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Plain-text export: a `# n=.. gamma=.. beta=.. seed=..` header followed
    /// by one sorted, 1-based `i j` pair per line.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# n={} gamma={} beta={} seed={}",
            self.n,
            self.params.gamma(),
            self.params.beta(),
            self.seed
        )?;
        for &(i, j) in &self.edges {
            writeln!(out, "{i} {j}")?;
        }
        Ok(())
    }

    /// Parses the format written by [`write_edge_list`](Self::write_edge_list).
    pub fn read_edge_list<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Usage("empty edge list".into()))??;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| Error::Usage("missing '#' header line".into()))?;
        let (mut n, mut gamma, mut beta, mut seed) = (None, None, None, None);
        for field in header.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("malformed header field {field:?}")))?;
            let bad = |_| Error::Usage(format!("malformed header value {field:?}"));
            match key {
                "n" => n = Some(value.parse::<u32>().map_err(|e| bad(e.to_string()))?),
                "gamma" => gamma = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "beta" => beta = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "seed" => seed = Some(value.parse::<u64>().map_err(|e| bad(e.to_string()))?),
                _ => {}
            }
        }
        let missing = |name: &str| Error::Usage(format!("header lacks {name}"));
        let n = n.ok_or_else(|| missing("n"))?;
        let params = ModelParams::new(
            gamma.ok_or_else(|| missing("gamma"))?,
            beta.ok_or_else(|| missing("beta"))?,
        )?;
        let mut edges = Vec::new();
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let mut next = || -> Result<u32> {
                parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Usage(format!("malformed edge line {line:?}")))
            };
            edges.push((next()?, next()?));
        }
        Self::from_edges(params, n, edges, seed.unwrap_or(0), SamplerId::Naive)
    }
}

fn check_n(n: u32) -> Result<()> {
    if n == 0 {
        Err(Error::validation("n", "graph needs at least one vertex"))
    } else {
        Ok(())
    }
}

/// `i^-gamma` for `i = 0..=n` (index 0 unused).
fn inverse_powers(gamma: f64, n: u32) -> Vec<f64> {
    let mut table = Vec::with_capacity(n as usize + 1);
    table.push(0.0);
    table.extend((1..=n).map(|i| (i as f64).powf(-gamma)));
    table
}

/// Reference sampler: one uniform per pair in row-major order (`j`
/// ascending, then `i` ascending), stream 0 of `seed`. `O(n^2)`.
pub fn sample_graph_naive(params: &ModelParams, n: u32, seed: u64) -> Result<GraphSample> {
    check_n(n)?;
    let mut rng = rng_with_stream(seed, 0);
    let (gamma, beta) = (params.gamma(), params.beta());
    let low = inverse_powers(gamma, n);
    let mut edges = Vec::new();
    for j in 2..=n {
        let high = beta * (j as f64).powf(gamma - 1.0);
        for i in 1..j {
            let p = (high * low[i as usize]).min(1.0);
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    GraphSample::from_edges(*params, n, edges, seed, SamplerId::Naive)
}

/// Sampler with expected cost `O(n + |E|)`, stream 1 of `seed`.
///
/// For a fixed row `j` the probabilities `p_ij` decrease in `i < j`, so
/// `q = p_{i0 j}` dominates every `p_ij` with `i >= i0`. From the current
/// position `i0` the next candidate is found by a geometric skip with success
/// probability `q`; the candidate `i` is kept with probability `p_ij / q`,
/// and the search restarts at `i + 1` with the new, smaller dominating value.
/// By memorylessness of the geometric law every pair is included
/// independently with probability exactly `p_ij`. Equality with the naive
/// sampler is in law, not pathwise.
pub fn sample_graph_fast(params: &ModelParams, n: u32, seed: u64) -> Result<GraphSample> {
    check_n(n)?;
    let mut rng = rng_with_stream(seed, 1);
    let (gamma, beta) = (params.gamma(), params.beta());
    let low = inverse_powers(gamma, n);
    let mut edges = Vec::new();
    for j in 2..=n {
        let high = beta * (j as f64).powf(gamma - 1.0);
        let mut i = 1u32;
        while i < j {
            let dominating = (high * low[i as usize]).min(1.0);
            if dominating < 1.0 {
                let u: f64 = 1.0 - rng.random::<f64>();
                let skip = (u.ln() / (-dominating).ln_1p()).floor();
                if skip >= (j - i) as f64 {
                    break;
                }
                i += skip as u32;
            }
            let p = (high * low[i as usize]).min(1.0);
            if p >= dominating || rng.random::<f64>() * dominating < p {
                edges.push((i, j));
            }
            i += 1;
        }
    }
    GraphSample::from_edges(*params, n, edges, seed, SamplerId::Fast)
}

/// Disjoint sets with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(len: usize) -> Self {
        Self {
            parent: (0..len as u32).collect(),
            size: vec![1; len],
        }
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    /// Returns `false` if `a` and `b` were already joined.
    pub fn union(&mut self, a: u32, b: u32) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
        true
    }

    pub fn size_of(&mut self, x: u32) -> u32 {
        let r = self.find(x);
        self.size[r as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentStats {
    /// Component sizes in decreasing order.
    pub component_sizes: Vec<u32>,
    pub largest: u32,
    /// `component_of[v - 1]` is the component id of vertex `v`; ids count
    /// components in order of their smallest vertex.
    pub component_of: Vec<u32>,
    pub max_degree: u32,
}

impl ComponentStats {
    /// Number of vertices whose component has at least `k` vertices.
    pub fn z_count(&self, k: u32) -> u64 {
        self.component_sizes
            .iter()
            .filter(|&&s| s >= k)
            .map(|&s| s as u64)
            .sum()
    }

    pub fn component_count(&self) -> usize {
        self.component_sizes.len()
    }
}

pub fn connected_components(graph: &GraphSample) -> ComponentStats {
    let n = graph.n();
    let mut uf = UnionFind::new(n as usize);
    for &(i, j) in graph.edges() {
        uf.union(i - 1, j - 1);
    }
    let mut id_of_root = vec![u32::MAX; n as usize];
    let mut component_of = Vec::with_capacity(n as usize);
    let mut sizes = Vec::new();
    for v in 0..n {
        let root = uf.find(v);
        if id_of_root[root as usize] == u32::MAX {
            id_of_root[root as usize] = sizes.len() as u32;
            sizes.push(uf.size_of(root));
        }
        component_of.push(id_of_root[root as usize]);
    }
    let max_degree = (1..=n).map(|v| graph.degree(v) as u32).max().unwrap_or(0);
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    ComponentStats {
        largest: sizes.first().copied().unwrap_or(0),
        component_sizes: sizes,
        component_of,
        max_degree,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegreeStats {
    /// `degrees[v - 1]` is the degree of vertex `v`.
    pub degrees: Vec<u32>,
    pub max_degree: u32,
}

impl DegreeStats {
    /// Empirical `P(deg > k)`.
    pub fn survival(&self, k: u32) -> f64 {
        if self.degrees.is_empty() {
            return 0.0;
        }
        let above = self.degrees.iter().filter(|&&d| d > k).count();
        above as f64 / self.degrees.len() as f64
    }

    /// `(k, P(deg > k))` for `k = 0..max_degree`.
    pub fn survival_table(&self) -> Vec<(u32, f64)> {
        let mut counts = vec![0u64; self.max_degree as usize + 1];
        for &d in &self.degrees {
            counts[d as usize] += 1;
        }
        let total = self.degrees.len() as f64;
        let mut above = self.degrees.len() as u64;
        let mut table = Vec::with_capacity(counts.len());
        for (k, c) in counts.iter().enumerate() {
            above -= c;
            table.push((k as u32, above as f64 / total));
        }
        table
    }
}

pub fn degree_stats(graph: &GraphSample) -> DegreeStats {
    let degrees: Vec<u32> = (1..=graph.n()).map(|v| graph.degree(v) as u32).collect();
    let max_degree = degrees.iter().copied().max().unwrap_or(0);
    DegreeStats {
        degrees,
        max_degree,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use std::collections::VecDeque;

    fn params() -> ModelParams {
        ModelParams::new(0.25, 0.1).unwrap()
    }

    #[test]
    fn edge_probability_reference() {
        let p = params();
        let expected = 0.1 * 2f64.powf(-0.75);
        assert!((edge_probability(&p, 1, 2).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.0594604).abs() < 1e-7);
        assert_eq!(
            edge_probability(&p, 3, 7).unwrap(),
            edge_probability(&p, 7, 3).unwrap()
        );
        assert!(edge_probability(&p, 1, 1).is_err());
        assert!(edge_probability(&p, 0, 1).is_err());
    }

    #[test]
    fn edge_probability_is_the_scaled_kernel_for_any_n() {
        // (1/n) kappa(i/n, j/n) with kappa(x, y) = beta (x v y)^(gamma-1) (x ^ y)^-gamma
        let p = params();
        let kernel = |x: f64, y: f64| 0.1 * x.max(y).powf(-0.75) * x.min(y).powf(-0.25);
        for &n in &[10.0f64, 1e6] {
            let scaled = kernel(1.0 / n, 2.0 / n) / n;
            assert!((scaled - edge_probability(&p, 1, 2).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn edge_probability_monotone() {
        let p = params();
        for i in 1..30u64 {
            for j in (i + 1)..40 {
                let here = edge_probability(&p, i, j).unwrap();
                assert!(edge_probability(&p, i, j + 1).unwrap() <= here);
                if i + 1 < j {
                    assert!(edge_probability(&p, i + 1, j).unwrap() <= here);
                }
            }
        }
    }

    #[test]
    fn single_vertex_and_zero() {
        let p = params();
        assert_eq!(sample_graph_naive(&p, 1, 3).unwrap().edge_count(), 0);
        assert_eq!(sample_graph_fast(&p, 1, 3).unwrap().edge_count(), 0);
        assert!(sample_graph_naive(&p, 0, 3).is_err());
        assert!(sample_graph_fast(&p, 0, 3).is_err());
    }

    #[test]
    fn tiny_density_gives_no_edges() {
        let p = ModelParams::new(0.25, 1e-300).unwrap();
        assert_eq!(sample_graph_naive(&p, 200, 1).unwrap().edge_count(), 0);
        assert_eq!(sample_graph_fast(&p, 2000, 1).unwrap().edge_count(), 0);
    }

    #[test]
    fn deterministic_per_seed() {
        let p = params();
        for sampler in [SamplerId::Naive, SamplerId::Fast] {
            let a = sampler.sample(&p, 300, 42).unwrap();
            let b = sampler.sample(&p, 300, 42).unwrap();
            assert_eq!(a, b);
            let mut ba = Vec::new();
            let mut bb = Vec::new();
            a.write_edge_list(&mut ba).unwrap();
            b.write_edge_list(&mut bb).unwrap();
            assert_eq!(ba, bb);
        }
    }

    #[test]
    fn edges_sorted_and_in_range() {
        let g = sample_graph_fast(&params(), 5000, 9).unwrap();
        assert!(g.edges().windows(2).all(|w| w[0] < w[1]));
        assert!(g.edges().iter().all(|&(i, j)| 1 <= i && i < j && j <= 5000));
    }

    #[test]
    fn cap_at_one_is_respected() {
        // beta large enough that the first pairs are certain edges
        let p = ModelParams::new(0.25, 3.0).unwrap();
        for seed in 0..20 {
            let g = sample_graph_fast(&p, 50, seed).unwrap();
            assert!(g.edges().contains(&(1, 2)));
            let g = sample_graph_naive(&p, 50, seed).unwrap();
            assert!(g.edges().contains(&(1, 2)));
        }
    }

    #[test]
    fn edge_list_round_trip() {
        let g = sample_graph_fast(&params(), 400, 5).unwrap();
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# n=400 gamma=0.25 beta=0.1 seed=5\n"));
        let back = GraphSample::read_edge_list(buf.as_slice()).unwrap();
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.n(), 400);
        assert_eq!(back.seed, 5);
    }

    #[test]
    fn components_of_hand_graphs() {
        let p = params();
        let empty = GraphSample::from_edges(p, 5, vec![], 0, SamplerId::Naive).unwrap();
        let stats = connected_components(&empty);
        assert_eq!(stats.component_sizes, vec![1; 5]);
        assert_eq!(stats.largest, 1);
        assert!(degree_stats(&empty).degrees.iter().all(|&d| d == 0));

        let path = GraphSample::from_edges(p, 4, vec![(1, 2), (3, 2)], 0, SamplerId::Naive).unwrap();
        let stats = connected_components(&path);
        assert_eq!(stats.component_sizes, vec![3, 1]);
        assert_eq!(stats.largest, 3);
        assert_eq!(stats.component_of, vec![0, 0, 0, 1]);
        assert_eq!(stats.max_degree, 2);
        assert_eq!(stats.z_count(1), 4);
        assert_eq!(stats.z_count(2), 3);
        assert_eq!(stats.z_count(4), 0);
    }

    fn bfs_components(g: &GraphSample) -> Vec<u32> {
        let n = g.n();
        let mut label = vec![u32::MAX; n as usize];
        let mut next = 0;
        for s in 1..=n {
            if label[s as usize - 1] != u32::MAX {
                continue;
            }
            let mut queue = VecDeque::from([s]);
            label[s as usize - 1] = next;
            while let Some(v) = queue.pop_front() {
                for &w in g.neighbors(v) {
                    if label[w as usize - 1] == u32::MAX {
                        label[w as usize - 1] = next;
                        queue.push_back(w);
                    }
                }
            }
            next += 1;
        }
        label
    }

    #[test]
    fn union_find_matches_bfs_on_random_graphs() {
        let mut rng = rng_from_seed(17);
        // dense enough to have nontrivial components at n <= 64
        let p = ModelParams::new(0.3, 0.9).unwrap();
        for seed in 0..1000u64 {
            let n = rng.random_range(1..=64);
            let g = sample_graph_naive(&p, n, seed).unwrap();
            let stats = connected_components(&g);
            assert_eq!(stats.component_of, bfs_components(&g), "seed {seed}");
            let total: u32 = stats.component_sizes.iter().sum();
            assert_eq!(total, n);
        }
    }

    #[test]
    fn degree_survival_table() {
        let p = params();
        let g = GraphSample::from_edges(p, 4, vec![(1, 2), (1, 3), (1, 4)], 0, SamplerId::Naive)
            .unwrap();
        let d = degree_stats(&g);
        assert_eq!(d.degrees, vec![3, 1, 1, 1]);
        assert_eq!(d.max_degree, 3);
        assert_eq!(d.survival(0), 1.0);
        assert_eq!(d.survival(1), 0.25);
        assert_eq!(d.survival_table(), vec![(0, 1.0), (1, 0.25), (2, 0.25), (3, 0.0)]);
    }

    #[test]
    fn empirical_edge_frequency_matches_probability() {
        // pair {1, 2} at n = 1000 would cost 5e5 draws per replica; the naive
        // sampler's law for a given pair does not depend on n, so n = 2 suffices
        let p = params();
        let prob = edge_probability(&p, 1, 2).unwrap();
        let reps = 100_000u64;
        let hits = (0..reps)
            .filter(|&s| !sample_graph_naive(&p, 2, s).unwrap().edges().is_empty())
            .count() as f64;
        let sigma = (prob * (1.0 - prob) / reps as f64).sqrt();
        assert!((hits / reps as f64 - prob).abs() < 3.0 * sigma);
    }

    #[test]
    fn expected_degree_of_first_vertex() {
        let p = params();
        let n = 65_536u32;
        let exact: f64 = (2..=n as u64).map(|j| edge_probability(&p, 1, j).unwrap()).sum();
        // Hurwitz-zeta evaluation: 0.1 (zeta(3/4) - zeta(3/4, n + 1) - 1)
        assert!((exact - 5.955_883_668_313_445).abs() < 1e-9, "exact sum {exact}");
        let reps = 200;
        let degs: Vec<f64> = (0..reps)
            .map(|s| sample_graph_fast(&p, n, 1000 + s).unwrap().degree(1) as f64)
            .collect();
        let mean = degs.iter().sum::<f64>() / reps as f64;
        // Poisson-binomial variance is below the mean
        let sigma = (exact / reps as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * sigma, "mean {mean} vs {exact}");
    }

    #[test]
    fn expected_edge_count_matches_exact_double_sum() {
        let p = params();
        let n = 10_000u32;
        let mut exact = 0.0;
        let mut variance = 0.0;
        for j in 2..=n as u64 {
            for i in 1..j {
                let q = edge_probability(&p, i, j).unwrap();
                exact += q;
                variance += q * (1.0 - q);
            }
        }
        let reps = 100u64;
        let mean = (0..reps)
            .map(|s| sample_graph_fast(&p, n, s).unwrap().edge_count() as f64)
            .sum::<f64>()
            / reps as f64;
        let sigma = (variance / reps as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * sigma, "mean {mean} exact {exact}");
    }
}
