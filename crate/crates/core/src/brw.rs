//! Branching random walks with displacement intensity
//! `pi(dx) = beta (e^{gamma x} 1{x>0} + e^{(1-gamma) x} 1{x<0}) dx`.
//!
//! `pi` has infinite total mass (every particle has infinitely many children
//! to its right), so every simulation restricts offspring to a window that is
//! bounded on the right: killed trees use their barrier, unkilled walks a
//! right cutoff `R`.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;

/// Default target for the omitted `e^{-rho x}`-weighted mass beyond the
/// right cutoff, see [`Intensity::right_cutoff_for_bias`].
pub const DEFAULT_BIAS_TARGET: f64 = 0.05;

/// Displacement intensity with parameters `beta` and `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Intensity {
    beta: f64,
    gamma: f64,
}

impl Intensity {
    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 0.5) {
            return Err(Error::validation(
                "gamma",
                format!("intensity needs gamma in (0, 1/2), got {gamma}"),
            ));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::validation("beta", format!("must be positive, got {beta}")));
        }
        Ok(Self { beta, gamma })
    }

    pub fn from_params(params: &ModelParams) -> Result<Self> {
        Self::new(params.beta(), params.gamma())
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn params(&self) -> ModelParams {
        ModelParams::new(self.gamma, self.beta).expect("intensity parameters are valid")
    }

    /// `rho_-` of this intensity; fails unless subcritical.
    pub fn rho_minus(&self) -> Result<f64> {
        Ok(self.params().rho_pm()?.0)
    }

    fn left_rate(&self) -> f64 {
        1.0 - self.gamma
    }

    /// Mass of `(-inf, x ^ 0]` on the left piece and `(0, x v 0]` on the right.
    fn left_mass(&self, lo: f64, hi: f64) -> f64 {
        let c = self.left_rate();
        let (lo, hi) = (lo.min(0.0), hi.min(0.0));
        if hi <= lo {
            return 0.0;
        }
        // e^{c hi} - e^{c lo} = e^{c hi} (1 - e^{-c (hi - lo)})
        self.beta / c * (c * hi).exp() * -(-(c * (hi - lo))).exp_m1()
    }

    fn right_mass(&self, lo: f64, hi: f64) -> f64 {
        let g = self.gamma;
        let (lo, hi) = (lo.max(0.0), hi.max(0.0));
        if hi <= lo {
            return 0.0;
        }
        self.beta / g * (g * hi).exp() * -(-(g * (hi - lo))).exp_m1()
    }

    /// `pi((lo, hi])`; `lo` may be `-inf`, `hi` must be finite.
    pub fn window_mass(&self, lo: f64, hi: f64) -> Result<f64> {
        check_window(lo, hi)?;
        Ok(self.left_mass(lo, hi) + self.right_mass(lo, hi))
    }

    /// `int_{-inf}^{R} e^{-rho x} pi(dx)`, the mean of `W_1` for a walk whose
    /// displacements are truncated at `R`. Needs `gamma < rho < 1 - gamma`.
    pub fn truncated_laplace(&self, rho: f64, right_cutoff: f64) -> Result<f64> {
        if !(rho > self.gamma && rho < 1.0 - self.gamma) {
            return Err(Error::Domain(format!(
                "rho must lie in ({}, {}), got {rho}",
                self.gamma,
                1.0 - self.gamma
            )));
        }
        let left = self.beta / (1.0 - self.gamma - rho);
        let right = if right_cutoff > 0.0 {
            self.beta / (rho - self.gamma) * -(-(rho - self.gamma) * right_cutoff).exp_m1()
        } else {
            0.0
        };
        Ok(left + right)
    }

    /// `int_R^inf e^{-rho x} pi(dx) = beta e^{-(rho-gamma) R}/(rho-gamma)`,
    /// the weight omitted by truncating displacements at `R > 0`.
    pub fn laplace_tail(&self, rho: f64, right_cutoff: f64) -> f64 {
        let gap = rho - self.gamma;
        self.beta * (-gap * right_cutoff).exp() / gap
    }

    /// Cutoff `R = log(beta/((rho_- - gamma) bias)) / (rho_- - gamma)` at
    /// which the omitted weight [`laplace_tail`](Self::laplace_tail) equals
    /// `bias`. Clamped below at a small positive value.
    pub fn right_cutoff_for_bias(&self, bias_target: f64) -> Result<f64> {
        if !(bias_target > 0.0) {
            return Err(Error::Domain(format!(
                "bias target must be positive, got {bias_target}"
            )));
        }
        let gap = self.rho_minus()? - self.gamma;
        Ok(((self.beta / (gap * bias_target)).ln() / gap).max(1e-3))
    }

    /// Appends i.i.d. displacements drawn from `pi` restricted to `(lo, hi]`,
    /// a Poisson number of them with mean `pi((lo, hi])`.
    fn sample_displacements<R: Rng + ?Sized>(&self, lo: f64, hi: f64, rng: &mut R, out: &mut Vec<f64>) {
        let left = self.left_mass(lo, hi);
        let right = self.right_mass(lo, hi);
        let total = left + right;
        if !(total > 0.0) {
            return;
        }
        let count = Poisson::new(total).expect("positive finite mean").sample(rng) as usize;
        let left_share = left / total;
        out.reserve(count);
        for _ in 0..count {
            let x = if rng.random::<f64>() < left_share {
                sample_exponential_piece(self.left_rate(), lo.max(f64::NEG_INFINITY), hi.min(0.0), rng)
            } else {
                sample_exponential_piece(self.gamma, lo.max(0.0), hi.max(0.0), rng)
            };
            out.push(x);
        }
    }
}

/// Inverse-CDF draw from the density proportional to `e^{c x}` on `(lo, hi]`:
/// `x = hi + log(V + (1 - V) e^{-c (hi - lo)}) / c` with `V` uniform on
/// `(0, 1]`. `lo` may be `-inf`.
fn sample_exponential_piece<R: Rng + ?Sized>(c: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    let floor = (-(c * (hi - lo))).exp();
    loop {
        let v = 1.0 - rng.random::<f64>();
        let x = hi + (v + (1.0 - v) * floor).ln() / c;
        if x > lo && x <= hi {
            return x;
        }
    }
}

fn check_window(lo: f64, hi: f64) -> Result<()> {
    if hi == f64::INFINITY {
        return Err(Error::InfiniteMass(format!("({lo}, +inf)")));
    }
    if hi.is_nan() || lo.is_nan() || lo > hi {
        return Err(Error::Usage(format!("invalid window ({lo}, {hi}]")));
    }
    Ok(())
}

/// Children of a particle at `parent_pos` that land in the absolute window
/// `(window_lo, window_hi]`, as absolute positions in sampling order.
pub fn sample_offspring<R: Rng + ?Sized>(
    intensity: &Intensity,
    parent_pos: f64,
    window_lo: f64,
    window_hi: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_window(window_lo, window_hi)?;
    let mut out = Vec::new();
    push_offspring(intensity, parent_pos, window_lo, window_hi, rng, &mut out);
    Ok(out)
}

fn push_offspring<R: Rng + ?Sized>(
    intensity: &Intensity,
    parent_pos: f64,
    window_lo: f64,
    window_hi: f64,
    rng: &mut R,
    out: &mut Vec<f64>,
) {
    let start = out.len();
    intensity.sample_displacements(window_lo - parent_pos, window_hi - parent_pos, rng, out);
    for x in &mut out[start..] {
        *x += parent_pos;
        // rounding in the shift must not leave the window
        *x = x.min(window_hi);
    }
    out.retain(|&x| x > window_lo);
}

/// Safety caps for tree simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caps {
    pub max_particles: usize,
    pub max_generations: u32,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            max_particles: 1_000_000,
            max_generations: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Particle {
    pub position: f64,
    /// Index of the parent in the arena; `None` for the root.
    pub parent: Option<u32>,
    pub generation: u32,
}

/// Particles in breadth-first birth order; generation `g` occupies
/// `generation_offsets[g]..generation_offsets[g + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleArena {
    particles: Vec<Particle>,
    generation_offsets: Vec<usize>,
}

impl ParticleArena {
    fn rooted_at(start: f64) -> Self {
        Self {
            particles: vec![Particle {
                position: start,
                parent: None,
                generation: 0,
            }],
            generation_offsets: vec![0, 1],
        }
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Number of materialized generations (the root alone is depth 1).
    pub fn depth(&self) -> usize {
        self.generation_offsets.len() - 1
    }

    pub fn generation(&self, g: usize) -> Option<&[Particle]> {
        if g >= self.depth() {
            return None;
        }
        Some(&self.particles[self.generation_offsets[g]..self.generation_offsets[g + 1]])
    }

    pub fn generation_sizes(&self) -> Vec<usize> {
        self.generation_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn min_position(&self) -> f64 {
        self.particles
            .iter()
            .map(|p| p.position)
            .fold(f64::INFINITY, f64::min)
    }

    /// Debug export: one `id parent generation position` line per particle in
    /// birth order; the root's parent is written as `-`.
    pub fn write_debug<W: Write>(&self, mut out: W) -> Result<()> {
        for (id, p) in self.particles.iter().enumerate() {
            match p.parent {
                Some(parent) => writeln!(out, "{id} {parent} {} {:e}", p.generation, p.position)?,
                None => writeln!(out, "{id} - {} {:e}", p.generation, p.position)?,
            }
        }
        Ok(())
    }

    /// Grows one generation with offspring drawn by `window(position)`;
    /// returns `false` once the newest generation is empty.
    fn grow<R: Rng + ?Sized>(
        &mut self,
        intensity: &Intensity,
        window: impl Fn(f64) -> (f64, f64),
        max_particles: usize,
        rng: &mut R,
        scratch: &mut Vec<f64>,
    ) -> GrowOutcome {
        let depth = self.depth();
        let (begin, end) = (self.generation_offsets[depth - 1], self.generation_offsets[depth]);
        if begin == end {
            return GrowOutcome::Extinct;
        }
        for parent in begin..end {
            let pos = self.particles[parent].position;
            let (lo, hi) = window(pos);
            scratch.clear();
            push_offspring(intensity, pos, lo, hi, rng, scratch);
            for &x in scratch.iter() {
                if self.particles.len() >= max_particles {
                    self.generation_offsets.push(self.particles.len());
                    return GrowOutcome::Capped;
                }
                self.particles.push(Particle {
                    position: x,
                    parent: Some(parent as u32),
                    generation: depth as u32,
                });
            }
        }
        self.generation_offsets.push(self.particles.len());
        if self.generation_offsets[depth] == self.particles.len() {
            GrowOutcome::Extinct
        } else {
            GrowOutcome::Grew
        }
    }
}

enum GrowOutcome {
    Grew,
    Extinct,
    Capped,
}

/// A branching random walk killed outside `(barrier_lo, barrier_hi]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KilledTree {
    pub arena: ParticleArena,
    pub barrier_lo: f64,
    pub barrier_hi: f64,
    pub start: f64,
    /// A cap fired before extinction.
    pub truncated: bool,
}

impl KilledTree {
    pub fn len(&self) -> usize {
        self.arena.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arena.is_empty()
    }

    pub fn particles(&self) -> &[Particle] {
        self.arena.particles()
    }

    pub fn min_position(&self) -> f64 {
        self.arena.min_position()
    }

    /// Particles (root included) in `(log_b, 0]`; the tree must be killed
    /// at `barrier_hi = 0`.
    pub fn count_i(&self, log_b: f64) -> Result<u64> {
        if self.barrier_hi != 0.0 {
            return Err(Error::Usage(format!(
                "count_i needs barrier_hi = 0, tree has {}",
                self.barrier_hi
            )));
        }
        if !(log_b <= 0.0) {
            return Err(Error::Usage(format!("log_b must be <= 0, got {log_b}")));
        }
        Ok(self.count_in(log_b, 0.0))
    }

    /// Particles with position in `(lo, hi]`.
    pub fn count_in(&self, lo: f64, hi: f64) -> u64 {
        self.particles()
            .iter()
            .filter(|p| p.position > lo && p.position <= hi)
            .count() as u64
    }
}

/// Breadth-first simulation of the walk started at `start` and killed outside
/// `(log_a, log_d]`.
pub fn sample_killed_tree<R: Rng + ?Sized>(
    intensity: &Intensity,
    start: f64,
    log_a: f64,
    log_d: f64,
    caps: Caps,
    rng: &mut R,
) -> Result<KilledTree> {
    check_window(log_a, log_d)?;
    if !(start > log_a && start <= log_d) {
        return Err(Error::Usage(format!(
            "start {start} outside the window ({log_a}, {log_d}]"
        )));
    }
    let mut arena = ParticleArena::rooted_at(start);
    let mut truncated = false;
    let mut scratch = Vec::new();
    loop {
        if arena.depth() as u64 > caps.max_generations as u64 {
            // the newest generation is alive and may not branch
            truncated = arena.generation(arena.depth() - 1).is_some_and(|g| !g.is_empty());
            break;
        }
        match arena.grow(intensity, |_| (log_a, log_d), caps.max_particles, rng, &mut scratch) {
            GrowOutcome::Grew => {}
            GrowOutcome::Extinct => break,
            GrowOutcome::Capped => {
                truncated = true;
                break;
            }
        }
    }
    Ok(KilledTree {
        arena,
        barrier_lo: log_a,
        barrier_hi: log_d,
        start,
        truncated,
    })
}

/// An unkilled walk whose displacements are restricted to `(-inf, R]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncatedBrw {
    pub arena: ParticleArena,
    pub right_cutoff: f64,
    pub start: f64,
    pub truncated: bool,
}

/// Simulates `generations` generations of the walk from `start` with
/// displacements truncated at `right_cutoff`. The omitted weight of `W_1`
/// is [`Intensity::laplace_tail`] per particle.
pub fn sample_brw_truncated<R: Rng + ?Sized>(
    intensity: &Intensity,
    start: f64,
    generations: u32,
    right_cutoff: f64,
    max_particles: usize,
    rng: &mut R,
) -> Result<TruncatedBrw> {
    if !(right_cutoff > 0.0 && right_cutoff.is_finite()) {
        return Err(Error::Usage(format!(
            "right cutoff must be positive and finite, got {right_cutoff}"
        )));
    }
    let mut arena = ParticleArena::rooted_at(start);
    let mut truncated = false;
    let mut scratch = Vec::new();
    for _ in 0..generations {
        match arena.grow(
            intensity,
            |x| (f64::NEG_INFINITY, x + right_cutoff),
            max_particles,
            rng,
            &mut scratch,
        ) {
            GrowOutcome::Grew => {}
            GrowOutcome::Extinct => {
                // keep the remaining generations materialized (empty)
                while arena.depth() <= generations as usize {
                    arena.generation_offsets.push(arena.particles.len());
                }
                break;
            }
            GrowOutcome::Capped => {
                truncated = true;
                break;
            }
        }
    }
    Ok(TruncatedBrw {
        arena,
        right_cutoff,
        start,
        truncated,
    })
}

/// `W_n = sum over generation n of e^{-rho V(v)}`.
pub fn martingale_w(arena: &ParticleArena, n: usize, rho: f64) -> Result<f64> {
    let generation = arena.generation(n).ok_or_else(|| {
        Error::Usage(format!(
            "generation {n} not materialized (depth {})",
            arena.depth()
        ))
    })?;
    Ok(generation.iter().map(|p| (-rho * p.position).exp()).sum())
}

/// Offspring of an ancestor at 0 split into frozen particles (relative
/// position `> 0`, reached through branching particles only) and branching
/// particles (`<= 0`, ancestor included).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrozenDecomposition {
    /// Relative positions of the frozen particles up to the cutoff.
    pub xi: Vec<f64>,
    /// Relative positions of the branching particles; the ancestor is the
    /// first entry at 0.
    pub branching: Vec<f64>,
    /// Frozen particles beyond this relative position were not sampled.
    pub right_cutoff: f64,
    pub truncated: bool,
}

impl FrozenDecomposition {
    pub fn branching_count(&self) -> usize {
        self.branching.len()
    }

    /// `sum_{x in xi} e^{-rho x}` over the sampled frozen particles.
    pub fn malthusian_weight(&self, rho: f64) -> f64 {
        self.xi.iter().map(|&x| (-rho * x).exp()).sum()
    }

    /// Conditional mean, given the branching particles, of the weight carried
    /// by frozen particles beyond the cutoff:
    /// `sum_w beta e^{-gamma x_w} e^{-(rho-gamma) R} / (rho-gamma)`.
    pub fn tail_compensation(&self, intensity: &Intensity, rho: f64) -> f64 {
        if !self.right_cutoff.is_finite() {
            return 0.0;
        }
        let per_unit = intensity.laplace_tail(rho, self.right_cutoff);
        self.branching
            .iter()
            .map(|&x| per_unit * (-intensity.gamma() * x).exp())
            .sum()
    }
}

/// Samples the frozen/branching decomposition of an ancestor at 0 with frozen
/// particles restricted to `(0, right_cutoff]`.
pub fn frozen_decompose<R: Rng + ?Sized>(
    intensity: &Intensity,
    right_cutoff: f64,
    max_particles: usize,
    rng: &mut R,
) -> Result<FrozenDecomposition> {
    if !(right_cutoff > 0.0) || right_cutoff == f64::INFINITY {
        return Err(Error::Usage(format!(
            "right cutoff must be positive and finite, got {right_cutoff}"
        )));
    }
    let mut decomposition = FrozenDecomposition {
        xi: Vec::new(),
        branching: vec![0.0],
        right_cutoff,
        truncated: false,
    };
    let mut scratch = Vec::new();
    let mut next = 0;
    while next < decomposition.branching.len() {
        let pos = decomposition.branching[next];
        next += 1;
        scratch.clear();
        push_offspring(intensity, pos, f64::NEG_INFINITY, right_cutoff, rng, &mut scratch);
        for &x in &scratch {
            if decomposition.branching.len() + decomposition.xi.len() >= max_particles {
                decomposition.truncated = true;
                return Ok(decomposition);
            }
            if x <= 0.0 {
                decomposition.branching.push(x);
            } else {
                decomposition.xi.push(x);
            }
        }
    }
    Ok(decomposition)
}

/// Result of [`cmj_count`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CmjCount {
    pub count: u64,
    /// Number of individuals (frozen particles) born by time `t`.
    pub individuals: u64,
    pub truncated: bool,
}

/// `Z_t^phi` of the general branching process whose individuals are frozen
/// particles (positions read as birth times) and whose characteristic counts
/// an individual's branching particles in `(t + log_b, t]`.
///
/// Each individual born at `s <= t` is decomposed with cutoff `t - s`, which
/// loses nothing: frozen children beyond `t` are born after time `t`. The
/// result has the law of [`KilledTree::count_i`] on the tree killed outside
/// `(-inf, 0]` and started at `-t`.
pub fn cmj_count<R: Rng + ?Sized>(
    intensity: &Intensity,
    t: f64,
    log_b: f64,
    max_particles: usize,
    rng: &mut R,
) -> Result<CmjCount> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Usage(format!("t must be positive, got {t}")));
    }
    if !(log_b < 0.0) {
        return Err(Error::Usage(format!("log_b must be negative, got {log_b}")));
    }
    let window_lo = t + log_b;
    let mut births = vec![0.0f64];
    let mut next = 0;
    let mut count = 0u64;
    let mut particles = 0usize;
    let mut scratch = Vec::new();
    let mut branching = Vec::new();
    while next < births.len() {
        let birth = births[next];
        next += 1;
        // decomposition of this individual, absolute positions
        branching.clear();
        branching.push(birth);
        let mut k = 0;
        while k < branching.len() {
            let pos = branching[k];
            k += 1;
            if pos > window_lo {
                count += 1;
            }
            scratch.clear();
            push_offspring(intensity, pos, f64::NEG_INFINITY, t, rng, &mut scratch);
            particles += scratch.len();
            if particles + births.len() > max_particles {
                return Ok(CmjCount {
                    count,
                    individuals: births.len() as u64,
                    truncated: true,
                });
            }
            for &x in &scratch {
                if x <= birth {
                    branching.push(x);
                } else {
                    births.push(x);
                }
            }
        }
    }
    Ok(CmjCount {
        count,
        individuals: births.len() as u64,
        truncated: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn intensity() -> Intensity {
        Intensity::new(0.1, 0.25).unwrap()
    }

    fn quadrature(f: impl Fn(f64) -> f64, a: f64, b: f64, steps: usize) -> f64 {
        let h = (b - a) / steps as f64;
        let mut acc = 0.5 * (f(a) + f(b));
        for k in 1..steps {
            acc += f(a + k as f64 * h);
        }
        acc * h
    }

    fn density(x: f64) -> f64 {
        if x > 0.0 {
            0.1 * (0.25 * x).exp()
        } else {
            0.1 * (0.75 * x).exp()
        }
    }

    #[test]
    fn window_mass_reference_values() {
        let pi = intensity();
        let left = pi.window_mass(f64::NEG_INFINITY, 0.0).unwrap();
        assert!((left - 0.1 / 0.75).abs() < 1e-15);
        assert!((left - 0.1333333).abs() < 1e-7);
        assert_eq!(pi.window_mass(1.5, 1.5).unwrap(), 0.0);
        assert!(matches!(
            pi.window_mass(f64::NEG_INFINITY, f64::INFINITY),
            Err(Error::InfiniteMass(_))
        ));
        assert!(pi.window_mass(2.0, 1.0).is_err());
        for &(lo, hi) in &[(-3.0, -1.0), (-2.0, 2.5), (0.5, 4.0), (-60.0, 0.0)] {
            let q = quadrature(density, lo, hi, 200_000);
            assert!((pi.window_mass(lo, hi).unwrap() - q).abs() < 1e-7, "({lo}, {hi}]");
        }
    }

    #[test]
    fn truncated_laplace_matches_quadrature() {
        let pi = intensity();
        let rho = 0.3881966011250105;
        let q = quadrature(|x| density(x) * (-rho * x).exp(), -150.0, 7.0, 400_000);
        assert!((pi.truncated_laplace(rho, 7.0).unwrap() - q).abs() < 1e-6);
        // R -> inf recovers psi(rho) = 1
        let far = pi.truncated_laplace(rho, 1e4).unwrap();
        assert!((far - 1.0).abs() < 1e-12);
        let r = 7.0;
        let tail = pi.laplace_tail(rho, r);
        assert!((pi.truncated_laplace(rho, r).unwrap() + tail - 1.0).abs() < 1e-12);
    }

    #[test]
    fn right_cutoff_hits_bias_target() {
        let pi = intensity();
        let rho = pi.rho_minus().unwrap();
        for &bias in &[1e-6, 1e-2, 0.05] {
            let r = pi.right_cutoff_for_bias(bias).unwrap();
            assert!((pi.laplace_tail(rho, r) - bias).abs() < 1e-12 * bias.max(1.0));
        }
    }

    #[test]
    fn offspring_stay_in_window_and_have_poisson_counts() {
        let pi = intensity();
        let mut rng = rng_from_seed(1);
        let (parent, lo, hi) = (-1.3, -4.0, 0.7);
        let lambda = pi.window_mass(lo - parent, hi - parent).unwrap();
        let reps = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..reps {
            let kids = sample_offspring(&pi, parent, lo, hi, &mut rng).unwrap();
            assert!(kids.iter().all(|&x| x > lo && x <= hi));
            let c = kids.len() as f64;
            sum += c;
            sum_sq += c * c;
        }
        let mean = sum / reps as f64;
        let var = sum_sq / reps as f64 - mean * mean;
        let se = (lambda / reps as f64).sqrt();
        assert!((mean - lambda).abs() < 3.0 * se, "mean {mean} vs {lambda}");
        // index of dispersion
        assert!((var / mean - 1.0).abs() < 0.03, "dispersion {}", var / mean);
        assert!(sample_offspring(&pi, 0.0, 1.0, 1.0, &mut rng).unwrap().is_empty());
        assert!(sample_offspring(&pi, 0.0, 0.0, f64::INFINITY, &mut rng).is_err());
    }

    #[test]
    fn offspring_positions_follow_normalised_intensity() {
        // fraction of children below the parent matches the left mass share
        let pi = intensity();
        let mut rng = rng_from_seed(2);
        let (lo, hi) = (-3.0, 2.0);
        let share = pi.window_mass(lo, 0.0).unwrap() / pi.window_mass(lo, hi).unwrap();
        let cut = -1.0;
        let below_cut = pi.window_mass(lo, cut).unwrap() / pi.window_mass(lo, hi).unwrap();
        let (mut total, mut left, mut under) = (0usize, 0usize, 0usize);
        for _ in 0..50_000 {
            for x in sample_offspring(&pi, 0.0, lo, hi, &mut rng).unwrap() {
                total += 1;
                left += (x <= 0.0) as usize;
                under += (x <= cut) as usize;
            }
        }
        let n = total as f64;
        for (count, p) in [(left, share), (under, below_cut)] {
            let se = (p * (1.0 - p) / n).sqrt();
            assert!((count as f64 / n - p).abs() < 3.0 * se);
        }
    }

    #[test]
    fn killed_tree_invariants() {
        let pi = intensity();
        let mut rng = rng_from_seed(3);
        for _ in 0..2000 {
            let tree =
                sample_killed_tree(&pi, 0.5f64.ln(), f64::NEG_INFINITY, 0.0, Caps::default(), &mut rng)
                    .unwrap();
            assert!(!tree.truncated);
            let ps = tree.particles();
            assert_eq!(ps[0].generation, 0);
            assert_eq!(ps[0].parent, None);
            assert_eq!(ps[0].position, 0.5f64.ln());
            for p in &ps[1..] {
                assert!(p.position <= 0.0);
                let parent = &ps[p.parent.unwrap() as usize];
                assert_eq!(parent.generation + 1, p.generation);
            }
        }
    }

    #[test]
    fn killed_tree_start_rules() {
        let pi = intensity();
        let mut rng = rng_from_seed(4);
        let tree = sample_killed_tree(&pi, 0.0, -2.0, 0.0, Caps::default(), &mut rng).unwrap();
        assert_eq!(tree.particles()[0].position, 0.0);
        assert!(sample_killed_tree(&pi, 0.1, -2.0, 0.0, Caps::default(), &mut rng).is_err());
        assert!(sample_killed_tree(&pi, -2.0, -2.0, 0.0, Caps::default(), &mut rng).is_err());
    }

    #[test]
    fn caps_set_truncated_flag() {
        let pi = intensity();
        let mut rng = rng_from_seed(5);
        let caps = Caps {
            max_particles: 3,
            max_generations: 1000,
        };
        let mut fired = false;
        for _ in 0..200 {
            let tree = sample_killed_tree(&pi, -6.0, f64::NEG_INFINITY, 0.0, caps, &mut rng).unwrap();
            assert!(tree.len() <= 3);
            fired |= tree.truncated;
        }
        assert!(fired);
        let caps = Caps {
            max_particles: 1_000_000,
            max_generations: 0,
        };
        let tree = sample_killed_tree(&pi, -6.0, f64::NEG_INFINITY, 0.0, caps, &mut rng).unwrap();
        assert_eq!(tree.len(), 1);
    }

    #[test]
    fn root_offspring_mean_matches_window_mass() {
        let pi = intensity();
        let mut rng = rng_from_seed(6);
        let start = 0.5f64.ln();
        let lambda = pi.window_mass(f64::NEG_INFINITY, -start).unwrap();
        let reps = 20_000;
        let total: usize = (0..reps)
            .map(|_| {
                let t = sample_killed_tree(&pi, start, f64::NEG_INFINITY, 0.0, Caps::default(), &mut rng)
                    .unwrap();
                t.arena.generation(1).map_or(0, |g| g.len())
            })
            .sum();
        let mean = total as f64 / reps as f64;
        assert!((mean - lambda).abs() < 3.0 * (lambda / reps as f64).sqrt());
    }

    #[test]
    fn count_i_rules() {
        let pi = intensity();
        let mut rng = rng_from_seed(7);
        let start = 0.3f64.ln();
        let tree = sample_killed_tree(&pi, start, f64::NEG_INFINITY, 0.0, Caps::default(), &mut rng).unwrap();
        assert!(tree.count_i(0.2f64.ln()).unwrap() >= 1);
        assert_eq!(tree.count_i(0.0).unwrap(), 0);
        let shifted = sample_killed_tree(&pi, -1.0, f64::NEG_INFINITY, 1.0, Caps::default(), &mut rng).unwrap();
        assert!(shifted.count_i(-1.0).is_err());
    }

    #[test]
    fn truncated_walk_basics() {
        let pi = intensity();
        let mut rng = rng_from_seed(8);
        let walk = sample_brw_truncated(&pi, 0.0, 0, 5.0, 1_000_000, &mut rng).unwrap();
        assert_eq!(walk.arena.len(), 1);
        let rho = pi.rho_minus().unwrap();
        assert_eq!(martingale_w(&walk.arena, 0, rho).unwrap(), 1.0);
        assert!(martingale_w(&walk.arena, 1, rho).is_err());
        assert!(sample_brw_truncated(&pi, 0.0, 1, 0.0, 10, &mut rng).is_err());
        let walk = sample_brw_truncated(&pi, 0.0, 2, 3.0, 1_000_000, &mut rng).unwrap();
        assert_eq!(walk.arena.depth(), 3);
    }

    #[test]
    fn truncated_walk_offspring_mean_and_w1_mean() {
        let pi = intensity();
        let rho = pi.rho_minus().unwrap();
        let r = 6.0;
        let mut rng = rng_from_seed(9);
        let reps = 40_000;
        let lambda = pi.window_mass(f64::NEG_INFINITY, r).unwrap();
        let expected_w1 = pi.truncated_laplace(rho, r).unwrap();
        let mut counts = 0.0;
        let mut w = Vec::with_capacity(reps);
        for _ in 0..reps {
            let walk = sample_brw_truncated(&pi, 0.0, 1, r, 1_000_000, &mut rng).unwrap();
            counts += walk.arena.generation(1).unwrap().len() as f64;
            w.push(martingale_w(&walk.arena, 1, rho).unwrap());
        }
        let mean_count = counts / reps as f64;
        assert!((mean_count - lambda).abs() < 3.0 * (lambda / reps as f64).sqrt());
        let (mean, se) = mean_and_se(&w);
        assert!((mean - expected_w1).abs() < 3.0 * se, "{mean} vs {expected_w1} (se {se})");
    }

    #[test]
    fn martingale_mean_over_generations() {
        let pi = intensity();
        let rho = pi.rho_minus().unwrap();
        let r = 4.0;
        let m = pi.truncated_laplace(rho, r).unwrap();
        let mut rng = rng_from_seed(10);
        let reps = 20_000;
        let mut per_gen: Vec<Vec<f64>> = vec![Vec::new(); 3];
        for _ in 0..reps {
            let walk = sample_brw_truncated(&pi, 0.0, 3, r, 1_000_000, &mut rng).unwrap();
            assert!(!walk.truncated);
            for (n, samples) in per_gen.iter_mut().enumerate() {
                samples.push(martingale_w(&walk.arena, n + 1, rho).unwrap());
            }
        }
        for (n, samples) in per_gen.iter().enumerate() {
            let (mean, se) = mean_and_se(samples);
            let expected = m.powi(n as i32 + 1);
            assert!((mean - expected).abs() < 3.0 * se, "gen {}: {mean} vs {expected}", n + 1);
        }
    }

    #[test]
    fn w1_moment_below_critical_power_stabilises() {
        // p = 1.2 < (1 - gamma)/rho_- ~ 1.93: running estimates of E W_1^p over
        // growing prefixes settle down
        let pi = intensity();
        let rho = pi.rho_minus().unwrap();
        let mut rng = rng_from_seed(11);
        let samples: Vec<f64> = (0..80_000)
            .map(|_| {
                let walk = sample_brw_truncated(&pi, 0.0, 1, 8.0, 1_000_000, &mut rng).unwrap();
                martingale_w(&walk.arena, 1, rho).unwrap().powf(1.2)
            })
            .collect();
        let running = |k: usize| samples[..k].iter().sum::<f64>() / k as f64;
        let (a, b) = (running(40_000), running(80_000));
        assert!(((a - b) / b).abs() < 0.05, "{a} vs {b}");
    }

    fn mean_and_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn frozen_decomposition_invariants_and_bounds() {
        let pi = intensity();
        let rho = pi.rho_minus().unwrap();
        let mut rng = rng_from_seed(12);
        let reps = 50_000;
        let r = 12.0;
        let mut branching = Vec::with_capacity(reps);
        let mut weights = Vec::with_capacity(reps);
        for _ in 0..reps {
            let d = frozen_decompose(&pi, r, 1_000_000, &mut rng).unwrap();
            assert!(!d.truncated);
            assert!(d.branching_count() >= 1);
            assert_eq!(d.branching[0], 0.0);
            assert!(d.xi.iter().all(|&x| x > 0.0 && x <= r));
            assert!(d.branching.iter().all(|&x| x <= 0.0));
            branching.push(d.branching_count() as f64);
            weights.push(d.malthusian_weight(rho) + d.tail_compensation(&pi, rho));
        }
        // E|B| <= 1/(1 - psi(1/2)) = 5
        let (mean_b, _) = mean_and_se(&branching);
        assert!(mean_b <= 5.0, "E|B| = {mean_b}");
        let (mean_w, se_w) = mean_and_se(&weights);
        assert!((mean_w - 1.0).abs() < 3.0 * se_w, "Malthusian mean {mean_w} (se {se_w})");
    }

    #[test]
    fn frozen_decomposition_without_left_children_is_root_only() {
        let pi = intensity();
        let mut rng = rng_from_seed(13);
        let mut seen = false;
        for _ in 0..200 {
            let d = frozen_decompose(&pi, 3.0, 1_000_000, &mut rng).unwrap();
            if d.branching_count() == 1 {
                seen = true;
                assert!(d.xi.iter().all(|&x| x > 0.0));
            }
        }
        assert!(seen);
        assert!(frozen_decompose(&pi, 0.0, 10, &mut rng).is_err());
    }

    #[test]
    fn cmj_count_matches_killed_tree_count_in_law() {
        let pi = intensity();
        let (t, log_b) = (2.0, -1.0);
        let reps = 20_000;
        let mut rng = rng_from_seed(14);
        let cmj: Vec<f64> = (0..reps)
            .map(|_| cmj_count(&pi, t, log_b, 1_000_000, &mut rng).unwrap().count as f64)
            .collect();
        let killed: Vec<f64> = (0..reps)
            .map(|_| {
                sample_killed_tree(&pi, -t, f64::NEG_INFINITY, 0.0, Caps::default(), &mut rng)
                    .unwrap()
                    .count_i(log_b)
                    .unwrap() as f64
            })
            .collect();
        let (a, sa) = mean_and_se(&cmj);
        let (b, sb) = mean_and_se(&killed);
        assert!((a - b).abs() < 3.5 * (sa * sa + sb * sb).sqrt(), "{a} vs {b}");
        // P(count = 0) agrees as well
        let zero = |xs: &[f64]| xs.iter().filter(|&&x| x == 0.0).count() as f64 / reps as f64;
        let (za, zb) = (zero(&cmj), zero(&killed));
        let se = (za * (1.0 - za) / reps as f64 * 2.0).sqrt().max(1e-3);
        assert!((za - zb).abs() < 3.5 * se, "{za} vs {zb}");
    }

    #[test]
    fn cmj_count_rejects_bad_arguments() {
        let pi = intensity();
        let mut rng = rng_from_seed(16);
        assert!(cmj_count(&pi, 0.0, -0.5, 10, &mut rng).is_err());
        assert!(cmj_count(&pi, 1.0, 0.0, 10, &mut rng).is_err());
    }

    #[test]
    fn debug_export_lists_particles_in_birth_order() {
        let pi = intensity();
        let mut rng = rng_from_seed(15);
        let tree = sample_killed_tree(&pi, -3.0, f64::NEG_INFINITY, 0.0, Caps::default(), &mut rng).unwrap();
        let mut buf = Vec::new();
        tree.arena.write_debug(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), tree.len());
        assert!(lines[0].starts_with("0 - 0 "));
    }
}
