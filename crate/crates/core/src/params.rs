//! Model parameters and the analytic constants derived from them.
//!
//! Everything here is a pure function of `(gamma, beta)` in 64-bit floating
//! point. Root finding defaults to an absolute tolerance of
//! [`DEFAULT_TOL`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance of the bisection routines.
pub const DEFAULT_TOL: f64 = 1e-12;

/// Offset keeping bisection brackets off the poles of `psi` at `gamma` and
/// `1 - gamma`.
const BRACKET_OFFSET: f64 = 1e-12;

const MAX_BISECTION_STEPS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Subcritical,
    CriticalOrSupercritical,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Subcritical => "subcritical",
            Regime::CriticalOrSupercritical => "critical-or-supercritical",
        }
    }
}

/// Preferential attachment strength `gamma` and edge density `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    gamma: f64,
    beta: f64,
    regime: Regime,
}

/// Value of the Laplace transform; `Infinite` outside `(gamma, 1 - gamma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psi {
    Finite(f64),
    Infinite,
}

impl Psi {
    pub fn is_finite(&self) -> bool {
        matches!(self, Psi::Finite(_))
    }

    /// The value as an `f64`, with `Infinite` mapped to `f64::INFINITY`.
    pub fn value(&self) -> f64 {
        match *self {
            Psi::Finite(v) => v,
            Psi::Infinite => f64::INFINITY,
        }
    }
}

/// Constants derived from subcritical [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub beta_c: f64,
    pub rho_minus: f64,
    pub rho_plus: f64,
    pub t_star: f64,
    /// Power-law exponent of the degree distribution, `1 + 1/gamma`.
    pub tau: f64,
    /// Open interval on which `psi` is finite.
    pub psi_domain: (f64, f64),
}

/// `(1/4 - gamma/2) v 0`.
pub fn critical_beta(gamma: f64) -> f64 {
    (0.25 - gamma / 2.0).max(0.0)
}

pub fn validate_params(gamma: f64, beta: f64) -> Result<ModelParams> {
    ModelParams::new(gamma, beta)
}

impl ModelParams {
    pub fn new(gamma: f64, beta: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0 && gamma < 1.0) {
            return Err(Error::validation(
                "gamma",
                format!("must lie in (0, 1), got {gamma}"),
            ));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::validation(
                "beta",
                format!("must be positive and finite, got {beta}"),
            ));
        }
        let regime = if gamma < 0.5 && beta < critical_beta(gamma) {
            Regime::Subcritical
        } else {
            Regime::CriticalOrSupercritical
        };
        Ok(Self {
            gamma,
            beta,
            regime,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn is_subcritical(&self) -> bool {
        self.regime == Regime::Subcritical
    }

    /// Same `gamma`, different density (the `tilde beta` of the couplings).
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.gamma, beta)
    }

    pub fn critical_beta(&self) -> f64 {
        critical_beta(self.gamma)
    }

    pub fn tau(&self) -> f64 {
        1.0 + 1.0 / self.gamma
    }

    pub fn psi_domain(&self) -> (f64, f64) {
        (self.gamma, 1.0 - self.gamma)
    }

    /// Laplace transform `beta/(t-gamma) + beta/(1-gamma-t)` of the
    /// displacement intensity.
    pub fn psi(&self, t: f64) -> Psi {
        let (lo, hi) = self.psi_domain();
        if t > lo && t < hi {
            Psi::Finite(self.beta / (t - self.gamma) + self.beta / (1.0 - self.gamma - t))
        } else {
            Psi::Infinite
        }
    }

    /// Analytic derivative of [`psi`](Self::psi); `None` outside the domain.
    pub fn psi_prime(&self, t: f64) -> Option<f64> {
        let (lo, hi) = self.psi_domain();
        if t > lo && t < hi {
            let left = t - self.gamma;
            let right = 1.0 - self.gamma - t;
            Some(-self.beta / (left * left) + self.beta / (right * right))
        } else {
            None
        }
    }

    fn require_subcritical(&self) -> Result<()> {
        if self.is_subcritical() {
            Ok(())
        } else {
            Err(Error::Regime(format!(
                "gamma={} beta={} (beta_c={})",
                self.gamma,
                self.beta,
                self.critical_beta()
            )))
        }
    }

    /// The two roots of `psi(t) = 1`,
    /// `1/2 -+ sqrt((gamma - 1/2)^2 + beta (2 gamma - 1))`.
    ///
    /// The same quantity is sometimes written
    /// `1/2 - sqrt((1/2 - gamma)^2 - beta (1 - 2 gamma))`; the two expressions
    /// are algebraically identical.
    pub fn rho_pm(&self) -> Result<(f64, f64)> {
        let half_gap = 0.5 - self.gamma;
        let disc = half_gap * half_gap + self.beta * (2.0 * self.gamma - 1.0);
        if !(disc >= 0.0) || !self.is_subcritical() {
            return Err(Error::Regime(format!(
                "no real roots of psi(t) = 1 for gamma={} beta={}",
                self.gamma, self.beta
            )));
        }
        let root = disc.sqrt();
        Ok((0.5 - root, 0.5 + root))
    }

    /// Roots of `psi(t) = 1` by bracketed bisection on `(gamma, 1/2]` and
    /// `[1/2, 1 - gamma)`. Independent of the closed form in
    /// [`rho_pm`](Self::rho_pm).
    pub fn rho_pm_bisection(&self, tol: f64) -> Result<(f64, f64)> {
        if !(tol > 0.0) {
            return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
        }
        let f = |t: f64| self.psi(t).value() - 1.0;
        let lo = self.gamma + BRACKET_OFFSET;
        let hi = 1.0 - self.gamma - BRACKET_OFFSET;
        let rho_minus = bisect(f, lo, 0.5, tol)?;
        let rho_plus = bisect(f, 0.5, hi, tol)?;
        Ok((rho_minus, rho_plus))
    }

    /// The unique `t*` in `(rho_-, rho_+)` with
    /// `log(psi(t))/t = psi'(t)/psi(t)`.
    pub fn t_star(&self, tol: f64) -> Result<f64> {
        self.require_subcritical()?;
        if !(tol > 0.0) {
            return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
        }
        let (rho_minus, rho_plus) = self.rho_pm()?;
        bisect(|t| self.t_star_equation(t), rho_minus, rho_plus, tol)
    }

    /// `log(psi(t))/t - psi'(t)/psi(t)`, positive at `rho_-` and negative at
    /// `rho_+`.
    pub fn t_star_equation(&self, t: f64) -> f64 {
        let psi = self.psi(t).value();
        let psi_prime = self.psi_prime(t).unwrap_or(f64::NAN);
        psi.ln() / t - psi_prime / psi
    }

    /// Upper end `-psi'(t*)/psi(t*)` of the admissible speeds in
    /// [`deviation_rate`](Self::deviation_rate).
    pub fn max_deviation_speed(&self) -> Result<f64> {
        let t = self.t_star(DEFAULT_TOL)?;
        let psi = self.psi(t).value();
        let psi_prime = self.psi_prime(t).expect("t* lies inside the domain of psi");
        Ok(-psi_prime / psi)
    }

    /// Rate `I(delta) = -delta - psi'(t*)/psi(t*)` of the leftmost-particle
    /// large deviation bound. Defined for `0 < delta <= -psi'(t*)/psi(t*)`;
    /// the rate vanishes at the upper end.
    pub fn deviation_rate(&self, delta: f64) -> Result<f64> {
        let speed = self.max_deviation_speed()?;
        if !(delta > 0.0 && delta <= speed * (1.0 + 1e-15)) {
            return Err(Error::Domain(format!(
                "delta must lie in (0, {speed}], got {delta}"
            )));
        }
        Ok((speed - delta).max(0.0))
    }

    pub fn derived(&self) -> Result<DerivedConstants> {
        let (rho_minus, rho_plus) = self.rho_pm()?;
        Ok(DerivedConstants {
            beta_c: self.critical_beta(),
            rho_minus,
            rho_plus,
            t_star: self.t_star(DEFAULT_TOL)?,
            tau: self.tau(),
            psi_domain: self.psi_domain(),
        })
    }
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
pub(crate) fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.is_nan() || f_hi.is_nan() || f_lo.signum() == f_hi.signum() {
        return Err(Error::Numeric(format!(
            "no sign change on [{lo}, {hi}] (f = {f_lo}, {f_hi})"
        )));
    }
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol || mid == lo || mid == hi {
            return Ok(mid);
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(gamma: f64, beta: f64) -> ModelParams {
        ModelParams::new(gamma, beta).unwrap()
    }

    #[test]
    fn validation_and_regime() {
        assert_eq!(p(0.25, 0.1).regime(), Regime::Subcritical);
        assert_eq!(p(0.6, 0.01).regime(), Regime::CriticalOrSupercritical);
        assert_eq!(p(0.25, 0.2).regime(), Regime::CriticalOrSupercritical);
        match ModelParams::new(1.2, 0.1) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "gamma"),
            other => panic!("expected gamma error, got {other:?}"),
        }
        match ModelParams::new(0.2, 0.0) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "beta"),
            other => panic!("expected beta error, got {other:?}"),
        }
        assert!(ModelParams::new(0.0, 0.1).is_err());
        assert!(ModelParams::new(f64::NAN, 0.1).is_err());
    }

    #[test]
    fn critical_beta_values() {
        assert_eq!(critical_beta(0.25), 0.125);
        assert_eq!(critical_beta(0.5), 0.0);
        assert_eq!(critical_beta(0.75), 0.0);
        let grid: Vec<f64> = (1..100).map(|k| k as f64 / 100.0).collect();
        for w in grid.windows(2) {
            assert!(critical_beta(w[1]) <= critical_beta(w[0]));
        }
    }

    #[test]
    fn psi_values() {
        let params = p(0.25, 0.1);
        assert!((params.psi(0.5).value() - 0.8).abs() < 1e-15);
        assert_eq!(params.psi(0.25), Psi::Infinite);
        assert_eq!(params.psi(0.75), Psi::Infinite);
        assert_eq!(params.psi(-1.0), Psi::Infinite);
    }

    #[test]
    fn psi_matches_quadrature_of_intensity() {
        // psi(t) = int e^{-tx} pi(dx); trapezoid rule on a wide window
        let params = p(0.25, 0.1);
        let t = 0.5;
        let density = |x: f64| {
            let w = if x > 0.0 { (0.25 * x).exp() } else { (0.75 * x).exp() };
            0.1 * w * (-t * x).exp()
        };
        let (a, b, steps) = (-200.0, 200.0, 400_000);
        let h = (b - a) / steps as f64;
        let mut acc = 0.5 * (density(a) + density(b));
        for k in 1..steps {
            acc += density(a + k as f64 * h);
        }
        assert!((acc * h - params.psi(t).value()).abs() < 1e-6);
    }

    #[test]
    fn psi_prime_matches_finite_differences() {
        let params = p(0.3, 0.05);
        for &t in &[0.35, 0.45, 0.5, 0.6, 0.65] {
            let h = 1e-6;
            let fd = (params.psi(t + h).value() - params.psi(t - h).value()) / (2.0 * h);
            assert!((fd - params.psi_prime(t).unwrap()).abs() < 1e-5, "t={t}");
        }
        assert_eq!(params.psi_prime(0.1), None);
    }

    #[test]
    fn rho_pm_reference_values() {
        let (lo, hi) = p(0.25, 0.1).rho_pm().unwrap();
        assert!((lo - 0.3881966).abs() < 1e-6);
        assert!((hi - 0.6118034).abs() < 1e-6);
        let (blo, bhi) = p(0.25, 0.1).rho_pm_bisection(1e-10).unwrap();
        assert!((lo - blo).abs() < 1e-9 && (hi - bhi).abs() < 1e-9);
        assert!(p(0.25, 0.2).rho_pm().is_err());
        assert!(p(0.25, 0.1).rho_pm_bisection(0.0).is_err());
    }

    #[test]
    fn rho_pm_near_critical_density_meets_at_half() {
        let params = p(0.25, 0.125 - 1e-12);
        let (lo, hi) = params.rho_pm().unwrap();
        assert!((lo - 0.5).abs() < 1e-5 && (hi - 0.5).abs() < 1e-5);
    }

    #[test]
    fn bisection_roots_symmetric_about_half() {
        let (lo, hi) = p(0.4, 0.04).rho_pm_bisection(1e-12).unwrap();
        assert!((lo + hi - 1.0).abs() < 1e-10);
    }

    #[test]
    fn t_star_reference_value() {
        let params = p(0.25, 0.1);
        let t = params.t_star(1e-14).unwrap();
        assert!(t > 0.38820 && t < 0.61180);
        // frozen from a dense grid scan of the defining equation followed by
        // bisection (independent script, 1e6 grid points)
        assert!((t - T_STAR_REFERENCE).abs() < 1e-9, "t*={t}");
        assert!(params.t_star_equation(t).abs() < 1e-9);
        // psi'(1/2) = 0 while log psi(1/2) != 0, so t* is not 1/2
        assert_eq!(params.psi_prime(0.5).unwrap(), 0.0);
        assert!((t - 0.5).abs() > 1e-3);
    }

    /// t* for gamma = 0.25, beta = 0.1.
    const T_STAR_REFERENCE: f64 = 0.485898736886956_6;

    #[test]
    fn deviation_rate_is_linear_and_vanishes_at_boundary() {
        let params = p(0.25, 0.1);
        let speed = params.max_deviation_speed().unwrap();
        assert!(speed > 0.0);
        assert!(params.deviation_rate(speed).unwrap().abs() < 1e-15);
        let half = params.deviation_rate(speed / 2.0).unwrap();
        assert!((half - speed / 2.0).abs() < 1e-15);
        assert!(params.deviation_rate(0.0).is_err());
        assert!(params.deviation_rate(speed * 1.01).is_err());
        assert!((speed - DEVIATION_SPEED_REFERENCE).abs() < 1e-9, "speed={speed}");
    }

    /// -psi'(t*)/psi(t*) for gamma = 0.25, beta = 0.1.
    const DEVIATION_SPEED_REFERENCE: f64 = 0.452680636617009_6;

    #[test]
    fn psi_strictly_convex_on_grid() {
        let params = p(0.25, 0.1);
        let h = 1e-3;
        let mut t = 0.25 + 2.0 * h;
        while t < 0.75 - 2.0 * h {
            let second = params.psi(t + h).value() - 2.0 * params.psi(t).value()
                + params.psi(t - h).value();
            assert!(second > 0.0, "t={t}");
            t += h;
        }
    }

    fn subcritical() -> impl Strategy<Value = ModelParams> {
        (0.001f64..0.499, 0.001f64..0.999).prop_map(|(gamma, frac)| {
            ModelParams::new(gamma, frac * critical_beta(gamma)).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn roots_solve_psi_and_agree_with_bisection(params in subcritical()) {
            let (lo, hi) = params.rho_pm().unwrap();
            prop_assert!((params.psi(lo).value() - 1.0).abs() < 1e-10);
            prop_assert!((params.psi(hi).value() - 1.0).abs() < 1e-10);
            let (blo, bhi) = params.rho_pm_bisection(1e-12).unwrap();
            prop_assert!((lo - blo).abs() < 1e-9 && (hi - bhi).abs() < 1e-9);
            prop_assert!((lo + hi - 1.0).abs() <= 1e-14);
            prop_assert!(lo > params.gamma());
            prop_assert!(lo <= 0.5 && hi >= 0.5 && hi < 1.0 - params.gamma());
        }

        #[test]
        fn t_star_between_roots(params in subcritical()) {
            let (lo, hi) = params.rho_pm().unwrap();
            let t = params.t_star(1e-12).unwrap();
            prop_assert!(lo < t && t < hi);
        }
    }
}
