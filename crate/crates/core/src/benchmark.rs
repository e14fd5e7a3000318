//! First passage of Brownian motion with drift to a fixed barrier.

use crate::error::{Error, Result};
use statrs::function::erf::erfc;
use std::f64::consts::{PI, SQRT_2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkSpec {
    /// Starting distance above the barrier.
    pub d: f64,
    pub mu_z: f64,
    pub sigma_z: f64,
    /// Retirement horizon in years.
    pub t_ret: f64,
}

impl BenchmarkSpec {
    pub fn new(d: f64, mu_z: f64, sigma_z: f64, t_ret: f64) -> Result<Self> {
        if !(d > 0.0) || !(sigma_z > 0.0) || !(t_ret > 0.0) || !mu_z.is_finite() {
            return Err(Error::InvalidParameters(format!(
                "benchmark needs d > 0, sigma > 0, T_ret > 0 (d={d}, sigma={sigma_z}, T={t_ret})"
            )));
        }
        Ok(Self { d, mu_z, sigma_z, t_ret })
    }

    fn exponent(&self) -> f64 {
        -2.0 * self.mu_z * self.d / (self.sigma_z * self.sigma_z)
    }
}

/// ln Φ(x), accurate far into the lower tail.
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        (0.5 * erfc(-x / SQRT_2)).ln()
    } else {
        // Mills-ratio asymptotic series
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

fn check_t(t: f64) -> Result<()> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("time must be positive, got {t}")));
    }
    Ok(())
}

/// Logs of the two terms A, B with CDF = A + B and survival = Φ(−a) − B.
fn log_terms(t: f64, s: &BenchmarkSpec) -> (f64, f64, f64) {
    let st = s.sigma_z * t.sqrt();
    let a = (-s.d - s.mu_z * t) / st;
    let b = (-s.d + s.mu_z * t) / st;
    (ln_norm_cdf(a), s.exponent() + ln_norm_cdf(b), ln_norm_cdf(-a))
}

/// P(τ ≤ t).
pub fn hitting_cdf(t: f64, s: &BenchmarkSpec) -> Result<f64> {
    check_t(t)?;
    let (la, lb, _) = log_terms(t, s);
    Ok((la.exp() + lb.exp()).min(1.0))
}

/// ln P(τ > t), computed without cancellation in the far tail.
pub fn ln_survival(t: f64, s: &BenchmarkSpec) -> Result<f64> {
    check_t(t)?;
    let (la, lb, lna) = log_terms(t, s);
    // survival = Φ(−a) − B; use the direct form when it is well conditioned
    let direct = 1.0 - la.exp() - lb.exp();
    if direct > 1e-3 {
        return Ok(direct.ln());
    }
    let diff = lb - lna;
    if diff >= 0.0 {
        return Err(Error::Tail(format!("survival at t={t} is below resolution")));
    }
    Ok(lna + (-diff.exp()).ln_1p())
}

pub fn density(t: f64, s: &BenchmarkSpec) -> Result<f64> {
    check_t(t)?;
    let x = s.d + s.mu_z * t;
    Ok(s.d / (s.sigma_z * (2.0 * PI * t.powi(3)).sqrt()) * (-x * x / (2.0 * s.sigma_z * s.sigma_z * t)).exp())
}

/// Infinite-horizon mass of spells that never hit the barrier.
pub fn never_end_probability(s: &BenchmarkSpec) -> f64 {
    if s.mu_z > 0.0 {
        1.0 - s.exponent().exp()
    } else {
        0.0
    }
}

/// Mass of spells still running at the retirement horizon.
pub fn never_end_truncated(s: &BenchmarkSpec) -> Result<f64> {
    Ok(ln_survival(s.t_ret, s)?.exp())
}

/// Separation hazard density/survival.
pub fn hazard(t: f64, s: &BenchmarkSpec) -> Result<f64> {
    check_t(t)?;
    let ls = ln_survival(t, s)?;
    if ls < -700.0 {
        return Err(Error::Tail(format!("survival underflows at t={t}")));
    }
    let x = s.d + s.mu_z * t;
    let ln_pdf = s.d.ln() - s.sigma_z.ln() - 0.5 * (2.0 * PI * t.powi(3)).ln() - x * x / (2.0 * s.sigma_z * s.sigma_z * t);
    Ok((ln_pdf - ls).exp())
}

/// Location of the hazard maximum on a grid over (0, t_max].
pub fn hazard_peak(s: &BenchmarkSpec, t_max: f64, n: usize) -> Result<(f64, f64)> {
    let mut best = (0.0, f64::NEG_INFINITY);
    for i in 1..=n {
        let t = t_max * i as f64 / n as f64;
        let h = hazard(t, s)?;
        if h > best.1 {
            best = (t, h);
        }
    }
    Ok(best)
}

/// Continuous free boundary of the selection-only economy: flow
/// `slope·z + level·r`, stopping payoff `obstacle`, no on-the-job search.
pub fn selection_threshold(slope: f64, level: f64, obstacle: f64, r: f64, mu: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let beta_minus = (-mu - (mu * mu + 2.0 * r * s2).sqrt()) / s2;
    r * (obstacle - level) / slope - mu / r + 1.0 / beta_minus
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(mu: f64) -> BenchmarkSpec {
        BenchmarkSpec::new(0.3, mu, 0.12, 40.0).unwrap()
    }

    #[test]
    fn domain_checks() {
        assert!(hitting_cdf(0.0, &spec(0.0)).is_err());
        assert!(BenchmarkSpec::new(0.0, 0.0, 0.1, 40.0).is_err());
    }

    #[test]
    fn driftless_limit_is_one() {
        let s = spec(0.0);
        assert!(hitting_cdf(1e9, &s).unwrap() > 0.999);
        assert_eq!(never_end_probability(&s), 0.0);
    }

    #[test]
    fn positive_drift_ruin_limit() {
        let s = spec(0.02);
        let lim = (-2.0 * 0.02 * 0.3 / 0.0144f64).exp();
        assert!((hitting_cdf(1e7, &s).unwrap() - lim).abs() < 1e-9);
        assert!((never_end_probability(&s) - (1.0 - lim)).abs() < 1e-15);
    }

    #[test]
    fn half_never_end() {
        let sigma: f64 = 0.2;
        let d = 0.5;
        let mu = (2f64.ln() / 2.0) * sigma * sigma / d;
        let s = BenchmarkSpec::new(d, mu, sigma, 40.0).unwrap();
        assert!((never_end_probability(&s) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cdf_monotone_and_bounded() {
        for mu in [-0.03, 0.0, 0.03] {
            let s = spec(mu);
            let mut prev = 0.0;
            for i in 1..400 {
                let c = hitting_cdf(0.25 * i as f64, &s).unwrap();
                assert!(c >= prev - 1e-15);
                assert!(c <= 1.0);
                prev = c;
            }
            if mu > 0.0 {
                assert!(prev <= 1.0 - never_end_probability(&s) + 1e-12);
            }
        }
    }

    #[test]
    fn hazard_matches_finite_difference() {
        let s = spec(-0.015);
        for t in [0.5, 2.0, 10.0, 30.0] {
            let h = 1e-5;
            let f = (hitting_cdf(t + h, &s).unwrap() - hitting_cdf(t - h, &s).unwrap()) / (2.0 * h);
            let surv = 1.0 - hitting_cdf(t, &s).unwrap();
            assert!((hazard(t, &s).unwrap() - f / surv).abs() < 1e-6);
            assert!((density(t, &s).unwrap() - f).abs() < 1e-6);
        }
    }

    #[test]
    fn driftless_hazard_asymptote() {
        let s = spec(0.0);
        for t in [1e4, 1e5, 1e6] {
            let ratio = hazard(t, &s).unwrap() * 2.0 * t;
            assert!((ratio - 1.0).abs() < 5.0 * (s.d / s.sigma_z) / t.sqrt());
        }
    }

    #[test]
    fn hazard_integrates_to_cdf() {
        let s = spec(0.01);
        // ∫ h·S dt = F, trapezoid on a fine grid
        let n = 40_000;
        let t_end = 20.0;
        let mut acc = 0.0;
        let mut prev = 0.0;
        for i in 1..=n {
            let t = t_end * i as f64 / n as f64;
            let f = hazard(t, &s).unwrap() * (1.0 - hitting_cdf(t, &s).unwrap());
            acc += 0.5 * (f + prev) * t_end / n as f64;
            prev = f;
        }
        assert!((acc - hitting_cdf(t_end, &s).unwrap()).abs() < 1e-5);
    }

    #[test]
    fn never_end_comparative_statics() {
        let base = BenchmarkSpec::new(0.3, 0.02, 0.12, 40.0).unwrap();
        let p0 = never_end_probability(&base);
        let more_mu = BenchmarkSpec { mu_z: 0.03, ..base };
        let more_d = BenchmarkSpec { d: 0.4, ..base };
        let more_sigma = BenchmarkSpec { sigma_z: 0.15, ..base };
        assert!(never_end_probability(&more_mu) > p0);
        assert!(never_end_probability(&more_d) > p0);
        assert!(never_end_probability(&more_sigma) < p0);
    }

    #[test]
    fn far_tail_survival() {
        let s = spec(-0.05);
        let ls = ln_survival(2000.0, &s).unwrap();
        assert!(ls.is_finite() && ls < -50.0);
        assert!(hazard(2000.0, &s).unwrap().is_finite());
    }
}
