//! Structural primitives and their pointwise evaluation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Which distribution on-the-job offers are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfferKernelChoice {
    /// Current stationary density of active matches.
    Stationary,
    /// A single atom at the entry surplus.
    PointMass,
}

/// All structural parameters. Rates are annual.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub r: f64,
    pub mu_p: f64,
    pub mu_r: f64,
    pub sigma_p: f64,
    pub sigma_r: f64,
    pub rho: f64,
    pub z0: f64,
    /// Retirement horizon used by the truncated never-end mass.
    pub t_ret: f64,

    pub gamma: f64,
    pub alpha: f64,
    pub sigma_u2: f64,
    pub beta_w: f64,
    /// Reference outside level used by the exogenous sharing rule.
    pub reference_outside: f64,
    /// Frozen outside value in the counterfactual economies.
    pub exogenous_vu: f64,

    pub kappa: f64,
    pub eta: f64,
    pub lambda0: f64,
    pub lambda_bar: f64,
    pub a_max: f64,
    pub n_actions: usize,
    pub b: f64,
    pub lambda_u: f64,
    pub entry_rate: f64,
    pub destruction_rate: f64,
    pub offer_kernel: OfferKernelChoice,

    pub firing_cost: f64,
    pub search_subsidy: f64,
    pub vol_multiplier: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        crate::config::Config::default().model_params()
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r", self.r),
            ("sigma_p", self.sigma_p),
            ("sigma_r", self.sigma_r),
            ("kappa", self.kappa),
            ("eta", self.eta),
            ("lambda0", self.lambda0),
            ("lambda_bar", self.lambda_bar),
            ("entry_rate", self.entry_rate),
            ("vol_multiplier", self.vol_multiplier),
            ("a_max", self.a_max),
            ("t_ret", self.t_ret),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameters(format!("{name} must be positive, got {v}")));
            }
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidParameters(format!("rho must lie in [-1,1], got {}", self.rho)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidParameters(format!("gamma must lie in (0,1), got {}", self.gamma)));
        }
        if self.alpha + self.gamma != 1.0 {
            return Err(Error::InvalidParameters("alpha + gamma must equal 1".into()));
        }
        if !(self.beta_w >= 0.0 && self.beta_w <= 1.0) {
            return Err(Error::InvalidParameters(format!("beta_w must lie in [0,1], got {}", self.beta_w)));
        }
        if self.sigma_u2 < 0.0 || self.firing_cost < 0.0 || self.lambda_u < 0.0 || self.destruction_rate < 0.0 {
            return Err(Error::InvalidParameters(
                "sigma_u2, firing_cost, lambda_u and destruction_rate must be nonnegative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.search_subsidy) {
            return Err(Error::InvalidParameters(format!(
                "search_subsidy must lie in [0,1), got {}",
                self.search_subsidy
            )));
        }
        if self.n_actions < 2 {
            return Err(Error::InvalidParameters("n_actions must be at least 2".into()));
        }
        derive_surplus_coeffs(self).map(|_| ())
    }

    /// Sets gamma and keeps alpha = 1 - gamma.
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self.alpha = 1.0 - gamma;
        self
    }
}

/// Drift and volatility of the scalar surplus diffusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurplusCoeffs {
    pub mu_z: f64,
    pub sigma_z: f64,
}

pub fn derive_surplus_coeffs(p: &ModelParams) -> Result<SurplusCoeffs> {
    let var = p.sigma_p * p.sigma_p + p.sigma_r * p.sigma_r - 2.0 * p.rho * p.sigma_p * p.sigma_r;
    // rounding can leave a tiny positive residue in the perfectly correlated case
    let scale = p.sigma_p * p.sigma_p + p.sigma_r * p.sigma_r;
    if !(var > 1e-14 * scale) {
        return Err(Error::InvalidParameters(format!("surplus variance is not positive ({var:e})")));
    }
    if !(p.vol_multiplier > 0.0) {
        return Err(Error::InvalidParameters("vol_multiplier must be positive".into()));
    }
    Ok(SurplusCoeffs {
        mu_z: p.mu_p - p.mu_r,
        sigma_z: var.sqrt() * p.vol_multiplier,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WageMode {
    SharingExogenous,
    AffineEquilibrium,
}

/// Flow wage at surplus `z`. `intercept` is only read in the affine mode.
pub fn wage_at(z: f64, intercept: f64, p: &ModelParams, mode: WageMode) -> f64 {
    match mode {
        WageMode::SharingExogenous => {
            (1.0 - p.gamma) * (z + p.reference_outside) + p.gamma * p.reference_outside
        }
        WageMode::AffineEquilibrium => intercept + p.beta_w * z,
    }
}

pub fn search_cost(a: f64, p: &ModelParams) -> Result<f64> {
    if a < 0.0 || a.is_nan() {
        return Err(Error::Domain(format!("search intensity must be nonnegative, got {a}")));
    }
    Ok(search_cost_unchecked(a, p))
}

#[inline]
pub(crate) fn search_cost_unchecked(a: f64, p: &ModelParams) -> f64 {
    (1.0 - p.search_subsidy) * p.kappa * a.powf(1.0 + p.eta) / (1.0 + p.eta)
}

#[inline]
pub fn arrival_rate(a: f64, p: &ModelParams) -> f64 {
    (p.lambda0 * a.max(0.0)).min(p.lambda_bar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn degenerate_correlation_rejected() {
        let mut p = base();
        p.mu_p = 0.02;
        p.mu_r = 0.02;
        p.sigma_p = 0.15;
        p.sigma_r = 0.15;
        p.rho = 1.0;
        p.vol_multiplier = 1.0;
        assert!(matches!(derive_surplus_coeffs(&p), Err(Error::InvalidParameters(_))));
    }

    #[test]
    fn orthogonal_variances_add() {
        let mut p = base();
        p.mu_p = 0.03;
        p.mu_r = 0.01;
        p.sigma_p = 0.2;
        p.sigma_r = 0.2;
        p.rho = 0.0;
        p.vol_multiplier = 1.0;
        let c = derive_surplus_coeffs(&p).unwrap();
        assert!((c.mu_z - 0.02).abs() < 1e-15);
        assert!((c.sigma_z - 0.2 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn affine_wage_examples() {
        let mut p = base();
        p.beta_w = 0.5;
        assert_eq!(wage_at(0.0, 5.0, &p, WageMode::AffineEquilibrium), 5.0);
        assert_eq!(wage_at(1.0, 5.0, &p, WageMode::AffineEquilibrium), 5.5);
    }

    #[test]
    fn sharing_wage_example() {
        let mut p = base().with_gamma(0.73);
        p.reference_outside = 0.0;
        let w = wage_at(0.1, 123.0, &p, WageMode::SharingExogenous);
        assert!((w - 0.027).abs() < 1e-15);
        assert_eq!(p.alpha + p.gamma, 1.0);
    }

    #[test]
    fn search_cost_examples() {
        let mut p = base();
        p.kappa = 2.0;
        p.eta = 1.0;
        p.search_subsidy = 0.0;
        assert_eq!(search_cost(0.0, &p).unwrap(), 0.0);
        assert_eq!(search_cost(1.0, &p).unwrap(), 1.0);
        p.search_subsidy = 0.5;
        assert_eq!(search_cost(1.0, &p).unwrap(), 0.5);
        assert!(search_cost(-0.1, &p).is_err());
    }

    #[test]
    fn arrival_examples() {
        let mut p = base();
        p.lambda0 = 0.3;
        p.lambda_bar = 10.0;
        assert_eq!(arrival_rate(0.0, &p), 0.0);
        assert!((arrival_rate(2.0, &p) - 0.6).abs() < 1e-15);
        assert_eq!(arrival_rate(100.0, &p), 10.0);
    }

    #[test]
    fn baseline_validates() {
        base().validate().unwrap();
    }

    proptest! {
        #[test]
        fn common_drift_shift_invariant(c in -1.0f64..1.0) {
            let p = base();
            let mut q = p.clone();
            q.mu_p += c;
            q.mu_r += c;
            let a = derive_surplus_coeffs(&p).unwrap();
            let b = derive_surplus_coeffs(&q).unwrap();
            prop_assert!((a.mu_z - b.mu_z).abs() < 1e-12);
            prop_assert_eq!(a.sigma_z, b.sigma_z);
        }

        #[test]
        fn search_cost_strictly_convex(a1 in 0.0f64..5.0, gap in 1e-3f64..5.0, t in 0.01f64..0.99,
                                       eta in 0.1f64..3.0, kappa in 0.1f64..5.0) {
            let mut p = base();
            p.eta = eta;
            p.kappa = kappa;
            let a2 = a1 + gap;
            let mid = search_cost(t * a1 + (1.0 - t) * a2, &p).unwrap();
            let chord = t * search_cost(a1, &p).unwrap() + (1.0 - t) * search_cost(a2, &p).unwrap();
            prop_assert!(mid < chord);
        }

        #[test]
        fn affine_wage_slope(z in -3.0f64..3.0, h in 1e-3f64..1.0, vu in -10.0f64..10.0) {
            let p = base();
            let lo = wage_at(z, vu, &p, WageMode::AffineEquilibrium);
            let hi = wage_at(z + h, vu, &p, WageMode::AffineEquilibrium);
            prop_assert!(hi > lo);
            prop_assert!(((hi - lo) / h - p.beta_w).abs() < 1e-9);
        }
    }
}
