//! Run configuration: a sectioned TOML file. Unknown keys are rejected and
//! every field defaults to the shipped baseline.

use crate::error::{Error, Result};
use crate::montecarlo::SimConfig;
use crate::params::{ModelParams, OfferKernelChoice};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSection {
    pub r_annual: f64,
    pub mu_p_annual: f64,
    pub mu_r_annual: f64,
    pub sigma_p_annual: f64,
    pub sigma_r_annual: f64,
    pub rho: f64,
    pub z0: f64,
    pub retirement_horizon_years: f64,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        Self {
            r_annual: 0.05,
            mu_p_annual: 0.0,
            mu_r_annual: 0.015,
            sigma_p_annual: 0.09,
            sigma_r_annual: 0.07,
            rho: 0.2,
            z0: 0.04,
            retirement_horizon_years: 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub kappa: f64,
    pub eta: f64,
    pub lambda0_annual: f64,
    pub lambda_bar_annual: f64,
    pub a_max: f64,
    pub n_actions: usize,
    pub b_flow_annual: f64,
    pub lambda_u_annual: f64,
    pub entry_rate_annual: f64,
    pub destruction_rate_annual: f64,
    pub offer_kernel: OfferKernelChoice,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            eta: 1.0,
            lambda0_annual: 1.0,
            lambda_bar_annual: 5.0,
            a_max: 1.0,
            n_actions: 21,
            b_flow_annual: 0.0,
            lambda_u_annual: 1.0,
            entry_rate_annual: 1.0,
            destruction_rate_annual: 0.0,
            offer_kernel: OfferKernelChoice::PointMass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WageSection {
    pub gamma: f64,
    pub beta_w: f64,
    pub sigma_u2: f64,
    pub reference_outside: f64,
    pub exogenous_vu: f64,
}

impl Default for WageSection {
    fn default() -> Self {
        Self {
            gamma: 0.73,
            beta_w: 0.5,
            sigma_u2: 0.0046,
            reference_outside: 0.0,
            exogenous_vu: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub firing_cost: f64,
    pub search_subsidy: f64,
    pub vol_multiplier: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            firing_cost: 0.0,
            search_subsidy: 0.0,
            vol_multiplier: 1.0,
        }
    }
}

/// Discretization and solver controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    pub z_min: f64,
    pub z_max: f64,
    pub n_grid: usize,
    /// Number of neighbouring nodes on each side sharing the entry mass.
    pub entry_spread_nodes: usize,
    pub pi_tol: f64,
    pub pi_max_iter: usize,
    pub vi_tol: f64,
    pub vi_max_iter: usize,
    pub vi_dt_years: f64,
    pub vi_theta: f64,
    pub omega: f64,
    pub eps_m: f64,
    pub eps_w: f64,
    pub max_outer: usize,
    pub oscillation_window: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            z_min: -1.0,
            z_max: 7.0,
            n_grid: 401,
            entry_spread_nodes: 0,
            pi_tol: 1e-10,
            pi_max_iter: 500,
            vi_tol: 1e-9,
            vi_max_iter: 200_000,
            vi_dt_years: 1000.0,
            vi_theta: 1.0,
            omega: 0.5,
            eps_m: 1e-11,
            eps_w: 1e-11,
            max_outer: 1000,
            oscillation_window: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub n_spells: usize,
    pub dt_years: f64,
    pub seed: u64,
    pub max_years: f64,
    pub bridge_correction: bool,
    pub snapshot_interval_years: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            n_spells: 50_000,
            dt_years: 1.0 / 12.0,
            seed: 20_240_601,
            max_years: 400.0,
            bridge_correction: true,
            snapshot_interval_years: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentsSection {
    /// Tenure bin edges in years.
    pub tenure_edges_years: Vec<f64>,
    /// Hazard bin edges in years.
    pub hazard_edges_years: Vec<f64>,
    pub firing_cost_values: Vec<f64>,
    pub search_subsidy_values: Vec<f64>,
    pub vol_multiplier_values: Vec<f64>,
}

impl Default for ExperimentsSection {
    fn default() -> Self {
        Self {
            tenure_edges_years: vec![0.0, 1.0, 3.0, 7.0, 15.0, 30.0],
            hazard_edges_years: (0..=40).map(|k| 0.5 * k as f64).collect(),
            firing_cost_values: vec![0.0, 0.1, 0.2, 0.3],
            search_subsidy_values: vec![0.0, 0.2, 0.4, 0.6],
            vol_multiplier_values: vec![0.8, 0.9, 1.0, 1.1, 1.25],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub diffusion: DiffusionSection,
    pub search: SearchSection,
    pub wage: WageSection,
    pub policy: PolicySection,
    pub numerics: Numerics,
    pub simulation: SimulationSection,
    pub experiments: ExperimentsSection,
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model_params().validate()?;
        let n = &self.numerics;
        if !(n.z_min < n.z_max) || n.n_grid < 3 {
            return Err(Error::Config("grid needs z_min < z_max and at least 3 nodes".into()));
        }
        if !(n.omega > 0.0 && n.omega <= 1.0) {
            return Err(Error::Config(format!("omega must lie in (0,1], got {}", n.omega)));
        }
        if !(n.vi_theta > 0.0 && n.vi_theta <= 1.0) || !(n.vi_dt_years > 0.0) {
            return Err(Error::Config("vi_theta must lie in (0,1] and vi_dt_years be positive".into()));
        }
        self.sim_config().validate()?;
        let e = &self.experiments;
        for edges in [&e.tenure_edges_years, &e.hazard_edges_years] {
            if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Config("bin edges must be strictly increasing with at least two entries".into()));
            }
        }
        Ok(())
    }

    pub fn model_params(&self) -> ModelParams {
        let d = &self.diffusion;
        let s = &self.search;
        let w = &self.wage;
        let p = &self.policy;
        ModelParams {
            r: d.r_annual,
            mu_p: d.mu_p_annual,
            mu_r: d.mu_r_annual,
            sigma_p: d.sigma_p_annual,
            sigma_r: d.sigma_r_annual,
            rho: d.rho,
            z0: d.z0,
            t_ret: d.retirement_horizon_years,
            gamma: w.gamma,
            alpha: 1.0 - w.gamma,
            sigma_u2: w.sigma_u2,
            beta_w: w.beta_w,
            reference_outside: w.reference_outside,
            exogenous_vu: w.exogenous_vu,
            kappa: s.kappa,
            eta: s.eta,
            lambda0: s.lambda0_annual,
            lambda_bar: s.lambda_bar_annual,
            a_max: s.a_max,
            n_actions: s.n_actions,
            b: s.b_flow_annual,
            lambda_u: s.lambda_u_annual,
            entry_rate: s.entry_rate_annual,
            destruction_rate: s.destruction_rate_annual,
            offer_kernel: s.offer_kernel,
            firing_cost: p.firing_cost,
            search_subsidy: p.search_subsidy,
            vol_multiplier: p.vol_multiplier,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.simulation;
        SimConfig {
            n_spells: s.n_spells,
            dt: s.dt_years,
            seed: s.seed,
            max_years: s.max_years,
            bridge_correction: s.bridge_correction,
            snapshot_interval: s.snapshot_interval_years,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::from_toml_str("").unwrap(), Config::default());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = Config::from_toml_str("[diffusion]\nr_anual = 0.04\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(Config::from_toml_str("[nope]\nx = 1\n").is_err());
    }

    #[test]
    fn round_trip() {
        let c = Config::default();
        let back = Config::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn partial_override() {
        let c = Config::from_toml_str("[policy]\nfiring_cost = 0.2\n").unwrap();
        assert_eq!(c.policy.firing_cost, 0.2);
        assert_eq!(c.numerics, Numerics::default());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::from_toml_str("[numerics]\nn_grid = 2\n").is_err());
        assert!(Config::from_toml_str("[policy]\nsearch_subsidy = 1.0\n").is_err());
        assert!(Config::from_toml_str("[diffusion]\nsigma_p_annual = 0.0\n").is_err());
    }
}
