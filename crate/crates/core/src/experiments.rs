//! Counterfactual decomposition, policy sweeps and the calibration criterion.

use crate::benchmark::{never_end_truncated, selection_threshold, BenchmarkSpec};
use crate::config::Numerics;
use crate::equilibrium::{dispersion, solve_with_setup, EquilibriumResult, InitialDensity, Setup};
pub use crate::equilibrium::CounterfactualMode;
use crate::error::{Error, Result};
use crate::montecarlo::{empirical_hazard, mean_wage_growth, simulate_panel, variance_by_tenure, Panel, SimConfig, SimPolicy};
use crate::params::{derive_surplus_coeffs, ModelParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const MODES: [CounterfactualMode; 3] = [CounterfactualMode::Sel, CounterfactualMode::SelSearch, CounterfactualMode::Full];

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionRow {
    pub lo: f64,
    pub hi: f64,
    pub var_sel: f64,
    pub var_sel_search: f64,
    pub var_full: f64,
    /// Snapshot counts per mode.
    pub counts: [usize; 3],
}

impl DecompositionRow {
    pub fn label(&self) -> String {
        format!("{}-{}", self.lo, self.hi)
    }
}

#[derive(Debug, Clone)]
pub struct DecompositionTable {
    pub rows: Vec<DecompositionRow>,
    /// Unconditional dispersion under each mode's stationary density.
    pub overall_pde: [f64; 3],
    /// Same quantity from simulated occupation times.
    pub overall_mc: [f64; 3],
    pub z_star: [f64; 3],
}

/// Solves one mode and simulates a panel from its policies.
pub fn solve_and_simulate(setup: &Setup, mode: CounterfactualMode, sim: &SimConfig) -> Result<(EquilibriumResult, Panel)> {
    let eq = solve_with_setup(setup, &InitialDensity::Uniform, mode)?;
    let policy = SimPolicy::from_solution(&eq.worker, &eq.env)?;
    let panel = simulate_panel(&policy, sim)?;
    Ok((eq, panel))
}

fn occupancy_dispersion(panel: &Panel, wage: &[f64]) -> f64 {
    let total: u64 = panel.occupancy.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let w = |k: usize| panel.occupancy[k] as f64 / total as f64;
    let mean: f64 = (0..wage.len()).map(|k| w(k) * wage[k]).sum();
    (0..wage.len()).map(|k| w(k) * (wage[k] - mean).powi(2)).sum()
}

pub fn run_decomposition(p: &ModelParams, numerics: &Numerics, sim: &SimConfig, edges: &[f64]) -> Result<DecompositionTable> {
    let setup = Setup::new(p, numerics)?;
    let solved: Vec<Result<(EquilibriumResult, Panel)>> =
        MODES.par_iter().map(|&mode| solve_and_simulate(&setup, mode, sim)).collect();
    let mut out = Vec::with_capacity(3);
    for s in solved {
        out.push(s?);
    }
    let tv: Vec<_> = out.iter().map(|(_, panel)| variance_by_tenure(panel, edges, 0.0)).collect();
    let rows = (0..edges.len() - 1)
        .map(|b| DecompositionRow {
            lo: edges[b],
            hi: edges[b + 1],
            var_sel: tv[0][b].var.unwrap_or(f64::NAN),
            var_sel_search: tv[1][b].var.unwrap_or(f64::NAN),
            var_full: tv[2][b].var.unwrap_or(f64::NAN),
            counts: [tv[0][b].count, tv[1][b].count, tv[2][b].count],
        })
        .collect();
    let overall_pde = [0, 1, 2].map(|i| dispersion(&out[i].0.m_star, &out[i].0.wage));
    let overall_mc = [0, 1, 2].map(|i| occupancy_dispersion(&out[i].1, &out[i].0.wage));
    let z_star = [0, 1, 2].map(|i| out[i].0.z_star);
    Ok(DecompositionTable {
        rows,
        overall_pde,
        overall_mc,
        z_star,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lever {
    FiringCost,
    SearchSubsidy,
    VolMultiplier,
}

impl Lever {
    pub fn name(self) -> &'static str {
        match self {
            Lever::FiringCost => "firing_cost",
            Lever::SearchSubsidy => "search_subsidy",
            Lever::VolMultiplier => "vol_multiplier",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "firing_cost" | "f" => Some(Lever::FiringCost),
            "search_subsidy" | "s" => Some(Lever::SearchSubsidy),
            "vol_multiplier" | "chi" => Some(Lever::VolMultiplier),
            _ => None,
        }
    }

    pub fn apply(self, p: &ModelParams, value: f64) -> ModelParams {
        let mut q = p.clone();
        match self {
            Lever::FiringCost => q.firing_cost = value,
            Lever::SearchSubsidy => q.search_subsidy = value,
            Lever::VolMultiplier => q.vol_multiplier = value,
        }
        q
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub value: f64,
    pub converged: bool,
    pub z_star: f64,
    pub var_logw: f64,
    pub j2j: f64,
    pub mean_w: f64,
    pub iterations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub lever: Lever,
    pub records: Vec<SweepRecord>,
}

fn weakly(xs: &[f64], up: bool) -> bool {
    xs.windows(2).all(|w| if up { w[1] >= w[0] } else { w[1] <= w[0] })
}

impl SweepResult {
    pub fn all_converged(&self) -> bool {
        self.records.iter().all(|r| r.converged)
    }

    fn series(&self, f: impl Fn(&SweepRecord) -> f64) -> Vec<f64> {
        self.records.iter().filter(|r| r.converged).map(f).collect()
    }

    pub fn z_star_weakly_decreasing(&self) -> bool {
        weakly(&self.series(|r| r.z_star), false)
    }

    pub fn z_star_weakly_increasing(&self) -> bool {
        weakly(&self.series(|r| r.z_star), true)
    }

    pub fn j2j_weakly_decreasing(&self) -> bool {
        weakly(&self.series(|r| r.j2j), false)
    }

    /// Relative change of Var(log w) between the first and last converged points.
    pub fn var_relative_change(&self) -> f64 {
        let v = self.series(|r| r.var_logw);
        match (v.first(), v.last()) {
            (Some(a), Some(b)) if *a > 0.0 => (b - a) / a,
            _ => f64::NAN,
        }
    }
}

pub fn run_policy_sweep(p: &ModelParams, numerics: &Numerics, lever: Lever, values: &[f64]) -> Result<SweepResult> {
    if values.is_empty() || values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("sweep values must be strictly increasing".into()));
    }
    let records = values
        .par_iter()
        .map(|&value| {
            let q = lever.apply(p, value);
            let res = Setup::new(&q, numerics).and_then(|s| solve_with_setup(&s, &InitialDensity::Uniform, CounterfactualMode::Full));
            match res {
                Ok(eq) => SweepRecord {
                    value,
                    converged: true,
                    z_star: eq.z_star,
                    var_logw: eq.var_logw(),
                    j2j: eq.j2j_rate(),
                    mean_w: eq.mean_wage(),
                    iterations: eq.iterations,
                    error: None,
                },
                Err(e) => {
                    log::warn!("sweep {}={value}: {e}", lever.name());
                    SweepRecord {
                        value,
                        converged: false,
                        z_star: f64::NAN,
                        var_logw: f64::NAN,
                        j2j: f64::NAN,
                        mean_w: f64::NAN,
                        iterations: 0,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    Ok(SweepResult { lever, records })
}

/// (m − m̂)ᵀ diag(w) (m − m̂).
pub fn moment_distance(model: &[f64], targets: &[f64], weights: &[f64]) -> Result<f64> {
    if model.len() != targets.len() || model.len() != weights.len() {
        return Err(Error::Config("moment vectors must have equal length".into()));
    }
    if weights.iter().any(|w| *w < 0.0) {
        return Err(Error::Config("moment weights must be nonnegative".into()));
    }
    Ok(model.iter().zip(targets).zip(weights).map(|((m, t), w)| w * (m - t).powi(2)).sum())
}

/// Calibration targets; the order of fields is the moment order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Moments {
    pub never_end_share: f64,
    pub hazard_peak_years: f64,
    pub wage_growth_annual: f64,
    pub j2j_rate_annual: f64,
}

impl Moments {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.never_end_share, self.hazard_peak_years, self.wage_growth_annual, self.j2j_rate_annual]
    }

    pub const NAMES: [&'static str; 4] = ["never_end_share", "hazard_peak_years", "wage_growth_annual", "j2j_rate_annual"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsFile {
    pub targets: Moments,
    pub weights: Moments,
}

impl TargetsFile {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Threshold of the selection-only economy in closed form.
pub fn selection_boundary(p: &ModelParams) -> Result<f64> {
    let c = derive_surplus_coeffs(p)?;
    let level = p.reference_outside / p.r;
    Ok(selection_threshold(p.alpha, level, p.exogenous_vu - p.firing_cost, p.r, c.mu_z, c.sigma_z))
}

/// Benchmark spell law started at z0 above the selection threshold.
pub fn benchmark_spec(p: &ModelParams) -> Result<BenchmarkSpec> {
    let c = derive_surplus_coeffs(p)?;
    let z_star = selection_boundary(p)?;
    BenchmarkSpec::new(p.z0 - z_star, c.mu_z, c.sigma_z, p.t_ret)
}

/// Model counterparts of the calibration targets.
pub fn model_moments(p: &ModelParams, eq: &EquilibriumResult, panel: &Panel, hazard_edges: &[f64]) -> Result<Moments> {
    let never = never_end_truncated(&benchmark_spec(p)?)?;
    let h = empirical_hazard(panel, hazard_edges)?;
    let mut peak = (0.0, f64::NEG_INFINITY);
    for (i, r) in h.rates.iter().enumerate() {
        if let Some(r) = r {
            if *r > peak.1 {
                peak = (0.5 * (h.edges[i] + h.edges[i + 1]), *r);
            }
        }
    }
    Ok(Moments {
        never_end_share: never,
        hazard_peak_years: peak.0,
        wage_growth_annual: mean_wage_growth(panel),
        j2j_rate_annual: eq.j2j_rate(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moment_distance_examples() {
        assert_eq!(moment_distance(&[1.0, 2.0], &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(moment_distance(&[1.0, 3.0], &[1.0, 2.0], &[1.0, 4.0]).unwrap(), 4.0);
        assert!(moment_distance(&[1.0], &[1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn lever_names() {
        for l in [Lever::FiringCost, Lever::SearchSubsidy, Lever::VolMultiplier] {
            assert_eq!(Lever::parse(l.name()), Some(l));
        }
    }

    #[test]
    fn unsorted_sweep_rejected() {
        let p = ModelParams::default();
        assert!(run_policy_sweep(&p, &Numerics::default(), Lever::FiringCost, &[0.2, 0.1]).is_err());
    }
}
