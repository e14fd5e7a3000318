//! Outer fixed point between the worker problem and the stationary density.

use crate::config::Numerics;
use crate::error::{Error, Result};
use crate::grid::{build_grid, ActionGrid, Grid};
use crate::hjb::{free_boundary, solve_obstacle_pi_from, OfferKernel, WorkerEnv, WorkerSolution};
use crate::kolmogorov::{assemble_flux_system, solve_stationary, FlowSpec, StationaryDensity};
use crate::params::{derive_surplus_coeffs, wage_at, ModelParams, OfferKernelChoice, SurplusCoeffs, WageMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CounterfactualMode {
    /// No on-the-job search, frozen outside value, sharing-rule wages.
    Sel,
    /// Optimal search against a fixed offer atom, frozen outside value.
    SelSearch,
    /// Endogenous outside value, affine equilibrium wages, offers from m.
    Full,
}

impl CounterfactualMode {
    pub fn name(self) -> &'static str {
        match self {
            CounterfactualMode::Sel => "sel",
            CounterfactualMode::SelSearch => "sel_search",
            CounterfactualMode::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "sel" => Some(Self::Sel),
            "sel_search" => Some(Self::SelSearch),
            "full" => Some(Self::Full),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub density_change: f64,
    pub wage_change: f64,
    pub mean_surplus: f64,
    pub z_star: f64,
    pub var_logw: f64,
}

#[derive(Debug, Clone)]
pub enum InitialDensity {
    Uniform,
    /// Gaussian bump around z0 with the given width.
    SmoothedPointMass(f64),
    Given(StationaryDensity),
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub mode: CounterfactualMode,
    pub m_star: StationaryDensity,
    pub worker: WorkerSolution,
    pub env: WorkerEnv,
    pub flow: FlowSpec,
    pub wage: Vec<f64>,
    pub vu: f64,
    pub z_star: f64,
    pub iterations: usize,
    pub trace: Vec<TraceRecord>,
    /// Sup changes of one extra best-response pass from the fixed point.
    pub posthoc_density_change: f64,
    pub posthoc_wage_change: f64,
}

impl EquilibriumResult {
    pub fn var_logw(&self) -> f64 {
        dispersion(&self.m_star, &self.wage)
    }

    pub fn mean_wage(&self) -> f64 {
        self.m_star.mean(&self.wage)
    }

    /// Job-to-job moves per unit of employment under the stationary density.
    pub fn j2j_rate(&self) -> f64 {
        let dz = self.m_star.grid.dz;
        self.m_star.m.iter().zip(&self.flow.j2j).map(|(m, r)| m * r.rate).sum::<f64>() * dz
    }

    pub fn mean_surplus(&self) -> f64 {
        self.m_star.mean(&self.m_star.grid.nodes)
    }
}

/// Σ (w − w̄)² m dz.
pub fn dispersion(m: &StationaryDensity, wage: &[f64]) -> f64 {
    let mean = m.mean(wage);
    m.m.iter().zip(wage).map(|(x, w)| (w - mean).powi(2) * x).sum::<f64>() * m.grid.dz
}

fn unemployed_gain(v: &[f64], kernel: &OfferKernel, vu: f64) -> f64 {
    kernel.support().iter().map(|&(j, w)| w * (v[j] - vu).max(0.0)).sum()
}

/// Fixed point of r·VU = b + λU·Σ_j (V_j − VU)^+ ν_j dz by bisection.
pub fn outside_value(v: &[f64], m: &StationaryDensity, p: &ModelParams) -> Result<f64> {
    let kernel = OfferKernel::from_density(m, 0)?;
    outside_value_with(v, &kernel, p)
}

pub fn outside_value_with(v: &[f64], kernel: &OfferKernel, p: &ModelParams) -> Result<f64> {
    let f = |u: f64| p.r * u - p.b - p.lambda_u * unemployed_gain(v, kernel, u);
    let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lo = p.b / p.r;
    let mut hi = vmax.max(lo);
    if !(lo.is_finite() && hi.is_finite()) || f(lo) > 0.0 || f(hi) < 0.0 {
        return Err(Error::Config("outside value cannot be bracketed".into()));
    }
    if p.lambda_u == 0.0 {
        return Ok(lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // pick whichever end has the smaller residual
    Ok(if f(lo).abs() <= f(hi).abs() { lo } else { hi })
}

/// Shared discretization for one parameter vector.
#[derive(Debug, Clone)]
pub struct Setup {
    pub params: ModelParams,
    pub numerics: Numerics,
    pub grid: Grid,
    pub actions: ActionGrid,
    pub coeffs: SurplusCoeffs,
}

impl Setup {
    pub fn new(p: &ModelParams, numerics: &Numerics) -> Result<Self> {
        p.validate()?;
        let grid = build_grid(numerics.z_min, numerics.z_max, numerics.n_grid)?;
        let actions = ActionGrid::uniform(p.a_max, p.n_actions)?;
        let coeffs = derive_surplus_coeffs(p)?;
        if p.z0 <= grid.z_min || p.z0 >= grid.z_max {
            return Err(Error::Config(format!("entry surplus {} lies outside the grid", p.z0)));
        }
        Ok(Self {
            params: p.clone(),
            numerics: numerics.clone(),
            grid,
            actions,
            coeffs,
        })
    }

    pub fn wage(&self, mode: CounterfactualMode, vu: f64) -> Vec<f64> {
        let p = &self.params;
        self.grid
            .nodes
            .iter()
            .map(|&z| match mode {
                // the intercept loads the flow value of the outside option with γ
                CounterfactualMode::Full => wage_at(z, p.gamma * p.r * vu, p, WageMode::AffineEquilibrium),
                _ => wage_at(z, vu, p, WageMode::SharingExogenous),
            })
            .collect()
    }

    pub fn kernel(&self, mode: CounterfactualMode, m: &StationaryDensity, from: usize) -> Result<OfferKernel> {
        match (mode, self.params.offer_kernel) {
            (CounterfactualMode::Full, OfferKernelChoice::Stationary) => {
                OfferKernel::from_density(m, from).or_else(|_| OfferKernel::from_density(m, 0))
            }
            _ => Ok(OfferKernel::point_mass(&self.grid, self.params.z0)),
        }
    }

    pub fn env(&self, mode: CounterfactualMode, vu: f64, kernel: OfferKernel) -> WorkerEnv {
        WorkerEnv {
            grid: self.grid.clone(),
            actions: self.actions.clone(),
            coeffs: self.coeffs,
            wage: self.wage(mode, vu),
            vu,
            firing_cost: self.params.firing_cost,
            kernel,
            search_enabled: mode != CounterfactualMode::Sel,
            params: self.params.clone(),
        }
    }

    pub fn initial_density(&self, m0: &InitialDensity) -> Result<StationaryDensity> {
        match m0 {
            InitialDensity::Uniform => Ok(StationaryDensity::uniform(self.grid.clone())),
            InitialDensity::SmoothedPointMass(w) => {
                Ok(StationaryDensity::smoothed_point_mass(self.grid.clone(), self.params.z0, *w))
            }
            InitialDensity::Given(d) => {
                if d.grid != self.grid {
                    return Err(Error::Config("initial density lives on a different grid".into()));
                }
                Ok(d.clone())
            }
        }
    }
}

struct Pass {
    sol: WorkerSolution,
    env: WorkerEnv,
    flow: FlowSpec,
    induced: StationaryDensity,
}

fn best_response(
    setup: &Setup,
    mode: CounterfactualMode,
    m: &StationaryDensity,
    vu: f64,
    from: usize,
    warm: Option<&[f64]>,
) -> Result<Pass> {
    let kernel = setup.kernel(mode, m, from)?;
    let env = setup.env(mode, vu, kernel);
    let n = &setup.numerics;
    let sol = solve_obstacle_pi_from(&env, warm, n.pi_tol, n.pi_max_iter)?;
    let flow = FlowSpec::from_policy(&sol, &env, n.entry_spread_nodes)?;
    let induced = solve_stationary(&assemble_flux_system(&flow, &setup.grid))?;
    Ok(Pass { sol, env, flow, induced })
}

/// Outside value that solves r·VU = b + λU·Σ_j (V_j − VU)^+ ν_j when V is
/// itself the worker solution at VU. The residual is strictly increasing in
/// VU, so a bracketed Illinois iteration finds the unique root.
fn consistent_outside_value(
    setup: &Setup,
    kernel: &OfferKernel,
    guess: f64,
    warm: Option<&[f64]>,
) -> Result<f64> {
    let p = &setup.params;
    let n = &setup.numerics;
    let lo0 = p.b / p.r;
    if p.lambda_u == 0.0 {
        return Ok(lo0);
    }
    let mut v_prev: Option<(Vec<f64>, f64)> = warm.map(|v| (v.to_vec(), guess));
    let mut resid = |u: f64| -> Result<f64> {
        let env = setup.env(CounterfactualMode::Full, u, kernel.clone());
        let shifted: Option<Vec<f64>> = v_prev.as_ref().map(|(v, u0)| v.iter().map(|x| x + u - u0).collect());
        let sol = solve_obstacle_pi_from(&env, shifted.as_deref(), n.pi_tol, n.pi_max_iter)?;
        let g = p.r * u - p.b - p.lambda_u * unemployed_gain(&sol.v, kernel, u);
        v_prev = Some((sol.v, u));
        Ok(g)
    };
    let (mut lo, mut glo) = (lo0, resid(lo0)?);
    if glo >= 0.0 {
        return Ok(lo);
    }
    let mut step = (guess - lo0).abs().max(1.0);
    let mut hi = guess.max(lo0 + step);
    let mut ghi = resid(hi)?;
    while ghi < 0.0 {
        lo = hi;
        glo = ghi;
        step *= 2.0;
        hi = lo0 + step;
        if step > 1e12 {
            return Err(Error::NonConvergence { iterations: 0, oscillating: false, trace: Vec::new() });
        }
        ghi = resid(hi)?;
    }
    let mut side = 0i8;
    for _ in 0..200 {
        let x = (lo * ghi - hi * glo) / (ghi - glo);
        let x = if x > lo && x < hi { x } else { 0.5 * (lo + hi) };
        let gx = resid(x)?;
        if gx == 0.0 || hi - lo <= 1e-13 * x.abs().max(1.0) {
            return Ok(x);
        }
        if gx > 0.0 {
            hi = x;
            ghi = gx;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        } else {
            lo = x;
            glo = gx;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn solve_equilibrium(
    p: &ModelParams,
    numerics: &Numerics,
    m0: &InitialDensity,
    mode: CounterfactualMode,
) -> Result<EquilibriumResult> {
    let setup = Setup::new(p, numerics)?;
    solve_with_setup(&setup, m0, mode)
}

pub fn solve_with_setup(setup: &Setup, m0: &InitialDensity, mode: CounterfactualMode) -> Result<EquilibriumResult> {
    let n = &setup.numerics;
    let p = &setup.params;
    let full = mode == CounterfactualMode::Full;
    let feedback = full;
    let omega = if feedback { n.omega } else { 1.0 };
    let mut m = setup.initial_density(m0)?;
    let mut vu = if full { p.b / p.r } else { p.exogenous_vu };
    let mut from = 0usize;
    let mut warm: Option<(Vec<f64>, f64)> = None;
    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut converged = false;
    let mut oscillating = false;
    for it in 1..=n.max_outer {
        let shifted = |u: f64| -> Option<Vec<f64>> {
            warm.as_ref().map(|(v, vu_old)| v.iter().map(|x| x + u - vu_old).collect())
        };
        let vu_new = if full {
            let kernel = setup.kernel(mode, &m, from)?;
            consistent_outside_value(setup, &kernel, vu, shifted(vu).as_deref())?
        } else {
            vu
        };
        let pass = best_response(setup, mode, &m, vu_new, from, shifted(vu_new).as_deref())?;
        let m_new: Vec<f64> = m.m.iter().zip(&pass.induced.m).map(|(a, b)| (1.0 - omega) * a + omega * b).collect();
        let m_new = StationaryDensity::from_values(m_new, setup.grid.clone())?;
        let wage_old = setup.wage(mode, vu);
        let wage_new = setup.wage(mode, vu_new);
        let dm = sup_diff(&m_new.m, &m.m);
        let dw = if it == 1 { f64::INFINITY } else { sup_diff(&wage_new, &wage_old) };
        let z_star = setup.grid.nodes.get(pass.sol.k_star).copied().unwrap_or(f64::NAN);
        trace.push(TraceRecord {
            iter: it,
            density_change: dm,
            wage_change: dw,
            mean_surplus: m_new.mean(&setup.grid.nodes),
            z_star,
            var_logw: dispersion(&m_new, &wage_new),
        });
        log::debug!("outer {it}: dm={dm:.3e} dw={dw:.3e} z*={z_star:.5}");
        from = pass.sol.k_star;
        warm = Some((pass.sol.v, vu_new));
        m = m_new;
        vu = vu_new;
        if dm < n.eps_m && dw < n.eps_w {
            converged = true;
            break;
        }
        let w = n.oscillation_window;
        if feedback && w >= 2 && trace.len() > w {
            let tail = &trace[trace.len() - w..];
            if tail.windows(2).all(|x| x[1].density_change >= x[0].density_change) && tail[0].density_change > 0.0 {
                oscillating = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: trace.len(),
            oscillating,
            trace,
        });
    }
    // one extra pass from the fixed point
    let shifted: Option<Vec<f64>> = warm.as_ref().map(|(v, vu_old)| v.iter().map(|x| x + vu - vu_old).collect());
    let vu_check = if full {
        let kernel = setup.kernel(mode, &m, from)?;
        consistent_outside_value(setup, &kernel, vu, shifted.as_deref())?
    } else {
        vu
    };
    let pass = best_response(setup, mode, &m, vu, from, shifted.as_deref())?;
    let posthoc_density_change = sup_diff(&pass.induced.m, &m.m);
    let posthoc_wage_change = sup_diff(&setup.wage(mode, vu_check), &setup.wage(mode, vu));
    if posthoc_density_change > 10.0 * n.eps_m.max(1e-13) || posthoc_wage_change > 10.0 * n.eps_w.max(1e-13) {
        log::warn!(
            "post-hoc pass moved the fixed point: density {posthoc_density_change:.3e}, wage {posthoc_wage_change:.3e}"
        );
        return Err(Error::NonConvergence {
            iterations: trace.len(),
            oscillating: false,
            trace,
        });
    }
    let z_star = free_boundary(&pass.sol, &setup.grid)?.z_star;
    let wage = setup.wage(mode, vu);
    Ok(EquilibriumResult {
        mode,
        m_star: m,
        worker: pass.sol,
        env: pass.env,
        flow: pass.flow,
        wage,
        vu,
        z_star,
        iterations: trace.len(),
        trace,
        posthoc_density_change,
        posthoc_wage_change,
    })
}
