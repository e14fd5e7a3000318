//! Worker obstacle problem: policy iteration, backward-Euler value iteration
//! and free-boundary extraction.

use crate::error::{Error, Result};
use crate::grid::{assemble_generator, ActionGrid, Grid, TridiagonalOperator};
use crate::kolmogorov::StationaryDensity;
use crate::linalg::{brennan_schwartz, DenseMatrix};
use crate::params::{arrival_rate, search_cost_unchecked, ModelParams, SurplusCoeffs};

/// Distribution of outside offers on the grid, as probability weights
/// (density times dz) summing to one.
#[derive(Debug, Clone, PartialEq)]
pub enum OfferKernel {
    PointMass { node: usize },
    Weights(Vec<f64>),
}

impl OfferKernel {
    pub fn point_mass(g: &Grid, z: f64) -> Self {
        OfferKernel::PointMass { node: g.nearest_index(z) }
    }

    /// Offer weights proportional to `m` on nodes `>= from`.
    pub fn from_density(m: &StationaryDensity, from: usize) -> Result<Self> {
        let dz = m.grid.dz;
        let mut w: Vec<f64> = m.m.iter().enumerate().map(|(k, &x)| if k >= from { x * dz } else { 0.0 }).collect();
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateFlow("offer density has no mass on the continuation region".into()));
        }
        w.iter_mut().for_each(|x| *x /= total);
        Ok(OfferKernel::Weights(w))
    }

    /// Nonzero (node, weight) pairs.
    pub fn support(&self) -> Vec<(usize, f64)> {
        match self {
            OfferKernel::PointMass { node } => vec![(*node, 1.0)],
            OfferKernel::Weights(w) => w.iter().copied().enumerate().filter(|&(_, x)| x > 0.0).collect(),
        }
    }
}

/// Per-node offer statistics under a value vector.
#[derive(Debug, Clone)]
pub(crate) struct OfferStats {
    /// Σ_j w_j (V_j − F − V_k)^+
    pub gain: Vec<f64>,
    /// Σ_j w_j 1{V_j − F > V_k}
    pub accept: Vec<f64>,
}

/// Support sorted by value, with suffix sums for fast threshold queries.
pub(crate) struct RankedOffers {
    values: Vec<f64>,
    nodes: Vec<usize>,
    weights: Vec<f64>,
    suffix_w: Vec<f64>,
    suffix_wv: Vec<f64>,
}

impl RankedOffers {
    pub fn new(v: &[f64], kernel: &OfferKernel) -> Self {
        let mut sup = kernel.support();
        sup.sort_by(|a, b| v[a.0].total_cmp(&v[b.0]).then(a.0.cmp(&b.0)));
        let n = sup.len();
        let mut suffix_w = vec![0.0; n + 1];
        let mut suffix_wv = vec![0.0; n + 1];
        for i in (0..n).rev() {
            let (j, w) = sup[i];
            suffix_w[i] = suffix_w[i + 1] + w;
            suffix_wv[i] = suffix_wv[i + 1] + w * v[j];
        }
        Self {
            values: sup.iter().map(|s| v[s.0]).collect(),
            nodes: sup.iter().map(|s| s.0).collect(),
            weights: sup.iter().map(|s| s.1).collect(),
            suffix_w,
            suffix_wv,
        }
    }

    /// First sorted position whose value strictly exceeds `t`.
    #[inline]
    pub fn first_above(&self, t: f64) -> usize {
        self.values.partition_point(|&x| x <= t)
    }

    /// (gain, acceptance probability) for a worker whose reservation is `t`.
    #[inline]
    pub fn query(&self, t: f64) -> (f64, f64) {
        let i = self.first_above(t);
        let p = self.suffix_w[i];
        ((self.suffix_wv[i] - t * p).max(0.0), p)
    }

    /// Accepted (node, weight) pairs for reservation `t`.
    pub fn accepted(&self, t: f64) -> impl Iterator<Item = (usize, f64)> + '_ {
        let i = self.first_above(t);
        self.nodes[i..].iter().copied().zip(self.weights[i..].iter().copied())
    }
}

pub(crate) fn offer_stats(v: &[f64], kernel: &OfferKernel, firing_cost: f64) -> (OfferStats, RankedOffers) {
    let ranked = RankedOffers::new(v, kernel);
    let mut gain = vec![0.0; v.len()];
    let mut accept = vec![0.0; v.len()];
    for k in 0..v.len() {
        let (g, p) = ranked.query(v[k] + firing_cost);
        gain[k] = g;
        accept[k] = p;
    }
    (OfferStats { gain, accept }, ranked)
}

/// Everything the worker problem needs.
#[derive(Debug, Clone)]
pub struct WorkerEnv {
    pub grid: Grid,
    pub actions: ActionGrid,
    pub coeffs: SurplusCoeffs,
    pub wage: Vec<f64>,
    pub vu: f64,
    pub firing_cost: f64,
    pub kernel: OfferKernel,
    /// When false the arrival rate is identically zero.
    pub search_enabled: bool,
    pub params: ModelParams,
}

impl WorkerEnv {
    pub fn obstacle(&self) -> f64 {
        self.vu - self.firing_cost
    }

    pub fn validate(&self) -> Result<()> {
        if self.wage.len() != self.grid.k {
            return Err(Error::Config("wage vector length differs from grid".into()));
        }
        if self.wage.iter().any(|w| !w.is_finite()) || !self.vu.is_finite() {
            return Err(Error::Config("wage and outside value must be finite".into()));
        }
        if let OfferKernel::Weights(w) = &self.kernel {
            if w.len() != self.grid.k || ((w.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
                return Err(Error::Config("offer weights must match the grid and sum to one".into()));
            }
        }
        if let OfferKernel::PointMass { node } = self.kernel {
            if node >= self.grid.k {
                return Err(Error::Config("offer atom outside the grid".into()));
            }
        }
        Ok(())
    }

    pub fn generator(&self) -> Result<TridiagonalOperator> {
        let n = self.grid.k;
        let s2 = self.coeffs.sigma_z * self.coeffs.sigma_z;
        assemble_generator(&vec![self.coeffs.mu_z; n], &vec![s2; n], &self.grid)
    }

    fn action_tables(&self) -> (Vec<f64>, Vec<f64>) {
        let lam = self
            .actions
            .values
            .iter()
            .map(|&a| if self.search_enabled { arrival_rate(a, &self.params) } else { 0.0 })
            .collect();
        let cost = self.actions.values.iter().map(|&a| search_cost_unchecked(a, &self.params)).collect();
        (lam, cost)
    }
}

/// λ(a)·Σ_j max(V_j − F − V_k, 0)·ν_j dz. The firing cost also taxes quits.
pub fn offer_gain(k: usize, v: &[f64], env: &WorkerEnv, a: f64) -> f64 {
    let lam = if env.search_enabled { arrival_rate(a, &env.params) } else { 0.0 };
    if lam == 0.0 {
        return 0.0;
    }
    let t = v[k] + env.firing_cost;
    lam * env.kernel.support().iter().map(|&(j, w)| w * (v[j] - t).max(0.0)).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerSolution {
    pub v: Vec<f64>,
    pub a_opt: Vec<f64>,
    /// Index into the action grid for each node.
    pub action_index: Vec<usize>,
    pub continue_mask: Vec<bool>,
    pub k_star: usize,
    pub iterations: usize,
    /// Sup norm of min(rV − H, V − obstacle) at the returned V.
    pub residual: f64,
    /// Per-iteration convergence measure (residual for PI, step change for VI).
    pub history: Vec<f64>,
}

struct Pointwise {
    a_idx: Vec<usize>,
    /// rV − H at the maximizing action
    cont_res: Vec<f64>,
    stats: OfferStats,
    ranked: RankedOffers,
}

fn pointwise(env: &WorkerEnv, gen: &TridiagonalOperator, lam: &[f64], cost: &[f64], v: &[f64]) -> Pointwise {
    let r = env.params.r;
    let (stats, ranked) = offer_stats(v, &env.kernel, env.firing_cost);
    let n = v.len();
    let mut a_idx = vec![0; n];
    let mut cont_res = vec![0.0; n];
    for k in 0..n {
        let g = stats.gain[k];
        let mut best = f64::NEG_INFINITY;
        let mut bi = 0;
        for i in 0..lam.len() {
            let val = lam[i] * g - cost[i];
            if val > best {
                best = val;
                bi = i;
            }
        }
        a_idx[k] = bi;
        let h = env.wage[k] + best + gen.apply_row(k, v);
        cont_res[k] = r * v[k] - h;
    }
    Pointwise { a_idx, cont_res, stats, ranked }
}

fn obstacle_eps(g: f64) -> f64 {
    1e-11 * g.abs().max(1.0)
}

fn finalize(env: &WorkerEnv, v: Vec<f64>, iterations: usize, history: Vec<f64>) -> Result<WorkerSolution> {
    let gen = env.generator()?;
    let (lam, cost) = env.action_tables();
    let pw = pointwise(env, &gen, &lam, &cost, &v);
    let g = env.obstacle();
    let residual = v
        .iter()
        .zip(&pw.cont_res)
        .map(|(&x, &c)| (x - g).min(c).abs())
        .fold(0.0, f64::max);
    let eps = obstacle_eps(g);
    let continue_mask: Vec<bool> = v.iter().map(|&x| x - g > eps).collect();
    let k_star = continue_mask.iter().position(|&c| c).unwrap_or(v.len());
    let a_opt = pw.a_idx.iter().map(|&i| env.actions.values[i]).collect();
    Ok(WorkerSolution {
        v,
        a_opt,
        action_index: pw.a_idx,
        continue_mask,
        k_star,
        iterations,
        residual,
        history,
    })
}

pub fn solve_obstacle_pi(env: &WorkerEnv, tol: f64, max_iter: usize) -> Result<WorkerSolution> {
    solve_obstacle_pi_from(env, None, tol, max_iter)
}

/// Howard policy iteration on the obstacle problem. Each evaluation step
/// freezes the stop set, the search action and the set of accepted offers,
/// and solves the resulting linear system exactly.
pub fn solve_obstacle_pi_from(
    env: &WorkerEnv,
    v0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<WorkerSolution> {
    env.validate()?;
    let n = env.grid.k;
    let g = env.obstacle();
    let r = env.params.r;
    let gen = env.generator()?;
    let (lam, cost) = env.action_tables();
    let mut v: Vec<f64> = match v0 {
        Some(x) if x.len() == n => x.to_vec(),
        _ => vec![g; n],
    };
    let mut history = Vec::new();
    let mut last_res = f64::INFINITY;
    let mut prev_policy: Option<(Vec<bool>, Vec<usize>)> = None;
    for it in 0..=max_iter {
        let pw = pointwise(env, &gen, &lam, &cost, &v);
        let res = v
            .iter()
            .zip(&pw.cont_res)
            .map(|(&x, &c)| (x - g).min(c).abs())
            .fold(0.0, f64::max);
        history.push(res);
        last_res = res;
        if it > 0 && res <= tol {
            return finalize(env, v, it, history);
        }
        if it == max_iter {
            break;
        }
        let stop: Vec<bool> = (0..n).map(|k| v[k] - g < pw.cont_res[k]).collect();
        let policy = (stop.clone(), pw.a_idx.clone());
        if prev_policy.as_ref() == Some(&policy) && it > 1 {
            // evaluation cannot move further; the residual is as small as
            // the linear solve allows
            if res <= 1e3 * tol {
                return finalize(env, v, it, history);
            }
        }
        prev_policy = Some(policy);

        let mut a = DenseMatrix::zeros(n);
        let mut rhs = vec![0.0; n];
        for k in 0..n {
            if stop[k] {
                a.set(k, k, 1.0);
                rhs[k] = g;
                continue;
            }
            let l = lam[pw.a_idx[k]];
            let p = pw.stats.accept[k];
            a.set(k, k, r + l * p - gen.diag[k]);
            if k > 0 {
                a.add(k, k - 1, -gen.lower[k - 1]);
            }
            if k + 1 < n {
                a.add(k, k + 1, -gen.upper[k]);
            }
            if l > 0.0 && p > 0.0 {
                for (j, w) in pw.ranked.accepted(v[k] + env.firing_cost) {
                    a.add(k, j, -l * w);
                }
            }
            rhs[k] = env.wage[k] - cost[pw.a_idx[k]] - l * env.firing_cost * p;
        }
        v = a.solve(&rhs)?;
    }
    Err(Error::IterationLimit {
        solver: "policy iteration",
        iterations: max_iter,
        residual: last_res,
    })
}

/// Damped backward-Euler value iteration. The local part of each step is
/// implicit and the obstacle is imposed by a projected tridiagonal solve;
/// offer inflows are taken from the previous iterate.
pub fn solve_obstacle_vi(env: &WorkerEnv, dt: f64, theta: f64, tol: f64, max_iter: usize) -> Result<WorkerSolution> {
    env.validate()?;
    if !(dt > 0.0) || !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::Config("value iteration needs dt > 0 and theta in (0,1]".into()));
    }
    let n = env.grid.k;
    let g = env.obstacle();
    let r = env.params.r;
    let gen = env.generator()?;
    let (lam, cost) = env.action_tables();
    let obstacle = vec![g; n];
    let mut v = vec![g; n];
    let mut history = Vec::new();
    let mut prev_change = f64::INFINITY;
    for it in 1..=max_iter {
        let pw = pointwise(env, &gen, &lam, &cost, &v);
        let mut op = TridiagonalOperator {
            lower: gen.lower.iter().map(|x| -x).collect(),
            diag: vec![0.0; n],
            upper: gen.upper.iter().map(|x| -x).collect(),
        };
        let mut rhs = vec![0.0; n];
        for k in 0..n {
            let l = lam[pw.a_idx[k]];
            let p = pw.stats.accept[k];
            op.diag[k] = r + 1.0 / dt + l * p - gen.diag[k];
            let inflow: f64 = if l > 0.0 && p > 0.0 {
                pw.ranked.accepted(v[k] + env.firing_cost).map(|(j, w)| w * v[j]).sum()
            } else {
                0.0
            };
            rhs[k] = env.wage[k] - cost[pw.a_idx[k]] - l * env.firing_cost * p + l * inflow + v[k] / dt;
        }
        let y = brennan_schwartz(&op, &rhs, &obstacle)?;
        let mut change = 0.0f64;
        for k in 0..n {
            let nv = (1.0 - theta) * v[k] + theta * y[k];
            change = change.max((nv - v[k]).abs());
            v[k] = nv;
        }
        history.push(change);
        let rate = change / prev_change;
        prev_change = change;
        let err_bound = if rate < 1.0 { change * rate / (1.0 - rate) } else { f64::INFINITY };
        if change == 0.0 || (change <= tol && err_bound <= tol) {
            return finalize(env, v, it, history);
        }
    }
    Err(Error::IterationLimit {
        solver: "value iteration",
        iterations: max_iter,
        residual: prev_change,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeBoundary {
    pub z_star: f64,
    pub index: usize,
    /// Continuation already optimal at the lowest node.
    pub truncated: bool,
}

pub fn free_boundary(sol: &WorkerSolution, g: &Grid) -> Result<FreeBoundary> {
    if sol.k_star >= g.k {
        return Err(Error::NoBoundary);
    }
    let truncated = sol.k_star == 0;
    if truncated {
        log::warn!("continuation optimal at z_min = {}; the stopping region lies below the grid", g.z_min);
    }
    Ok(FreeBoundary {
        z_star: g.nodes[sol.k_star],
        index: sol.k_star,
        truncated,
    })
}

/// |forward difference of V| at the first continuation node; zero when
/// there is no continuation region.
pub fn smooth_fit_residual(sol: &WorkerSolution, g: &Grid) -> Result<f64> {
    let k = sol.k_star;
    if k >= g.k {
        return Ok(0.0);
    }
    let d = if k + 1 < g.k {
        sol.v[k + 1] - sol.v[k]
    } else {
        sol.v[k] - sol.v[k - 1]
    };
    Ok(d.abs() / g.dz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::params::derive_surplus_coeffs;

    fn env_with(wage: Vec<f64>, vu: f64, mu: f64, search: bool) -> WorkerEnv {
        let grid = build_grid(-1.0, 1.0, wage.len()).unwrap();
        let params = ModelParams::default();
        let mut coeffs = derive_surplus_coeffs(&params).unwrap();
        coeffs.mu_z = mu;
        WorkerEnv {
            kernel: OfferKernel::point_mass(&grid, 0.0),
            grid,
            actions: ActionGrid::uniform(1.0, 5).unwrap(),
            coeffs,
            wage,
            vu,
            firing_cost: 0.0,
            search_enabled: search,
            params,
        }
    }

    #[test]
    fn flat_continuation() {
        let env = env_with(vec![0.2; 41], 1.0, 0.0, false);
        let w0r = 0.2 / env.params.r;
        for sol in [
            solve_obstacle_pi(&env, 1e-10, 500).unwrap(),
            solve_obstacle_vi(&env, 10.0, 1.0, 1e-11, 200_000).unwrap(),
        ] {
            assert_eq!(sol.k_star, 0);
            for x in &sol.v {
                assert!((x - w0r).abs() < 1e-8, "{x} vs {w0r}");
            }
        }
    }

    #[test]
    fn global_stopping() {
        let env = env_with(vec![0.01; 41], 1.0, 0.0, true);
        let sol = solve_obstacle_pi(&env, 1e-10, 500).unwrap();
        assert_eq!(sol.k_star, 41);
        assert!(sol.v.iter().all(|&x| x == 1.0));
        assert!(matches!(free_boundary(&sol, &env.grid), Err(Error::NoBoundary)));
        assert_eq!(smooth_fit_residual(&sol, &env.grid).unwrap(), 0.0);
        let sol = solve_obstacle_vi(&env, 10.0, 1.0, 1e-10, 1000).unwrap();
        assert_eq!(sol.k_star, 41);
    }

    #[test]
    fn global_continuation_truncates() {
        let env = env_with(vec![0.2; 21], 1.0, 0.0, false);
        let sol = solve_obstacle_pi(&env, 1e-10, 500).unwrap();
        let fb = free_boundary(&sol, &env.grid).unwrap();
        assert!(fb.truncated);
        assert_eq!(fb.index, 0);
    }

    #[test]
    fn offer_gain_examples() {
        let n = 11;
        let mut env = env_with(vec![0.0; n], 0.0, 0.0, true);
        let v: Vec<f64> = (0..n).map(|k| k as f64 * 0.3).collect();
        for k in 0..n {
            assert_eq!(offer_gain(k, &v, &env, 0.0), 0.0);
            assert_eq!(offer_gain(k, &vec![2.0; n], &env, 0.7), 0.0);
        }
        env.kernel = OfferKernel::PointMass { node: n - 1 };
        let a = 0.5;
        let lam = arrival_rate(a, &env.params);
        for k in 0..n - 1 {
            let want = lam * (v[n - 1] - v[k]);
            assert!((offer_gain(k, &v, &env, a) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn ranked_query_matches_direct() {
        let n = 30;
        let env = env_with(vec![0.0; n], 0.0, 0.0, true);
        let w: Vec<f64> = (0..n).map(|k| (k * 7 % 11) as f64 + 1.0).collect();
        let s: f64 = w.iter().sum();
        let kernel = OfferKernel::Weights(w.iter().map(|x| x / s).collect());
        let v: Vec<f64> = (0..n).map(|k| ((k * 13 % 17) as f64).sin()).collect();
        let (stats, _) = offer_stats(&v, &kernel, 0.1);
        for k in 0..n {
            let mut g = 0.0;
            let mut p = 0.0;
            for (j, wj) in kernel.support() {
                if v[j] - 0.1 > v[k] {
                    g += wj * (v[j] - 0.1 - v[k]);
                    p += wj;
                }
            }
            assert!((stats.gain[k] - g).abs() < 1e-12);
            assert!((stats.accept[k] - p).abs() < 1e-12);
        }
        let _ = env;
    }

    #[test]
    fn manufactured_kink() {
        let g = build_grid(0.0, 1.0, 11).unwrap();
        let v: Vec<f64> = g.nodes.iter().map(|z| (z - 0.4f64).max(0.0)).collect();
        let sol = WorkerSolution {
            continue_mask: v.iter().map(|&x| x > 0.0).collect(),
            k_star: 5,
            a_opt: vec![0.0; 11],
            action_index: vec![0; 11],
            iterations: 0,
            residual: 0.0,
            history: vec![],
            v,
        };
        assert!((smooth_fit_residual(&sol, &g).unwrap() - 1.0).abs() < 1e-12);
    }
}
