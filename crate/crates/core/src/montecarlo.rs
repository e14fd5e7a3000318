//! Spell simulation under solved policies.
//!
//! Each simulated worker enters a match at z0 and is followed across
//! job-to-job moves until the surplus reaches the separation barrier or
//! the horizon runs out. One `SpellRecord` is written per job.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::hjb::{OfferKernel, WorkerEnv, WorkerSolution};
use crate::params::{arrival_rate, SurplusCoeffs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_spells: usize,
    /// Step in years.
    pub dt: f64,
    pub seed: u64,
    pub max_years: f64,
    /// Brownian-bridge test for barrier crossings between steps.
    pub bridge_correction: bool,
    /// Wage snapshots are taken at tenures interval/2, 3·interval/2, ...
    pub snapshot_interval: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        crate::config::Config::default().sim_config()
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_spells < 1 {
            return Err(Error::Config("n_spells must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt <= 1.0 / 12.0 + 1e-12) {
            return Err(Error::Config(format!("simulation step must lie in (0, 1/12], got {}", self.dt)));
        }
        if !(self.max_years > 0.0) || !(self.snapshot_interval > 0.0) {
            return Err(Error::Config("max_years and snapshot interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EndReason {
    Boundary,
    J2j,
    Censored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpellRecord {
    pub worker: usize,
    /// Job tenure in years at the end of the record.
    pub duration: f64,
    /// Number of job-to-job moves before this job.
    pub j2j_moves: u32,
    /// (tenure, wage) snapshots.
    pub wage_path: Vec<(f64, f64)>,
    pub end_reason: EndReason,
}

impl SpellRecord {
    pub fn censored(&self) -> bool {
        self.end_reason == EndReason::Censored
    }
}

/// Policy objects the simulator needs, detached from the solver types.
#[derive(Debug, Clone)]
pub struct SimPolicy {
    pub grid: Grid,
    pub coeffs: SurplusCoeffs,
    pub z0: f64,
    pub v: Vec<f64>,
    pub arrival: Vec<f64>,
    pub wage: Vec<f64>,
    /// Matches end once z falls to this level.
    pub barrier: f64,
    pub firing_cost: f64,
    pub kernel: OfferKernel,
}

impl SimPolicy {
    /// Barrier at the highest stopping node, where the interpolated value
    /// first touches the obstacle.
    pub fn from_solution(sol: &WorkerSolution, env: &WorkerEnv) -> Result<Self> {
        let g = &env.grid;
        if sol.v.len() != g.k || env.wage.len() != g.k {
            return Err(Error::Config("policy and grid lengths differ".into()));
        }
        if sol.k_star >= g.k {
            return Err(Error::NoBoundary);
        }
        let barrier = if sol.k_star == 0 { f64::NEG_INFINITY } else { g.nodes[sol.k_star - 1] };
        let arrival = sol
            .a_opt
            .iter()
            .map(|&a| if env.search_enabled { arrival_rate(a, &env.params) } else { 0.0 })
            .collect();
        Ok(Self {
            grid: g.clone(),
            coeffs: env.coeffs,
            z0: env.params.z0,
            v: sol.v.clone(),
            arrival,
            wage: env.wage.clone(),
            barrier,
            firing_cost: env.firing_cost,
            kernel: env.kernel.clone(),
        })
    }

    /// No search, linear wage, absorbing barrier: the benchmark setting.
    pub fn pure_stopping(grid: Grid, coeffs: SurplusCoeffs, z0: f64, barrier: f64) -> Self {
        let n = grid.k;
        let wage = grid.nodes.clone();
        Self {
            v: grid.nodes.clone(),
            kernel: OfferKernel::point_mass(&grid, z0),
            grid,
            coeffs,
            z0,
            arrival: vec![0.0; n],
            wage,
            barrier,
            firing_cost: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub records: Vec<SpellRecord>,
    /// Simulation steps spent at each grid node.
    pub occupancy: Vec<u64>,
    pub dt: f64,
    pub n_spells: usize,
    pub max_years: f64,
    pub grid: Grid,
}

impl Panel {
    pub fn person_years(&self) -> f64 {
        self.records.iter().map(|r| r.duration).sum()
    }

    /// Occupation-time density on the grid, normalized to unit mass.
    pub fn histogram_density(&self) -> Vec<f64> {
        let total: u64 = self.occupancy.iter().sum();
        let dz = self.grid.dz;
        self.occupancy.iter().map(|&c| c as f64 / (total.max(1) as f64 * dz)).collect()
    }
}

struct ChunkOut {
    records: Vec<SpellRecord>,
    occupancy: Vec<u64>,
}

fn draw_offer(cdf: &[(usize, f64)], u: f64) -> usize {
    let i = cdf.partition_point(|c| c.1 <= u).min(cdf.len() - 1);
    cdf[i].0
}

fn simulate_worker(policy: &SimPolicy, sc: &SimConfig, cdf: &[(usize, f64)], worker: usize, out: &mut ChunkOut) {
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    rng.set_stream(worker as u64);
    let g = &policy.grid;
    let mu = policy.coeffs.mu_z;
    let sig = policy.coeffs.sigma_z;
    let sqdt = sc.dt.sqrt();
    let bridge_scale = 2.0 / (sig * sig * sc.dt);
    let steps = (sc.max_years / sc.dt).round() as u64;
    let mut z = policy.z0;
    let mut tenure_steps: u64 = 0;
    let mut moves = 0u32;
    let mut path: Vec<(f64, f64)> = Vec::new();
    let mut next_snap = 0.5 * sc.snapshot_interval;
    for step in 0..steps {
        out.occupancy[g.nearest_index(z)] += 1;
        let mut z_new = z + mu * sc.dt + sig * sqdt * rng.sample::<f64, _>(StandardNormal);
        if z_new > g.z_max {
            z_new = 2.0 * g.z_max - z_new;
        }
        if policy.barrier == f64::NEG_INFINITY && z_new < g.z_min {
            z_new = 2.0 * g.z_min - z_new;
        }
        tenure_steps += 1;
        let tenure = tenure_steps as f64 * sc.dt;
        let u_bridge: f64 = rng.random();
        let hit = z_new <= policy.barrier
            || (sc.bridge_correction
                && policy.barrier.is_finite()
                && u_bridge < (-(z - policy.barrier) * (z_new - policy.barrier) * bridge_scale).exp());
        if hit {
            out.records.push(SpellRecord {
                worker,
                duration: tenure,
                j2j_moves: moves,
                wage_path: std::mem::take(&mut path),
                end_reason: EndReason::Boundary,
            });
            return;
        }
        z = z_new;
        while tenure >= next_snap - 1e-9 {
            path.push((next_snap, g.interp(&policy.wage, z)));
            next_snap += sc.snapshot_interval;
        }
        let lam = policy.arrival[g.nearest_index(z)];
        let u_arr: f64 = rng.random();
        if lam > 0.0 && u_arr < -(-lam * sc.dt).exp_m1() {
            let j = draw_offer(cdf, rng.random());
            if policy.v[j] - policy.firing_cost > g.interp(&policy.v, z) && step + 1 < steps {
                out.records.push(SpellRecord {
                    worker,
                    duration: tenure,
                    j2j_moves: moves,
                    wage_path: std::mem::take(&mut path),
                    end_reason: EndReason::J2j,
                });
                moves += 1;
                z = g.nodes[j];
                tenure_steps = 0;
                next_snap = 0.5 * sc.snapshot_interval;
            }
        }
    }
    out.records.push(SpellRecord {
        worker,
        duration: tenure_steps as f64 * sc.dt,
        j2j_moves: moves,
        wage_path: path,
        end_reason: EndReason::Censored,
    });
}

/// Simulates `sc.n_spells` workers. Results depend only on the seed and the
/// configuration, never on the thread count.
pub fn simulate_panel(policy: &SimPolicy, sc: &SimConfig) -> Result<Panel> {
    sc.validate()?;
    let g = &policy.grid;
    if policy.v.len() != g.k || policy.arrival.len() != g.k || policy.wage.len() != g.k {
        return Err(Error::Config("policy vectors do not match the grid".into()));
    }
    if !(policy.coeffs.sigma_z > 0.0) {
        return Err(Error::InvalidParameters("simulation needs a positive volatility".into()));
    }
    let mut cdf = Vec::new();
    let mut acc = 0.0;
    for (j, w) in policy.kernel.support() {
        acc += w;
        cdf.push((j, acc));
    }
    if let Some(last) = cdf.last_mut() {
        last.1 = f64::INFINITY;
    }
    let n_chunks = sc.n_spells.div_ceil(CHUNK);
    let chunks: Vec<ChunkOut> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut out = ChunkOut {
                records: Vec::new(),
                occupancy: vec![0; g.k],
            };
            for w in c * CHUNK..((c + 1) * CHUNK).min(sc.n_spells) {
                simulate_worker(policy, sc, &cdf, w, &mut out);
            }
            out
        })
        .collect();
    let mut records = Vec::new();
    let mut occupancy = vec![0u64; g.k];
    for c in chunks {
        records.extend(c.records);
        for (o, x) in occupancy.iter_mut().zip(c.occupancy) {
            *o += x;
        }
    }
    Ok(Panel {
        records,
        occupancy,
        dt: sc.dt,
        n_spells: sc.n_spells,
        max_years: sc.max_years,
        grid: g.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HazardTable {
    pub edges: Vec<f64>,
    /// Events per year at risk; `None` where nobody was at risk.
    pub rates: Vec<Option<f64>>,
    pub events: Vec<u64>,
    pub exposure: Vec<f64>,
}

impl HazardTable {
    pub fn std_error(&self, i: usize) -> Option<f64> {
        (self.exposure[i] > 0.0).then(|| (self.events[i] as f64).sqrt() / self.exposure[i])
    }
}

fn hazard_for(panel: &Panel, edges: &[f64], counts: impl Fn(EndReason) -> bool) -> Result<HazardTable> {
    if panel.records.is_empty() {
        return Err(Error::Domain("empty panel".into()));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("hazard edges must be increasing".into()));
    }
    let nb = edges.len() - 1;
    let mut events = vec![0u64; nb];
    let mut exposure = vec![0.0; nb];
    for r in &panel.records {
        for b in 0..nb {
            let (lo, hi) = (edges[b], edges[b + 1]);
            if r.duration > lo {
                exposure[b] += r.duration.min(hi) - lo;
            }
            if counts(r.end_reason) && r.duration > lo && r.duration <= hi {
                events[b] += 1;
            }
        }
    }
    let rates = (0..nb)
        .map(|b| (exposure[b] > 0.0).then(|| events[b] as f64 / exposure[b]))
        .collect();
    Ok(HazardTable {
        edges: edges.to_vec(),
        rates,
        events,
        exposure,
    })
}

/// Separation hazard by tenure: jobs ending at the barrier. Job-to-job
/// moves and censoring contribute exposure only.
pub fn empirical_hazard(panel: &Panel, edges: &[f64]) -> Result<HazardTable> {
    hazard_for(panel, edges, |e| e == EndReason::Boundary)
}

/// Hazard of any job ending (separation or job-to-job move).
pub fn empirical_job_ending_hazard(panel: &Panel, edges: &[f64]) -> Result<HazardTable> {
    hazard_for(panel, edges, |e| e != EndReason::Censored)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TenureVariance {
    pub lo: f64,
    pub hi: f64,
    pub var: Option<f64>,
    pub var_with_noise: Option<f64>,
    pub count: usize,
    pub low_confidence: bool,
}

pub const MIN_BIN_COUNT: usize = 30;

/// Cross-sectional variance of wage snapshots within tenure bins.
pub fn variance_by_tenure(panel: &Panel, edges: &[f64], sigma_u2: f64) -> Vec<TenureVariance> {
    let nb = edges.len().saturating_sub(1);
    let mut sums = vec![(0usize, 0.0f64, 0.0f64); nb];
    for r in &panel.records {
        for &(t, w) in &r.wage_path {
            if let Some(b) = (0..nb).find(|&b| t >= edges[b] && t < edges[b + 1]) {
                sums[b].0 += 1;
                sums[b].1 += w;
            }
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| if s.0 > 0 { s.1 / s.0 as f64 } else { 0.0 }).collect();
    for r in &panel.records {
        for &(t, w) in &r.wage_path {
            if let Some(b) = (0..nb).find(|&b| t >= edges[b] && t < edges[b + 1]) {
                sums[b].2 += (w - means[b]).powi(2);
            }
        }
    }
    (0..nb)
        .map(|b| {
            let n = sums[b].0;
            let var = (n > 0).then(|| sums[b].2 / n as f64);
            TenureVariance {
                lo: edges[b],
                hi: edges[b + 1],
                var,
                var_with_noise: var.map(|v| v + sigma_u2),
                count: n,
                low_confidence: n < MIN_BIN_COUNT,
            }
        })
        .collect()
}

/// Job-to-job moves per person-year.
pub fn j2j_rate(panel: &Panel) -> f64 {
    let moves = panel.records.iter().filter(|r| r.end_reason == EndReason::J2j).count();
    let py = panel.person_years();
    if py > 0.0 {
        moves as f64 / py
    } else {
        0.0
    }
}

/// Average change between consecutive annual wage snapshots within a job.
pub fn mean_wage_growth(panel: &Panel) -> f64 {
    let mut n = 0usize;
    let mut s = 0.0;
    for r in &panel.records {
        for w in r.wage_path.windows(2) {
            s += (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            n += 1;
        }
    }
    if n > 0 {
        s / n as f64
    } else {
        0.0
    }
}

/// Fraction of simulated workers whose employment spell (across
/// job-to-job moves) has not ended at the barrier by `horizon` years.
pub fn survival_fraction(panel: &Panel, horizon: f64) -> f64 {
    let mut workers = 0usize;
    let mut alive = 0usize;
    let mut i = 0;
    let recs = &panel.records;
    while i < recs.len() {
        let w = recs[i].worker;
        let mut total = 0.0;
        let mut separated = false;
        while i < recs.len() && recs[i].worker == w {
            total += recs[i].duration;
            separated = recs[i].end_reason == EndReason::Boundary;
            i += 1;
        }
        workers += 1;
        if !(separated && total <= horizon) {
            alive += 1;
        }
    }
    alive as f64 / workers.max(1) as f64
}
