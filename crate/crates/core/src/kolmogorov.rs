//! Stationary forward equation in conservative flux form.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::hjb::{RankedOffers, WorkerEnv, WorkerSolution};
use crate::linalg::DenseMatrix;
use crate::params::arrival_rate;

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDensity {
    pub m: Vec<f64>,
    pub grid: Grid,
    /// Entry flow per unit of active mass (zero for a closed system).
    pub entry_flow: f64,
    /// Relative residual of the flux equations before normalization.
    pub residual: f64,
}

impl StationaryDensity {
    /// Normalizes `m` to unit mass.
    pub fn from_values(m: Vec<f64>, grid: Grid) -> Result<Self> {
        let total: f64 = m.iter().sum::<f64>() * grid.dz;
        if !(total > 0.0) || m.iter().any(|x| *x < 0.0 || !x.is_finite()) {
            return Err(Error::DegenerateFlow("density must be nonnegative with positive mass".into()));
        }
        Ok(Self {
            m: m.iter().map(|x| x / total).collect(),
            grid,
            entry_flow: 0.0,
            residual: 0.0,
        })
    }

    pub fn uniform(grid: Grid) -> Self {
        let m = vec![1.0; grid.k];
        Self::from_values(m, grid).expect("uniform density is valid")
    }

    /// Gaussian bump of width `width` centred at `z`.
    pub fn smoothed_point_mass(grid: Grid, z: f64, width: f64) -> Self {
        let m = grid.nodes.iter().map(|x| (-0.5 * ((x - z) / width).powi(2)).exp()).collect();
        Self::from_values(m, grid).expect("bump has positive mass")
    }

    pub fn mass(&self) -> f64 {
        self.m.iter().sum::<f64>() * self.grid.dz
    }

    pub fn mean(&self, values: &[f64]) -> f64 {
        self.m.iter().zip(values).map(|(m, v)| m * v).sum::<f64>() * self.grid.dz
    }

    pub fn l1_distance(&self, other: &StationaryDensity) -> f64 {
        self.m.iter().zip(&other.m).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.grid.dz
    }
}

/// Job-to-job moves out of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct J2jRow {
    /// Total outflow rate λ(a)·P(accept).
    pub rate: f64,
    /// Destination weights summing to one.
    pub dest: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    pub drift: Vec<f64>,
    pub vol2: Vec<f64>,
    pub kill: Vec<f64>,
    pub entry: Vec<f64>,
    pub j2j: Vec<J2jRow>,
    /// Nodes below this index are in the stopping region.
    pub k_star: usize,
}

impl FlowSpec {
    /// Pure diffusion with no sources or sinks.
    pub fn closed(drift: Vec<f64>, vol2: Vec<f64>) -> Self {
        let n = drift.len();
        Self {
            drift,
            vol2,
            kill: vec![0.0; n],
            entry: vec![0.0; n],
            j2j: vec![J2jRow { rate: 0.0, dest: vec![] }; n],
            k_star: 0,
        }
    }

    pub fn j2j_out(&self) -> Vec<f64> {
        self.j2j.iter().map(|r| r.rate).collect()
    }

    /// Flow induced by a worker solution: constant coefficients, entry at
    /// the node nearest z0 (optionally spread over neighbours), and
    /// job-to-job moves to strictly better matches.
    pub fn from_policy(sol: &WorkerSolution, env: &WorkerEnv, entry_spread: usize) -> Result<Self> {
        let g = &env.grid;
        let n = g.k;
        let p = &env.params;
        let s2 = env.coeffs.sigma_z * env.coeffs.sigma_z;
        // with no stopping node on the grid the lower edge acts as the exit,
        // otherwise an iterate that never quits has no stationary state
        let k_star = sol.k_star.max(1);
        if k_star >= n {
            return Err(Error::DegenerateFlow("stopping is optimal everywhere; no active matches".into()));
        }
        let centre = g.nearest_index(p.z0);
        let lo = centre.saturating_sub(entry_spread).max(k_star);
        let hi = (centre + entry_spread).min(n - 1);
        if centre < k_star {
            return Err(Error::DegenerateFlow(format!(
                "entry surplus {} lies in the stopping region (z* = {})",
                p.z0, g.nodes[k_star]
            )));
        }
        let mut entry = vec![0.0; n];
        let atoms = (hi - lo + 1) as f64;
        for e in entry.iter_mut().take(hi + 1).skip(lo) {
            *e = p.entry_rate / (g.dz * atoms);
        }
        let kill = (0..n).map(|k| if k >= k_star { p.destruction_rate } else { 0.0 }).collect();
        let ranked = RankedOffers::new(&sol.v, &env.kernel);
        let mut j2j = Vec::with_capacity(n);
        for k in 0..n {
            let lam = if env.search_enabled { arrival_rate(sol.a_opt[k], p) } else { 0.0 };
            if k < k_star || lam == 0.0 {
                j2j.push(J2jRow { rate: 0.0, dest: vec![] });
                continue;
            }
            let dest: Vec<(usize, f64)> = ranked.accepted(sol.v[k] + env.firing_cost).collect();
            let acc: f64 = dest.iter().map(|d| d.1).sum();
            if acc <= 0.0 {
                j2j.push(J2jRow { rate: 0.0, dest: vec![] });
                continue;
            }
            j2j.push(J2jRow {
                rate: lam * acc,
                dest: dest.into_iter().map(|(j, w)| (j, w / acc)).collect(),
            });
        }
        Ok(Self {
            drift: vec![env.coeffs.mu_z; n],
            vol2: vec![s2; n],
            kill,
            entry,
            j2j,
            k_star,
        })
    }
}

/// Assembled linear system `A m = rhs` (rhs = −entry). Rows of stopping
/// nodes are identities; `exit` holds, per active column, the rate at which
/// mass leaves the active set (destruction plus flow into stopping nodes).
#[derive(Debug, Clone)]
pub struct FluxSystem {
    pub matrix: DenseMatrix,
    pub rhs: Vec<f64>,
    pub exit: Vec<f64>,
    pub grid: Grid,
    pub k_star: usize,
}

/// Coefficients (a, b) with J_{k+1/2} = a·m_k + b·m_{k+1}.
#[inline]
fn edge_coeffs(flow: &FlowSpec, k: usize, dz: f64) -> (f64, f64) {
    let mu = 0.5 * (flow.drift[k] + flow.drift[k + 1]);
    (0.5 * mu + 0.5 * flow.vol2[k] / dz, 0.5 * mu - 0.5 * flow.vol2[k + 1] / dz)
}

pub fn assemble_flux_system(flow: &FlowSpec, g: &Grid) -> FluxSystem {
    let n = g.k;
    let dz = g.dz;
    let ks = flow.k_star.min(n);
    let mut a = DenseMatrix::zeros(n);
    for e in 0..n - 1 {
        let (ca, cb) = edge_coeffs(flow, e, dz);
        // −(J_{k+1/2} − J_{k−1/2})/dz in rows e and e+1
        a.add(e, e, -ca / dz);
        a.add(e, e + 1, -cb / dz);
        a.add(e + 1, e, ca / dz);
        a.add(e + 1, e + 1, cb / dz);
    }
    for k in 0..n {
        a.add(k, k, -flow.kill[k] - flow.j2j[k].rate);
        let rate = flow.j2j[k].rate;
        if rate > 0.0 {
            for &(j, w) in &flow.j2j[k].dest {
                a.add(j, k, rate * w);
            }
        }
    }
    let mut exit = vec![0.0; n];
    for (j, x) in exit.iter_mut().enumerate().skip(ks) {
        *x = flow.kill[j] + (0..ks).map(|i| a.get(i, j)).sum::<f64>();
    }
    let mut rhs: Vec<f64> = flow.entry.iter().map(|x| -x).collect();
    for k in 0..ks {
        a.set_row_identity(k);
        rhs[k] = 0.0;
    }
    FluxSystem {
        matrix: a,
        rhs,
        exit,
        grid: g.clone(),
        k_star: flow.k_star,
    }
}

/// Solves the stationary balance on the active nodes by subtraction-free
/// elimination (Grassmann–Taksar–Heyman): every pivot is rebuilt from
/// off-diagonal rates and exit rates, so the density stays accurate and
/// nonnegative even when almost no mass leaves. A closed system is solved up
/// to scale and then normalized.
pub fn solve_stationary(system: &FluxSystem) -> Result<StationaryDensity> {
    let n = system.grid.k;
    let dz = system.grid.dz;
    let ks = system.k_star.min(n);
    let s = n - ks;
    if s == 0 {
        return Err(Error::DegenerateFlow("no active nodes".into()));
    }
    let open = system.rhs.iter().any(|&x| x != 0.0);
    // off-diagonal rates r[i][j] = A_ij on the active block
    let mut r = vec![0.0; s * s];
    for i in 0..s {
        for j in 0..s {
            if i != j {
                let v = system.matrix.get(ks + i, ks + j);
                if v < 0.0 {
                    return Err(Error::DegenerateFlow(format!(
                        "flux scheme is not monotone at node {} (cell Péclet number too large)",
                        ks + i
                    )));
                }
                r[i * s + j] = v;
            }
        }
    }
    let orig = r.clone();
    // cum[q * s + j] = sum of orig[k][j] over k < q
    let mut cum = vec![0.0; (s + 1) * s];
    for q in 0..s {
        for j in 0..s {
            cum[(q + 1) * s + j] = cum[q * s + j] + orig[q * s + j];
        }
    }
    let mut inc = vec![0.0; s * s];
    let mut modified: Vec<usize> = Vec::new();
    let mut exit: Vec<f64> = system.exit[ks..].to_vec();
    let mut f: Vec<f64> = system.rhs[ks..].iter().map(|x| -x).collect();
    let mut d = vec![0.0; s];
    for p in (0..s).rev() {
        let mut dp = exit[p] + cum[p * s + p];
        for &k in &modified {
            if k < p {
                dp += inc[k * s + p];
            }
        }
        d[p] = dp;
        if p == 0 {
            break;
        }
        if dp <= 0.0 {
            return Err(Error::DegenerateFlow(format!("node {} has no outflow", ks + p)));
        }
        let rows: Vec<usize> = (0..p).filter(|&i| r[i * s + p] > 0.0).collect();
        let cols: Vec<usize> = (0..p).filter(|&j| r[p * s + j] > 0.0).collect();
        for &i in &rows {
            let t = r[i * s + p] / dp;
            for &j in &cols {
                if j != i {
                    let add = t * r[p * s + j];
                    r[i * s + j] += add;
                    inc[i * s + j] += add;
                }
            }
            f[i] += t * f[p];
            if !modified.contains(&i) {
                modified.push(i);
            }
        }
        for &j in &cols {
            exit[j] += r[p * s + j] * exit[p] / dp;
        }
    }
    let mut ms = vec![0.0; s];
    ms[0] = if d[0] > 0.0 {
        f[0] / d[0]
    } else if f[0] == 0.0 && !open {
        1.0
    } else {
        return Err(Error::DegenerateFlow("entering mass never leaves".into()));
    };
    for p in 1..s {
        let mut acc = f[p];
        for j in 0..p {
            acc += r[p * s + j] * ms[j];
        }
        ms[p] = acc / d[p];
    }
    let mut m = vec![0.0; n];
    m[ks..].copy_from_slice(&ms);
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateFlow("stationary density is not finite".into()));
    }
    let total: f64 = m.iter().sum::<f64>() * dz;
    if !(total > 0.0) {
        return Err(Error::DegenerateFlow("stationary density has no mass".into()));
    }
    let residual = if open {
        let ax = system.matrix.matvec(&m);
        let scale = system.rhs.iter().map(|x| x.abs()).fold(0.0, f64::max);
        ax.iter().zip(&system.rhs).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
    } else {
        let ax = system.matrix.matvec(&m);
        let peak = m.iter().fold(0.0f64, |a, x| a.max(*x));
        ax.iter().map(|x| x.abs()).fold(0.0, f64::max) / peak
    };
    let inflow: f64 = -system.rhs.iter().sum::<f64>() * dz;
    m.iter_mut().for_each(|x| *x /= total);
    Ok(StationaryDensity {
        m,
        grid: system.grid.clone(),
        entry_flow: if open { inflow / total } else { 0.0 },
        residual,
    })
}

/// Probability flux through the edge below `k_star` plus Poisson
/// destruction, for a normalized density.
pub fn separation_flux(m: &StationaryDensity, flow: &FlowSpec, k_star: usize) -> f64 {
    let dz = m.grid.dz;
    let killed: f64 = m.m.iter().zip(&flow.kill).map(|(x, q)| x * q).sum::<f64>() * dz;
    if k_star == 0 || k_star >= m.grid.k {
        return killed;
    }
    let (ca, cb) = edge_coeffs(flow, k_star - 1, dz);
    let j = ca * m.m[k_star - 1] + cb * m.m[k_star];
    (-j).max(0.0) + killed
}
