//! Cross-checks of the solvers against independent oracles on a coarse grid.

use proptest::prelude::*;

use wagefield::config::Config;
use wagefield::equilibrium::{solve_with_setup, CounterfactualMode, EquilibriumResult, InitialDensity, Setup};
use wagefield::experiments::selection_boundary;
use wagefield::grid::build_grid;
use wagefield::hjb::{solve_obstacle_pi, solve_obstacle_vi};
use wagefield::kolmogorov::{assemble_flux_system, solve_stationary, FlowSpec};
use wagefield::montecarlo::{simulate_panel, SimPolicy};

fn coarse() -> Config {
    let mut c = Config::default();
    c.numerics.n_grid = 201;
    c.simulation.n_spells = 4000;
    c
}

fn solve(c: &Config, mode: CounterfactualMode) -> EquilibriumResult {
    let setup = Setup::new(&c.model_params(), &c.numerics).unwrap();
    solve_with_setup(&setup, &InitialDensity::Uniform, mode).unwrap()
}

#[test]
fn selection_threshold_matches_closed_form() {
    // the upwind boundary error is O(dz) with a constant above one, so this
    // check runs on the production grid
    let c = Config::default();
    let p = c.model_params();
    let eq = solve(&c, CounterfactualMode::Sel);
    let exact = selection_boundary(&p).unwrap();
    let dz = eq.env.grid.dz;
    assert!((eq.z_star - exact).abs() <= dz, "numerical {} vs closed form {exact}", eq.z_star);
}

#[test]
fn search_is_inert_without_arrivals() {
    let mut c = coarse();
    c.search.lambda0_annual = 1e-12;
    c.search.lambda_bar_annual = 1e-12;
    let a = solve(&c, CounterfactualMode::Sel);
    let b = solve(&c, CounterfactualMode::SelSearch);
    let gap = a.worker.v.iter().zip(&b.worker.v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-9, "value gap {gap}");
    assert_eq!(a.worker.k_star, b.worker.k_star);
    assert!(a.m_star.l1_distance(&b.m_star) < 1e-9);
}

#[test]
fn full_equilibrium_keeps_mass_off_the_upper_edge() {
    let eq = solve(&coarse(), CounterfactualMode::Full);
    let tail = eq.m_star.m.last().unwrap() * eq.m_star.grid.dz;
    assert!(tail < 1e-8, "mass in top cell {tail}");
    assert!((eq.m_star.mass() - 1.0).abs() < 1e-12);
    assert!(eq.posthoc_density_change < 1e-9);
}

#[test]
fn value_and_policy_iteration_agree_in_every_mode() {
    let c = coarse();
    let n = &c.numerics;
    for mode in [CounterfactualMode::Sel, CounterfactualMode::SelSearch, CounterfactualMode::Full] {
        let eq = solve(&c, mode);
        let pi = solve_obstacle_pi(&eq.env, n.pi_tol, n.pi_max_iter).unwrap();
        let vi = solve_obstacle_vi(&eq.env, n.vi_dt_years, n.vi_theta, n.vi_tol, n.vi_max_iter).unwrap();
        let gap = pi.v.iter().zip(&vi.v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-8, "{mode:?}: {gap}");
        let g = eq.env.obstacle();
        assert!(pi.v.iter().all(|v| *v >= g - 1e-12));
        assert!(pi.v[..pi.k_star].iter().all(|v| (*v - g).abs() < 1e-12));
    }
}

#[test]
fn simulated_occupation_tracks_forward_density() {
    let mut c = coarse();
    c.simulation.n_spells = 20_000;
    let eq = solve(&c, CounterfactualMode::Sel);
    let policy = SimPolicy::from_solution(&eq.worker, &eq.env).unwrap();
    let panel = simulate_panel(&policy, &c.sim_config()).unwrap();
    let hist = panel.histogram_density();
    let l1: f64 = hist.iter().zip(&eq.m_star.m).map(|(a, b)| (a - b).abs()).sum::<f64>() * eq.m_star.grid.dz;
    assert!(l1 < 0.1, "L1 {l1}");
}

#[test]
fn simulation_is_reproducible_from_the_seed() {
    let c = coarse();
    let eq = solve(&c, CounterfactualMode::SelSearch);
    let policy = SimPolicy::from_solution(&eq.worker, &eq.env).unwrap();
    let a = simulate_panel(&policy, &c.sim_config()).unwrap();
    let b = simulate_panel(&policy, &c.sim_config()).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.occupancy, b.occupancy);
}

#[test]
fn reflected_drift_gives_geometric_profile() {
    // zero flux on every edge: m_{k+1}/m_k = (σ²/dz + μ)/(σ²/dz − μ)
    let g = build_grid(-1.0, 1.0, 81).unwrap();
    let (mu, s2) = (-0.05, 0.04);
    let sys = assemble_flux_system(&FlowSpec::closed(vec![mu; g.k], vec![s2; g.k]), &g);
    let d = solve_stationary(&sys).unwrap();
    let ratio = (s2 / g.dz + mu) / (s2 / g.dz - mu);
    for k in 0..g.k - 1 {
        assert!((d.m[k + 1] / d.m[k] - ratio).abs() < 1e-12);
    }
    // and the continuum exponential profile up to O(dz²)
    let lambda = 2.0 * mu / s2;
    let norm = lambda / ((lambda * (1.0 + 0.5 * g.dz)).exp() - (lambda * (-1.0 - 0.5 * g.dz)).exp());
    let worst = g.nodes.iter().zip(&d.m).map(|(z, m)| (m / (norm * (lambda * z).exp()) - 1.0).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-2, "relative error {worst}");
}

fn open_flow(drift: Vec<f64>, vol2: Vec<f64>, kill: Vec<f64>, src: usize) -> FlowSpec {
    let n = drift.len();
    let mut f = FlowSpec::closed(drift, vol2);
    f.kill = kill;
    f.entry = vec![0.0; n];
    f.entry[src] = 1.0;
    f
}

#[test]
fn elimination_matches_dense_solve_when_well_conditioned() {
    let g = build_grid(0.0, 1.0, 41).unwrap();
    let n = g.k;
    let drift: Vec<f64> = g.nodes.iter().map(|z| 0.1 * (0.5 - z)).collect();
    let kill: Vec<f64> = g.nodes.iter().map(|z| 0.5 + z).collect();
    let sys = assemble_flux_system(&open_flow(drift, vec![0.02; n], kill, 20), &g);
    let d = solve_stationary(&sys).unwrap();
    let dense = sys.matrix.solve(&sys.rhs).unwrap();
    let total: f64 = dense.iter().sum::<f64>() * g.dz;
    for (a, b) in d.m.iter().zip(&dense) {
        assert!((a - b / total).abs() < 1e-10 * (1.0 + a.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_solution_is_a_probability_density(
        mu in -0.2f64..0.2,
        s2 in 0.02f64..0.1,
        kill in prop::collection::vec(0.0f64..2.0, 31),
        src in 0usize..31,
    ) {
        // cell Péclet number |μ|dz/σ² stays below one on this grid
        let g = build_grid(-1.0, 1.0, 31).unwrap();
        let flow = open_flow(vec![mu; g.k], vec![s2; g.k], kill.clone(), src);
        let sys = assemble_flux_system(&flow, &g);
        match solve_stationary(&sys) {
            Ok(d) => {
                prop_assert!((d.mass() - 1.0).abs() < 1e-12);
                prop_assert!(d.m.iter().all(|x| *x >= 0.0 && x.is_finite()));
            }
            // nothing ever leaves: no stationary state exists
            Err(_) => prop_assert!(kill.iter().all(|k| *k == 0.0)),
        }
    }

    #[test]
    fn closed_flow_balances_every_edge(mu in -0.2f64..0.2, s2 in 0.02f64..0.1) {
        let g = build_grid(-1.0, 1.0, 31).unwrap();
        let sys = assemble_flux_system(&FlowSpec::closed(vec![mu; g.k], vec![s2; g.k]), &g);
        let d = solve_stationary(&sys).unwrap();
        let res = sys.matrix.matvec(&d.m);
        let scale = d.m.iter().cloned().fold(0.0, f64::max) / g.dz;
        prop_assert!(res.iter().all(|r| r.abs() < 1e-10 * scale));
    }
}
