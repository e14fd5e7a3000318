use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use wagefield::benchmark::{hazard, hazard_peak, hitting_cdf, never_end_probability, never_end_truncated};
use wagefield::equilibrium::{solve_with_setup, CounterfactualMode, EquilibriumResult, InitialDensity, Setup};
use wagefield::experiments::{
    benchmark_spec, model_moments, moment_distance, run_decomposition, run_policy_sweep, selection_boundary, Lever,
    TargetsFile,
};
use wagefield::hjb::{smooth_fit_residual, solve_obstacle_pi, solve_obstacle_vi};
use wagefield::io::{self, write_text};
use wagefield::montecarlo::{empirical_hazard, simulate_panel, variance_by_tenure, SimPolicy};
use wagefield::{Config, Error, Result};

#[derive(Parser)]
#[command(name = "wagefield", version, about = "Stationary mean field equilibrium of wage dispersion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the simulation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "WAGEFIELD_THREADS", default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one economy and write density, value, trace and scalars.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "full")]
        mode: String,
    },
    /// Closed-form spell law of the pure-selection benchmark.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Horizon of the tabulated curve in years.
        #[arg(long, default_value_t = 40.0)]
        t_max: f64,
        #[arg(long, default_value_t = 400)]
        points: usize,
    },
    /// Solve, then simulate a panel of spells from the optimal policies.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "full")]
        mode: String,
        /// Calibration targets; adds model moments and their distance.
        #[arg(long)]
        targets: Option<PathBuf>,
    },
    /// Tenure-binned dispersion under the three economies.
    Decompose {
        #[command(flatten)]
        common: Common,
    },
    /// Comparative statics in one policy lever.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lever: String,
        /// Comma-separated values; the configured list when omitted.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Numerical health checks with a PASS/FAIL line each.
    Diagnose {
        #[command(flatten)]
        common: Common,
    },
}

struct Run {
    cfg: Config,
    out: PathBuf,
    provenance: Value,
}

impl Run {
    fn open(command: &str, c: &Common) -> Result<Self> {
        let (mut cfg, text, path) = match &c.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                (Config::from_toml_str(&text)?, text, Value::from(p.display().to_string()))
            }
            None => {
                let cfg = Config::default();
                let text = cfg.to_toml_string();
                (cfg, text, Value::Null)
            }
        };
        if let Some(seed) = c.seed {
            cfg.simulation.seed = seed;
        }
        if c.threads > 0 {
            // fails only if a pool already exists, which cannot happen here
            let _ = rayon::ThreadPoolBuilder::new().num_threads(c.threads).build_global();
        }
        std::fs::create_dir_all(&c.out)?;
        let provenance = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config_path": path,
            "config_sha256": hex::encode(Sha256::digest(text.as_bytes())),
            "seed": cfg.simulation.seed,
        });
        Ok(Self { cfg, out: c.out.clone(), provenance })
    }

    fn write(&self, name: &str, body: &str) -> Result<String> {
        write_text(&self.out.join(name), body)?;
        Ok(name.to_string())
    }

    fn finish(&self, files: Vec<String>, results: Value) -> Result<()> {
        let summary = json!({ "provenance": self.provenance, "outputs": files, "results": results });
        let body = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
        write_text(&self.out.join("summary.json"), &body)
    }

    fn solve(&self, mode: CounterfactualMode) -> Result<EquilibriumResult> {
        let setup = Setup::new(&self.cfg.model_params(), &self.cfg.numerics)?;
        solve_with_setup(&setup, &InitialDensity::Uniform, mode)
    }
}

fn parse_mode(s: &str) -> Result<CounterfactualMode> {
    CounterfactualMode::parse(s).ok_or_else(|| Error::Config(format!("unknown mode {s:?} (sel, sel_search, full)")))
}

fn scalars_json(eq: &EquilibriumResult) -> Value {
    let mut m = serde_json::Map::new();
    m.insert("mode".into(), eq.mode.name().into());
    for (k, v) in io::equilibrium_scalars(eq) {
        m.insert(k.into(), v.into());
    }
    Value::Object(m)
}

fn cmd_solve(c: &Common, mode: &str) -> Result<()> {
    let run = Run::open("solve", c)?;
    let eq = run.solve(parse_mode(mode)?)?;
    io::write_equilibrium_bundle(&run.out, &eq)?;
    let files = ["density.csv", "value.csv", "trace.csv", "scalars.csv"].map(String::from).to_vec();
    log::info!("z* = {:.4}, Var(log w) = {:.5}, {} iterations", eq.z_star, eq.var_logw(), eq.iterations);
    run.finish(files, scalars_json(&eq))
}

fn cmd_benchmark(c: &Common, t_max: f64, points: usize) -> Result<()> {
    let run = Run::open("benchmark", c)?;
    if !(t_max > 0.0) || points < 2 {
        return Err(Error::Config("t_max must be positive and points at least 2".into()));
    }
    let p = run.cfg.model_params();
    let spec = benchmark_spec(&p)?;
    let mut rows = Vec::with_capacity(points);
    for i in 1..=points {
        let t = t_max * i as f64 / points as f64;
        rows.push((t, hitting_cdf(t, &spec)?, hazard(t, &spec)?));
    }
    let files = vec![run.write("benchmark_curve.csv", &io::curve_csv(&rows))?];
    let (t_peak, h_peak) = hazard_peak(&spec, t_max, 4 * points)?;
    run.finish(
        files,
        json!({
            "z_star": selection_boundary(&p)?,
            "distance": spec.d,
            "mu_z": spec.mu_z,
            "sigma_z": spec.sigma_z,
            "never_end_probability": never_end_probability(&spec),
            "never_end_truncated": never_end_truncated(&spec)?,
            "hazard_peak_years": t_peak,
            "hazard_peak_rate": h_peak,
        }),
    )
}

fn cmd_simulate(c: &Common, mode: &str, targets: Option<&Path>) -> Result<()> {
    let run = Run::open("simulate", c)?;
    let cfg = &run.cfg;
    let eq = run.solve(parse_mode(mode)?)?;
    let policy = SimPolicy::from_solution(&eq.worker, &eq.env)?;
    let panel = simulate_panel(&policy, &cfg.sim_config())?;
    let h = empirical_hazard(&panel, &cfg.experiments.hazard_edges_years)?;
    let tv = variance_by_tenure(&panel, &cfg.experiments.tenure_edges_years, cfg.wage.sigma_u2);
    let moments = model_moments(&cfg.model_params(), &eq, &panel, &cfg.experiments.hazard_edges_years)?;
    let mut scalars = io::equilibrium_scalars(&eq);
    scalars.push(("person_years", panel.person_years()));
    for (name, v) in wagefield::experiments::Moments::NAMES.iter().zip(moments.to_vec()) {
        scalars.push((name, v));
    }
    let mut results = scalars_json(&eq);
    results["person_years"] = panel.person_years().into();
    results["moments"] = serde_json::to_value(&moments).expect("moments serialize");
    if let Some(path) = targets {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let t = TargetsFile::from_toml_str(&text)?;
        let dist = moment_distance(&moments.to_vec(), &t.targets.to_vec(), &t.weights.to_vec())?;
        scalars.push(("moment_distance", dist));
        results["moment_distance"] = dist.into();
    }
    let hist = panel.histogram_density();
    let files = vec![
        run.write("hazard.csv", &io::hazard_csv(&h))?,
        run.write("var_by_tenure.csv", &io::var_by_tenure_csv(&tv))?,
        run.write("density_mc.csv", &io::columns_csv("z,m", &[&eq.m_star.grid.nodes, &hist]))?,
        run.write("scalars.csv", &io::scalars_csv(&scalars))?,
    ];
    run.finish(files, results)
}

fn cmd_decompose(c: &Common) -> Result<()> {
    let run = Run::open("decompose", c)?;
    let cfg = &run.cfg;
    let t = run_decomposition(&cfg.model_params(), &cfg.numerics, &cfg.sim_config(), &cfg.experiments.tenure_edges_years)?;
    let files = vec![run.write("decomposition.csv", &io::decomposition_csv(&t))?];
    let modes = ["sel", "sel_search", "full"];
    let per_mode = |xs: [f64; 3]| -> Value { modes.iter().zip(xs).map(|(m, x)| (m.to_string(), Value::from(x))).collect() };
    run.finish(
        files,
        json!({
            "z_star": per_mode(t.z_star),
            "overall_var_pde": per_mode(t.overall_pde),
            "overall_var_mc": per_mode(t.overall_mc),
        }),
    )
}

fn cmd_sweep(c: &Common, lever: &str, values: Option<&[f64]>) -> Result<()> {
    let run = Run::open("sweep", c)?;
    let cfg = &run.cfg;
    let lever = Lever::parse(lever)
        .ok_or_else(|| Error::Config(format!("unknown lever {lever:?} (firing_cost, search_subsidy, vol_multiplier)")))?;
    let e = &cfg.experiments;
    let values = values.map(<[f64]>::to_vec).unwrap_or_else(|| match lever {
        Lever::FiringCost => e.firing_cost_values.clone(),
        Lever::SearchSubsidy => e.search_subsidy_values.clone(),
        Lever::VolMultiplier => e.vol_multiplier_values.clone(),
    });
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let s = run_policy_sweep(&cfg.model_params(), &cfg.numerics, lever, &values)?;
    let files = vec![run.write(&format!("sweep_{}.csv", lever.name()), &io::sweep_csv(&s))?];
    run.finish(
        files,
        json!({
            "lever": lever.name(),
            "all_converged": s.all_converged(),
            "z_star_weakly_decreasing": s.z_star_weakly_decreasing(),
            "z_star_weakly_increasing": s.z_star_weakly_increasing(),
            "j2j_weakly_decreasing": s.j2j_weakly_decreasing(),
            "var_relative_change": s.var_relative_change(),
        }),
    )
}

struct Check {
    name: &'static str,
    pass: bool,
    value: f64,
    bound: String,
}

fn cmd_diagnose(c: &Common) -> Result<()> {
    let run = Run::open("diagnose", c)?;
    let cfg = &run.cfg;
    let n = &cfg.numerics;
    let mut checks = Vec::new();
    let modes = [CounterfactualMode::Sel, CounterfactualMode::SelSearch, CounterfactualMode::Full];
    let eqs = modes.iter().map(|m| run.solve(*m)).collect::<Result<Vec<_>>>()?;

    let mut gap = 0.0f64;
    for eq in &eqs {
        let pi = solve_obstacle_pi(&eq.env, n.pi_tol, n.pi_max_iter)?;
        let vi = solve_obstacle_vi(&eq.env, n.vi_dt_years, n.vi_theta, n.vi_tol, n.vi_max_iter)?;
        gap = gap.max(pi.v.iter().zip(&vi.v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    checks.push(Check { name: "pi_vi_sup_gap", pass: gap <= 1e-8, value: gap, bound: "<= 1e-8".into() });

    let mass = eqs.iter().map(|e| (e.m_star.mass() - 1.0).abs()).fold(0.0, f64::max);
    checks.push(Check { name: "mass_defect", pass: mass <= 1e-12, value: mass, bound: "<= 1e-12".into() });
    let min_m = eqs.iter().flat_map(|e| e.m_star.m.iter().copied()).fold(f64::INFINITY, f64::min);
    checks.push(Check { name: "min_density", pass: min_m >= 0.0, value: min_m, bound: ">= 0".into() });
    let tail = eqs.iter().map(|e| e.m_star.m.last().copied().unwrap_or(0.0) * e.m_star.grid.dz).fold(0.0, f64::max);
    checks.push(Check { name: "top_cell_mass", pass: tail < 1e-8, value: tail, bound: "< 1e-8".into() });
    let upper = eqs.iter().all(|e| e.worker.continue_mask.iter().skip_while(|c| !**c).all(|c| *c));
    checks.push(Check {
        name: "continuation_upper_interval",
        pass: upper,
        value: f64::from(u8::from(upper)),
        bound: "= 1".into(),
    });

    let exact = selection_boundary(&cfg.model_params())?;
    let sel_err = (eqs[0].z_star - exact).abs();
    let dz = eqs[0].env.grid.dz;
    checks.push(Check {
        name: "selection_threshold_error",
        pass: sel_err <= dz,
        value: sel_err,
        bound: format!("<= dz = {dz}"),
    });

    let full = &eqs[2];
    let policy = SimPolicy::from_solution(&full.worker, &full.env)?;
    let panel = simulate_panel(&policy, &cfg.sim_config())?;
    let l1: f64 =
        panel.histogram_density().iter().zip(&full.m_star.m).map(|(a, b)| (a - b).abs()).sum::<f64>() * full.m_star.grid.dz;
    checks.push(Check { name: "fp_mc_l1", pass: l1 <= 0.05, value: l1, bound: "<= 0.05".into() });

    // smooth-fit residual should fall like dz on halved grids
    let mut pts = Vec::new();
    let span = n.z_max - n.z_min;
    for k in [101usize, 201, 401, 801] {
        let mut c2 = cfg.clone();
        c2.numerics.n_grid = k;
        let setup = Setup::new(&c2.model_params(), &c2.numerics)?;
        let eq = solve_with_setup(&setup, &InitialDensity::Uniform, CounterfactualMode::Full)?;
        pts.push(((span / (k - 1) as f64).ln(), smooth_fit_residual(&eq.worker, &eq.env.grid)?.ln()));
    }
    let np = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / np;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / np;
    let order = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    checks.push(Check {
        name: "smooth_fit_order",
        pass: (0.75..=1.5).contains(&order),
        value: order,
        bound: "in [0.75, 1.5]".into(),
    });

    let mut csv = String::from("check,status,value,bound\n");
    for ch in &checks {
        let status = if ch.pass { "PASS" } else { "FAIL" };
        println!("{status} {:<28} {:>12.4e}  ({})", ch.name, ch.value, ch.bound);
        csv.push_str(&format!("{},{status},{},{}\n", ch.name, io::fmt_f64(ch.value), ch.bound));
    }
    let files = vec![run.write("diagnostics.csv", &csv)?];
    let all = checks.iter().all(|c| c.pass);
    let report: serde_json::Map<String, Value> = checks.iter().map(|c| (c.name.to_string(), Value::from(c.pass))).collect();
    run.finish(files, json!({ "all_pass": all, "checks": report }))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve { common, mode } => cmd_solve(common, mode),
        Command::Benchmark { common, t_max, points } => cmd_benchmark(common, *t_max, *points),
        Command::Simulate { common, mode, targets } => cmd_simulate(common, mode, targets.as_deref()),
        Command::Decompose { common } => cmd_decompose(common),
        Command::Sweep { common, lever, values } => cmd_sweep(common, lever, values.as_deref()),
        Command::Diagnose { common } => cmd_diagnose(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
