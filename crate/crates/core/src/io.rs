//! CSV emitters. Floats are written with 17 significant digits.

use crate::equilibrium::EquilibriumResult;
use crate::error::Result;
use crate::experiments::{DecompositionTable, SweepResult};
use crate::montecarlo::{HazardTable, TenureVariance};
use std::fmt::Write as _;
use std::path::Path;

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn write_text(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body)?;
    Ok(())
}

pub fn density_csv(eq: &EquilibriumResult) -> String {
    let mut s = String::from("z,m\n");
    for (z, m) in eq.m_star.grid.nodes.iter().zip(&eq.m_star.m) {
        let _ = writeln!(s, "{},{}", fmt_f64(*z), fmt_f64(*m));
    }
    s
}

pub fn value_csv(eq: &EquilibriumResult) -> String {
    let mut s = String::from("z,V,a_opt,continue\n");
    let w = &eq.worker;
    for k in 0..w.v.len() {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            fmt_f64(eq.m_star.grid.nodes[k]),
            fmt_f64(w.v[k]),
            fmt_f64(w.a_opt[k]),
            u8::from(w.continue_mask[k])
        );
    }
    s
}

pub fn trace_csv(eq: &EquilibriumResult) -> String {
    let mut s = String::from("iter,density_change,wage_change,mean_surplus,z_star,var_logw\n");
    for t in &eq.trace {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            t.iter,
            fmt_f64(t.density_change),
            fmt_f64(t.wage_change),
            fmt_f64(t.mean_surplus),
            fmt_f64(t.z_star),
            fmt_f64(t.var_logw)
        );
    }
    s
}

pub fn scalars_csv(rows: &[(&str, f64)]) -> String {
    let mut s = String::from("name,value\n");
    for (k, v) in rows {
        let _ = writeln!(s, "{k},{}", fmt_f64(*v));
    }
    s
}

pub fn equilibrium_scalars(eq: &EquilibriumResult) -> Vec<(&'static str, f64)> {
    vec![
        ("VU", eq.vu),
        ("z_star", eq.z_star),
        ("var_logw", eq.var_logw()),
        ("mean_w", eq.mean_wage()),
        ("iterations", eq.iterations as f64),
        ("j2j_rate", eq.j2j_rate()),
        ("mean_surplus", eq.mean_surplus()),
    ]
}

/// Writes density.csv, value.csv, trace.csv and scalars.csv into `dir`.
pub fn write_equilibrium_bundle(dir: &Path, eq: &EquilibriumResult) -> Result<()> {
    write_text(&dir.join("density.csv"), &density_csv(eq))?;
    write_text(&dir.join("value.csv"), &value_csv(eq))?;
    write_text(&dir.join("trace.csv"), &trace_csv(eq))?;
    write_text(&dir.join("scalars.csv"), &scalars_csv(&equilibrium_scalars(eq)))?;
    Ok(())
}

pub fn curve_csv(rows: &[(f64, f64, f64)]) -> String {
    let mut s = String::from("t,cdf,hazard\n");
    for (t, c, h) in rows {
        let _ = writeln!(s, "{},{},{}", fmt_f64(*t), fmt_f64(*c), fmt_f64(*h));
    }
    s
}

pub fn hazard_csv(h: &HazardTable) -> String {
    let mut s = String::from("tenure_lo,tenure_hi,rate,events,exposure\n");
    for i in 0..h.rates.len() {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            fmt_f64(h.edges[i]),
            fmt_f64(h.edges[i + 1]),
            fmt_opt(h.rates[i]),
            h.events[i],
            fmt_f64(h.exposure[i])
        );
    }
    s
}

pub fn var_by_tenure_csv(rows: &[TenureVariance]) -> String {
    let mut s = String::from("tenure_lo,tenure_hi,var_logw,var_logw_with_noise,count,low_confidence\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            fmt_f64(r.lo),
            fmt_f64(r.hi),
            fmt_opt(r.var),
            fmt_opt(r.var_with_noise),
            r.count,
            u8::from(r.low_confidence)
        );
    }
    s
}

pub fn decomposition_csv(t: &DecompositionTable) -> String {
    let mut s = String::from("bin,var_sel,var_sel_search,var_full\n");
    for r in &t.rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.label(),
            fmt_f64(r.var_sel),
            fmt_f64(r.var_sel_search),
            fmt_f64(r.var_full)
        );
    }
    s
}

pub fn sweep_csv(r: &SweepResult) -> String {
    let mut s = String::from("value,z_star,var_logw,j2j,mean_w,converged\n");
    for x in &r.records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            fmt_f64(x.value),
            fmt_f64(x.z_star),
            fmt_f64(x.var_logw),
            fmt_f64(x.j2j),
            fmt_f64(x.mean_w),
            u8::from(x.converged)
        );
    }
    s
}

/// Two-column (z, values...) table with a custom header.
pub fn columns_csv(header: &str, cols: &[&[f64]]) -> String {
    let mut s = format!("{header}\n");
    let n = cols.first().map_or(0, |c| c.len());
    for i in 0..n {
        let line: Vec<String> = cols.iter().map(|c| fmt_f64(c[i])).collect();
        let _ = writeln!(s, "{}", line.join(","));
    }
    s
}
