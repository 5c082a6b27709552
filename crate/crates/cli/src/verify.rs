//! Programmatic verification of a checkpointed density against datasets and
//! travelling-wave references: one pass/fail line per check with the
//! measured value and its bound.

use std::path::Path;

use varfield::datagen;
use varfield::del::del_field_threads;
use varfield::density::DensityModel;
use varfield::error::Result;
use varfield::grid::{self, FieldGrid};
use varfield::train::{loss_del, loss_reg};
use varfield::twave;

use crate::config::VerifyConfig;

pub struct Check {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

pub struct Report {
    pub checks: Vec<Check>,
}

fn check(name: &str, measured: f64, bound: f64) -> Check {
    Check {
        name: name.to_string(),
        measured,
        bound,
        pass: measured.is_finite() && measured <= bound,
    }
}

pub fn run_checks(
    model: &(dyn DensityModel + Send + Sync),
    cfg: &VerifyConfig,
    data: Option<&Path>,
    grid_file: Option<&Path>,
    tw: Option<&Path>,
    threads: usize,
) -> Result<Report> {
    let mut checks = Vec::new();
    let mut grids: Vec<FieldGrid> = Vec::new();
    if let Some(dir) = data {
        grids.extend(datagen::read_dataset(dir)?);
    }
    if let Some(path) = grid_file {
        grids.push(grid::read_grid_file(path)?);
    }
    if !grids.is_empty() {
        let refs: Vec<&FieldGrid> = grids.iter().collect();
        let l_del = loss_del(model, &refs)?;
        checks.push(check("data_consistency_l_del", l_del, cfg.tol_l_del));
        let l_reg = loss_reg(model, &refs, cfg.lambda_floor)?;
        checks.push(check("solvability_l_reg", l_reg, cfg.tol_l_reg));
        let mut max_residual = 0.0f64;
        for g in &refs {
            max_residual = max_residual.max(del_field_threads(model, *g, threads)?.max_abs());
        }
        checks.push(check(
            "max_pointwise_residual",
            max_residual,
            cfg.tol_l_del.sqrt(),
        ));
    }
    if let Some(path) = tw {
        let (state, _) = twave::read_tw_file(path)?;
        // evaluate the reference travelling wave under the checked model on
        // the mesh implied by the dataset (or the standard experiment mesh)
        let mesh = grids
            .first()
            .map(|g| *g.mesh())
            .unwrap_or_else(|| *tw_default_mesh());
        let u = twave::tw_grid(&state, &mesh);
        let res = del_field_threads(model, &u, threads)?;
        checks.push(check(
            "tw_max_pointwise_residual",
            res.max_abs(),
            cfg.tol_tw_residual,
        ));
    }
    Ok(Report { checks })
}

fn tw_default_mesh() -> &'static varfield::grid::Mesh {
    use std::sync::OnceLock;
    static MESH: OnceLock<varfield::grid::Mesh> = OnceLock::new();
    MESH.get_or_init(|| varfield::grid::Mesh::new(0.5, 1.0, 20, 20).unwrap())
}

pub fn render(report: &Report) -> String {
    let mut out = String::new();
    for c in &report.checks {
        out.push_str(&format!(
            "{}: {} measured={:.6e} bound={:.6e}\n",
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            c.measured,
            c.bound
        ));
    }
    let all = report.checks.iter().all(|c| c.pass);
    out.push_str(&format!(
        "overall: {} ({}/{} checks passed)\n",
        if all { "PASS" } else { "FAIL" },
        report.checks.iter().filter(|c| c.pass).count(),
        report.checks.len()
    ));
    out
}
