use anyhow::{bail, Result};
use gnnic::precond::PreconditionerKind;
use serde::{Deserialize, Serialize};

use crate::artifacts::{ensure_dir, write_csv, write_json};
use crate::config::{ExperimentConfig, MatrixSet};
use crate::eval::{evaluate, load_matrices, EvalRow, Models};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub m: usize,
    pub n: usize,
    pub method: PreconditionerKind,
    pub mean_iterations: f64,
    /// `iters(method) / iters(IC0)` at this size.
    pub ratio_to_ic0: f64,
    pub all_converged: bool,
    pub min_factor_diagonal: f64,
    pub mean_p_time: f64,
    pub mean_cg_time: f64,
    pub mean_total_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossScaleReport {
    pub rows: Vec<ScaleRow>,
    pub runs: Vec<EvalRow>,
}

pub fn run(cfg: &ExperimentConfig) -> Result<CrossScaleReport> {
    ensure_dir(&cfg.out)?;
    let c = &cfg.crossscale;
    let mut methods = vec![PreconditionerKind::Ic0];
    for (kind, mode, explicit) in [
        (PreconditionerKind::Nic, gnnic::train::TrainMode::Nic, c.checkpoints.nic.as_ref()),
        (PreconditionerKind::GnnIc, gnnic::train::TrainMode::GnnIc, c.checkpoints.gnnic.as_ref()),
    ] {
        if cfg.checkpoint_for(explicit, mode).is_some() {
            methods.push(kind);
        }
    }
    if methods.len() == 1 {
        bail!("crossscale needs at least one learned checkpoint");
    }
    let models = Models::for_methods(cfg, &c.checkpoints, &methods)?;
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &m in &c.sizes {
        let set = MatrixSet::Poisson {
            family: c.family,
            m,
            count: c.count,
            random_coefficients: c.random_coefficients,
            seed: None,
        };
        let matrices = load_matrices(&set, cfg.seed)?;
        let report = evaluate(&matrices, &methods, &models, &c.solve, cfg.seed)?;
        let ic = report
            .summary_for(PreconditionerKind::Ic0)
            .expect("IC0 is always evaluated")
            .mean_iterations;
        for s in &report.summary {
            let min_diag = report
                .rows
                .iter()
                .filter(|r| r.method == s.method)
                .filter_map(|r| r.min_factor_diagonal)
                .fold(f64::INFINITY, f64::min);
            rows.push(ScaleRow {
                m,
                n: c.family.n(m),
                method: s.method,
                mean_iterations: s.mean_iterations,
                ratio_to_ic0: s.mean_iterations / ic,
                all_converged: s.all_converged,
                min_factor_diagonal: min_diag,
                mean_p_time: s.mean_p_time,
                mean_cg_time: s.mean_cg_time,
                mean_total_time: s.mean_total_time,
            });
        }
        runs.extend(report.rows);
    }
    let report = CrossScaleReport { rows, runs };
    write_csv(&cfg.out.join("crossscale.csv"), "crossscale", cfg, &report.rows)?;
    write_json(&cfg.out.join("crossscale.json"), "crossscale", cfg, &report)?;
    Ok(report)
}
