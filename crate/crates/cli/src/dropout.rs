use anyhow::{bail, Context, Result};
use gnnic::precond::{fill_in_dropout, PreconditionerKind};
use gnnic::train::{seeded_rhs, TrainMode};
use serde::{Deserialize, Serialize};

use crate::artifacts::{ensure_dir, write_csv, write_json};
use crate::config::{Checkpoints, ExperimentConfig};
use crate::eval::{build_preconditioner, load_matrices, solve, solve_config, Models};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutRow {
    pub matrix: String,
    pub method: PreconditionerKind,
    pub eps: f64,
    pub nnz: usize,
    /// Fraction of factor entries removed.
    pub nnz_reduction: f64,
    pub iterations: usize,
    /// Relative to the undropped factor.
    pub iteration_increase: f64,
    pub converged: bool,
    pub p_time: f64,
    pub cg_time: f64,
    pub total_time: f64,
    pub tri_solve_time_per_iter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutReport {
    pub baseline_iterations: Vec<usize>,
    pub rows: Vec<DropoutRow>,
}

pub fn run(cfg: &ExperimentConfig) -> Result<DropoutReport> {
    ensure_dir(&cfg.out)?;
    let d = &cfg.dropout;
    let checkpoints = match d.method {
        PreconditionerKind::Nic => Checkpoints {
            nic: cfg.checkpoint_for(d.checkpoint.as_ref(), TrainMode::Nic),
            gnnic: None,
        },
        PreconditionerKind::GnnIc => Checkpoints {
            nic: None,
            gnnic: cfg.checkpoint_for(d.checkpoint.as_ref(), TrainMode::GnnIc),
        },
        PreconditionerKind::Ic0 => Checkpoints::default(),
        other => bail!("dropout needs a factor preconditioner, got {other}"),
    };
    let models = Models::for_methods(cfg, &checkpoints, &[d.method])?;
    let solve_cfg = solve_config(&d.solve);
    let mut baseline_iterations = Vec::new();
    let mut rows = Vec::new();
    for tm in load_matrices(&d.matrices, cfg.seed)? {
        let csr = tm.matrix.to_csr();
        let b = seeded_rhs(tm.matrix.n_rows(), cfg.seed, tm.index);
        let base = build_preconditioner(d.method, &tm.matrix, &models)?;
        let baseline = solve(&csr, &b, &base, &solve_cfg)?.iterations;
        baseline_iterations.push(baseline);
        for &eps in &d.eps {
            let (p, stats) = fill_in_dropout(&base, eps).with_context(|| format!("eps {eps}"))?;
            if d.solve.warm_start {
                solve(&csr, &b, &p, &solve_cfg)?;
            }
            let reports = (0..d.solve.repeats)
                .map(|_| solve(&csr, &b, &p, &solve_cfg))
                .collect::<Result<Vec<_>>>()?;
            let mean = |f: fn(&gnnic::krylov::SolveReport) -> f64| {
                reports.iter().map(f).sum::<f64>() / reports.len() as f64
            };
            let iterations = reports[0].iterations;
            rows.push(DropoutRow {
                matrix: tm.id.clone(),
                method: d.method,
                eps,
                nnz: stats.nnz_after,
                nnz_reduction: 1.0 - stats.nnz_after as f64 / stats.nnz_before as f64,
                iterations,
                iteration_increase: iterations as f64 / baseline as f64 - 1.0,
                converged: reports[0].converged,
                p_time: mean(|r| r.p_time),
                cg_time: mean(|r| r.cg_time),
                total_time: mean(|r| r.total_time),
                tri_solve_time_per_iter: mean(|r| r.tri_solve_time_per_iter),
            });
        }
    }
    let report = DropoutReport {
        baseline_iterations,
        rows,
    };
    write_csv(&cfg.out.join("dropout.csv"), "dropout", cfg, &report.rows)?;
    write_json(&cfg.out.join("dropout.json"), "dropout", cfg, &report)?;
    Ok(report)
}
