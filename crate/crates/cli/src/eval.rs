use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use gnnic::gnn::GnnModel;
use gnnic::krylov::{cg, pcg, SolveConfig, SolveReport};
use gnnic::mtx::read_matrix_market;
use gnnic::precond::{gnn_ic_predict, ic0, jacobi, nic_predict, Preconditioner, PreconditionerKind};
use gnnic::sparse::SparseCoo;
use gnnic::train::{sample_id, seeded_rhs, split_seeds, Split, TrainMode};
use serde::{Deserialize, Serialize};

use crate::artifacts::{ensure_dir, write_csv, write_json};
use crate::config::{Checkpoints, ExperimentConfig, MatrixSet, SolveSection};
use crate::gen::load_split;

pub struct TestMatrix {
    pub id: String,
    pub matrix: SparseCoo,
    /// Selects the right-hand side stream.
    pub index: u64,
}

pub fn load_matrices(set: &MatrixSet, global_seed: u64) -> Result<Vec<TestMatrix>> {
    let pairs: Vec<(String, SparseCoo)> = match set {
        MatrixSet::Dataset { dir, split } => load_split(dir, *split)?,
        MatrixSet::Files { paths } => paths
            .iter()
            .map(|p| {
                let m = read_matrix_market(p).with_context(|| format!("reading {}", p.display()))?;
                Ok((p.display().to_string(), m))
            })
            .collect::<Result<_>>()?,
        MatrixSet::Poisson {
            family,
            m,
            count,
            random_coefficients,
            seed,
        } => split_seeds(seed.unwrap_or(global_seed), Split::Test, *count)
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let a = gnnic::generate::gen_poisson(family.dim(), *m, random_coefficients.then_some(s))?;
                Ok((sample_id(Split::Test, i), a))
            })
            .collect::<Result<_>>()?,
    };
    if pairs.is_empty() {
        bail!("matrix set is empty");
    }
    Ok(pairs
        .into_iter()
        .enumerate()
        .map(|(i, (id, matrix))| TestMatrix {
            id,
            matrix,
            index: i as u64,
        })
        .collect())
}

#[derive(Default)]
pub struct Models {
    pub nic: Option<GnnModel>,
    pub gnnic: Option<GnnModel>,
}

impl Models {
    /// Loads the checkpoints that `methods` need, failing when one is missing.
    pub fn for_methods(cfg: &ExperimentConfig, ck: &Checkpoints, methods: &[PreconditionerKind]) -> Result<Self> {
        let mut models = Models::default();
        for (kind, mode, explicit, slot) in [
            (PreconditionerKind::Nic, TrainMode::Nic, ck.nic.as_ref(), &mut models.nic),
            (PreconditionerKind::GnnIc, TrainMode::GnnIc, ck.gnnic.as_ref(), &mut models.gnnic),
        ] {
            if !methods.contains(&kind) {
                continue;
            }
            let path = cfg
                .checkpoint_for(explicit, mode)
                .ok_or_else(|| anyhow!("{kind} requested but no checkpoint was given"))?;
            *slot = Some(load_model(&path)?);
        }
        Ok(models)
    }
}

pub fn load_model(path: &PathBuf) -> Result<GnnModel> {
    GnnModel::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn build_preconditioner(kind: PreconditionerKind, a: &SparseCoo, models: &Models) -> Result<Preconditioner> {
    let need = |m: &Option<GnnModel>| m.clone().ok_or_else(|| anyhow!("no checkpoint loaded for {kind}"));
    Ok(match kind {
        PreconditionerKind::None => Preconditioner::identity(a.n_rows()),
        PreconditionerKind::Jacobi => jacobi(a)?,
        PreconditionerKind::Ic0 => ic0(a)?,
        PreconditionerKind::Nic => nic_predict(&need(&models.nic)?, a)?,
        PreconditionerKind::GnnIc => gnn_ic_predict(&need(&models.gnnic)?, a)?,
    })
}

pub fn solve_config(s: &SolveSection) -> SolveConfig {
    SolveConfig {
        rel_tol: s.rel_tol,
        max_iters: s.max_iters,
        ..Default::default()
    }
}

pub fn solve(a: &gnnic::sparse::SparseCsr, b: &[f64], p: &Preconditioner, cfg: &SolveConfig) -> Result<SolveReport> {
    let (_, rep) = if p.kind() == PreconditionerKind::None {
        cg(a, b, cfg)?
    } else {
        pcg(a, b, p, cfg)?
    };
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub matrix: String,
    pub n: usize,
    pub nnz: usize,
    pub method: PreconditionerKind,
    pub precond_nnz: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_rel_residual: f64,
    pub true_rel_residual: f64,
    pub p_time: f64,
    pub cg_time: f64,
    pub total_time: f64,
    pub tri_solve_time_per_iter: f64,
    pub min_factor_diagonal: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: PreconditionerKind,
    pub matrices: usize,
    pub mean_iterations: f64,
    pub all_converged: bool,
    pub mean_p_time: f64,
    pub mean_cg_time: f64,
    pub mean_total_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: Vec<MethodSummary>,
}

impl EvalReport {
    pub fn summary_for(&self, kind: PreconditionerKind) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == kind)
    }
}

/// One matrix, one method: optional warm-up solve, then `repeats` timed
/// construct-and-solve runs whose times are averaged.
pub fn measure(
    tm: &TestMatrix,
    kind: PreconditionerKind,
    models: &Models,
    s: &SolveSection,
    seed: u64,
) -> Result<EvalRow> {
    let a = &tm.matrix;
    let csr = a.to_csr();
    let b = seeded_rhs(a.n_rows(), seed, tm.index);
    let cfg = solve_config(s);
    if s.warm_start {
        let p = build_preconditioner(kind, a, models)?;
        solve(&csr, &b, &p, &cfg)?;
    }
    let mut reports = Vec::with_capacity(s.repeats);
    let mut last = None;
    for _ in 0..s.repeats {
        let p = build_preconditioner(kind, a, models)?;
        reports.push(solve(&csr, &b, &p, &cfg)?);
        last = Some(p);
    }
    let p = last.expect("repeats >= 1");
    let first = &reports[0];
    if reports.iter().any(|r| r.iterations != first.iterations) {
        bail!("{kind} on {} is not deterministic across repeats", tm.id);
    }
    let mean = |f: fn(&SolveReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
    let min_factor_diagonal = p
        .factor()
        .map(|l| l.diagonal().into_iter().fold(f64::INFINITY, f64::min));
    Ok(EvalRow {
        matrix: tm.id.clone(),
        n: a.n_rows(),
        nnz: a.nnz(),
        method: kind,
        precond_nnz: p.nnz(),
        iterations: first.iterations,
        converged: first.converged,
        final_rel_residual: first.final_rel_residual,
        true_rel_residual: first.true_rel_residual,
        p_time: mean(|r| r.p_time),
        cg_time: mean(|r| r.cg_time),
        total_time: mean(|r| r.total_time),
        tri_solve_time_per_iter: mean(|r| r.tri_solve_time_per_iter),
        min_factor_diagonal,
    })
}

pub fn summarize(rows: &[EvalRow], methods: &[PreconditionerKind]) -> Vec<MethodSummary> {
    let mut by: BTreeMap<usize, Vec<&EvalRow>> = BTreeMap::new();
    for r in rows {
        if let Some(k) = methods.iter().position(|m| *m == r.method) {
            by.entry(k).or_default().push(r);
        }
    }
    by.into_iter()
        .map(|(k, rs)| {
            let count = rs.len() as f64;
            let mean = |f: fn(&EvalRow) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / count;
            MethodSummary {
                method: methods[k],
                matrices: rs.len(),
                mean_iterations: mean(|r| r.iterations as f64),
                all_converged: rs.iter().all(|r| r.converged),
                mean_p_time: mean(|r| r.p_time),
                mean_cg_time: mean(|r| r.cg_time),
                mean_total_time: mean(|r| r.total_time),
            }
        })
        .collect()
}

pub fn evaluate(
    matrices: &[TestMatrix],
    methods: &[PreconditionerKind],
    models: &Models,
    s: &SolveSection,
    seed: u64,
) -> Result<EvalReport> {
    let mut rows = Vec::new();
    for tm in matrices {
        for &kind in methods {
            let row = measure(tm, kind, models, s, seed).with_context(|| format!("{kind} on {}", tm.id))?;
            log::info!("{} {}: {} iterations", tm.id, kind, row.iterations);
            rows.push(row);
        }
    }
    let summary = summarize(&rows, methods);
    Ok(EvalReport { rows, summary })
}

pub fn run(cfg: &ExperimentConfig) -> Result<EvalReport> {
    ensure_dir(&cfg.out)?;
    let e = &cfg.eval;
    let models = Models::for_methods(cfg, &e.checkpoints, &e.methods)?;
    let matrices = load_matrices(&e.matrices, cfg.seed)?;
    let report = evaluate(&matrices, &e.methods, &models, &e.solve, cfg.seed)?;
    write_csv(&cfg.out.join("eval.csv"), "eval", cfg, &report.rows)?;
    write_csv(&cfg.out.join("eval_summary.csv"), "eval", cfg, &report.summary)?;
    write_json(&cfg.out.join("eval.json"), "eval", cfg, &report)?;
    Ok(report)
}
