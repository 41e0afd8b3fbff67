use anyhow::{bail, Result};
use gnnic::precond::{
    factor_relative_error, gnn_ic_predict, ic0_factor, nic_predict, ErrorStats, FactorErrorReport,
    PreconditionerKind,
};
use gnnic::train::TrainMode;
use serde::{Deserialize, Serialize};

use crate::artifacts::{ensure_dir, write_csv, write_json};
use crate::config::ExperimentConfig;
use crate::eval::{load_matrices, load_model};

/// Log-spaced bins over `[1e-6, 1e2]`; values outside go to `below`/`above`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub below: usize,
    pub above: usize,
}

const HIST_LO: f64 = -6.0;
const HIST_HI: f64 = 2.0;

impl Histogram {
    pub fn of(values: impl Iterator<Item = f64>, bins: usize) -> Self {
        let edges: Vec<f64> = (0..=bins)
            .map(|k| 10f64.powf(HIST_LO + (HIST_HI - HIST_LO) * k as f64 / bins as f64))
            .collect();
        let mut h = Histogram {
            counts: vec![0; bins],
            edges,
            below: 0,
            above: 0,
        };
        for v in values {
            if v < h.edges[0] {
                h.below += 1;
            } else if v >= h.edges[bins] {
                h.above += 1;
            } else {
                let k = h.edges.partition_point(|e| *e <= v) - 1;
                h.counts[k.min(bins - 1)] += 1;
            }
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodErrors {
    pub method: PreconditionerKind,
    pub diagonal: ErrorStats,
    pub off_diagonal: ErrorStats,
    pub diagonal_histogram: Histogram,
    pub off_diagonal_histogram: Histogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryRow {
    pub row: usize,
    pub col: usize,
    pub diagonal: bool,
    pub predicted: f64,
    pub reference: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub matrix: String,
    pub n: usize,
    pub nnz_lower: usize,
    pub methods: Vec<MethodErrors>,
}

pub fn summarize(method: PreconditionerKind, r: &FactorErrorReport, bins: usize) -> MethodErrors {
    let pick = |diag: bool| r.entries.iter().filter(move |e| (e.row == e.col) == diag).map(|e| e.rel_error);
    MethodErrors {
        method,
        diagonal: r.diagonal.clone(),
        off_diagonal: r.off_diagonal.clone(),
        diagonal_histogram: Histogram::of(pick(true), bins),
        off_diagonal_histogram: Histogram::of(pick(false), bins),
    }
}

pub fn entry_rows(r: &FactorErrorReport) -> Vec<EntryRow> {
    r.entries
        .iter()
        .map(|e| EntryRow {
            row: e.row,
            col: e.col,
            diagonal: e.row == e.col,
            predicted: e.predicted,
            reference: e.reference,
            rel_error: e.rel_error,
        })
        .collect()
}

pub fn run(cfg: &ExperimentConfig) -> Result<AnalyzeReport> {
    ensure_dir(&cfg.out)?;
    let an = &cfg.analyze;
    let tm = load_matrices(&an.matrices, cfg.seed)?.swap_remove(0);
    let a = &tm.matrix;
    let l_ic = ic0_factor(a)?;
    let mut methods = Vec::new();
    for (kind, mode, explicit) in [
        (PreconditionerKind::Nic, TrainMode::Nic, an.checkpoints.nic.as_ref()),
        (PreconditionerKind::GnnIc, TrainMode::GnnIc, an.checkpoints.gnnic.as_ref()),
    ] {
        let Some(path) = cfg.checkpoint_for(explicit, mode) else {
            continue;
        };
        let model = load_model(&path)?;
        let p = match kind {
            PreconditionerKind::Nic => nic_predict(&model, a)?,
            _ => gnn_ic_predict(&model, a)?,
        };
        let report = factor_relative_error(p.factor().expect("learned factor"), &l_ic)?;
        let tag = crate::config::mode_tag(mode);
        write_csv(
            &cfg.out.join(format!("relative_error_{tag}.csv")),
            "analyze",
            cfg,
            &entry_rows(&report),
        )?;
        methods.push(summarize(kind, &report, an.bins));
    }
    if methods.is_empty() {
        bail!("analyze needs at least one checkpoint");
    }
    let report = AnalyzeReport {
        matrix: tm.id.clone(),
        n: a.n_rows(),
        nnz_lower: l_ic.nnz(),
        methods,
    };
    write_json(&cfg.out.join("analyze.json"), "analyze", cfg, &report)?;
    Ok(report)
}
