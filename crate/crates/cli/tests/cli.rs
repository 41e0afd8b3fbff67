use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Proc;

use gnnic::gnn::{GnnConfig, GnnModel};
use gnnic::mtx::read_matrix_market;
use gnnic::precond::{ic0_factor, PreconditionerKind};
use gnnic::train::{LogRecord, TrainMode, TrainState};
use gnnic_cli::artifacts::{csv_config, read_csv, read_json};
use gnnic_cli::config::{ExperimentConfig, MatrixSet};
use gnnic_cli::dropout::DropoutRow;
use gnnic_cli::eval::{EvalReport, EvalRow};
use gnnic_cli::gen::Manifest;
use gnnic_cli::{analyze, crossscale, dropout, eval, gen, train};

fn small_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed: 17,
        out: out.to_path_buf(),
        ..Default::default()
    };
    cfg.gen.m = 8;
    cfg.gen.train = 4;
    cfg.gen.validation = 2;
    cfg.gen.test = 3;
    cfg.train.epochs = 3;
    cfg.train.batch_size = 2;
    cfg.eval.matrices = MatrixSet::Poisson {
        family: gnnic_cli::config::Family::Poisson2d,
        m: 8,
        count: 3,
        random_coefficients: true,
        seed: None,
    };
    cfg
}

fn without_timing(rows: &[EvalRow]) -> Vec<EvalRow> {
    rows.iter()
        .map(|r| EvalRow {
            p_time: 0.0,
            cg_time: 0.0,
            total_time: 0.0,
            tri_solve_time_per_iter: 0.0,
            ..r.clone()
        })
        .collect()
}

fn train_mode(cfg: &ExperimentConfig, mode: TrainMode) -> train::TrainSummary {
    let mut c = cfg.clone();
    c.train.mode = mode;
    train::run(&c).unwrap()
}

#[test]
fn gen_writes_symmetric_files_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.gen.m = 32;
    cfg.gen.train = 10;
    cfg.gen.validation = 0;
    cfg.gen.test = 0;
    let manifest = gen::run(&cfg).unwrap();
    assert_eq!(manifest.entries.len(), 10);
    for e in &manifest.entries {
        let path = dir.path().join(&e.file);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real symmetric"));
        let a = read_matrix_market(&path).unwrap();
        assert_eq!(a.n_rows(), 1024);
        assert!(a.is_symmetric());
        assert_eq!(a.nnz(), e.nnz);
        // Five-point stencil: nnz = 5n - 4m.
        assert_eq!(e.nnz, 5 * 1024 - 4 * 32);
        assert!(e.nnz_per_row > 4.5 && e.nnz_per_row <= 5.0);
    }
    let loaded = Manifest::load(dir.path()).unwrap();
    assert_eq!(loaded, manifest);

    let again = tempfile::tempdir().unwrap();
    let mut cfg2 = cfg.clone();
    cfg2.out = again.path().to_path_buf();
    gen::run(&cfg2).unwrap();
    for e in &manifest.entries {
        // Only the embedded output path differs between the two runs.
        let strip = |p: PathBuf| -> Vec<String> {
            fs::read_to_string(p)
                .unwrap()
                .lines()
                .filter(|l| !l.starts_with("% config"))
                .map(String::from)
                .collect()
        };
        assert_eq!(strip(dir.path().join(&e.file)), strip(again.path().join(&e.file)));
    }
}

#[test]
fn train_modes_logs_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    gen::run(&cfg).unwrap();
    cfg.train.dataset = Some(dir.path().to_path_buf());

    let g = train_mode(&cfg, TrainMode::GnnIc);
    let n = train_mode(&cfg, TrainMode::Nic);
    let gm = GnnModel::load(&g.checkpoint).unwrap();
    let nm = GnnModel::load(&n.checkpoint).unwrap();
    assert_ne!(gm.params(), nm.params());

    let log = fs::read_to_string(&g.log).unwrap();
    let mut lines = log.lines();
    assert!(lines.next().unwrap().contains("\"config\""));
    let records: Vec<LogRecord> = lines.map(|l| serde_json::from_str(l).unwrap()).collect();
    let validations = records.iter().filter(|r| matches!(r, LogRecord::Validation { .. })).count();
    assert_eq!(validations, cfg.train.epochs);

    // Stop after two epochs, then continue from the saved state.
    let full_state = TrainState::load(&g.state).unwrap();
    let resume_dir = tempfile::tempdir().unwrap();
    let mut short = cfg.clone();
    short.out = resume_dir.path().to_path_buf();
    short.train.stop_after = Some(2);
    let partial = train::run(&short).unwrap();
    assert_eq!(partial.epochs, 2);
    let mut rest = short.clone();
    rest.train.stop_after = None;
    rest.train.resume = Some(partial.state.clone());
    let resumed = train::run(&rest).unwrap();
    assert_eq!(TrainState::load(&resumed.state).unwrap(), full_state);
    assert_eq!(
        GnnModel::load(&resumed.checkpoint).unwrap(),
        GnnModel::load(&g.checkpoint).unwrap()
    );

    let mut other = rest.clone();
    other.train.lr = 0.1;
    assert!(train::run(&other).is_err());
}

#[test]
fn eval_schema_ordering_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.train.epochs = 1;
    train_mode(&cfg, TrainMode::GnnIc);
    train_mode(&cfg, TrainMode::Nic);
    let report = eval::run(&cfg).unwrap();
    assert_eq!(report.rows.len(), 3 * 5);

    let header = fs::read_to_string(dir.path().join("eval.csv"))
        .unwrap()
        .lines()
        .find(|l| !l.starts_with('#'))
        .unwrap()
        .to_string();
    for col in ["method", "iterations", "p_time", "cg_time", "total_time"] {
        assert!(header.split(',').any(|c| c == col), "{col} missing from {header}");
    }
    for m in ["test-0000", "test-0001", "test-0002"] {
        let it = |k| report.rows.iter().find(|r| r.matrix == m && r.method == k).unwrap().iterations;
        assert!(it(PreconditionerKind::Ic0) < it(PreconditionerKind::None));
    }

    let csv_rows: Vec<EvalRow> = read_csv(&dir.path().join("eval.csv")).unwrap();
    let json: EvalReport = read_json(&dir.path().join("eval.json")).unwrap().result;
    assert_eq!(csv_rows, json.rows);
    assert_eq!(csv_config(&dir.path().join("eval.csv")).unwrap(), cfg);

    let again = eval::run(&cfg).unwrap();
    assert_eq!(without_timing(&report.rows), without_timing(&again.rows));
}

#[test]
fn eval_requires_checkpoints_for_learned_methods() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let err = eval::run(&cfg).unwrap_err().to_string();
    assert!(err.contains("NIC"), "{err}");
    let mut baseline_only = cfg.clone();
    baseline_only.eval.methods = vec![PreconditionerKind::None, PreconditionerKind::Ic0];
    assert!(eval::run(&baseline_only).is_ok());
}

#[test]
fn crossscale_matches_eval_at_training_size() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.train.epochs = 1;
    train_mode(&cfg, TrainMode::GnnIc);
    cfg.crossscale.sizes = vec![4, 8, 16];
    cfg.crossscale.count = 3;
    cfg.eval.methods = vec![PreconditionerKind::Ic0, PreconditionerKind::GnnIc];
    let e = eval::run(&cfg).unwrap();
    let c = crossscale::run(&cfg).unwrap();
    assert_eq!(c.rows.len(), 3 * 2);
    for kind in [PreconditionerKind::Ic0, PreconditionerKind::GnnIc] {
        let at8 = c.rows.iter().find(|r| r.m == 8 && r.method == kind).unwrap();
        assert_eq!(at8.mean_iterations, e.summary_for(kind).unwrap().mean_iterations);
    }
    for r in &c.rows {
        let ic = c.rows.iter().find(|q| q.m == r.m && q.method == PreconditionerKind::Ic0).unwrap();
        assert_eq!(r.ratio_to_ic0, r.mean_iterations / ic.mean_iterations);
        assert!(r.min_factor_diagonal > 0.0);
    }

    let empty = tempfile::tempdir().unwrap();
    let mut none = cfg.clone();
    none.out = empty.path().to_path_buf();
    assert!(crossscale::run(&none).is_err());
}

#[test]
fn dropout_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.dropout.matrices = MatrixSet::Poisson {
        family: gnnic_cli::config::Family::Poisson2d,
        m: 16,
        count: 1,
        random_coefficients: true,
        seed: None,
    };
    cfg.dropout.eps = vec![0.0, 0.1, 0.2, 0.3, f64::MAX];
    let r = dropout::run(&cfg).unwrap();
    assert_eq!(r.rows[0].iterations, r.baseline_iterations[0]);
    assert_eq!(r.rows[0].nnz_reduction, 0.0);
    for w in r.rows.windows(2) {
        assert!(w[1].nnz <= w[0].nnz);
    }
    assert_eq!(r.rows.last().unwrap().nnz, 256);
    let csv: Vec<DropoutRow> = read_csv(&dir.path().join("dropout.csv")).unwrap();
    assert_eq!(csv, r.rows);
}

#[test]
fn analyze_zero_model_matches_hand_formula() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    let ck = dir.path().join("zero.bin");
    GnnModel::zeroed(GnnConfig::default()).save(&ck).unwrap();
    cfg.analyze.checkpoints.gnnic = Some(ck);
    cfg.analyze.matrices = cfg.eval.matrices.clone();
    let report = analyze::run(&cfg).unwrap();
    let m = &report.methods[0];
    assert_eq!(m.method, PreconditionerKind::GnnIc);
    assert_eq!(m.off_diagonal.max, 0.0);

    let a = gnnic_cli::eval::load_matrices(&cfg.analyze.matrices, cfg.seed).unwrap().swap_remove(0).matrix;
    let sigma = gnnic::sparse::value_std(a.values());
    let l_ic = ic0_factor(&a).unwrap();
    let rows: Vec<analyze::EntryRow> = read_csv(&dir.path().join("relative_error_gnnic.csv")).unwrap();
    assert_eq!(rows.len(), l_ic.nnz());
    assert_eq!(rows.len(), report.nnz_lower);
    for r in rows.iter().filter(|r| r.diagonal) {
        let expected = sigma.sqrt() / r.reference.abs();
        assert!((r.rel_error - expected).abs() <= 1e-12 * expected);
    }
    let hist = &m.diagonal_histogram;
    assert_eq!(hist.counts.iter().sum::<usize>() + hist.below + hist.above, 64);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_gnnic");
    let dir = tempfile::tempdir().unwrap();
    let ok = Proc::new(bin)
        .args(["gen", "--seed", "2", "--out"])
        .arg(dir.path())
        .env("RUST_LOG", "warn")
        .status()
        .unwrap();
    assert!(ok.success());
    assert!(dir.path().join("manifest.json").exists());

    let missing = Proc::new(bin).args(["eval", "--config", "/definitely/missing.toml"]).output().unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));

    let no_ckpt = Proc::new(bin).args(["analyze", "--out"]).arg(dir.path()).output().unwrap();
    assert!(!no_ckpt.status.success());

    let bad_flag = Proc::new(bin).args(["train", "--mode", "bogus"]).output().unwrap();
    assert!(!bad_flag.status.success());
}
