//! Conjugate gradient and preconditioned conjugate gradient with phase timing.
//!
//! Stopping rule: `‖r_k‖₂ / ‖b‖₂ <= rel_tol` on the recurrence residual. The
//! true residual `b − Ax` is recomputed once at the end and reported alongside.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::precond::Preconditioner;
use crate::sparse::SparseCsr;

pub(crate) fn validate_lower(l: &SparseCsr) -> Result<()> {
    for i in 0..l.n_rows() {
        let (cols, vals) = l.row(i);
        match cols.last() {
            Some(&c) if c == i => {}
            Some(&c) if c > i => return Err(Error::NotTriangular { row: i, col: c }),
            _ => return Err(Error::ZeroPivot(i)),
        }
        if vals[vals.len() - 1] == 0.0 {
            return Err(Error::ZeroPivot(i));
        }
    }
    Ok(())
}

pub(crate) fn validate_upper(u: &SparseCsr) -> Result<()> {
    for i in 0..u.n_rows() {
        let (cols, vals) = u.row(i);
        match cols.first() {
            Some(&c) if c == i => {}
            Some(&c) if c < i => return Err(Error::NotTriangular { row: i, col: c }),
            _ => return Err(Error::ZeroPivot(i)),
        }
        if vals[0] == 0.0 {
            return Err(Error::ZeroPivot(i));
        }
    }
    Ok(())
}

/// Row-by-row forward substitution. `l` must have passed [`validate_lower`].
pub(crate) fn forward_substitute(l: &SparseCsr, b: &[f64], x: &mut [f64]) {
    for i in 0..l.n_rows() {
        let (cols, vals) = l.row(i);
        let last = cols.len() - 1;
        let mut s = b[i];
        for k in 0..last {
            s -= vals[k] * x[cols[k]];
        }
        x[i] = s / vals[last];
    }
}

/// Row-by-row backward substitution. `u` must have passed [`validate_upper`].
pub(crate) fn backward_substitute(u: &SparseCsr, b: &[f64], x: &mut [f64]) {
    for i in (0..u.n_rows()).rev() {
        let (cols, vals) = u.row(i);
        let mut s = b[i];
        for k in 1..cols.len() {
            s -= vals[k] * x[cols[k]];
        }
        x[i] = s / vals[0];
    }
}

pub fn tri_solve_lower(l: &SparseCsr, b: &[f64]) -> Result<Vec<f64>> {
    check_len(l.n_rows(), b.len())?;
    validate_lower(l)?;
    let mut x = vec![0.0; b.len()];
    forward_substitute(l, b, &mut x);
    Ok(x)
}

pub fn tri_solve_upper(u: &SparseCsr, b: &[f64]) -> Result<Vec<f64>> {
    check_len(u.n_rows(), b.len())?;
    validate_upper(u)?;
    let mut x = vec![0.0; b.len()];
    backward_substitute(u, b, &mut x);
    Ok(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub rel_tol: f64,
    /// `None` means `10 n`.
    pub max_iters: Option<usize>,
    pub record_residuals: bool,
    /// Random initial guess in `[-1, 1)^n`; `None` starts from zero.
    pub x0_seed: Option<u64>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            max_iters: None,
            record_residuals: false,
            x0_seed: None,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::Invalid(format!("rel_tol must be positive, got {}", self.rel_tol)));
        }
        Ok(())
    }

    fn max_iters_for(&self, n: usize) -> usize {
        self.max_iters.unwrap_or(10 * n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: String,
    pub n: usize,
    pub iterations: usize,
    pub converged: bool,
    /// `‖r_k‖ / ‖b‖` from the recurrence.
    pub final_rel_residual: f64,
    /// `‖b − A x‖ / ‖b‖` recomputed at exit.
    pub true_rel_residual: f64,
    /// Set when the two residuals differ by more than `10 · rel_tol`.
    pub residual_gap: bool,
    /// Set when `pᵀAp <= 0` or a recurrence scalar became non-finite.
    pub breakdown: bool,
    pub p_time: f64,
    pub cg_time: f64,
    pub total_time: f64,
    /// Mean time per iteration spent in the two triangular solves.
    pub tri_solve_time_per_iter: f64,
    /// Mean wall time of one loop iteration.
    pub iter_time_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_history: Option<Vec<f64>>,
}

impl SolveReport {
    /// Residual history as `iteration,rel_residual` CSV lines.
    pub fn residual_csv(&self) -> Option<String> {
        self.residual_history.as_ref().map(|h| {
            let mut s = String::from("iteration,rel_residual\n");
            for (k, r) in h.iter().enumerate() {
                s.push_str(&format!("{k},{r:e}\n"));
            }
            s
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn initial_guess(n: usize, cfg: &SolveConfig) -> Vec<f64> {
    match cfg.x0_seed {
        None => vec![0.0; n],
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
        }
    }
}

struct Finish<'a> {
    a: &'a SparseCsr,
    b: &'a [f64],
    b_norm: f64,
    cfg: &'a SolveConfig,
}

impl Finish<'_> {
    #[allow(clippy::too_many_arguments)]
    fn report(
        &self,
        method: &str,
        x: &[f64],
        iterations: usize,
        rel: f64,
        breakdown: bool,
        p_time: f64,
        loop_time: Duration,
        tri_time: Duration,
        history: Option<Vec<f64>>,
    ) -> SolveReport {
        let mut ax = vec![0.0; x.len()];
        self.a.matvec_into(x, &mut ax);
        let true_res: Vec<f64> = self.b.iter().zip(&ax).map(|(b, y)| b - y).collect();
        let true_rel = if self.b_norm > 0.0 {
            norm(&true_res) / self.b_norm
        } else {
            norm(&true_res)
        };
        let cg_time = loop_time.as_secs_f64();
        let per = |d: Duration| {
            if iterations == 0 {
                0.0
            } else {
                d.as_secs_f64() / iterations as f64
            }
        };
        SolveReport {
            method: method.to_string(),
            n: x.len(),
            iterations,
            converged: rel <= self.cfg.rel_tol && !breakdown,
            final_rel_residual: rel,
            true_rel_residual: true_rel,
            residual_gap: (true_rel - rel).abs() > 10.0 * self.cfg.rel_tol,
            breakdown,
            p_time,
            cg_time,
            total_time: p_time + cg_time,
            tri_solve_time_per_iter: per(tri_time),
            iter_time_mean: per(loop_time),
            residual_history: history,
        }
    }
}

/// Unpreconditioned conjugate gradient.
pub fn cg(a: &SparseCsr, b: &[f64], cfg: &SolveConfig) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    let n = a.n_rows();
    check_len(n, a.n_cols())?;
    check_len(n, b.len())?;
    let fin = Finish {
        a,
        b,
        b_norm: norm(b),
        cfg,
    };
    let start = Instant::now();
    let mut x = initial_guess(n, cfg);
    let mut r = vec![0.0; n];
    a.matvec_into(&x, &mut r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let rel_of = |r: &[f64]| if fin.b_norm > 0.0 { norm(r) / fin.b_norm } else { norm(r) };
    let mut rel = rel_of(&r);
    let mut history = cfg.record_residuals.then(|| vec![rel]);
    let mut p = r.clone();
    let mut w = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut k = 0;
    let mut breakdown = false;
    while rel > cfg.rel_tol && k < cfg.max_iters_for(n) {
        a.matvec_into(&p, &mut w);
        let pw = dot(&p, &w);
        if !(pw > 0.0) || !pw.is_finite() {
            breakdown = true;
            break;
        }
        let alpha = rr / pw;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&w).for_each(|(ri, wi)| *ri -= alpha * wi);
        k += 1;
        rel = rel_of(&r);
        if let Some(h) = history.as_mut() {
            h.push(rel);
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
    }
    let report = fin.report("None", &x, k, rel, breakdown, 0.0, start.elapsed(), Duration::ZERO, history);
    Ok((x, report))
}

/// Preconditioned conjugate gradient. Each iteration applies the
/// preconditioner once: two triangular solves `Ly = r`, `Lᵀz = y` for factor
/// preconditioners, or a diagonal division for Jacobi.
pub fn pcg(
    a: &SparseCsr,
    b: &[f64],
    precond: &Preconditioner,
    cfg: &SolveConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    let n = a.n_rows();
    check_len(n, a.n_cols())?;
    check_len(n, b.len())?;
    check_len(n, precond.n())?;
    let fin = Finish {
        a,
        b,
        b_norm: norm(b),
        cfg,
    };
    let start = Instant::now();
    let mut tri = Duration::ZERO;
    let mut x = initial_guess(n, cfg);
    let mut r = vec![0.0; n];
    a.matvec_into(&x, &mut r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let rel_of = |r: &[f64]| if fin.b_norm > 0.0 { norm(r) / fin.b_norm } else { norm(r) };
    let mut rel = rel_of(&r);
    let mut history = cfg.record_residuals.then(|| vec![rel]);

    let mut z = vec![0.0; n];
    let mut work = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut rz = 0.0;
    let mut k = 0;
    let mut breakdown = false;
    while rel > cfg.rel_tol && k < cfg.max_iters_for(n) {
        tri += precond.apply(&r, &mut z, &mut work);
        let rz_new = dot(&r, &z);
        if k == 0 {
            p.copy_from_slice(&z);
        } else {
            let beta = rz_new / rz;
            p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
        }
        rz = rz_new;
        a.matvec_into(&p, &mut w);
        let pw = dot(&p, &w);
        if !(pw > 0.0) || !pw.is_finite() || !rz.is_finite() {
            breakdown = true;
            break;
        }
        let alpha = rz / pw;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&w).for_each(|(ri, wi)| *ri -= alpha * wi);
        k += 1;
        rel = rel_of(&r);
        if let Some(h) = history.as_mut() {
            h.push(rel);
        }
    }
    let report = fin.report(
        precond.kind().name(),
        &x,
        k,
        rel,
        breakdown,
        precond.p_time(),
        start.elapsed(),
        tri,
        history,
    );
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{gen_poisson, GridDim};
    use crate::precond::{ic0, jacobi, PreconditionerKind};
    use crate::sparse::{LowerFactor, SparseCoo};

    fn random_rhs(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn triangular_small_cases() {
        let id = SparseCoo::identity(3).to_csr();
        assert_eq!(tri_solve_lower(&id, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(tri_solve_upper(&id, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let l = SparseCoo::from_dense(2, 2, &[2.0, 0.0, 1.0, 1.0]).unwrap().to_csr();
        assert_eq!(tri_solve_lower(&l, &[4.0, 3.0]).unwrap(), vec![2.0, 1.0]);
        let u = l.transpose();
        assert_eq!(tri_solve_upper(&u, &[5.0, 1.0]).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn triangular_errors() {
        let zero_diag = SparseCoo::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 0, 1.0)]).unwrap().to_csr();
        assert!(matches!(tri_solve_lower(&zero_diag, &[1.0, 1.0]), Err(Error::ZeroPivot(1))));
        let explicit_zero = SparseCoo::from_triplets(2, 2, vec![(0, 0, 0.0), (1, 1, 1.0)]).unwrap().to_csr();
        assert!(matches!(tri_solve_lower(&explicit_zero, &[1.0, 1.0]), Err(Error::ZeroPivot(0))));
        let upper = SparseCoo::from_dense(2, 2, &[1.0, 1.0, 0.0, 1.0]).unwrap().to_csr();
        assert!(matches!(tri_solve_lower(&upper, &[1.0, 1.0]), Err(Error::NotTriangular { .. })));
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let a = SparseCoo::identity(10).to_csr();
        let b = random_rhs(10, 1);
        let (x, rep) = cg(&a, &b, &SolveConfig::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        assert_eq!(x, b);
    }

    #[test]
    fn zero_rhs_needs_no_iterations() {
        let a = gen_poisson(GridDim::Two, 4, None).unwrap().to_csr();
        let (x, rep) = cg(&a, &[0.0; 16], &SolveConfig::default()).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(rep.converged);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn a_norm_error_is_monotone() {
        for seed in 0..3 {
            let a = gen_poisson(GridDim::Two, 16, Some(seed)).unwrap();
            let csr = a.to_csr();
            let n = a.n_rows();
            let x_star = random_rhs(n, seed + 10);
            let b = csr.matvec(&x_star).unwrap();
            let mut last = f64::INFINITY;
            for iters in 0..60 {
                let cfg = SolveConfig {
                    rel_tol: 1e-14,
                    max_iters: Some(iters),
                    ..Default::default()
                };
                let (x, _) = cg(&csr, &b, &cfg).unwrap();
                let e: Vec<f64> = x.iter().zip(&x_star).map(|(p, q)| p - q).collect();
                let ae = csr.matvec(&e).unwrap();
                let a_norm = dot(&e, &ae).sqrt();
                assert!(a_norm <= last * (1.0 + 1e-12), "iteration {iters}");
                last = a_norm;
            }
        }
    }

    #[test]
    fn non_convergence_is_reported_not_raised() {
        let a = gen_poisson(GridDim::Two, 16, Some(1)).unwrap().to_csr();
        let b = random_rhs(256, 2);
        let cfg = SolveConfig {
            max_iters: Some(3),
            ..Default::default()
        };
        let (_, rep) = cg(&a, &b, &cfg).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 3);
        assert!(SolveConfig { rel_tol: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn exact_cholesky_preconditioner_converges_immediately() {
        // Tridiagonal: IC(0) is the exact Cholesky factor.
        let n = 50;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 3.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        let a = SparseCoo::from_triplets(n, n, t).unwrap();
        let p = ic0(&a).unwrap();
        let (_, rep) = pcg(&a.to_csr(), &random_rhs(n, 3), &p, &SolveConfig::default()).unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 2);
    }

    #[test]
    fn identity_factor_reproduces_cg_transcript() {
        let a = gen_poisson(GridDim::Two, 12, Some(4)).unwrap();
        let csr = a.to_csr();
        let b = random_rhs(a.n_rows(), 5);
        let cfg = SolveConfig {
            record_residuals: true,
            ..Default::default()
        };
        let (x_cg, r_cg) = cg(&csr, &b, &cfg).unwrap();
        let p = Preconditioner::from_factor(PreconditionerKind::Nic, LowerFactor::identity(a.n_rows()), 0.0).unwrap();
        let (x_p, r_p) = pcg(&csr, &b, &p, &cfg).unwrap();
        let (x_i, r_i) = pcg(&csr, &b, &Preconditioner::identity(a.n_rows()), &cfg).unwrap();
        assert_eq!(r_cg.iterations, r_p.iterations);
        assert_eq!(r_cg.iterations, r_i.iterations);
        let (h0, h1, h2) = (
            r_cg.residual_history.unwrap(),
            r_p.residual_history.unwrap(),
            r_i.residual_history.unwrap(),
        );
        assert_eq!(h0.len(), r_cg.iterations + 1);
        for k in 0..h0.len() {
            assert!((h0[k] - h1[k]).abs() <= 1e-12 * h0[k]);
            assert!((h0[k] - h2[k]).abs() <= 1e-12 * h0[k]);
        }
        for k in 0..x_cg.len() {
            assert!((x_cg[k] - x_p[k]).abs() <= 1e-10 * x_cg[k].abs().max(1.0));
            assert!((x_cg[k] - x_i[k]).abs() <= 1e-10 * x_cg[k].abs().max(1.0));
        }
    }

    #[test]
    fn factor_application_solves_llt_system() {
        let a = gen_poisson(GridDim::Two, 10, Some(2)).unwrap();
        let p = ic0(&a).unwrap();
        let l = p.factor().unwrap();
        let r = random_rhs(100, 1);
        let (mut z, mut w) = (vec![0.0; 100], vec![0.0; 100]);
        p.apply(&r, &mut z, &mut w);
        let llt_z = crate::loss::llt_matvec_scatter(l, &z).unwrap();
        let diff: Vec<f64> = llt_z.iter().zip(&r).map(|(p, q)| p - q).collect();
        assert!(norm(&diff) / norm(&r) < 1e-12);
    }

    #[test]
    fn baseline_ordering_on_random_poisson() {
        let a = gen_poisson(GridDim::Two, 32, Some(7)).unwrap();
        let csr = a.to_csr();
        let b = random_rhs(a.n_rows(), 8);
        let cfg = SolveConfig::default();
        let (_, none) = cg(&csr, &b, &cfg).unwrap();
        let (_, jac) = pcg(&csr, &b, &jacobi(&a).unwrap(), &cfg).unwrap();
        let (_, ic) = pcg(&csr, &b, &ic0(&a).unwrap(), &cfg).unwrap();
        assert!(none.converged && jac.converged && ic.converged);
        assert!(none.iterations > jac.iterations && jac.iterations > ic.iterations);
        assert!(ic.true_rel_residual < 1e-5);
        assert!(!ic.residual_gap);
    }

    #[test]
    fn report_timing_is_consistent() {
        let a = gen_poisson(GridDim::Two, 32, Some(1)).unwrap();
        let p = ic0(&a).unwrap();
        let (_, rep) = pcg(&a.to_csr(), &random_rhs(a.n_rows(), 1), &p, &SolveConfig::default()).unwrap();
        assert!(rep.total_time >= rep.p_time + rep.cg_time - 1e-9);
        let predicted = rep.iter_time_mean * rep.iterations as f64;
        assert!((predicted - rep.cg_time).abs() <= 0.2 * rep.cg_time);
        assert!(rep.tri_solve_time_per_iter > 0.0);
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"cg_time\""));
        assert!(json.contains("\"p_time\""));
        assert!(json.contains("\"tri_solve_time_per_iter\""));
    }
}
