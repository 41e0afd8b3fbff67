//! Preconditioner constructors: Jacobi, IC(0), the direct GNN factor, the
//! GNN correction added to IC(0), and post-hoc fill-in dropout.

use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::features::{build_graph, GraphSample};
use crate::gnn::{assemble_factor, GnnModel};
use crate::krylov::{backward_substitute, forward_substitute, validate_lower, validate_upper};
use crate::sparse::{lower_triangle, LowerFactor, SparseCoo, SparseCsr};

/// Diagonal shifts attempted after an IC(0) breakdown.
pub const IC0_MAX_SHIFTS: usize = 3;
/// First shift relative to `max |a_ii|`; each retry doubles it.
pub const IC0_SHIFT_START: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PreconditionerKind {
    None,
    Jacobi,
    #[serde(rename = "IC0")]
    Ic0,
    #[serde(rename = "NIC")]
    Nic,
    #[serde(rename = "GnnIC")]
    GnnIc,
}

impl PreconditionerKind {
    pub const ALL: [PreconditionerKind; 5] = [
        PreconditionerKind::None,
        PreconditionerKind::Jacobi,
        PreconditionerKind::Ic0,
        PreconditionerKind::Nic,
        PreconditionerKind::GnnIc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PreconditionerKind::None => "None",
            PreconditionerKind::Jacobi => "Jacobi",
            PreconditionerKind::Ic0 => "IC0",
            PreconditionerKind::Nic => "NIC",
            PreconditionerKind::GnnIc => "GnnIC",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, PreconditionerKind::Nic | PreconditionerKind::GnnIc)
    }
}

impl fmt::Display for PreconditionerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PreconditionerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "jacobi" => Ok(Self::Jacobi),
            "ic0" | "ic(0)" => Ok(Self::Ic0),
            "nic" => Ok(Self::Nic),
            "gnnic" => Ok(Self::GnnIc),
            _ => Err(Error::Invalid(format!("unknown preconditioner `{s}`"))),
        }
    }
}

/// `LLᵀ` factor with both triangles in CSR form for substitution.
#[derive(Clone, Debug)]
pub struct FactorPayload {
    factor: LowerFactor,
    lower: SparseCsr,
    upper: SparseCsr,
}

impl FactorPayload {
    pub fn new(factor: LowerFactor) -> Result<Self> {
        let lower = factor.to_csr();
        let upper = factor.transpose_csr();
        validate_lower(&lower)?;
        validate_upper(&upper)?;
        Ok(Self { factor, lower, upper })
    }

    pub fn factor(&self) -> &LowerFactor {
        &self.factor
    }

    pub fn lower(&self) -> &SparseCsr {
        &self.lower
    }

    pub fn upper(&self) -> &SparseCsr {
        &self.upper
    }
}

#[derive(Clone, Debug)]
pub enum Payload {
    Identity(usize),
    /// Diagonal of `A`; application divides by it.
    Diagonal(Vec<f64>),
    Factor(FactorPayload),
}

#[derive(Clone, Debug)]
pub struct Preconditioner {
    kind: PreconditionerKind,
    payload: Payload,
    /// Construction time in seconds.
    p_time: f64,
}

impl Preconditioner {
    pub fn identity(n: usize) -> Self {
        Self {
            kind: PreconditionerKind::None,
            payload: Payload::Identity(n),
            p_time: 0.0,
        }
    }

    pub fn from_factor(kind: PreconditionerKind, factor: LowerFactor, p_time: f64) -> Result<Self> {
        Ok(Self {
            kind,
            payload: Payload::Factor(FactorPayload::new(factor)?),
            p_time,
        })
    }

    pub fn kind(&self) -> PreconditionerKind {
        self.kind
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn p_time(&self) -> f64 {
        self.p_time
    }

    pub fn n(&self) -> usize {
        match &self.payload {
            Payload::Identity(n) => *n,
            Payload::Diagonal(d) => d.len(),
            Payload::Factor(f) => f.factor.n(),
        }
    }

    /// Stored entries: 0 for identity, `n` for Jacobi, `nnz(L)` for factors.
    pub fn nnz(&self) -> usize {
        match &self.payload {
            Payload::Identity(_) => 0,
            Payload::Diagonal(d) => d.len(),
            Payload::Factor(f) => f.factor.nnz(),
        }
    }

    pub fn factor(&self) -> Option<&LowerFactor> {
        match &self.payload {
            Payload::Factor(f) => Some(&f.factor),
            _ => None,
        }
    }

    pub fn is_factor(&self) -> bool {
        matches!(self.payload, Payload::Factor(_))
    }

    /// `z = P⁻¹ r`. `work` is scratch of length `n`. Returns the time spent in
    /// triangular solves (zero for non-factor payloads).
    pub fn apply(&self, r: &[f64], z: &mut [f64], work: &mut [f64]) -> Duration {
        match &self.payload {
            Payload::Identity(_) => {
                z.copy_from_slice(r);
                Duration::ZERO
            }
            Payload::Diagonal(d) => {
                for ((zi, ri), di) in z.iter_mut().zip(r).zip(d) {
                    *zi = ri / di;
                }
                Duration::ZERO
            }
            Payload::Factor(f) => {
                let t = Instant::now();
                forward_substitute(&f.lower, r, work);
                backward_substitute(&f.upper, work, z);
                t.elapsed()
            }
        }
    }

    /// Dense `P = LLᵀ` (or `diag(A)`, or `I`). For small oracles only.
    pub fn to_dense_operator(&self) -> Vec<f64> {
        let n = self.n();
        let mut p = vec![0.0; n * n];
        match &self.payload {
            Payload::Identity(_) => (0..n).for_each(|i| p[i * n + i] = 1.0),
            Payload::Diagonal(d) => (0..n).for_each(|i| p[i * n + i] = d[i]),
            Payload::Factor(f) => {
                let l = f.factor.matrix().to_dense();
                for i in 0..n {
                    for j in 0..n {
                        p[i * n + j] = (0..=i.min(j)).map(|k| l[i * n + k] * l[j * n + k]).sum();
                    }
                }
            }
        }
        p
    }
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

pub fn jacobi(a: &SparseCoo) -> Result<Preconditioner> {
    let t = Instant::now();
    let d = a.diagonal()?;
    if let Some(row) = d.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::NonPositiveDiagonal { row, value: d[row] });
    }
    Ok(Preconditioner {
        kind: PreconditionerKind::Jacobi,
        payload: Payload::Diagonal(d),
        p_time: secs(t),
    })
}

/// One IC(0) attempt with diagonal shift `alpha`; `Err(row)` on a nonpositive pivot.
fn ic0_attempt(lower: &SparseCsr, alpha: f64) -> std::result::Result<Vec<f64>, usize> {
    let n = lower.n_rows();
    let rp = lower.row_ptr();
    let cols = lower.cols();
    let a = lower.values();
    let mut l = vec![0.0; a.len()];
    for i in 0..n {
        let (start, end) = (rp[i], rp[i + 1]);
        // The diagonal is the last entry of a lower CSR row.
        for p in start..end - 1 {
            let j = cols[p];
            // Sparse dot of row i (entries before p) with row j (entries before its diagonal).
            let (mut q, mut s) = (start, rp[j]);
            let s_end = rp[j + 1] - 1;
            let mut dot = 0.0;
            while q < p && s < s_end {
                match cols[q].cmp(&cols[s]) {
                    std::cmp::Ordering::Less => q += 1,
                    std::cmp::Ordering::Greater => s += 1,
                    std::cmp::Ordering::Equal => {
                        dot += l[q] * l[s];
                        q += 1;
                        s += 1;
                    }
                }
            }
            l[p] = (a[p] - dot) / l[s_end];
        }
        let d = end - 1;
        let pivot = a[d] + alpha - l[start..d].iter().map(|v| v * v).sum::<f64>();
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(i);
        }
        l[d] = pivot.sqrt();
    }
    Ok(l)
}

/// Incomplete Cholesky with zero fill on the lower pattern of `a`.
///
/// On a nonpositive pivot the factorization restarts on `A + αI` with
/// `α = 1e-8 · max |a_ii|`, doubling on each of up to three retries.
pub fn ic0_factor(a: &SparseCoo) -> Result<LowerFactor> {
    let lower = lower_triangle(a)?;
    let diag = lower.diagonal()?;
    let csr = lower.to_csr();
    let max_diag = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut alpha = 0.0;
    let mut failed_row = 0;
    for attempt in 0..=IC0_MAX_SHIFTS {
        if attempt > 0 {
            alpha = if attempt == 1 {
                IC0_SHIFT_START * max_diag
            } else {
                alpha * 2.0
            };
            log::debug!("IC(0) breakdown at row {failed_row}; retrying with shift {alpha:e}");
        }
        match ic0_attempt(&csr, alpha) {
            Ok(values) => return LowerFactor::new(lower.with_values(values)?),
            Err(row) => failed_row = row,
        }
    }
    Err(Error::Breakdown {
        row: failed_row,
        shifts: IC0_MAX_SHIFTS,
    })
}

pub fn ic0(a: &SparseCoo) -> Result<Preconditioner> {
    let t = Instant::now();
    let l = ic0_factor(a)?;
    let p_time = secs(t);
    Preconditioner::from_factor(PreconditionerKind::Ic0, l, p_time)
}

/// `max |(LLᵀ)_ij − a_ij|` over the stored lower pattern of `L`.
pub fn pattern_residual(l: &LowerFactor, a: &SparseCoo) -> Result<f64> {
    check_len(a.n_rows(), l.n())?;
    let csr = l.to_csr();
    let mut worst: f64 = 0.0;
    for (i, j, _) in l.matrix().iter() {
        let (ci, vi) = csr.row(i);
        let (cj, vj) = csr.row(j);
        let (mut p, mut q, mut dot) = (0, 0, 0.0);
        while p < ci.len() && q < cj.len() {
            match ci[p].cmp(&cj[q]) {
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
                std::cmp::Ordering::Equal => {
                    dot += vi[p] * vj[q];
                    p += 1;
                    q += 1;
                }
            }
        }
        worst = worst.max((dot - a.get(i, j)).abs());
    }
    Ok(worst)
}

/// Direct prediction: the network output is the factor.
pub fn nic_predict(model: &GnnModel, a: &SparseCoo) -> Result<Preconditioner> {
    let t = Instant::now();
    let g = build_graph(a)?;
    let out = model.forward(&g)?.output;
    let l = assemble_factor(&g, &out)?;
    let p_time = secs(t);
    Preconditioner::from_factor(PreconditionerKind::Nic, l, p_time)
}

/// `L_IC + √σ · out` on the shared pattern. The diagonal of `out` is already
/// positive, so the sum keeps a positive diagonal.
pub fn correct_ic0(l_ic: &LowerFactor, g: &GraphSample, out: &[f64]) -> Result<LowerFactor> {
    check_len(g.n_edges(), out.len())?;
    if l_ic.rows() != g.edge_rows.as_slice() || l_ic.cols() != g.edge_cols.as_slice() {
        return Err(Error::PatternMismatch("IC(0) factor and graph edges differ".into()));
    }
    let unscale = g.scale.sqrt();
    let values = l_ic
        .values()
        .iter()
        .zip(out)
        .map(|(l, o)| l + unscale * o)
        .collect();
    l_ic.with_values(values)
}

/// Learned correction: IC(0) plus the network output.
pub fn gnn_ic_predict(model: &GnnModel, a: &SparseCoo) -> Result<Preconditioner> {
    let t = Instant::now();
    let l_ic = ic0_factor(a)?;
    let g = build_graph(a)?;
    let out = model.forward(&g)?.output;
    let l = correct_ic0(&l_ic, &g, &out)?;
    let p_time = secs(t);
    Preconditioner::from_factor(PreconditionerKind::GnnIc, l, p_time)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropoutStats {
    pub nnz_before: usize,
    pub nnz_after: usize,
}

/// Removes off-diagonal factor entries with `|v| <= eps`. Diagonal entries are
/// always kept.
pub fn fill_in_dropout(p: &Preconditioner, eps: f64) -> Result<(Preconditioner, DropoutStats)> {
    let Some(l) = p.factor() else {
        return Err(Error::Invalid(format!("{} preconditioner has no factor", p.kind())));
    };
    if !(eps >= 0.0) {
        return Err(Error::Invalid(format!("dropout threshold must be >= 0, got {eps}")));
    }
    let t = Instant::now();
    let kept: Vec<(usize, usize, f64)> = l
        .matrix()
        .iter()
        .filter(|&(i, j, v)| i == j || v.abs() > eps)
        .collect();
    let m = SparseCoo::from_triplets(l.n(), l.n(), kept)?;
    let stats = DropoutStats {
        nnz_before: l.nnz(),
        nnz_after: m.nnz(),
    };
    let dropped = Preconditioner::from_factor(p.kind(), LowerFactor::new(m)?, p.p_time() + secs(t))?;
    Ok((dropped, stats))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub mean: f64,
    pub max: f64,
}

impl ErrorStats {
    fn of(values: &[f64]) -> Self {
        let count = values.len();
        let mean = if count == 0 {
            0.0
        } else {
            values.iter().sum::<f64>() / count as f64
        };
        let max = values.iter().copied().fold(0.0, f64::max);
        Self { count, mean, max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryError {
    pub row: usize,
    pub col: usize,
    pub predicted: f64,
    pub reference: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorErrorReport {
    pub diagonal: ErrorStats,
    pub off_diagonal: ErrorStats,
    /// One record per stored entry, in pattern order.
    pub entries: Vec<EntryError>,
}

/// `|L_pred − L_IC| / |L_IC|` per entry, split into diagonal and off-diagonal.
pub fn factor_relative_error(l_pred: &LowerFactor, l_ic: &LowerFactor) -> Result<FactorErrorReport> {
    if !l_pred.same_pattern(l_ic) {
        return Err(Error::PatternMismatch("predicted and reference factors differ in pattern".into()));
    }
    let entries: Vec<EntryError> = l_pred
        .matrix()
        .iter()
        .zip(l_ic.values())
        .map(|((row, col, predicted), &reference)| {
            let diff = (predicted - reference).abs();
            let rel_error = if diff == 0.0 {
                0.0
            } else {
                diff / reference.abs()
            };
            EntryError {
                row,
                col,
                predicted,
                reference,
                rel_error,
            }
        })
        .collect();
    let split = |diag: bool| -> Vec<f64> {
        entries
            .iter()
            .filter(|e| (e.row == e.col) == diag)
            .map(|e| e.rel_error)
            .collect()
    };
    Ok(FactorErrorReport {
        diagonal: ErrorStats::of(&split(true)),
        off_diagonal: ErrorStats::of(&split(false)),
        entries,
    })
}
