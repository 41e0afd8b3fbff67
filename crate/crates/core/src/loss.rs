//! Hutchinson estimate of `‖LLᵀ − A‖_F²` built from gather/scatter passes
//! over COO indices and values. No format conversion and no auxiliary storage
//! beyond vectors of length `nnz` or `n`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Result};
use crate::sparse::{LowerFactor, SparseCoo};

/// Probe vector with independent ±1 entries.
#[derive(Clone, Debug, PartialEq)]
pub struct RademacherVector {
    values: Vec<f64>,
    seed: u64,
    counter: u64,
}

impl RademacherVector {
    /// Deterministic draw: `(seed, counter)` selects a ChaCha stream, so any
    /// training step can be replayed without replaying the steps before it.
    pub fn draw(n: usize, seed: u64, counter: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(counter);
        let values = (0..n)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        Self {
            values,
            seed,
            counter,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `out[index[k]] += src[k]`.
fn scatter_sum(src: &[f64], index: &[usize], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (&v, &i) in src.iter().zip(index) {
        out[i] += v;
    }
    out
}

/// `values ⊙ z[index]`.
fn select_mul(values: &[f64], z: &[f64], index: &[usize]) -> Vec<f64> {
    values.iter().zip(index).map(|(v, &i)| v * z[i]).collect()
}

/// `A z`: select `z` by column index, multiply by the values, scatter-sum by row.
pub fn coo_matvec_scatter(a: &SparseCoo, z: &[f64]) -> Result<Vec<f64>> {
    check_len(a.n_cols(), z.len())?;
    Ok(scatter_sum(&select_mul(a.values(), z, a.cols()), a.rows(), a.n_rows()))
}

/// `L (Lᵀ z)` in two select/scatter passes: the first selects by row and
/// scatters by column (giving `Lᵀ z`), the second selects by column and
/// scatters by row.
pub fn llt_matvec_scatter(l: &LowerFactor, z: &[f64]) -> Result<Vec<f64>> {
    check_len(l.n(), z.len())?;
    let lt_z = scatter_sum(&select_mul(l.values(), z, l.rows()), l.cols(), l.n());
    Ok(scatter_sum(&select_mul(l.values(), &lt_z, l.cols()), l.rows(), l.n()))
}

/// `‖LLᵀz − Az‖²` for one probe vector.
pub fn hutchinson_loss(l: &LowerFactor, a: &SparseCoo, z: &RademacherVector) -> Result<f64> {
    check_len(a.n_rows(), l.n())?;
    let llt = llt_matvec_scatter(l, z.values())?;
    let az = coo_matvec_scatter(a, z.values())?;
    Ok(llt.iter().zip(&az).map(|(p, q)| (p - q) * (p - q)).sum())
}

/// Loss and its exact gradient with respect to every stored value of `L`.
///
/// With `w = Lᵀz` and `r = Lw − Az`, entry `(i, j)` of `L` receives
/// `2 (r_i w_j + (Lᵀr)_j z_i)`.
pub fn hutchinson_loss_grad(
    l: &LowerFactor,
    a: &SparseCoo,
    z: &RademacherVector,
) -> Result<(f64, Vec<f64>)> {
    check_len(a.n_rows(), l.n())?;
    let z = z.values();
    check_len(l.n(), z.len())?;
    let (rows, cols, vals) = (l.rows(), l.cols(), l.values());
    let n = l.n();

    let w = scatter_sum(&select_mul(vals, z, rows), cols, n);
    let lw = scatter_sum(&select_mul(vals, &w, cols), rows, n);
    let az = coo_matvec_scatter(a, z)?;
    let r: Vec<f64> = lw.iter().zip(&az).map(|(p, q)| p - q).collect();
    let loss = r.iter().map(|v| v * v).sum();

    let lt_r = scatter_sum(&select_mul(vals, &r, rows), cols, n);
    let grad = (0..vals.len())
        .map(|k| 2.0 * (r[rows[k]] * w[cols[k]] + lt_r[cols[k]] * z[rows[k]]))
        .collect();
    Ok((loss, grad))
}

/// Exact `‖LLᵀ − A‖_F²` through dense products. Diagnostic only; O(n²) memory.
pub fn frobenius_distance_sq(l: &LowerFactor, a: &SparseCoo) -> Result<f64> {
    let n = l.n();
    check_len(n, a.n_rows())?;
    let ld = l.matrix().to_dense();
    let mut diff = a.to_dense();
    for i in 0..n {
        for j in 0..n {
            let s: f64 = (0..=i.min(j)).map(|k| ld[i * n + k] * ld[j * n + k]).sum();
            diff[i * n + j] = s - diff[i * n + j];
        }
    }
    Ok(diff.iter().map(|v| v * v).sum())
}

/// Mean of `draws` single-probe losses with counters `0..draws`.
pub fn hutchinson_mean(l: &LowerFactor, a: &SparseCoo, draws: u64, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for c in 0..draws {
        total += hutchinson_loss(l, a, &RademacherVector::draw(l.n(), seed, c))?;
    }
    Ok(total / draws as f64)
}
