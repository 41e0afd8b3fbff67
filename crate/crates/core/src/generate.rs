//! Finite-difference Poisson matrices on `m^d` cell grids.
//!
//! Each cell carries a diffusion coefficient `k`. Interior faces use the
//! harmonic mean of the two adjacent cells; Dirichlet boundary faces use the
//! cell's own coefficient. With `k ≡ 1` this is the classic 5-point (2D) or
//! 7-point (3D) stencil with diagonal `2d` and neighbour entries `-1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseCoo;

/// Coefficient range of the random family: log-uniform in `[0.1, 10]`.
pub const COEFF_MIN: f64 = 0.1;
pub const COEFF_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridDim {
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "3")]
    Three,
}

impl GridDim {
    pub fn as_usize(self) -> usize {
        match self {
            GridDim::Two => 2,
            GridDim::Three => 3,
        }
    }
}

impl TryFrom<usize> for GridDim {
    type Error = Error;

    fn try_from(d: usize) -> Result<Self> {
        match d {
            2 => Ok(GridDim::Two),
            3 => Ok(GridDim::Three),
            _ => Err(Error::Invalid(format!("grid dimension must be 2 or 3, got {d}"))),
        }
    }
}

/// Per-cell coefficients, log-uniform in `[COEFF_MIN, COEFF_MAX]`.
pub fn random_coefficients(cells: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (COEFF_MIN.ln(), COEFF_MAX.ln());
    (0..cells).map(|_| rng.gen_range(lo..hi).exp()).collect()
}

/// SPD Poisson matrix of order `m^dim`. Without a seed the coefficients are
/// all one; with a seed they are drawn from the random family.
pub fn gen_poisson(dim: GridDim, m: usize, coeff_seed: Option<u64>) -> Result<SparseCoo> {
    if m == 0 {
        return Err(Error::Invalid("grid size must be at least 1".into()));
    }
    let d = dim.as_usize();
    let n = m.pow(d as u32);
    let coeff = match coeff_seed {
        Some(seed) => random_coefficients(n, seed),
        None => vec![1.0; n],
    };
    let strides: Vec<usize> = (0..d).map(|a| m.pow(a as u32)).collect();

    let mut triplets = Vec::with_capacity(n * (2 * d + 1));
    let mut coord = vec![0usize; d];
    for cell in 0..n {
        let mut rem = cell;
        for c in coord.iter_mut() {
            *c = rem % m;
            rem /= m;
        }
        let k = coeff[cell];
        let mut diag = 0.0;
        for a in 0..d {
            for step in [-1i64, 1] {
                let next = coord[a] as i64 + step;
                if next < 0 || next >= m as i64 {
                    diag += k;
                    continue;
                }
                let nb = if step < 0 {
                    cell - strides[a]
                } else {
                    cell + strides[a]
                };
                let kf = 2.0 * k * coeff[nb] / (k + coeff[nb]);
                diag += kf;
                triplets.push((cell, nb, -kf));
            }
        }
        triplets.push((cell, cell, diag));
    }
    SparseCoo::from_triplets(n, n, triplets)
}
