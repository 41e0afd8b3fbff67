//! Graph input for the GNN: 9 node features and one scaled value per
//! lower-triangular edge.
//!
//! Node feature layout: `[deg, max-deg, min-deg, mean-deg, var-deg,
//! dominance, decay, pos-sin, pos-cos]`.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sparse::{lower_triangle, scale_by_std, SparseCoo};

pub const NODE_FEATURES: usize = 9;

/// Upper clip for the diagonal decay feature; also its value for rows with
/// no off-diagonal entry.
pub const DECAY_CAP: f64 = 100.0;

#[derive(Clone, Debug)]
pub struct GraphSample {
    pub n: usize,
    pub node_feats: Vec<[f64; NODE_FEATURES]>,
    /// Edge endpoints; `edge_rows[k] >= edge_cols[k]`, diagonal self-edges included.
    pub edge_rows: Vec<usize>,
    pub edge_cols: Vec<usize>,
    /// Lower-triangular values divided by `scale`.
    pub edge_feats: Vec<f64>,
    pub scale: f64,
    pub source: Arc<SparseCoo>,
}

impl GraphSample {
    pub fn n_edges(&self) -> usize {
        self.edge_feats.len()
    }

    pub fn is_diagonal_edge(&self, k: usize) -> bool {
        self.edge_rows[k] == self.edge_cols[k]
    }
}

/// Off-diagonal neighbour lists of a symmetric matrix.
fn neighbours(a: &SparseCoo) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); a.n_rows()];
    for (i, j, _) in a.iter() {
        if i != j {
            adj[i].push(j);
        }
    }
    adj
}

/// `[deg, max, min, mean, var]` of the neighbour degrees; all zero for an
/// isolated node. Degree counts off-diagonal neighbours only.
pub fn local_degree_profile(a: &SparseCoo) -> Result<Vec<[f64; 5]>> {
    a.ensure_symmetric()?;
    let adj = neighbours(a);
    let deg: Vec<f64> = adj.iter().map(|nb| nb.len() as f64).collect();
    Ok(adj
        .iter()
        .enumerate()
        .map(|(v, nb)| {
            if nb.is_empty() {
                return [0.0; 5];
            }
            let d: Vec<f64> = nb.iter().map(|&u| deg[u]).collect();
            let count = d.len() as f64;
            let mean = d.iter().sum::<f64>() / count;
            let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / count;
            let max = d.iter().copied().fold(f64::MIN, f64::max);
            let min = d.iter().copied().fold(f64::MAX, f64::min);
            [deg[v], max, min, mean, var]
        })
        .collect())
}

/// `[dominance, decay]` per row:
/// `dominance = |a_ii| / (|a_ii| + Σ_{j≠i} |a_ij|)` and
/// `decay = |a_ii| / max_{j≠i} |a_ij|` clipped to `[0, DECAY_CAP]`.
pub fn diagonal_dominance_feats(a: &SparseCoo) -> Result<Vec<[f64; 2]>> {
    let diag = a.diagonal()?;
    let n = a.n_rows();
    let mut off_sum = vec![0.0; n];
    let mut off_max = vec![0.0f64; n];
    for (i, j, v) in a.iter() {
        if i != j {
            off_sum[i] += v.abs();
            off_max[i] = off_max[i].max(v.abs());
        }
    }
    Ok((0..n)
        .map(|i| {
            let d = diag[i].abs();
            let total = d + off_sum[i];
            let dominance = if total > 0.0 { d / total } else { 1.0 };
            let decay = if off_max[i] > 0.0 {
                (d / off_max[i]).clamp(0.0, DECAY_CAP)
            } else {
                DECAY_CAP
            };
            [dominance, decay]
        })
        .collect())
}

/// `[sin(2π i/n), cos(2π i/n)]` for node `i`.
pub fn position_embedding(n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            [t.sin(), t.cos()]
        })
        .collect()
}

pub fn build_graph(a: &SparseCoo) -> Result<GraphSample> {
    build_graph_shared(Arc::new(a.clone()))
}

pub fn build_graph_shared(a: Arc<SparseCoo>) -> Result<GraphSample> {
    if !a.is_square() || a.n_rows() == 0 {
        return Err(Error::Invalid("graph input must be a nonempty square matrix".into()));
    }
    let ldp = local_degree_profile(&a)?;
    let dom = diagonal_dominance_feats(&a)?;
    let pos = position_embedding(a.n_rows());
    let node_feats = (0..a.n_rows())
        .map(|i| {
            let mut f = [0.0; NODE_FEATURES];
            f[..5].copy_from_slice(&ldp[i]);
            f[5..7].copy_from_slice(&dom[i]);
            f[7..].copy_from_slice(&pos[i]);
            f
        })
        .collect();
    // σ is taken over every nonzero of A, not only the lower half.
    let (scaled, scale) = scale_by_std(&a);
    let lower = lower_triangle(&scaled)?;
    Ok(GraphSample {
        n: a.n_rows(),
        node_feats,
        edge_rows: lower.rows().to_vec(),
        edge_cols: lower.cols().to_vec(),
        edge_feats: lower.values().to_vec(),
        scale,
        source: a,
    })
}
