//! Three-block message-passing network over the lower-triangular graph of a
//! sparse SPD matrix, with a hand-written reverse pass.
//!
//! Per block `b`:
//!
//! ```text
//! e'_k  = edge_mlp([e_k, (e0_k if b > 0), x_row(k), x_col(k)])
//! s_i   = Σ_{k incident to i} e'_k        m_i = s_i / |incident(i)|
//! x'_i  = node_mlp([x_i, s_i, m_i])        (blocks 0 and 1 only)
//! ```
//!
//! Each MLP is `linear -> tanh -> linear`. Node features are standardized per
//! graph and passed through a learned per-feature affine before block 0.
//! The final edge outputs on the diagonal are mapped through `o -> exp(o/2)`.
//!
//! All parameters live in one flat vector so the optimizer and the checkpoint
//! format need no knowledge of the architecture.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::features::{GraphSample, NODE_FEATURES};
use crate::sparse::{LowerFactor, SparseCoo};

pub const N_BLOCKS: usize = 3;
pub const DEFAULT_HIDDEN: usize = 8;
pub const EDGE_FEATURES: usize = 1;
const NORM_EPS: f64 = 1e-6;
const CHECKPOINT_MAGIC: &[u8; 8] = b"GNNICKPT";
const METADATA_TAG: &[u8; 4] = b"META";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnnConfig {
    /// Width of the MLP hidden layers and of the latent node features.
    pub hidden_dim: usize,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            hidden_dim: DEFAULT_HIDDEN,
        }
    }
}

/// Location of a two-layer perceptron inside the flat parameter vector.
/// Layout: `w1 (hidden x in)`, `b1`, `w2 (out x hidden)`, `b2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpLayout {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub offset: usize,
}

impl MlpLayout {
    pub fn len(&self) -> usize {
        self.hidden * self.in_dim + self.hidden + self.out_dim * self.hidden + self.out_dim
    }

    fn w1(&self) -> usize {
        self.offset
    }

    fn b1(&self) -> usize {
        self.w1() + self.hidden * self.in_dim
    }

    fn w2(&self) -> usize {
        self.b1() + self.hidden
    }

    fn b2(&self) -> usize {
        self.w2() + self.out_dim * self.hidden
    }

    /// `h = tanh(W1 x + b1)`, `out = W2 h + b2`.
    fn forward(&self, p: &[f64], input: &[f64], h: &mut [f64], out: &mut [f64]) {
        let w1 = &p[self.w1()..self.b1()];
        let b1 = &p[self.b1()..self.w2()];
        for (r, hr) in h.iter_mut().enumerate() {
            let row = &w1[r * self.in_dim..(r + 1) * self.in_dim];
            let z: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b1[r];
            *hr = z.tanh();
        }
        let w2 = &p[self.w2()..self.b2()];
        let b2 = &p[self.b2()..self.b2() + self.out_dim];
        for (o, out_o) in out.iter_mut().enumerate() {
            let row = &w2[o * self.hidden..(o + 1) * self.hidden];
            *out_o = row.iter().zip(h.iter()).map(|(w, x)| w * x).sum::<f64>() + b2[o];
        }
    }

    /// Accumulates parameter gradients into `grad` and writes `d_input`.
    fn backward(
        &self,
        p: &[f64],
        input: &[f64],
        h: &[f64],
        d_out: &[f64],
        grad: &mut [f64],
        d_input: &mut [f64],
        d_h: &mut [f64],
    ) {
        let (w1, w2) = (self.w1(), self.w2());
        let (b1, b2) = (self.b1(), self.b2());
        d_h.iter_mut().for_each(|v| *v = 0.0);
        for (o, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[b2 + o] += g;
            for r in 0..self.hidden {
                grad[w2 + o * self.hidden + r] += g * h[r];
                d_h[r] += g * p[w2 + o * self.hidden + r];
            }
        }
        d_input.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.hidden {
            let dz = d_h[r] * (1.0 - h[r] * h[r]);
            if dz == 0.0 {
                continue;
            }
            grad[b1 + r] += dz;
            let row = w1 + r * self.in_dim;
            for c in 0..self.in_dim {
                grad[row + c] += dz * input[c];
                d_input[c] += dz * p[row + c];
            }
        }
    }
}

/// One message-passing block. The last block has no node updater because
/// only its edge outputs reach the network output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MessageBlock {
    pub edge_mlp: MlpLayout,
    pub node_mlp: Option<MlpLayout>,
    /// 1 for the first block, 2 afterwards (current edge value plus the
    /// original edge value from the skip connection).
    pub edge_width: usize,
    pub node_width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel {
    config: GnnConfig,
    blocks: Vec<MessageBlock>,
    params: Vec<f64>,
}

fn layout(config: GnnConfig) -> (Vec<MessageBlock>, usize) {
    let h = config.hidden_dim;
    let mut offset = 2 * NODE_FEATURES;
    let mut node_width = NODE_FEATURES;
    let mut blocks = Vec::with_capacity(N_BLOCKS);
    for b in 0..N_BLOCKS {
        let edge_width = if b == 0 { EDGE_FEATURES } else { 2 * EDGE_FEATURES };
        let edge_mlp = MlpLayout {
            in_dim: edge_width + 2 * node_width,
            hidden: h,
            out_dim: EDGE_FEATURES,
            offset,
        };
        offset += edge_mlp.len();
        let node_mlp = (b + 1 < N_BLOCKS).then(|| {
            let l = MlpLayout {
                in_dim: node_width + 2 * EDGE_FEATURES,
                hidden: h,
                out_dim: h,
                offset,
            };
            offset += l.len();
            l
        });
        blocks.push(MessageBlock {
            edge_mlp,
            node_mlp,
            edge_width,
            node_width,
        });
        node_width = h;
    }
    (blocks, offset)
}

impl GnnModel {
    /// Weights and biases uniform in `[-1/√fan_in, 1/√fan_in]`; normalization
    /// gains one and biases zero.
    pub fn new(config: GnnConfig, seed: u64) -> Self {
        let mut model = Self::zeroed(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for block in model.blocks.clone() {
            for mlp in std::iter::once(block.edge_mlp).chain(block.node_mlp) {
                let s1 = 1.0 / (mlp.in_dim as f64).sqrt();
                for v in &mut model.params[mlp.w1()..mlp.w2()] {
                    *v = rng.gen_range(-s1..s1);
                }
                let s2 = 1.0 / (mlp.hidden as f64).sqrt();
                for v in &mut model.params[mlp.w2()..mlp.offset + mlp.len()] {
                    *v = rng.gen_range(-s2..s2);
                }
            }
        }
        model
    }

    /// Every MLP weight and bias zero, normalization affine at identity.
    pub fn zeroed(config: GnnConfig) -> Self {
        let (blocks, count) = layout(config);
        let mut params = vec![0.0; count];
        params[..NODE_FEATURES].fill(1.0);
        Self {
            config,
            blocks,
            params,
        }
    }

    pub fn config(&self) -> GnnConfig {
        self.config
    }

    pub fn blocks(&self) -> &[MessageBlock] {
        &self.blocks
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len(self.params.len(), params.len())?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn norm_gain(&self) -> &[f64] {
        &self.params[..NODE_FEATURES]
    }

    pub fn norm_bias(&self) -> &[f64] {
        &self.params[NODE_FEATURES..2 * NODE_FEATURES]
    }

    /// Runs the network and keeps every intermediate needed by [`backward`](Self::backward).
    pub fn forward(&self, g: &GraphSample) -> Result<ForwardTape> {
        let n = g.n;
        let n_edges = g.n_edges();
        check_len(n, g.node_feats.len())?;
        check_len(n_edges, g.edge_rows.len())?;
        check_len(n_edges, g.edge_cols.len())?;
        let p = &self.params;
        let h = self.config.hidden_dim;

        // Per-graph standardization, then the learned affine.
        let mut standardized = vec![0.0; n * NODE_FEATURES];
        for f in 0..NODE_FEATURES {
            let mean = g.node_feats.iter().map(|x| x[f]).sum::<f64>() / n as f64;
            let var = g
                .node_feats
                .iter()
                .map(|x| (x[f] - mean) * (x[f] - mean))
                .sum::<f64>()
                / n as f64;
            let denom = var.sqrt() + NORM_EPS;
            for i in 0..n {
                standardized[i * NODE_FEATURES + f] = (g.node_feats[i][f] - mean) / denom;
            }
        }
        let mut x: Vec<f64> = standardized
            .iter()
            .enumerate()
            .map(|(k, v)| p[k % NODE_FEATURES] * v + p[NODE_FEATURES + k % NODE_FEATURES])
            .collect();

        let mut incident = vec![0.0; n];
        for k in 0..n_edges {
            let (r, c) = (g.edge_rows[k], g.edge_cols[k]);
            incident[r] += 1.0;
            if r != c {
                incident[c] += 1.0;
            }
        }

        let mut e_cur = g.edge_feats.clone();
        let mut tapes = Vec::with_capacity(N_BLOCKS);
        for (b, block) in self.blocks.iter().enumerate() {
            let dx = block.node_width;
            let em = block.edge_mlp;
            let mut edge_in = vec![0.0; n_edges * em.in_dim];
            let mut edge_h = vec![0.0; n_edges * h];
            let mut e_out = vec![0.0; n_edges];
            for k in 0..n_edges {
                let row = &mut edge_in[k * em.in_dim..(k + 1) * em.in_dim];
                row[0] = e_cur[k];
                if block.edge_width == 2 {
                    row[1] = g.edge_feats[k];
                }
                let w = block.edge_width;
                let (r, c) = (g.edge_rows[k], g.edge_cols[k]);
                row[w..w + dx].copy_from_slice(&x[r * dx..(r + 1) * dx]);
                row[w + dx..].copy_from_slice(&x[c * dx..(c + 1) * dx]);
                em.forward(
                    p,
                    &edge_in[k * em.in_dim..(k + 1) * em.in_dim],
                    &mut edge_h[k * h..(k + 1) * h],
                    &mut e_out[k..k + 1],
                );
            }
            if e_out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { block: b });
            }

            let mut tape = BlockTape {
                edge_in,
                edge_h,
                e_out: e_out.clone(),
                node_in: Vec::new(),
                node_h: Vec::new(),
            };
            if let Some(nm) = block.node_mlp {
                let mut sum = vec![0.0; n];
                for k in 0..n_edges {
                    let (r, c) = (g.edge_rows[k], g.edge_cols[k]);
                    sum[r] += e_out[k];
                    if r != c {
                        sum[c] += e_out[k];
                    }
                }
                let mut node_in = vec![0.0; n * nm.in_dim];
                let mut node_h = vec![0.0; n * h];
                let mut x_next = vec![0.0; n * nm.out_dim];
                for i in 0..n {
                    let row = &mut node_in[i * nm.in_dim..(i + 1) * nm.in_dim];
                    row[..dx].copy_from_slice(&x[i * dx..(i + 1) * dx]);
                    row[dx] = sum[i];
                    row[dx + 1] = if incident[i] > 0.0 { sum[i] / incident[i] } else { 0.0 };
                    nm.forward(
                        p,
                        &node_in[i * nm.in_dim..(i + 1) * nm.in_dim],
                        &mut node_h[i * h..(i + 1) * h],
                        &mut x_next[i * nm.out_dim..(i + 1) * nm.out_dim],
                    );
                }
                if x_next.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { block: b });
                }
                tape.node_in = node_in;
                tape.node_h = node_h;
                x = x_next;
            }
            tapes.push(tape);
            e_cur = e_out;
        }

        let output: Vec<f64> = (0..n_edges)
            .map(|k| {
                if g.is_diagonal_edge(k) {
                    (e_cur[k] / 2.0).exp()
                } else {
                    e_cur[k]
                }
            })
            .collect();
        if output.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                block: N_BLOCKS - 1,
            });
        }
        Ok(ForwardTape {
            standardized,
            incident,
            blocks: tapes,
            output,
        })
    }

    /// Gradient of `Σ_k upstream[k] · output[k]` with respect to every
    /// parameter, in the flat parameter order.
    pub fn backward(&self, g: &GraphSample, tape: &ForwardTape, upstream: &[f64]) -> Result<Vec<f64>> {
        let n_edges = g.n_edges();
        check_len(n_edges, upstream.len())?;
        check_len(n_edges, tape.output.len())?;
        let n = g.n;
        let h = self.config.hidden_dim;
        let p = &self.params;
        let mut grad = vec![0.0; p.len()];
        let mut d_h = vec![0.0; h];

        let mut d_e: Vec<f64> = (0..n_edges)
            .map(|k| {
                if g.is_diagonal_edge(k) {
                    upstream[k] * tape.output[k] / 2.0
                } else {
                    upstream[k]
                }
            })
            .collect();
        // Gradient w.r.t. the node features produced by the current block.
        let mut d_x_next: Vec<f64> = Vec::new();

        for (b, block) in self.blocks.iter().enumerate().rev() {
            let bt = &tape.blocks[b];
            let dx = block.node_width;
            let mut d_x = vec![0.0; n * dx];
            if let Some(nm) = block.node_mlp {
                let mut d_node_in = vec![0.0; nm.in_dim];
                let mut d_sum = vec![0.0; n];
                for i in 0..n {
                    nm.backward(
                        p,
                        &bt.node_in[i * nm.in_dim..(i + 1) * nm.in_dim],
                        &bt.node_h[i * h..(i + 1) * h],
                        &d_x_next[i * nm.out_dim..(i + 1) * nm.out_dim],
                        &mut grad,
                        &mut d_node_in,
                        &mut d_h,
                    );
                    d_x[i * dx..(i + 1) * dx].copy_from_slice(&d_node_in[..dx]);
                    let mean_part = if tape.incident[i] > 0.0 {
                        d_node_in[dx + 1] / tape.incident[i]
                    } else {
                        0.0
                    };
                    d_sum[i] = d_node_in[dx] + mean_part;
                }
                for k in 0..n_edges {
                    let (r, c) = (g.edge_rows[k], g.edge_cols[k]);
                    d_e[k] += d_sum[r];
                    if r != c {
                        d_e[k] += d_sum[c];
                    }
                }
            }

            let em = block.edge_mlp;
            let w = block.edge_width;
            let mut d_edge_in = vec![0.0; em.in_dim];
            let mut d_e_prev = vec![0.0; n_edges];
            for k in 0..n_edges {
                em.backward(
                    p,
                    &bt.edge_in[k * em.in_dim..(k + 1) * em.in_dim],
                    &bt.edge_h[k * h..(k + 1) * h],
                    &d_e[k..k + 1],
                    &mut grad,
                    &mut d_edge_in,
                    &mut d_h,
                );
                d_e_prev[k] = d_edge_in[0];
                let (r, c) = (g.edge_rows[k], g.edge_cols[k]);
                for f in 0..dx {
                    d_x[r * dx + f] += d_edge_in[w + f];
                    d_x[c * dx + f] += d_edge_in[w + dx + f];
                }
            }
            d_e = d_e_prev;
            d_x_next = d_x;
        }

        for i in 0..n {
            for f in 0..NODE_FEATURES {
                let d = d_x_next[i * NODE_FEATURES + f];
                grad[f] += d * tape.standardized[i * NODE_FEATURES + f];
                grad[NODE_FEATURES + f] += d;
            }
        }
        Ok(grad)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_bytes_with_metadata(None)
    }

    /// Checkpoint bytes followed by an optional UTF-8 metadata trailer
    /// (`META`, u64 length, text), used for provenance.
    pub fn to_bytes_with_metadata(&self, metadata: Option<&str>) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [self.config.hidden_dim, N_BLOCKS, NODE_FEATURES, EDGE_FEATURES] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(meta) = metadata {
            out.extend_from_slice(METADATA_TAG);
            out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
            out.extend_from_slice(meta.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(Self::from_bytes_with_metadata(bytes)?.0)
    }

    pub fn from_bytes_with_metadata(bytes: &[u8]) -> Result<(Self, Option<String>)> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut cursor = bytes;
        let mut take = |k: usize| -> Result<&[u8]> {
            if cursor.len() < k {
                return Err(bad("truncated"));
            }
            let (head, tail) = cursor.split_at(k);
            cursor = tail;
            Ok(head)
        };
        if take(8)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let read_u32 = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let version = read_u32(take(4)?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hidden_dim = read_u32(take(4)?) as usize;
        let blocks = read_u32(take(4)?) as usize;
        let node_in = read_u32(take(4)?) as usize;
        let edge_in = read_u32(take(4)?) as usize;
        if blocks != N_BLOCKS || node_in != NODE_FEATURES || edge_in != EDGE_FEATURES || hidden_dim == 0 {
            return Err(Error::Checkpoint(format!(
                "unsupported architecture: blocks={blocks} node_in={node_in} edge_in={edge_in} hidden={hidden_dim}"
            )));
        }
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let mut model = Self::zeroed(GnnConfig { hidden_dim });
        if count != model.param_count() {
            return Err(Error::Checkpoint(format!(
                "parameter count {count} does not match architecture ({})",
                model.param_count()
            )));
        }
        for v in model.params.iter_mut() {
            *v = f64::from_le_bytes(take(8)?.try_into().unwrap());
        }
        let params_end = 36 + 8 * count;
        let metadata = if bytes.len() == params_end {
            None
        } else {
            if take(4)? != METADATA_TAG {
                return Err(bad("trailing bytes"));
            }
            let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            if bytes.len() != params_end + 12 + len {
                return Err(bad("metadata length mismatch"));
            }
            let text = std::str::from_utf8(take(len)?).map_err(|_| bad("metadata is not UTF-8"))?;
            Some(text.to_string())
        };
        Ok((model, metadata))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn save_with_metadata(&self, path: impl AsRef<Path>, metadata: &str) -> Result<()> {
        fs::write(path, self.to_bytes_with_metadata(Some(metadata)))?;
        Ok(())
    }

    pub fn load_with_metadata(path: impl AsRef<Path>) -> Result<(Self, Option<String>)> {
        Self::from_bytes_with_metadata(&fs::read(path)?)
    }
}

struct BlockTape {
    edge_in: Vec<f64>,
    edge_h: Vec<f64>,
    #[allow(dead_code)]
    e_out: Vec<f64>,
    node_in: Vec<f64>,
    node_h: Vec<f64>,
}

/// Intermediates recorded by [`GnnModel::forward`].
pub struct ForwardTape {
    standardized: Vec<f64>,
    incident: Vec<f64>,
    blocks: Vec<BlockTape>,
    /// Network output per lower-triangular edge (diagonal already positive).
    pub output: Vec<f64>,
}

pub fn gnn_forward(model: &GnnModel, g: &GraphSample) -> Result<Vec<f64>> {
    Ok(model.forward(g)?.output)
}

pub fn gnn_backward(model: &GnnModel, g: &GraphSample, tape: &ForwardTape, upstream: &[f64]) -> Result<Vec<f64>> {
    model.backward(g, tape, upstream)
}

/// Factor on `g`'s lower-triangular pattern from scaled edge values.
///
/// The network works on `A/σ`, whose factor is `L/√σ`; values are multiplied
/// by `√σ` so the factor is in the units of the original matrix.
pub fn assemble_factor(g: &GraphSample, edge_values: &[f64]) -> Result<LowerFactor> {
    check_len(g.n_edges(), edge_values.len())?;
    let unscale = g.scale.sqrt();
    let m = SparseCoo::from_parts(
        g.n,
        g.n,
        g.edge_rows.clone(),
        g.edge_cols.clone(),
        edge_values.iter().map(|v| v * unscale).collect(),
    )?;
    LowerFactor::new(m)
}

/// Inverse of [`assemble_factor`]: the scaled edge values of a factor on `g`'s pattern.
pub fn extract_edge_values(g: &GraphSample, l: &LowerFactor) -> Result<Vec<f64>> {
    if l.rows() != g.edge_rows.as_slice() || l.cols() != g.edge_cols.as_slice() {
        return Err(Error::PatternMismatch("factor pattern differs from graph edges".into()));
    }
    let unscale = g.scale.sqrt();
    Ok(l.values().iter().map(|v| v / unscale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::build_graph;
    use crate::generate::{gen_poisson, GridDim};
    use proptest::prelude::*;

    fn poisson_graph(m: usize, seed: u64) -> GraphSample {
        build_graph(&gen_poisson(GridDim::Two, m, Some(seed)).unwrap()).unwrap()
    }

    /// Loss used only to exercise the reverse pass: Σ_k w_k out_k².
    fn probe_loss(model: &GnnModel, g: &GraphSample, w: &[f64]) -> f64 {
        let out = gnn_forward(model, g).unwrap();
        out.iter().zip(w).map(|(o, w)| w * o * o).sum()
    }

    #[test]
    fn param_count_is_stable() {
        let model = GnnModel::new(GnnConfig::default(), 1);
        // Normalization 18, block edge/node MLPs 169+168, 161+160, 161.
        assert_eq!(model.param_count(), 837);
        assert_eq!(model.blocks().len(), N_BLOCKS);
        assert_eq!(model.blocks()[1].edge_width, 2);
        assert_eq!(model.blocks()[2].edge_width, 2);
        assert!(model.blocks()[2].node_mlp.is_none());
        assert_eq!(GnnModel::new(GnnConfig::default(), 99).param_count(), 837);
        assert_eq!(model.to_bytes().len(), 8 + 4 * 5 + 8 + 8 * model.param_count());
    }

    #[test]
    fn zero_network_outputs() {
        let g = poisson_graph(4, 3);
        let out = gnn_forward(&GnnModel::zeroed(GnnConfig::default()), &g).unwrap();
        assert_eq!(out.len(), g.n_edges());
        for (k, v) in out.iter().enumerate() {
            assert_eq!(*v, if g.is_diagonal_edge(k) { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn zero_network_factor_on_one_by_one() {
        let g = build_graph(&SparseCoo::from_dense(1, 1, &[4.0]).unwrap()).unwrap();
        let out = gnn_forward(&GnnModel::zeroed(GnnConfig::default()), &g).unwrap();
        let l = assemble_factor(&g, &out).unwrap();
        assert_eq!(l.values(), &[1.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let g = poisson_graph(5, 1);
        let a = gnn_forward(&GnnModel::new(GnnConfig::default(), 7), &g).unwrap();
        let b = gnn_forward(&GnnModel::new(GnnConfig::default(), 7), &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let g = poisson_graph(4, 2);
        let model = GnnModel::new(GnnConfig::default(), 5);
        let tape = model.forward(&g).unwrap();
        let grad = gnn_backward(&model, &g, &tape, &vec![0.0; g.n_edges()]).unwrap();
        assert!(grad.iter().all(|&v| v == 0.0));
        assert!(matches!(
            gnn_backward(&model, &g, &tape, &[1.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let g = poisson_graph(4, 11);
        let mut model = GnnModel::new(GnnConfig::default(), 3);
        // Nontrivial normalization affine so its gradients are exercised.
        for (f, v) in model.params_mut()[..2 * NODE_FEATURES].iter_mut().enumerate() {
            *v += 0.1 * ((f as f64) * 0.7).sin();
        }
        let w: Vec<f64> = (0..g.n_edges()).map(|k| 1.0 + (k % 3) as f64).collect();
        let tape = model.forward(&g).unwrap();
        let upstream: Vec<f64> = tape.output.iter().zip(&w).map(|(o, w)| 2.0 * w * o).collect();
        let grad = model.backward(&g, &tape, &upstream).unwrap();
        let step = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..model.param_count() {
            let mut plus = model.clone();
            plus.params_mut()[i] += step;
            let mut minus = model.clone();
            minus.params_mut()[i] -= step;
            let fd = (probe_loss(&plus, &g, &w) - probe_loss(&minus, &g, &w)) / (2.0 * step);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradient_is_linear_in_upstream() {
        let model = GnnModel::new(GnnConfig::default(), 8);
        let g = poisson_graph(4, 2);
        let tape = model.forward(&g).unwrap();
        let u1: Vec<f64> = (0..g.n_edges()).map(|k| (k as f64 * 0.37).sin()).collect();
        let u2: Vec<f64> = (0..g.n_edges()).map(|k| (k as f64 * 0.11).cos()).collect();
        let sum: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a + b).collect();
        let a = model.backward(&g, &tape, &u1).unwrap();
        let b = model.backward(&g, &tape, &u2).unwrap();
        let c = model.backward(&g, &tape, &sum).unwrap();
        for i in 0..a.len() {
            assert!((a[i] + b[i] - c[i]).abs() <= 1e-10 * (a[i].abs() + b[i].abs()).max(1e-12));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = GnnModel::new(GnnConfig::default(), 21);
        let back = GnnModel::from_bytes(&model.to_bytes()).unwrap();
        assert_eq!(back, model);
        let mut bytes = model.to_bytes();
        bytes.pop();
        assert!(GnnModel::from_bytes(&bytes).is_err());
        let mut bytes = model.to_bytes();
        bytes[0] = b'X';
        assert!(GnnModel::from_bytes(&bytes).is_err());
    }

    #[test]
    fn checkpoint_metadata_trailer() {
        let model = GnnModel::new(GnnConfig::default(), 4);
        let bytes = model.to_bytes_with_metadata(Some("{\"seed\":4}"));
        let (back, meta) = GnnModel::from_bytes_with_metadata(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(meta.as_deref(), Some("{\"seed\":4}"));
        assert_eq!(GnnModel::from_bytes(&bytes).unwrap(), model);
        assert_eq!(GnnModel::from_bytes_with_metadata(&model.to_bytes()).unwrap().1, None);
        let mut cut = bytes.clone();
        cut.pop();
        assert!(GnnModel::from_bytes(&cut).is_err());
    }

    #[test]
    fn assemble_extract_round_trip() {
        let g = poisson_graph(5, 4);
        let out = gnn_forward(&GnnModel::new(GnnConfig::default(), 2), &g).unwrap();
        let l = assemble_factor(&g, &out).unwrap();
        let lower = crate::sparse::lower_triangle(&g.source).unwrap();
        assert_eq!(l.rows(), lower.rows());
        assert_eq!(l.cols(), lower.cols());
        let back = extract_edge_values(&g, &l).unwrap();
        for (a, b) in back.iter().zip(&out) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
        }
    }

    #[test]
    fn external_nonpositive_diagonal_rejected() {
        let g = poisson_graph(2, 1);
        let vals = vec![-1.0; g.n_edges()];
        assert!(matches!(assemble_factor(&g, &vals), Err(Error::NonPositiveDiagonal { .. })));
    }

    fn relabel(g: &GraphSample, perm: &[usize]) -> GraphSample {
        let mut node_feats = g.node_feats.clone();
        for i in 0..g.n {
            node_feats[perm[i]] = g.node_feats[i];
        }
        // Edge order is reversed as well; endpoint roles are kept.
        let order: Vec<usize> = (0..g.n_edges()).rev().collect();
        GraphSample {
            n: g.n,
            node_feats,
            edge_rows: order.iter().map(|&k| perm[g.edge_rows[k]]).collect(),
            edge_cols: order.iter().map(|&k| perm[g.edge_cols[k]]).collect(),
            edge_feats: order.iter().map(|&k| g.edge_feats[k]).collect(),
            scale: g.scale,
            source: g.source.clone(),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn forward_is_permutation_equivariant(seed in any::<u64>(), m in 2usize..6) {
            use rand::seq::SliceRandom;
            let g = poisson_graph(m, seed);
            let mut perm: Vec<usize> = (0..g.n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let model = GnnModel::new(GnnConfig::default(), seed ^ 0x5eed);
            let out = gnn_forward(&model, &g).unwrap();
            let out_p = gnn_forward(&model, &relabel(&g, &perm)).unwrap();
            let e = g.n_edges();
            for k in 0..e {
                let diff = (out[k] - out_p[e - 1 - k]).abs();
                prop_assert!(diff <= 1e-12 * out[k].abs().max(1.0));
            }
        }

        #[test]
        fn assembled_diagonal_always_positive(seed in any::<u64>()) {
            let g = poisson_graph(4, seed);
            let mut model = GnnModel::new(GnnConfig::default(), seed);
            for v in model.params_mut().iter_mut() {
                *v *= 3.0;
            }
            let l = assemble_factor(&g, &gnn_forward(&model, &g).unwrap()).unwrap();
            prop_assert!(l.diagonal().iter().all(|&d| d > 0.0));
        }
    }
}
