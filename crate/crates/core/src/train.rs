//! Training loop for the learned preconditioners.
//!
//! Each sample is trained in scaled space: the network sees `A/σ` and the loss
//! compares `LLᵀ` with `A/σ`, divided by `n`. Every batch produces one Adam
//! step; every epoch ends with a PCG validation pass, and the parameters of the
//! epoch with the fewest mean validation iterations are kept.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::features::{build_graph_shared, GraphSample};
use crate::generate::{gen_poisson, GridDim};
use crate::gnn::{assemble_factor, GnnConfig, GnnModel};
use crate::krylov::{pcg, SolveConfig};
use crate::loss::{hutchinson_loss_grad, RademacherVector};
use crate::mtx::read_matrix_market;
use crate::precond::{correct_ic0, ic0_factor, Preconditioner, PreconditionerKind};
use crate::sparse::{LowerFactor, SparseCoo, SparseCsr};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

const SHUFFLE_STREAM: u64 = 1 << 32;
const RHS_STREAM: u64 = 2 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// The network output is the factor.
    Nic,
    /// The network output is added to the IC(0) factor.
    GnnIc,
}

impl TrainMode {
    pub fn kind(self) -> PreconditionerKind {
        match self {
            TrainMode::Nic => PreconditionerKind::Nic,
            TrainMode::GnnIc => PreconditionerKind::GnnIc,
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nic" => Ok(TrainMode::Nic),
            "gnnic" => Ok(TrainMode::GnnIc),
            _ => Err(Error::Invalid(format!("unknown mode `{s}` (expected nic or gnnic)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// Coefficient seeds for `count` samples of one split. Splits draw from
/// separate ChaCha streams of the same master seed.
pub fn split_seeds(seed: u64, split: Split, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split.stream());
    (0..count).map(|_| rng.next_u64()).collect()
}

pub fn sample_id(split: Split, index: usize) -> String {
    format!("{}-{index:04}", split.name())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Random-coefficient (or constant-coefficient) Poisson matrices on an `m^dim` grid.
    Poisson {
        dim: GridDim,
        m: usize,
        train: usize,
        validation: usize,
        #[serde(default = "default_true")]
        random_coefficients: bool,
        seed: u64,
    },
    Files {
        train: Vec<PathBuf>,
        validation: Vec<PathBuf>,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub matrix: Arc<SparseCoo>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
}

impl Dataset {
    pub fn from_spec(spec: &DatasetSpec) -> Result<Self> {
        let ds = match spec {
            DatasetSpec::Poisson {
                dim,
                m,
                train,
                validation,
                random_coefficients,
                seed,
            } => {
                let make = |split: Split, count: usize| -> Result<Vec<Sample>> {
                    split_seeds(*seed, split, count)
                        .into_iter()
                        .enumerate()
                        .map(|(i, s)| {
                            let coeff = random_coefficients.then_some(s);
                            Ok(Sample {
                                id: sample_id(split, i),
                                matrix: Arc::new(gen_poisson(*dim, *m, coeff)?),
                            })
                        })
                        .collect()
                };
                Dataset {
                    train: make(Split::Train, *train)?,
                    validation: make(Split::Validation, *validation)?,
                }
            }
            DatasetSpec::Files { train, validation } => {
                let load = |paths: &[PathBuf]| -> Result<Vec<Sample>> {
                    paths
                        .iter()
                        .map(|p| {
                            Ok(Sample {
                                id: canonical_id(p),
                                matrix: Arc::new(read_matrix_market(p)?),
                            })
                        })
                        .collect()
                };
                Dataset {
                    train: load(train)?,
                    validation: load(validation)?,
                }
            }
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Nonempty training set and no sample ID shared between the splits.
    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Invalid("training set is empty".into()));
        }
        let ids: HashSet<&str> = self.train.iter().map(|s| s.id.as_str()).collect();
        if let Some(s) = self.validation.iter().find(|s| ids.contains(s.id.as_str())) {
            return Err(Error::Invalid(format!("sample `{}` is in both training and validation sets", s.id)));
        }
        Ok(())
    }
}

fn canonical_id(p: &Path) -> String {
    p.canonicalize()
        .unwrap_or_else(|_| p.to_path_buf())
        .display()
        .to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub lr: f64,
    /// `None` means 5% of the total step count.
    pub warmup_steps: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden_dim: usize,
    pub validation_rel_tol: f64,
    pub validation_max_iters: usize,
    /// Worker threads for per-sample gradients and validation; 0 uses rayon's default.
    pub threads: usize,
    pub dataset: DatasetSpec,
}

impl TrainConfig {
    pub fn new(mode: TrainMode, dataset: DatasetSpec) -> Self {
        Self {
            mode,
            epochs: 50,
            lr: 0.005,
            warmup_steps: None,
            batch_size: 8,
            seed: 0,
            hidden_dim: crate::gnn::DEFAULT_HIDDEN,
            validation_rel_tol: 1e-6,
            validation_max_iters: 2000,
            threads: 0,
            dataset,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("hidden_dim", self.hidden_dim),
            ("validation_max_iters", self.validation_max_iters),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Invalid(format!("{name} must be at least 1")));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.validation_rel_tol > 0.0) {
            return Err(Error::Invalid("validation_rel_tol must be positive".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }

    pub fn warmup_for(&self, n_train: usize) -> usize {
        self.warmup_steps.unwrap_or_else(|| {
            let total = self.epochs * self.steps_per_epoch(n_train);
            ((total as f64 * 0.05).round() as usize).max(1)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// One bias-corrected Adam update. A non-finite gradient aborts the step and
/// leaves both parameters and state untouched.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    check_len(state.m.len(), params.len())?;
    check_len(params.len(), grads.len())?;
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for k in 0..params.len() {
        let g = grads[k];
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g;
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[k] / c1;
        let v_hat = state.v[k] / c2;
        params[k] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Linear ramp from 0 to `lr` over `warmup` steps, then constant. Steps count from 1.
pub fn lr_schedule(step: usize, warmup: usize, lr: f64) -> f64 {
    if warmup == 0 || step >= warmup {
        lr
    } else {
        lr * step as f64 / warmup as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        step: usize,
        epoch: usize,
        /// Mean per-sample loss over the batch.
        loss: f64,
        lr: f64,
        skipped: bool,
    },
    Validation {
        epoch: usize,
        validation_mean_iters: f64,
        /// Validation samples that hit the iteration cap.
        unconverged: usize,
        train_loss: f64,
        best_epoch: usize,
    },
}

pub fn log_to_jsonl(log: &[LogRecord]) -> Result<String> {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestCheckpoint {
    pub epoch: usize,
    pub mean_iters: f64,
    pub params: Vec<f64>,
}

/// Keeps the first epoch with the strictly smallest mean iteration count.
pub fn observe_best(best: &mut Option<BestCheckpoint>, epoch: usize, mean_iters: f64, params: &[f64]) {
    let better = match best {
        None => true,
        Some(b) => mean_iters < b.mean_iters,
    };
    if better {
        *best = Some(BestCheckpoint {
            epoch,
            mean_iters,
            params: params.to_vec(),
        });
    }
}

/// Everything needed to continue a run bit-identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: TrainConfig,
    pub params: Vec<f64>,
    pub adam: AdamState,
    pub epochs_done: usize,
    pub step: usize,
    pub best: Option<BestCheckpoint>,
    pub log: Vec<LogRecord>,
}

impl TrainState {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

struct TrainItem {
    graph: GraphSample,
    a_scaled: SparseCoo,
    /// Scaled-space factor pattern; values hold `L_IC/√σ` in GnnIC mode.
    template: LowerFactor,
    base: Option<Vec<f64>>,
}

struct ValidationItem {
    id: String,
    graph: GraphSample,
    a: SparseCsr,
    l_ic: Option<LowerFactor>,
    rhs: Vec<f64>,
}

/// Seeded right-hand side in `[-1, 1)^n`, shared by validation and evaluation.
pub fn seeded_rhs(n: usize, seed: u64, index: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(RHS_STREAM + index);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn prepare_train(mode: TrainMode, s: &Sample) -> Result<Option<TrainItem>> {
    let graph = build_graph_shared(s.matrix.clone())?;
    let a_scaled = s.matrix.scaled(1.0 / graph.scale);
    let pattern = SparseCoo::from_parts(
        graph.n,
        graph.n,
        graph.edge_rows.clone(),
        graph.edge_cols.clone(),
        vec![1.0; graph.n_edges()],
    )?;
    let template = LowerFactor::new(pattern)?;
    let base = match mode {
        TrainMode::Nic => None,
        TrainMode::GnnIc => match ic0_factor(&s.matrix) {
            Ok(l) => {
                let unscale = graph.scale.sqrt();
                Some(l.values().iter().map(|v| v / unscale).collect())
            }
            Err(e) => {
                log::warn!("skipping training sample {}: {e}", s.id);
                return Ok(None);
            }
        },
    };
    Ok(Some(TrainItem {
        graph,
        a_scaled,
        template,
        base,
    }))
}

fn prepare_validation(mode: TrainMode, s: &Sample, seed: u64, index: usize) -> Result<Option<ValidationItem>> {
    let graph = build_graph_shared(s.matrix.clone())?;
    let l_ic = match mode {
        TrainMode::Nic => None,
        TrainMode::GnnIc => match ic0_factor(&s.matrix) {
            Ok(l) => Some(l),
            Err(e) => {
                log::warn!("skipping validation sample {}: {e}", s.id);
                return Ok(None);
            }
        },
    };
    Ok(Some(ValidationItem {
        id: s.id.clone(),
        rhs: seeded_rhs(graph.n, seed, index as u64),
        a: s.matrix.to_csr(),
        graph,
        l_ic,
    }))
}

/// Mean loss and parameter gradient of one sample for probe `z`.
fn sample_loss_grad(model: &GnnModel, item: &TrainItem, z: &RademacherVector) -> Result<(f64, Vec<f64>)> {
    let tape = model.forward(&item.graph)?;
    let values = match &item.base {
        None => tape.output.clone(),
        Some(base) => base.iter().zip(&tape.output).map(|(b, o)| b + o).collect(),
    };
    let l = item.template.with_values(values)?;
    let (loss, d_l) = hutchinson_loss_grad(&l, &item.a_scaled, z)?;
    let n = item.graph.n as f64;
    let upstream: Vec<f64> = d_l.iter().map(|g| g / n).collect();
    let grads = model.backward(&item.graph, &tape, &upstream)?;
    Ok((loss / n, grads))
}

/// Preconditioner for `mode` from a precomputed graph (and IC(0) factor in GnnIC mode).
pub fn learned_preconditioner(
    mode: TrainMode,
    model: &GnnModel,
    graph: &GraphSample,
    l_ic: Option<&LowerFactor>,
) -> Result<Preconditioner> {
    let out = model.forward(graph)?.output;
    let l = match (mode, l_ic) {
        (TrainMode::Nic, _) => assemble_factor(graph, &out)?,
        (TrainMode::GnnIc, Some(l_ic)) => correct_ic0(l_ic, graph, &out)?,
        (TrainMode::GnnIc, None) => return Err(Error::Invalid("GnnIC needs the IC(0) factor".into())),
    };
    Preconditioner::from_factor(mode.kind(), l, 0.0)
}

pub struct TrainOutcome {
    pub best: GnnModel,
    pub best_epoch: usize,
    pub best_mean_iters: f64,
    pub last: GnnModel,
    pub log: Vec<LogRecord>,
    pub state: TrainState,
    pub skipped: Vec<String>,
}

pub struct Trainer {
    model: GnnModel,
    adam: AdamState,
    config: TrainConfig,
    train: Vec<TrainItem>,
    validation: Vec<ValidationItem>,
    epochs_done: usize,
    step: usize,
    best: Option<BestCheckpoint>,
    log: Vec<LogRecord>,
    skipped: Vec<String>,
    pool: rayon::ThreadPool,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: &Dataset) -> Result<Self> {
        let model = GnnModel::new(
            GnnConfig {
                hidden_dim: config.hidden_dim,
            },
            config.seed,
        );
        let state = TrainState {
            params: model.params().to_vec(),
            adam: AdamState::new(model.param_count()),
            config,
            epochs_done: 0,
            step: 0,
            best: None,
            log: Vec::new(),
        };
        Self::resume(state, data)
    }

    pub fn resume(state: TrainState, data: &Dataset) -> Result<Self> {
        let config = state.config;
        config.validate()?;
        data.validate()?;
        let mut model = GnnModel::zeroed(GnnConfig {
            hidden_dim: config.hidden_dim,
        });
        model.set_params(&state.params)?;
        check_len(model.param_count(), state.adam.m.len())?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;

        let mode = config.mode;
        let prepared: Vec<Result<Option<TrainItem>>> =
            pool.install(|| data.train.par_iter().map(|s| prepare_train(mode, s)).collect());
        let mut train = Vec::new();
        let mut skipped = Vec::new();
        for (s, p) in data.train.iter().zip(prepared) {
            match p? {
                Some(item) => train.push(item),
                None => skipped.push(s.id.clone()),
            }
        }
        if train.is_empty() {
            return Err(Error::Invalid("no usable training samples".into()));
        }
        let prepared: Vec<Result<Option<ValidationItem>>> = pool.install(|| {
            data.validation
                .par_iter()
                .enumerate()
                .map(|(i, s)| prepare_validation(mode, s, config.seed, i))
                .collect()
        });
        let mut validation = Vec::new();
        for (s, p) in data.validation.iter().zip(prepared) {
            match p? {
                Some(item) => validation.push(item),
                None => skipped.push(s.id.clone()),
            }
        }

        Ok(Self {
            model,
            adam: state.adam,
            config,
            train,
            validation,
            epochs_done: state.epochs_done,
            step: state.step,
            best: state.best,
            log: state.log,
            skipped,
            pool,
        })
    }

    pub fn model(&self) -> &GnnModel {
        &self.model
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done >= self.config.epochs
    }

    pub fn best(&self) -> Option<&BestCheckpoint> {
        self.best.as_ref()
    }

    pub fn skipped(&self) -> &[String] {
        &self.skipped
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            config: self.config.clone(),
            params: self.model.params().to_vec(),
            adam: self.adam.clone(),
            epochs_done: self.epochs_done,
            step: self.step,
            best: self.best.clone(),
            log: self.log.clone(),
        }
    }

    fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(SHUFFLE_STREAM + epoch as u64);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Batch loss (mean) and gradient (sum of per-sample gradients, added in batch order).
    fn batch_gradient(&self, batch: &[usize], first_visit: u64) -> Result<(f64, Vec<f64>)> {
        let seed = self.config.seed;
        let model = &self.model;
        let results: Vec<Result<(f64, Vec<f64>)>> = self.pool.install(|| {
            batch
                .par_iter()
                .enumerate()
                .map(|(pos, &idx)| {
                    let item = &self.train[idx];
                    let z = RademacherVector::draw(item.graph.n, seed, first_visit + pos as u64);
                    sample_loss_grad(model, item, &z)
                })
                .collect()
        });
        let mut grad = vec![0.0; model.param_count()];
        let mut loss = 0.0;
        for r in results {
            let (l, g) = r?;
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok((loss / batch.len() as f64, grad))
    }

    /// Mean PCG iterations of the current model over the validation set.
    /// Failures count as the iteration cap.
    pub fn validate(&self) -> (f64, usize) {
        if self.validation.is_empty() {
            return (0.0, 0);
        }
        let cfg = SolveConfig {
            rel_tol: self.config.validation_rel_tol,
            max_iters: Some(self.config.validation_max_iters),
            ..Default::default()
        };
        let cap = self.config.validation_max_iters;
        let mode = self.config.mode;
        let model = &self.model;
        let iters: Vec<(usize, bool)> = self.pool.install(|| {
            self.validation
                .par_iter()
                .map(|v| {
                    let solved = learned_preconditioner(mode, model, &v.graph, v.l_ic.as_ref())
                        .and_then(|p| pcg(&v.a, &v.rhs, &p, &cfg));
                    match solved {
                        Ok((_, rep)) => (rep.iterations, rep.converged),
                        Err(e) => {
                            log::warn!("validation on {} failed: {e}", v.id);
                            (cap, false)
                        }
                    }
                })
                .collect()
        });
        let total: usize = iters.iter().map(|(k, _)| k).sum();
        let unconverged = iters.iter().filter(|(_, c)| !c).count();
        (total as f64 / iters.len() as f64, unconverged)
    }

    pub fn run_epoch(&mut self) -> Result<()> {
        let epoch = self.epochs_done + 1;
        let order = self.epoch_order(epoch);
        let warmup = self.config.warmup_for(self.train.len());
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let visit_base = (epoch as u64 - 1) * self.train.len() as u64;
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            self.step += 1;
            let lr = lr_schedule(self.step, warmup, self.config.lr);
            let first_visit = visit_base + (b * self.config.batch_size) as u64;
            let (loss, grad) = self.batch_gradient(batch, first_visit)?;
            let skipped = match adam_step(&mut self.adam, self.model.params_mut(), &grad, lr) {
                Ok(()) => false,
                Err(Error::NonFiniteGradient) => {
                    log::warn!("step {}: non-finite gradient, update skipped", self.step);
                    true
                }
                Err(e) => return Err(e),
            };
            if !skipped {
                loss_sum += loss;
                batches += 1;
            }
            self.log.push(LogRecord::Step {
                step: self.step,
                epoch,
                loss,
                lr,
                skipped,
            });
        }
        let (mean_iters, unconverged) = self.validate();
        observe_best(&mut self.best, epoch, mean_iters, self.model.params());
        let best_epoch = self.best.as_ref().map_or(epoch, |b| b.epoch);
        log::info!("epoch {epoch}: validation mean iterations {mean_iters:.2} (best epoch {best_epoch})");
        self.log.push(LogRecord::Validation {
            epoch,
            validation_mean_iters: mean_iters,
            unconverged,
            train_loss: if batches == 0 { f64::NAN } else { loss_sum / batches as f64 },
            best_epoch,
        });
        self.epochs_done = epoch;
        Ok(())
    }

    pub fn finish(self) -> Result<TrainOutcome> {
        let state = self.state();
        let best = self
            .best
            .ok_or_else(|| Error::Invalid("no epoch has been run".into()))?;
        let mut best_model = self.model.clone();
        best_model.set_params(&best.params)?;
        Ok(TrainOutcome {
            best: best_model,
            best_epoch: best.epoch,
            best_mean_iters: best.mean_iters,
            last: self.model,
            log: self.log,
            state,
            skipped: self.skipped,
        })
    }
}

/// Runs every remaining epoch, calling `on_epoch` after each one.
pub fn train_with(
    mut trainer: Trainer,
    mut on_epoch: impl FnMut(&Trainer) -> Result<()>,
) -> Result<TrainOutcome> {
    while !trainer.is_finished() {
        trainer.run_epoch()?;
        on_epoch(&trainer)?;
    }
    trainer.finish()
}

pub fn train(config: TrainConfig) -> Result<TrainOutcome> {
    let data = Dataset::from_spec(&config.dataset)?;
    train_with(Trainer::new(config, &data)?, |_| Ok(()))
}
