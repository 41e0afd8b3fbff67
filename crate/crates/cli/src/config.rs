//! Experiment configuration: one TOML file with a section per command, plus
//! command-line overrides. The resolved value is written into every artifact.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gnnic::generate::GridDim;
use gnnic::precond::PreconditionerKind;
use gnnic::train::{Split, TrainMode};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Poisson2d,
    Poisson3d,
}

impl Family {
    pub fn dim(self) -> GridDim {
        match self {
            Family::Poisson2d => GridDim::Two,
            Family::Poisson3d => GridDim::Three,
        }
    }

    pub fn n(self, m: usize) -> usize {
        m.pow(self.dim().as_usize() as u32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads for training. Evaluation always times on one thread.
    pub threads: usize,
    pub gen: GenConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
    pub crossscale: CrossScaleConfig,
    pub dropout: DropoutConfig,
    pub analyze: AnalyzeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            threads: 1,
            gen: GenConfig::default(),
            train: TrainSection::default(),
            eval: EvalConfig::default(),
            crossscale: CrossScaleConfig::default(),
            dropout: DropoutConfig::default(),
            analyze: AnalyzeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub family: Family,
    /// Grid cells per side.
    pub m: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub random_coefficients: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            family: Family::Poisson2d,
            m: 32,
            train: 10,
            validation: 2,
            test: 5,
            random_coefficients: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub mode: TrainMode,
    /// Directory written by `gen`. When absent the `[gen]` family is generated in memory.
    pub dataset: Option<PathBuf>,
    pub epochs: usize,
    pub lr: f64,
    pub warmup_steps: Option<usize>,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub validation_rel_tol: f64,
    pub validation_max_iters: usize,
    /// Training state to continue from.
    pub resume: Option<PathBuf>,
    /// Stop after this many completed epochs; the saved state can be resumed later.
    pub stop_after: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            mode: TrainMode::GnnIc,
            dataset: None,
            epochs: 50,
            lr: 0.005,
            warmup_steps: None,
            batch_size: 8,
            hidden_dim: gnnic::gnn::DEFAULT_HIDDEN,
            validation_rel_tol: 1e-6,
            validation_max_iters: 2000,
            resume: None,
            stop_after: None,
        }
    }
}

/// Where test matrices come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixSet {
    /// One split of a directory written by `gen`.
    Dataset {
        dir: PathBuf,
        #[serde(default = "test_split")]
        split: Split,
    },
    Files { paths: Vec<PathBuf> },
    /// Generated on the fly with the test-split seeds of `seed` (the global seed when absent),
    /// so `gen` and this source agree for equal settings.
    Poisson {
        family: Family,
        m: usize,
        count: usize,
        #[serde(default = "yes")]
        random_coefficients: bool,
        #[serde(default)]
        seed: Option<u64>,
    },
}

fn test_split() -> Split {
    Split::Test
}

fn yes() -> bool {
    true
}

impl MatrixSet {
    fn poisson(m: usize, count: usize) -> Self {
        MatrixSet::Poisson {
            family: Family::Poisson2d,
            m,
            count,
            random_coefficients: true,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSection {
    pub rel_tol: f64,
    /// `None` means `10 n`.
    pub max_iters: Option<usize>,
    /// Timed runs averaged per entry.
    pub repeats: usize,
    /// Run and discard one untimed solve first.
    pub warm_start: bool,
}

impl Default for SolveSection {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            max_iters: None,
            repeats: 1,
            warm_start: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Checkpoints {
    pub nic: Option<PathBuf>,
    pub gnnic: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub matrices: MatrixSet,
    pub methods: Vec<PreconditionerKind>,
    pub checkpoints: Checkpoints,
    pub solve: SolveSection,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            matrices: MatrixSet::poisson(32, 5),
            methods: PreconditionerKind::ALL.to_vec(),
            checkpoints: Checkpoints::default(),
            solve: SolveSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossScaleConfig {
    pub family: Family,
    /// Grid sizes `m`; at least three.
    pub sizes: Vec<usize>,
    pub count: usize,
    pub random_coefficients: bool,
    pub checkpoints: Checkpoints,
    pub solve: SolveSection,
}

impl Default for CrossScaleConfig {
    fn default() -> Self {
        Self {
            family: Family::Poisson2d,
            sizes: vec![16, 32, 64, 128],
            count: 1,
            random_coefficients: true,
            checkpoints: Checkpoints::default(),
            solve: SolveSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropoutConfig {
    pub method: PreconditionerKind,
    pub checkpoint: Option<PathBuf>,
    pub matrices: MatrixSet,
    pub eps: Vec<f64>,
    pub solve: SolveSection,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        Self {
            method: PreconditionerKind::Ic0,
            checkpoint: None,
            matrices: MatrixSet::poisson(64, 1),
            eps: vec![0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5],
            solve: SolveSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// The first matrix of the set is analysed.
    pub matrices: MatrixSet,
    pub checkpoints: Checkpoints,
    /// Log-spaced histogram bins per population.
    pub bins: usize,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            matrices: MatrixSet::poisson(32, 1),
            checkpoints: Checkpoints::default(),
            bins: 20,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub mode: Option<TrainMode>,
    pub threads: Option<usize>,
    pub resume: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// `--mode` picks the training mode and the learned method of the dropout study.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(mode) = o.mode {
            self.train.mode = mode;
            self.dropout.method = mode.kind();
        }
        if let Some(threads) = o.threads {
            self.threads = threads;
        }
        if let Some(resume) = &o.resume {
            self.train.resume = Some(resume.clone());
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gen.m == 0 {
            bail!("gen.m must be at least 1");
        }
        if self.crossscale.sizes.len() < 3 {
            bail!("crossscale.sizes needs at least three sizes");
        }
        if self.eval.methods.is_empty() {
            bail!("eval.methods is empty");
        }
        for s in [&self.eval.solve, &self.crossscale.solve, &self.dropout.solve] {
            if !(s.rel_tol > 0.0) || s.repeats == 0 {
                bail!("solve settings need rel_tol > 0 and repeats >= 1");
            }
        }
        if self.dropout.eps.iter().any(|e| !(*e >= 0.0)) {
            bail!("dropout.eps values must be >= 0");
        }
        if self.analyze.bins == 0 {
            bail!("analyze.bins must be at least 1");
        }
        Ok(())
    }

    /// Explicit path, else `out/checkpoint_<mode>.bin` if it exists.
    pub fn checkpoint_for(&self, explicit: Option<&PathBuf>, mode: TrainMode) -> Option<PathBuf> {
        explicit.cloned().or_else(|| {
            let p = self.out.join(checkpoint_name(mode));
            p.exists().then_some(p)
        })
    }
}

pub fn mode_tag(mode: TrainMode) -> &'static str {
    match mode {
        TrainMode::Nic => "nic",
        TrainMode::GnnIc => "gnnic",
    }
}

pub fn checkpoint_name(mode: TrainMode) -> String {
    format!("checkpoint_{}.bin", mode_tag(mode))
}
