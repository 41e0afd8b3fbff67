use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use gnnic::train::{log_to_jsonl, Dataset, DatasetSpec, LogRecord, TrainConfig, TrainState, Trainer};
use serde::{Deserialize, Serialize};

use crate::artifacts::{config_line, ensure_dir, write_json};
use crate::config::{checkpoint_name, mode_tag, ExperimentConfig};
use crate::gen::Manifest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: String,
    pub best_epoch: usize,
    pub best_mean_iters: f64,
    pub epochs: usize,
    pub steps: usize,
    pub final_train_loss: f64,
    pub skipped: Vec<String>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub state: PathBuf,
}

pub fn dataset_spec(cfg: &ExperimentConfig) -> Result<DatasetSpec> {
    Ok(match &cfg.train.dataset {
        Some(dir) => {
            let manifest = Manifest::load(dir)?;
            let paths = |split| manifest.split(split).map(|e| dir.join(&e.file)).collect::<Vec<_>>();
            DatasetSpec::Files {
                train: paths(gnnic::train::Split::Train),
                validation: paths(gnnic::train::Split::Validation),
            }
        }
        None => DatasetSpec::Poisson {
            dim: cfg.gen.family.dim(),
            m: cfg.gen.m,
            train: cfg.gen.train,
            validation: cfg.gen.validation,
            random_coefficients: cfg.gen.random_coefficients,
            seed: cfg.seed,
        },
    })
}

pub fn train_config(cfg: &ExperimentConfig) -> Result<TrainConfig> {
    let t = &cfg.train;
    let mut tc = TrainConfig::new(t.mode, dataset_spec(cfg)?);
    tc.epochs = t.epochs;
    tc.lr = t.lr;
    tc.warmup_steps = t.warmup_steps;
    tc.batch_size = t.batch_size;
    tc.seed = cfg.seed;
    tc.hidden_dim = t.hidden_dim;
    tc.validation_rel_tol = t.validation_rel_tol;
    tc.validation_max_iters = t.validation_max_iters;
    tc.threads = cfg.threads;
    tc.validate()?;
    Ok(tc)
}

pub fn state_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.join(format!("state_{}.json", mode_tag(cfg.train.mode)))
}

pub fn log_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.join(format!("train_log_{}.jsonl", mode_tag(cfg.train.mode)))
}

/// Log file: one config line, then one JSON record per step and per epoch.
fn log_text(cfg: &ExperimentConfig, log: &[LogRecord]) -> Result<String> {
    Ok(format!(
        "{{\"kind\":\"config\",\"command\":\"train\",\"config\":{}}}\n{}",
        config_line(cfg)?,
        log_to_jsonl(log)?
    ))
}

pub fn run(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    ensure_dir(&cfg.out)?;
    let tc = train_config(cfg)?;
    let data = Dataset::from_spec(&tc.dataset)?;
    let mut trainer = match &cfg.train.resume {
        Some(path) => {
            let state = TrainState::load(path).with_context(|| format!("loading {}", path.display()))?;
            let mut expected = tc.clone();
            expected.threads = state.config.threads;
            if expected != state.config {
                bail!("{} was written by a different training configuration", path.display());
            }
            log::info!("resuming after epoch {}", state.epochs_done);
            Trainer::resume(TrainState { config: tc, ..state }, &data)?
        }
        None => Trainer::new(tc, &data)?,
    };
    for id in trainer.skipped() {
        log::warn!("sample {id} skipped");
    }
    let state_file = state_path(cfg);
    let stop = cfg.train.stop_after.unwrap_or(usize::MAX);
    while !trainer.is_finished() && trainer.epochs_done() < stop {
        trainer.run_epoch()?;
        trainer.state().save(&state_file)?;
    }
    let outcome = trainer.finish()?;

    let checkpoint = cfg.out.join(checkpoint_name(cfg.train.mode));
    let meta = format!(
        "{{\"command\":\"train\",\"best_epoch\":{},\"config\":{}}}",
        outcome.best_epoch,
        config_line(cfg)?
    );
    outcome.best.save_with_metadata(&checkpoint, &meta)?;
    let log_file = log_path(cfg);
    fs::write(&log_file, log_text(cfg, &outcome.log)?)?;

    let final_train_loss = outcome
        .log
        .iter()
        .rev()
        .find_map(|r| match r {
            LogRecord::Validation { train_loss, .. } => Some(*train_loss),
            _ => None,
        })
        .unwrap_or(f64::NAN);
    let summary = TrainSummary {
        mode: mode_tag(cfg.train.mode).to_string(),
        best_epoch: outcome.best_epoch,
        best_mean_iters: outcome.best_mean_iters,
        epochs: outcome.state.epochs_done,
        steps: outcome.state.step,
        final_train_loss,
        skipped: outcome.skipped,
        checkpoint,
        log: log_file,
        state: state_file,
    };
    write_json(
        &cfg.out.join(format!("train_summary_{}.json", mode_tag(cfg.train.mode))),
        "train",
        cfg,
        &summary,
    )?;
    log::info!(
        "best epoch {} with {:.2} mean validation iterations",
        summary.best_epoch,
        summary.best_mean_iters
    );
    Ok(summary)
}
