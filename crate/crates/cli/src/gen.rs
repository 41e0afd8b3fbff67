use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gnnic::generate::gen_poisson;
use gnnic::mtx::{read_matrix_market, write_matrix_market_with_comments, MtxSymmetry};
use gnnic::sparse::SparseCoo;
use gnnic::train::{sample_id, split_seeds, Split};
use serde::{Deserialize, Serialize};

use crate::artifacts::{config_line, ensure_dir, read_json, write_json};
use crate::config::{ExperimentConfig, Family};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    /// Relative to the dataset directory.
    pub file: PathBuf,
    pub n: usize,
    pub nnz: usize,
    pub nnz_per_row: f64,
    pub coeff_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub family: Family,
    pub m: usize,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(read_json::<Manifest>(&dir.join(MANIFEST))?.result)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Reads every matrix of one split, with its ID.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<(String, SparseCoo)>> {
    Manifest::load(dir)?
        .split(split)
        .map(|e| {
            let path = dir.join(&e.file);
            let m = read_matrix_market(&path).with_context(|| format!("reading {}", path.display()))?;
            Ok((e.id.clone(), m))
        })
        .collect()
}

pub fn run(cfg: &ExperimentConfig) -> Result<Manifest> {
    let g = &cfg.gen;
    let dir = &cfg.out;
    let config = config_line(cfg)?;
    let mut entries = Vec::new();
    for (split, count) in [(Split::Train, g.train), (Split::Validation, g.validation), (Split::Test, g.test)] {
        if count == 0 {
            continue;
        }
        let sub = dir.join(split.name());
        ensure_dir(&sub)?;
        for (i, seed) in split_seeds(cfg.seed, split, count).into_iter().enumerate() {
            let id = sample_id(split, i);
            let coeff_seed = g.random_coefficients.then_some(seed);
            let a = gen_poisson(g.family.dim(), g.m, coeff_seed)?;
            let file = PathBuf::from(split.name()).join(format!("{id}.mtx"));
            let comments = vec![
                format!("id: {id}"),
                format!("coeff_seed: {}", coeff_seed.map_or("none".to_string(), |s| s.to_string())),
                format!("config: {config}"),
            ];
            write_matrix_market_with_comments(&a, dir.join(&file), MtxSymmetry::Symmetric, &comments)?;
            entries.push(ManifestEntry {
                id,
                split,
                file,
                n: a.n_rows(),
                nnz: a.nnz(),
                nnz_per_row: a.nnz() as f64 / a.n_rows() as f64,
                coeff_seed,
            });
        }
    }
    let manifest = Manifest {
        family: g.family,
        m: g.m,
        entries,
    };
    write_json(&dir.join(MANIFEST), "gen", cfg, &manifest)?;
    log::info!("wrote {} matrices to {}", manifest.entries.len(), dir.display());
    Ok(manifest)
}
