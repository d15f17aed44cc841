//! CSV matrices and operator checkpoints shared by learners and oracles.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::learner::{LearnerState, Mode};

pub fn write_csv_matrix(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&r.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_csv_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::format(path, e.to_string())))
                .collect()
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Analytic operator(s) a checkpoint is judged against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    #[default]
    Cartoon,
    Rotation,
    /// ±x and ±y translation generators.
    Cardinal,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// "sm", "nsm", "pca" or "kmeans".
    pub kind: String,
    #[serde(rename = "K")]
    pub k: usize,
    /// Frame length; operators are n×n.
    pub n: usize,
    /// Side of a square patch when frames are flattened 2D patches.
    pub patch_side: Option<usize>,
    pub mode: Option<Mode>,
    pub t: u64,
    pub theta_hat: Vec<f64>,
    pub seed: u64,
    pub feature_kind: FeatureKind,
    pub config_hash: String,
    pub target: Target,
    pub eigenvalues: Option<Vec<f64>>,
    pub inertia: Option<f64>,
}

/// Operators as rows of W plus lateral weights and a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub w: Vec<Vec<f64>>,
    pub m: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn from_learner(state: &LearnerState, feature_kind: FeatureKind, config_hash: &str, target: Target, patch_side: Option<usize>) -> Self {
        let k = state.k;
        Checkpoint {
            manifest: Manifest {
                kind: state.mode.to_string(),
                k,
                n: state.n,
                patch_side,
                mode: Some(state.mode),
                t: state.t,
                theta_hat: state.theta_hat.clone(),
                seed: state.seed,
                feature_kind,
                config_hash: config_hash.to_owned(),
                target,
                eigenvalues: None,
                inertia: None,
            },
            w: state.rows(),
            m: state.m.chunks(k).map(|c| c.to_vec()).collect(),
        }
    }

    /// Rebuilds the learner state stored in a learner checkpoint.
    pub fn to_learner(&self) -> Result<LearnerState> {
        let mode = self
            .manifest
            .mode
            .ok_or_else(|| Error::invalid("checkpoint does not hold a learner"))?;
        Ok(LearnerState {
            k: self.manifest.k,
            n: self.manifest.n,
            w: self.w.concat(),
            m: self.m.concat(),
            theta_hat: self.manifest.theta_hat.clone(),
            t: self.manifest.t,
            mode,
            seed: self.manifest.seed,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        ensure_dir(dir)?;
        write_csv_matrix(&dir.join("W.csv"), &self.w)?;
        write_csv_matrix(&dir.join("M.csv"), &self.m)?;
        let p = dir.join("manifest.json");
        write_json(&p, &self.manifest)?;
        Ok(p)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
        let w = read_csv_matrix(&dir.join("W.csv"))?;
        let m = read_csv_matrix(&dir.join("M.csv"))?;
        let d = manifest.n * manifest.n;
        if w.len() != manifest.k || w.iter().any(|r| r.len() != d) {
            return Err(Error::format(dir, "W does not match K × n² from the manifest"));
        }
        Ok(Checkpoint { manifest, w, m })
    }
}
