//! Metrics over saved checkpoints, plus filter images.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::unvec;
use crate::harness::io::{ensure_dir, read_json, write_json, Checkpoint, Target};
use crate::harness::pgm;
use crate::harness::pipeline::{targets, SweepSummary};
use crate::metrics::{antisymmetry_ratio, cosine, match_targets, max_principal_angle_deg, toeplitz_scores};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorMetrics {
    pub index: usize,
    /// Best-matching analytic target and the signed cosine to it.
    pub target: Option<String>,
    pub target_cosine: Option<f64>,
    /// 1D only.
    pub toeplitz: Vec<f64>,
    pub antisymmetry: f64,
    pub image: String,
    pub affine: pgm::Affine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetrics {
    pub label: String,
    pub path: String,
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub t: u64,
    pub operators: Vec<OperatorMetrics>,
    /// Largest principal angle in degrees between this checkpoint's rows and
    /// the leading K components of a PCA checkpoint in the same report (same
    /// seed preferred).
    pub pca_angle_deg: Option<f64>,
    pub pca_reference: Option<String>,
    /// Most negative cosine between two operators of this checkpoint.
    pub sign_inversion_cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceSummary {
    pub label: String,
    pub config_hash: String,
    pub cases: usize,
    pub max_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSummary {
    pub label: String,
    pub config_hash: String,
    pub peak: f64,
    pub points: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hashes: Vec<String>,
    pub n: Option<usize>,
    pub checkpoints: Vec<CheckpointMetrics>,
    pub equivalence: Vec<EquivalenceSummary>,
    pub tuning: Vec<TuningSummary>,
}

impl MetricsReport {
    /// One row per scalar metric: label, config hash, seed, operator, metric, value.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,config_hash,seed,operator,metric,value\n");
        let mut row = |label: &str, hash: &str, seed: String, op: String, metric: &str, v: f64| {
            s.push_str(&format!("{label},{hash},{seed},{op},{metric},{v:e}\n"));
        };
        for c in &self.checkpoints {
            for o in &c.operators {
                if let Some(v) = o.target_cosine {
                    row(&c.label, &c.config_hash, c.seed.to_string(), o.index.to_string(), &format!("cosine_{}", o.target.as_deref().unwrap_or("")), v);
                }
                for (r, v) in o.toeplitz.iter().enumerate() {
                    row(&c.label, &c.config_hash, c.seed.to_string(), o.index.to_string(), &format!("toeplitz_{r}"), *v);
                }
                row(&c.label, &c.config_hash, c.seed.to_string(), o.index.to_string(), "antisymmetry", o.antisymmetry);
            }
            if let Some(v) = c.pca_angle_deg {
                row(&c.label, &c.config_hash, c.seed.to_string(), String::new(), "pca_angle_deg", v);
            }
            if let Some(v) = c.sign_inversion_cosine {
                row(&c.label, &c.config_hash, c.seed.to_string(), String::new(), "sign_inversion_cosine", v);
            }
        }
        for e in &self.equivalence {
            row(&e.label, &e.config_hash, String::new(), String::new(), "equivalence_max_rel", e.max_rel);
        }
        for t in &self.tuning {
            row(&t.label, &t.config_hash, String::new(), String::new(), "tuning_peak", t.peak);
        }
        s
    }
}

fn label_of(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn operator_metrics(ck: &Checkpoint, images: &Path, label: &str) -> Result<Vec<OperatorMetrics>> {
    let m = &ck.manifest;
    let tg = targets(m.target, m.n, m.patch_side)?;
    let assignment = match m.target {
        // Several candidate targets: one-to-one matching across filters.
        Target::Cardinal if ck.w.len() <= tg.len() => {
            let t: Vec<Vec<f64>> = tg.iter().map(|(_, v)| v.clone()).collect();
            Some(match_targets(&ck.w, &t)?)
        }
        _ => None,
    };
    ck.w.iter()
        .enumerate()
        .map(|(a, row)| {
            let op = unvec(row)?;
            let (target, target_cosine) = match (&assignment, tg.first()) {
                (Some(asg), _) => (Some(tg[asg[a].0].0.clone()), Some(asg[a].1)),
                (None, Some((name, v))) if tg.len() == 1 => (Some(name.clone()), Some(cosine(row, v))),
                _ => (None, None),
            };
            let (values, width) = match m.patch_side {
                Some(side) => (pgm::tile_operator(&op, side)?, side * side),
                None => (row.clone(), m.n),
            };
            let image = format!("{label}_op{a}.pgm");
            let affine = pgm::write(&images.join(&image), &values, width)?;
            Ok(OperatorMetrics {
                index: a,
                target,
                target_cosine,
                toeplitz: if m.patch_side.is_none() { toeplitz_scores(&op) } else { Vec::new() },
                antisymmetry: antisymmetry_ratio(&op),
                image,
                affine,
            })
        })
        .collect()
}

fn sign_inversion(w: &[Vec<f64>]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for i in 0..w.len() {
        for j in i + 1..w.len() {
            let c = cosine(&w[i], &w[j]);
            best = Some(best.map_or(c, |b: f64| b.min(c)));
        }
    }
    best
}

/// Builds the report for a set of checkpoint directories. Directories holding
/// `equivalence.json` or `sweep.json` contribute those summaries instead.
/// Images go to `out/images`, metrics to `out/metrics.{json,csv}`.
pub fn cli_report(inputs: &[PathBuf], out: &Path, force: bool) -> Result<MetricsReport> {
    if inputs.is_empty() {
        return Err(Error::invalid("report needs at least one checkpoint"));
    }
    let mut loaded = Vec::new();
    let mut equivalence = Vec::new();
    let mut tuning = Vec::new();
    for p in inputs {
        let label = label_of(p);
        if p.join("manifest.json").exists() {
            loaded.push((label, p.clone(), Checkpoint::load(p)?));
        } else if p.join("equivalence.json").exists() {
            let v: serde_json::Value = read_json(&p.join("equivalence.json"))?;
            let bad = || Error::format(p, "equivalence.json lacks config_hash, cases or max_rel");
            equivalence.push(EquivalenceSummary {
                label,
                config_hash: v["config_hash"].as_str().ok_or_else(bad)?.to_owned(),
                cases: v["cases"].as_u64().ok_or_else(bad)? as usize,
                max_rel: v["max_rel"].as_f64().ok_or_else(bad)?,
            });
        } else if p.join("sweep.json").exists() {
            let s: SweepSummary = read_json(&p.join("sweep.json"))?;
            tuning.push(TuningSummary {
                label,
                config_hash: s.config_hash,
                peak: s.peak,
                points: s.points,
            });
        } else {
            return Err(Error::invalid(format!("{} holds no checkpoint or summary", p.display())));
        }
    }

    let mut hashes: Vec<String> = loaded
        .iter()
        .map(|(_, _, c)| c.manifest.config_hash.clone())
        .chain(equivalence.iter().map(|e| e.config_hash.clone()))
        .chain(tuning.iter().map(|t| t.config_hash.clone()))
        .collect();
    hashes.sort();
    hashes.dedup();
    if hashes.len() > 1 && !force {
        return Err(Error::invalid(format!("inputs come from different configs ({}); pass --force to compare them", hashes.join(", "))));
    }
    let n = loaded.first().map(|(_, _, c)| c.manifest.n);
    if loaded.iter().any(|(_, _, c)| Some(c.manifest.n) != n) {
        return Err(Error::invalid("checkpoints have different frame lengths n"));
    }

    let images = out.join("images");
    ensure_dir(&images)?;
    let mut checkpoints = Vec::new();
    for (label, path, ck) in &loaded {
        let m = &ck.manifest;
        let pca = if m.kind == "pca" {
            None
        } else {
            let mut candidates: Vec<&(String, PathBuf, Checkpoint)> =
                loaded.iter().filter(|(_, _, c)| c.manifest.kind == "pca" && c.w.len() >= ck.w.len()).collect();
            candidates.sort_by_key(|(_, _, c)| c.manifest.seed != m.seed);
            candidates.first().copied()
        };
        let pca_angle_deg = match pca {
            Some((_, _, p)) => Some(max_principal_angle_deg(&ck.w, &p.w[..ck.w.len()])?),
            None => None,
        };
        checkpoints.push(CheckpointMetrics {
            label: label.clone(),
            path: path.display().to_string(),
            kind: m.kind.clone(),
            config_hash: m.config_hash.clone(),
            seed: m.seed,
            t: m.t,
            operators: operator_metrics(ck, &images, label)?,
            pca_angle_deg,
            pca_reference: pca.map(|(l, _, _)| l.clone()),
            sign_inversion_cosine: sign_inversion(&ck.w),
        });
    }

    let report = MetricsReport {
        config_hashes: hashes,
        n,
        checkpoints,
        equivalence,
        tuning,
    };
    write_json(&out.join("metrics.json"), &report)?;
    let csv = out.join("metrics.csv");
    std::fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;
    use crate::generators::cartoon;
    use crate::harness::io::Manifest;

    fn checkpoint(kind: &str, rows: Vec<Vec<f64>>, n: usize, hash: &str) -> Checkpoint {
        let k = rows.len();
        Checkpoint {
            manifest: Manifest {
                kind: kind.into(),
                k,
                n,
                patch_side: None,
                mode: None,
                t: 0,
                theta_hat: vec![],
                seed: 0,
                feature_kind: FeatureKind::Standard,
                config_hash: hash.into(),
                target: Target::Cartoon,
                eigenvalues: None,
                inertia: None,
            },
            w: rows,
            m: vec![vec![0.0; k]; k],
        }
    }

    #[test]
    fn self_comparison_gives_unit_cosine() {
        let dir = tempfile::tempdir().unwrap();
        let ck = checkpoint("sm", vec![cartoon(5).unwrap().concat()], 5, "h");
        ck.save(&dir.path().join("a")).unwrap();
        let r = cli_report(&[dir.path().join("a")], &dir.path().join("out"), false).unwrap();
        let c = r.checkpoints[0].operators[0].target_cosine.unwrap();
        assert!((c - 1.0).abs() < 1e-12);
        assert!(dir.path().join("out/metrics.csv").exists());
    }

    #[test]
    fn identity_image_has_bright_diagonal() {
        let dir = tempfile::tempdir().unwrap();
        let id: Vec<f64> = (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect();
        checkpoint("sm", vec![id], 4, "h").save(&dir.path().join("id")).unwrap();
        let out = dir.path().join("out");
        cli_report(&[dir.path().join("id")], &out, false).unwrap();
        let text = std::fs::read_to_string(out.join("images/id_op0.pgm")).unwrap();
        let px: Vec<&str> = text.lines().skip(3).collect();
        for (r, line) in px.iter().enumerate() {
            let v: Vec<u32> = line.split(' ').map(|s| s.parse().unwrap()).collect();
            for (c, p) in v.iter().enumerate() {
                assert_eq!(*p, if r == c { 255 } else { 0 });
            }
        }
    }

    #[test]
    fn mixed_hashes_need_force() {
        let dir = tempfile::tempdir().unwrap();
        checkpoint("sm", vec![vec![1.0; 25]], 5, "a").save(&dir.path().join("a")).unwrap();
        checkpoint("pca", vec![vec![1.0; 25]], 5, "b").save(&dir.path().join("b")).unwrap();
        let ins = [dir.path().join("a"), dir.path().join("b")];
        assert!(matches!(cli_report(&ins, &dir.path().join("o"), false), Err(Error::InvalidArgument(_))));
        let r = cli_report(&ins, &dir.path().join("o"), true).unwrap();
        assert!(r.checkpoints[0].pca_angle_deg.unwrap() < 1e-6);
    }

    #[test]
    fn incompatible_n_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        checkpoint("sm", vec![vec![1.0; 25]], 5, "a").save(&dir.path().join("a")).unwrap();
        checkpoint("sm", vec![vec![1.0; 16]], 4, "a").save(&dir.path().join("b")).unwrap();
        let ins = [dir.path().join("a"), dir.path().join("b")];
        assert!(matches!(cli_report(&ins, &dir.path().join("o"), true), Err(Error::InvalidArgument(_))));
    }
}
