//! End-to-end runs shared by the command line and the acceptance suite.

use std::path::PathBuf;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::{kmeans_features_with, pca_features_with, KmeansResult, PcaResult};
use crate::detector::{global_equivalence_check, global_equivalence_check_periodic, sweep_peak, tuning_sweep, SweepPoint};
use crate::error::{Error, Result};
use crate::features::{feature_into, FeatureKind};
use crate::generators::{cartoon, rotation, translation_x, translation_y};
use crate::harness::config::ExperimentConfig;
use crate::harness::io::{ensure_dir, write_json, Checkpoint, Manifest, Target};
use crate::learner::{train_from, whiten_frames, init_with, LearnerState, Trace, TrainOptions};
use crate::parallel::{map_indexed, Execution};
use crate::preprocess::{fit_zca_relative, WhiteningTransform};
use crate::stimuli::{generate_sequence_with, stream_rng, write_sequence, write_sequence_csv, FrameSequence};

/// A generated stream together with its whitening transform and the
/// whitened frames the learner sees.
pub struct Prepared {
    pub seq: FrameSequence,
    pub whitener: Option<WhiteningTransform>,
    pub whitened: Vec<f64>,
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64, exec: Execution) -> Result<Prepared> {
    let seq = generate_sequence_with(&cfg.stimulus, cfg.steps, seed, exec)?;
    let whitener = fit_whitener(cfg, &seq)?;
    let whitened = whiten_frames(&seq, whitener.as_ref(), exec)?;
    Ok(Prepared { seq, whitener, whitened })
}

/// ZCA fitted on the leading `fit_frames` frames of the stream.
pub fn fit_whitener(cfg: &ExperimentConfig, seq: &FrameSequence) -> Result<Option<WhiteningTransform>> {
    if !cfg.whitening.enabled {
        return Ok(None);
    }
    let count = cfg.whitening.fit_frames.min(seq.len()).max(2.min(seq.len()));
    let frames: Vec<&[f64]> = (0..count).map(|t| seq.frame(t)).collect();
    fit_zca_relative(&frames, cfg.whitening.epsilon).map(Some)
}

pub fn train_options(cfg: &ExperimentConfig, seed: u64) -> TrainOptions {
    TrainOptions {
        feature_kind: cfg.features,
        mode: cfg.learner.mode,
        k: cfg.learner.k,
        seed,
        theta_hat0: cfg.learner.theta_hat0,
        solver: cfg.learner.solver,
        snapshot_steps: cfg.snapshot_steps.clone(),
        snapshot_interval: cfg.checkpoint_interval,
        trace_every: cfg.trace_every,
        probe_size: cfg.probe_size,
        probe_interval: cfg.probe_interval,
        max_updates: cfg.max_updates,
    }
}

pub struct TrainRun {
    pub seed: u64,
    pub state: LearnerState,
    pub trace: Trace,
    pub prepared: Prepared,
}

pub fn run_train(cfg: &ExperimentConfig, seed: u64, exec: Execution) -> Result<TrainRun> {
    let prepared = prepare(cfg, seed, exec)?;
    let opts = train_options(cfg, seed);
    let state = init_with(opts.k, prepared.seq.dim, seed, opts.mode, opts.theta_hat0)?;
    let (state, trace) = train_from(state, &prepared.whitened, &prepared.seq, &opts)?;
    Ok(TrainRun {
        seed,
        state,
        trace,
        prepared,
    })
}

/// One independent run per configured seed, returned in seed-list order.
pub fn run_train_all(cfg: &ExperimentConfig, exec: Execution) -> Vec<Result<TrainRun>> {
    // Each run already parallelizes its own stream generation, so nested
    // parallelism is left to the scheduler.
    map_indexed(cfg.seeds.len(), exec, |i| run_train(cfg, cfg.seeds[i], exec))
}

/// Features of the genuine frame pairs of a prepared stream, in stream order,
/// truncated to `max` vectors when given.
pub fn feature_set(p: &Prepared, kind: FeatureKind, max: Option<usize>) -> Result<Vec<Vec<f64>>> {
    let n = p.seq.dim;
    let steps: Vec<usize> = p.seq.pair_steps().take(max.unwrap_or(usize::MAX)).collect();
    steps
        .iter()
        .map(|&t| {
            let mut c = vec![0.0; n * n];
            feature_into(kind, &p.whitened[t * n..(t + 1) * n], &p.whitened[(t + 1) * n..(t + 2) * n], &mut c)?;
            Ok(c)
        })
        .collect()
}

/// The feature population the learner consumed for this config.
pub fn training_features(cfg: &ExperimentConfig, p: &Prepared) -> Result<Vec<Vec<f64>>> {
    let mut max = cfg.max_updates.map(|m| m as usize);
    if cfg.baseline.max_samples > 0 {
        max = Some(max.unwrap_or(usize::MAX).min(cfg.baseline.max_samples));
    }
    feature_set(p, cfg.features, max)
}

pub fn run_baselines(cfg: &ExperimentConfig, p: &Prepared, seed: u64, exec: Execution) -> Result<(PcaResult, KmeansResult)> {
    let chi = training_features(cfg, p)?;
    let pca = pca_features_with(&chi, cfg.baseline.k, exec)?;
    let km = kmeans_features_with(&chi, cfg.baseline.k, seed, cfg.baseline.kmeans_max_iter, exec)?;
    Ok((pca, km))
}

/// Named analytic operators, vectorized, for a target family.
pub fn targets(target: Target, n: usize, patch_side: Option<usize>) -> Result<Vec<(String, Vec<f64>)>> {
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<f64>>();
    Ok(match (target, patch_side) {
        (Target::None, _) => Vec::new(),
        (Target::Cartoon, None) => vec![("cartoon".into(), cartoon(n)?.concat())],
        (Target::Rotation, Some(s)) => vec![("rotation".into(), rotation(s)?.concat())],
        (Target::Cardinal, Some(s)) => {
            let dx = translation_x(s)?.concat();
            let dy = translation_y(s)?.concat();
            vec![
                ("+x".into(), dx.clone()),
                ("-x".into(), neg(&dx)),
                ("+y".into(), dy.clone()),
                ("-y".into(), neg(&dy)),
            ]
        }
        (t, s) => return Err(Error::invalid(format!("target {t:?} does not fit patch side {s:?}"))),
    })
}

fn seed_dir(cfg: &ExperimentConfig, seed: u64, what: &str) -> PathBuf {
    cfg.output_path().join(format!("{what}_seed{seed}"))
}

/// Writes one sequence file (plus CSV) per seed.
pub fn cli_gen(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<PathBuf>> {
    let out = cfg.output_path();
    ensure_dir(&out)?;
    let hash = cfg.hash();
    cfg.seeds
        .iter()
        .map(|&seed| {
            let seq = generate_sequence_with(&cfg.stimulus, cfg.steps, seed, exec)?;
            let path = out.join(format!("sequence_seed{seed}.bin"));
            write_sequence(&path, &seq, Some(&cfg.stimulus), Some(seed), Some(&hash))?;
            write_sequence_csv(&path.with_extension("csv"), &seq)?;
            Ok(path)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub seed: u64,
    pub updates: u64,
    pub unconverged: u64,
    pub warnings: Vec<String>,
    pub objective: Vec<(u64, f64)>,
}

/// Trains every seed and writes checkpoint, whitening, trace and snapshots.
pub fn cli_train(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<PathBuf>> {
    let hash = cfg.hash();
    let mut dirs = Vec::new();
    for run in run_train_all(cfg, exec) {
        let run = run?;
        let dir = seed_dir(cfg, run.seed, "train");
        let ck = Checkpoint::from_learner(&run.state, cfg.features, &hash, cfg.target, cfg.patch_side());
        ck.save(&dir)?;
        if let Some(z) = &run.prepared.whitener {
            z.save(&dir.join("whitening.csv"))?;
        }
        std::fs::write(dir.join("trace.csv"), run.trace.thetas_csv()).map_err(|e| Error::io(&dir, e))?;
        for s in &run.trace.snapshots {
            let mut snap = ck.clone();
            snap.w = s.w.clone();
            snap.manifest.t = s.step;
            snap.save(&dir.join(format!("snapshot_{:08}", s.step)))?;
        }
        write_json(
            &dir.join("summary.json"),
            &TrainSummary {
                config_hash: hash.clone(),
                seed: run.seed,
                updates: run.state.t,
                unconverged: run.trace.unconverged,
                warnings: run.trace.warnings.clone(),
                objective: run.trace.objective.clone(),
            },
        )?;
        dirs.push(dir);
    }
    Ok(dirs)
}

fn oracle_checkpoint(cfg: &ExperimentConfig, kind: &str, rows: Vec<Vec<f64>>, n: usize, seed: u64) -> Checkpoint {
    let k = rows.len();
    Checkpoint {
        manifest: Manifest {
            kind: kind.into(),
            k,
            n,
            patch_side: cfg.patch_side(),
            mode: None,
            t: 0,
            theta_hat: Vec::new(),
            seed,
            feature_kind: cfg.features,
            config_hash: cfg.hash(),
            target: cfg.target,
            eigenvalues: None,
            inertia: None,
        },
        w: rows,
        m: vec![vec![0.0; k]; k],
    }
}

/// PCA and K-means checkpoints on the same feature population as training.
pub fn cli_baseline(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for &seed in &cfg.seeds {
        let p = prepare(cfg, seed, exec)?;
        let (pca, km) = run_baselines(cfg, &p, seed, exec)?;
        let n = p.seq.dim;
        let mut ck = oracle_checkpoint(cfg, "pca", pca.components, n, seed);
        ck.manifest.eigenvalues = Some(pca.eigenvalues);
        let d = seed_dir(cfg, seed, "pca");
        ck.save(&d)?;
        dirs.push(d);
        let mut ck = oracle_checkpoint(cfg, "kmeans", km.centroids, n, seed);
        ck.manifest.inertia = Some(km.inertia);
        let d = seed_dir(cfg, seed, "kmeans");
        ck.save(&d)?;
        dirs.push(d);
    }
    Ok(dirs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub config_hash: String,
    pub points: Vec<(f64, f64, f64)>,
    /// Parabola-refined peak of |mean output| along the sweep axis.
    pub peak: f64,
}

pub fn run_sweep(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<SweepPoint>> {
    let d = &cfg.detector;
    tuning_sweep(d.kind, &d.grating, d.axis, &d.values, exec)
}

/// Sweep CSV (value, mean output, dominant frequency) plus JSON summary.
pub fn cli_detect(cfg: &ExperimentConfig, exec: Execution) -> Result<PathBuf> {
    let pts = run_sweep(cfg, exec)?;
    let out = cfg.output_path();
    ensure_dir(&out)?;
    let mut csv = String::from("value,mean_output,dominant_frequency\n");
    for p in &pts {
        csv.push_str(&format!("{:e},{:e},{:e}\n", p.value, p.mean_output, p.dominant_frequency));
    }
    let path = out.join("sweep.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    write_json(
        &out.join("sweep.json"),
        &SweepSummary {
            config_hash: cfg.hash(),
            points: pts.iter().map(|p| (p.value, p.mean_output, p.dominant_frequency)).collect(),
            peak: sweep_peak(&pts),
        },
    )?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivRow {
    pub stream: usize,
    pub tau: usize,
    pub half_width: usize,
    pub max_abs: f64,
    pub max_rel: f64,
}

/// Random Gaussian streams checked against the global identity.
pub fn run_equivalence(cfg: &ExperimentConfig, seed: u64, exec: Execution) -> Result<Vec<EquivRow>> {
    let e = &cfg.equiv;
    let mut jobs = Vec::new();
    for s in 0..e.streams {
        for &w in &e.half_widths {
            for &tau in &e.taus {
                jobs.push((s, w, tau));
            }
        }
    }
    map_indexed(jobs.len(), exec, |j| {
        let (s, w, tau) = jobs[j];
        let dim = 2 * w + 3;
        let mut rng = stream_rng(seed, (s * 1000 + w) as u64);
        let frames: Vec<Vec<f64>> = (0..e.steps)
            .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let seq = FrameSequence::from_frames(frames, 1, vec![vec![0.0]; e.steps - 1])?;
        let rep = if e.periodic { global_equivalence_check_periodic(&seq, tau)? } else { global_equivalence_check(&seq, tau, w)? };
        Ok(EquivRow {
            stream: s,
            tau,
            half_width: w,
            max_abs: rep.max_abs,
            max_rel: rep.max_rel,
        })
    })
    .into_iter()
    .collect()
}

pub fn cli_equiv(cfg: &ExperimentConfig, exec: Execution) -> Result<PathBuf> {
    let out = cfg.output_path();
    ensure_dir(&out)?;
    let rows = run_equivalence(cfg, cfg.seeds[0], exec)?;
    let mut csv = String::from("stream,tau,half_width,max_abs,max_rel\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{:e},{:e}\n", r.stream, r.tau, r.half_width, r.max_abs, r.max_rel));
    }
    let path = out.join("equivalence.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    let max_rel = rows.iter().map(|r| r.max_rel).fold(0.0, f64::max);
    write_json(
        &out.join("equivalence.json"),
        &serde_json::json!({ "config_hash": cfg.hash(), "cases": rows.len(), "max_rel": max_rel }),
    )?;
    Ok(path)
}
