//! Online similarity matching (SM) and nonnegative similarity matching (NSM).
//!
//! Each output channel a carries a feedforward row W_a (a vectorized n×n
//! operator), lateral weights M_a·, and a cumulative activity Θ̂_a whose
//! inverse is the channel's learning rate.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{feature_into, unvec, FeatureKind};
use crate::metrics::cosine;
use crate::parallel::{map_indexed, Execution};
use crate::preprocess::WhiteningTransform;
use crate::stimuli::{stream_rng, FrameSequence};

pub const NSM_TOL: f64 = 1e-10;
pub const NSM_MAX_SWEEPS: usize = 500;
pub const COLLAPSE_COSINE: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Sm,
    Nsm,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Sm => "sm",
            Mode::Nsm => "nsm",
        })
    }
}

/// How the output fixed point is found.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Solver {
    /// Linear solve (SM) or cyclic coordinate iteration (NSM).
    #[default]
    Direct,
    /// Projected gradient dynamics y ← y + η(Wχ − (I+M)y), rectified for NSM.
    Dynamics { eta: f64, tol: f64, max_iter: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub k: usize,
    /// Frame length; operators are n×n and features n².
    pub n: usize,
    /// K × n², row-major.
    pub w: Vec<f64>,
    /// K × K, row-major, zero diagonal.
    pub m: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub t: u64,
    pub mode: Mode,
    pub seed: u64,
}

/// Output magnitudes with solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub theta: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// W entries are N(0, 1/n²), M = 0 and Θ̂ = 1.
pub fn init(k: usize, n: usize, seed: u64, mode: Mode) -> Result<LearnerState> {
    init_with(k, n, seed, mode, 1.0)
}

pub fn init_with(k: usize, n: usize, seed: u64, mode: Mode, theta_hat0: f64) -> Result<LearnerState> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if n < 3 {
        return Err(Error::invalid("n must be at least 3"));
    }
    if !(theta_hat0 > 0.0) {
        return Err(Error::invalid("initial cumulative activity must be positive"));
    }
    let mut rng = stream_rng(seed, 1000);
    let sd = 1.0 / n as f64;
    let w = (0..k * n * n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(LearnerState {
        k,
        n,
        w,
        m: vec![0.0; k * k],
        theta_hat: vec![theta_hat0; k],
        t: 0,
        mode,
        seed,
    })
}

impl LearnerState {
    pub fn feature_dim(&self) -> usize {
        self.n * self.n
    }

    pub fn row(&self, a: usize) -> &[f64] {
        let d = self.feature_dim();
        &self.w[a * d..(a + 1) * d]
    }

    pub fn lateral(&self, a: usize, b: usize) -> f64 {
        self.m[a * self.k + b]
    }

    /// Feedforward drive Wχ.
    pub fn drive(&self, chi: &[f64]) -> Result<Vec<f64>> {
        if chi.len() != self.feature_dim() {
            return Err(Error::invalid(format!("feature length {} != {}", chi.len(), self.feature_dim())));
        }
        Ok((0..self.k)
            .map(|a| self.row(a).iter().zip(chi).map(|(w, x)| w * x).sum())
            .collect())
    }

    /// Drive for χ = vec(u vᵀ) computed as Σ_i u_i Σ_j W_{a,(i,j)} v_j.
    pub fn drive_rank1(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if u.len() != n || v.len() != n {
            return Err(Error::invalid("rank-one factors must have length n"));
        }
        Ok((0..self.k)
            .map(|a| {
                let row = self.row(a);
                u.iter()
                    .enumerate()
                    .map(|(i, ui)| ui * row[i * n..(i + 1) * n].iter().zip(v).map(|(w, x)| w * x).sum::<f64>())
                    .sum()
            })
            .collect())
    }

    pub fn respond(&self, chi: &[f64]) -> Result<Response> {
        self.solve(&self.drive(chi)?, Solver::Direct)
    }

    pub fn respond_rank1(&self, u: &[f64], v: &[f64]) -> Result<Response> {
        self.solve(&self.drive_rank1(u, v)?, Solver::Direct)
    }

    pub fn respond_with(&self, chi: &[f64], solver: Solver) -> Result<Response> {
        self.solve(&self.drive(chi)?, solver)
    }

    /// Output fixed point for a given drive Wχ.
    pub fn solve(&self, drive: &[f64], solver: Solver) -> Result<Response> {
        if drive.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite drive".into()));
        }
        match (solver, self.mode) {
            (Solver::Direct, Mode::Sm) => self.solve_sm(drive),
            (Solver::Direct, Mode::Nsm) => Ok(self.solve_nsm(drive)),
            (Solver::Dynamics { eta, tol, max_iter }, mode) => self.solve_dynamics(drive, mode, eta, tol, max_iter),
        }
    }

    fn solve_sm(&self, drive: &[f64]) -> Result<Response> {
        let k = self.k;
        let a = DMatrix::from_fn(k, k, |i, j| self.lateral(i, j) + if i == j { 1.0 } else { 0.0 });
        let theta = a
            .lu()
            .solve(&DVector::from_column_slice(drive))
            .filter(|x| x.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::NumericalFailure("I + M is singular".into()))?;
        Ok(Response {
            theta: theta.iter().copied().collect(),
            sweeps: 0,
            converged: true,
        })
    }

    fn solve_nsm(&self, drive: &[f64]) -> Response {
        let k = self.k;
        let mut theta: Vec<f64> = drive.iter().map(|v| v.max(0.0)).collect();
        for sweep in 1..=NSM_MAX_SWEEPS {
            let mut change: f64 = 0.0;
            for a in 0..k {
                let inhib: f64 = (0..k).filter(|&b| b != a).map(|b| self.lateral(a, b) * theta[b]).sum();
                let new = (drive[a] - inhib).max(0.0);
                change = change.max((new - theta[a]).abs());
                theta[a] = new;
            }
            if change < NSM_TOL {
                return Response {
                    theta,
                    sweeps: sweep,
                    converged: true,
                };
            }
        }
        log::warn!("NSM response did not converge in {NSM_MAX_SWEEPS} sweeps");
        Response {
            theta,
            sweeps: NSM_MAX_SWEEPS,
            converged: false,
        }
    }

    fn solve_dynamics(&self, drive: &[f64], mode: Mode, eta: f64, tol: f64, max_iter: usize) -> Result<Response> {
        if !(eta > 0.0) {
            return Err(Error::invalid("dynamics step size must be positive"));
        }
        let k = self.k;
        let mut y = vec![0.0; k];
        for it in 1..=max_iter {
            let mut change: f64 = 0.0;
            let next: Vec<f64> = (0..k)
                .map(|a| {
                    let lat: f64 = (0..k).map(|b| self.lateral(a, b) * y[b]).sum();
                    let v = y[a] + eta * (drive[a] - y[a] - lat);
                    if mode == Mode::Nsm {
                        v.max(0.0)
                    } else {
                        v
                    }
                })
                .collect();
            for a in 0..k {
                change = change.max((next[a] - y[a]).abs());
            }
            y = next;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalFailure("output dynamics diverged".into()));
            }
            if change < tol {
                return Ok(Response {
                    theta: y,
                    sweeps: it,
                    converged: true,
                });
            }
        }
        Ok(Response {
            theta: y,
            sweeps: max_iter,
            converged: false,
        })
    }

    /// ‖(I+M)Θ − Wχ‖ for SM or ‖Θ − max(Wχ − MΘ, 0)‖ for NSM.
    pub fn fixed_point_residual(&self, drive: &[f64], theta: &[f64]) -> f64 {
        let k = self.k;
        (0..k)
            .map(|a| {
                let lat: f64 = (0..k).filter(|&b| b != a).map(|b| self.lateral(a, b) * theta[b]).sum();
                let r = match self.mode {
                    Mode::Sm => theta[a] + lat - drive[a],
                    Mode::Nsm => theta[a] - (drive[a] - lat).max(0.0),
                };
                r * r
            })
            .sum::<f64>()
            .sqrt()
    }

    /// One Hebbian / anti-Hebbian step with the response to χ.
    pub fn update(&mut self, chi: &[f64], theta: &[f64]) -> Result<()> {
        let d = self.feature_dim();
        let k = self.k;
        if chi.len() != d || theta.len() != k {
            return Err(Error::invalid("update arguments have the wrong length"));
        }
        if chi.iter().chain(theta).any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite update input".into()));
        }
        for a in 0..k {
            self.theta_hat[a] += theta[a] * theta[a];
        }
        for a in 0..k {
            let ta = theta[a];
            if ta == 0.0 {
                continue;
            }
            let g = ta / self.theta_hat[a];
            for (w, x) in self.w[a * d..(a + 1) * d].iter_mut().zip(chi) {
                *w += g * (x - *w * ta);
            }
            for b in 0..k {
                if b != a {
                    let mab = &mut self.m[a * k + b];
                    *mab += g * (theta[b] - *mab * ta);
                }
            }
        }
        self.t += 1;
        Ok(())
    }

    /// Row a reshaped to n×n (a is zero-based).
    pub fn operator(&self, a: usize) -> Result<Vec<Vec<f64>>> {
        if a >= self.k {
            return Err(Error::OutOfRange(format!("operator {a} of {}", self.k)));
        }
        unvec(self.row(a))
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.k).map(|a| self.row(a).to_vec()).collect()
    }

    /// Pairs of channels whose filters are nearly identical.
    pub fn collapsed_pairs(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for a in 0..self.k {
            for b in a + 1..self.k {
                let c = cosine(self.row(a), self.row(b));
                if c > COLLAPSE_COSINE {
                    out.push((a, b, c));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub feature_kind: FeatureKind,
    pub mode: Mode,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub theta_hat0: f64,
    pub solver: Solver,
    /// Update counts at which W is copied into the trace.
    pub snapshot_steps: Vec<u64>,
    /// Also snapshot every this many updates (0 disables).
    pub snapshot_interval: u64,
    /// Record Θ every this many updates (0 disables).
    pub trace_every: u64,
    /// Number of leading pairs used as the fixed objective probe batch.
    pub probe_size: usize,
    /// Evaluate the probe objective every this many updates (0 disables).
    pub probe_interval: u64,
    /// Stop after this many updates.
    pub max_updates: Option<u64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            feature_kind: FeatureKind::Standard,
            mode: Mode::Sm,
            k: 1,
            seed: 0,
            theta_hat0: 1.0,
            solver: Solver::Direct,
            snapshot_steps: Vec::new(),
            snapshot_interval: 0,
            trace_every: 0,
            probe_size: 256,
            probe_interval: 0,
            max_updates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: u64,
    pub w: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// (step, Θ) samples.
    pub thetas: Vec<(u64, Vec<f64>)>,
    /// (step, similarity matching objective on the probe batch).
    pub objective: Vec<(u64, f64)>,
    pub snapshots: Vec<Snapshot>,
    pub warnings: Vec<String>,
    /// Responses that hit the NSM sweep cap.
    pub unconverged: u64,
}

impl Trace {
    /// CSV with columns step, a, theta.
    pub fn thetas_csv(&self) -> String {
        let mut s = String::from("step,a,theta\n");
        for (step, th) in &self.thetas {
            for (a, v) in th.iter().enumerate() {
                s.push_str(&format!("{step},{a},{v:e}\n"));
            }
        }
        s
    }
}

/// Whitens every frame of a sequence (identity when `whitener` is None).
pub fn whiten_frames(seq: &FrameSequence, whitener: Option<&WhiteningTransform>, exec: Execution) -> Result<Vec<f64>> {
    let Some(z) = whitener else {
        return Ok(seq.frames.clone());
    };
    if z.dim() != seq.dim {
        return Err(Error::invalid("whitener size does not match frames"));
    }
    let rows = map_indexed(seq.len(), exec, |t| z.apply(seq.frame(t)));
    let mut out = Vec::with_capacity(seq.frames.len());
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

/// SM objective −‖XᵀY‖²/P² + ½‖YᵀY‖²/P² on a batch of features and responses.
pub fn sm_objective(features: &[Vec<f64>], responses: &[Vec<f64>]) -> f64 {
    let p = features.len() as f64;
    if features.is_empty() {
        return 0.0;
    }
    let d = features[0].len();
    let k = responses[0].len();
    let mut xty = vec![0.0; d * k];
    let mut yty = vec![0.0; k * k];
    for (x, y) in features.iter().zip(responses) {
        for (i, xi) in x.iter().enumerate() {
            for (a, ya) in y.iter().enumerate() {
                xty[i * k + a] += xi * ya;
            }
        }
        for a in 0..k {
            for b in 0..k {
                yty[a * k + b] += y[a] * y[b];
            }
        }
    }
    let n2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    (-n2(&xty) + 0.5 * n2(&yty)) / (p * p)
}

/// Streams whitened frame pairs through the learner.
pub fn train(seq: &FrameSequence, whitener: Option<&WhiteningTransform>, opts: &TrainOptions) -> Result<(LearnerState, Trace)> {
    train_with(seq, whitener, opts, Execution::default())
}

pub fn train_with(seq: &FrameSequence, whitener: Option<&WhiteningTransform>, opts: &TrainOptions, exec: Execution) -> Result<(LearnerState, Trace)> {
    if seq.len() < 2 {
        return Err(Error::InsufficientData("training needs at least two frames".into()));
    }
    let state = init_with(opts.k, seq.dim, opts.seed, opts.mode, opts.theta_hat0)?;
    let frames = whiten_frames(seq, whitener, exec)?;
    train_from(state, &frames, seq, opts)
}

/// Continues training `state` on pre-whitened frames laid out like `seq`.
pub fn train_from(mut state: LearnerState, frames: &[f64], seq: &FrameSequence, opts: &TrainOptions) -> Result<(LearnerState, Trace)> {
    let n = seq.dim;
    let d = n * n;
    let frame = |t: usize| &frames[t * n..(t + 1) * n];
    let mut trace = Trace::default();
    let mut chi = vec![0.0; d];

    let probe: Vec<Vec<f64>> = if opts.probe_interval > 0 {
        seq.pair_steps()
            .take(opts.probe_size)
            .map(|t| {
                let mut c = vec![0.0; d];
                feature_into(opts.feature_kind, frame(t), frame(t + 1), &mut c).map(|_| c)
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let probe_objective = |s: &LearnerState| -> Result<f64> {
        let ys = probe
            .iter()
            .map(|c| s.respond_with(c, opts.solver).map(|r| r.theta))
            .collect::<Result<Vec<_>>>()?;
        Ok(sm_objective(&probe, &ys))
    };
    let mut snap_at: Vec<u64> = opts.snapshot_steps.clone();
    snap_at.sort_unstable();
    let mut next_snap = snap_at.into_iter().peekable();

    for t in seq.pair_steps() {
        if opts.max_updates.is_some_and(|m| state.t >= m) {
            break;
        }
        feature_into(opts.feature_kind, frame(t), frame(t + 1), &mut chi)?;
        let resp = state.respond_with(&chi, opts.solver)?;
        if !resp.converged {
            trace.unconverged += 1;
        }
        state.update(&chi, &resp.theta)?;
        let step = state.t;
        if opts.trace_every > 0 && step % opts.trace_every == 0 {
            trace.thetas.push((step, resp.theta.clone()));
        }
        if opts.probe_interval > 0 && step % opts.probe_interval == 0 {
            trace.objective.push((step, probe_objective(&state)?));
        }
        let mut snap = opts.snapshot_interval > 0 && step % opts.snapshot_interval == 0;
        while next_snap.peek().is_some_and(|&s| s <= step) {
            snap |= next_snap.next() == Some(step);
        }
        if snap {
            trace.snapshots.push(Snapshot { step, w: state.rows() });
            check_collapse(&state, &mut trace);
        }
    }
    check_collapse(&state, &mut trace);
    Ok((state, trace))
}

fn check_collapse(state: &LearnerState, trace: &mut Trace) {
    if state.mode != Mode::Nsm {
        return;
    }
    for (a, b, c) in state.collapsed_pairs() {
        let msg = format!("step {}: channels {a} and {b} collapsed onto one filter (cosine {c:.4})", state.t);
        log::warn!("{msg}");
        if trace.warnings.last() != Some(&msg) {
            trace.warnings.push(msg);
        }
    }
}
