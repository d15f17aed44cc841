//! Fixed-form motion detectors and the global equivalence identity between
//! the summed three-pixel detector and the Hassenstein–Reichardt correlator.
//!
//! Streams are frame sequences; pixel i of frame t is `seq.frame(t)[i]`.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{apply, cartoon};
use crate::parallel::{map_indexed, Execution};
use crate::stimuli::{generate_grating, FrameSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct CartoonOperator {
    pub a: Vec<Vec<f64>>,
    pub lambda: f64,
}

pub fn cartoon_matrix(n: usize) -> Result<CartoonOperator> {
    Ok(CartoonOperator {
        a: cartoon(n)?,
        lambda: 1.0,
    })
}

fn check_pair(x: &[f64], x_next: &[f64], lambda: f64) -> Result<()> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda must be positive"));
    }
    if x.len() != x_next.len() || x.len() < 3 {
        return Err(Error::invalid("frames must have equal length n ≥ 3"));
    }
    Ok(())
}

/// Regularized least-squares velocity: θ minimizes ‖Δₜx + θ·Ax‖² + λθ², with
/// the λ-dominated denominator, θ = −Δₜxᵀ(Ax)/λ. Positive means motion toward
/// increasing pixel index.
pub fn velocity_estimate(x: &[f64], x_next: &[f64], lambda: f64) -> Result<f64> {
    check_pair(x, x_next, lambda)?;
    let ax = apply(&cartoon(x.len())?, x);
    Ok(-x_next.iter().zip(x).zip(&ax).map(|((b, a), g)| (b - a) * g).sum::<f64>() / lambda)
}

/// Exact minimizer −Δₜxᵀ(Ax)/(‖Ax‖² + λ).
pub fn velocity_estimate_exact(x: &[f64], x_next: &[f64], lambda: f64) -> Result<f64> {
    check_pair(x, x_next, lambda)?;
    let ax = apply(&cartoon(x.len())?, x);
    let g2: f64 = ax.iter().map(|v| v * v).sum();
    Ok(-x_next.iter().zip(x).zip(&ax).map(|((b, a), g)| (b - a) * g).sum::<f64>() / (g2 + lambda))
}

fn check_time(seq: &FrameSequence, t: usize, tau: usize) -> Result<()> {
    if tau == 0 {
        return Err(Error::invalid("delay must be at least one step"));
    }
    if t < tau || t >= seq.len() {
        return Err(Error::OutOfRange(format!("time {t} with delay {tau} outside 0..{}", seq.len())));
    }
    Ok(())
}

/// HR(i,t) = x_{i+1}(t−τ)x_i(t) − x_i(t−τ)x_{i+1}(t)
pub fn hrd_local(seq: &FrameSequence, i: usize, t: usize, tau: usize) -> Result<f64> {
    check_time(seq, t, tau)?;
    if i + 1 >= seq.dim {
        return Err(Error::OutOfRange(format!("pixel pair ({i}, {}) outside the frame", i + 1)));
    }
    let (a, b) = (seq.frame(t), seq.frame(t - tau));
    Ok(b[i + 1] * a[i] - b[i] * a[i + 1])
}

/// y_i(t) = (x_i(t) − x_i(t−τ))·(x_{i+1}(t) − x_{i−1}(t)) for interior i.
pub fn cartoon_local(seq: &FrameSequence, i: usize, t: usize, tau: usize) -> Result<f64> {
    check_time(seq, t, tau)?;
    if i == 0 || i + 1 >= seq.dim {
        return Err(Error::OutOfRange(format!("pixel {i} is not interior")));
    }
    let (a, b) = (seq.frame(t), seq.frame(t - tau));
    Ok((a[i] - b[i]) * (a[i + 1] - a[i - 1]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub tau: usize,
    pub half_width: usize,
    pub periodic: bool,
    /// Times t at which the identity was evaluated.
    pub times: Vec<usize>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// Sum of the four edge terms per t (zero when periodic).
    pub boundary: Vec<f64>,
    pub abs_residual: Vec<f64>,
    /// Absolute residual over the sum of absolute values of all terms.
    pub rel_residual: Vec<f64>,
    pub max_abs: f64,
    pub max_rel: f64,
}

/// Checks Σ_{i=−w}^{w} y_i(t) = Σ_{i=−w}^{w−1} HR(i,t) + edge terms for every
/// t ≥ τ. Pixel offset i maps to column w + 1 + i, so frames need 2w + 3
/// pixels. The edge terms are
/// x_{−w}(t−τ)x_{−w−1}(t) − x_w(t−τ)x_{w+1}(t) − x_{−w}(t)x_{−w−1}(t) + x_w(t)x_{w+1}(t).
pub fn global_equivalence_check(seq: &FrameSequence, tau: usize, half_width: usize) -> Result<EquivalenceReport> {
    let w = half_width as i64;
    if seq.dim != 2 * half_width + 3 {
        return Err(Error::invalid(format!(
            "half width {half_width} needs frames of {} pixels, got {}",
            2 * half_width + 3,
            seq.dim
        )));
    }
    let col = |i: i64| (w + 1 + i) as usize;
    evaluate_identity(seq, tau, half_width, false, |a, b| {
        let mut lhs_terms = Vec::with_capacity(2 * half_width + 1);
        for i in -w..=w {
            let c = col(i);
            lhs_terms.push((a[c] - b[c]) * (a[c + 1] - a[c - 1]));
        }
        let mut rhs_terms = Vec::with_capacity(2 * half_width + 4);
        for i in -w..w {
            let c = col(i);
            rhs_terms.push(b[c + 1] * a[c] - b[c] * a[c + 1]);
        }
        let (l, l1, r, r1) = (col(-w), col(-w - 1), col(w), col(w + 1));
        let edges = [b[l] * a[l1], -b[r] * a[r1], -a[l] * a[l1], a[r] * a[r1]];
        (lhs_terms, rhs_terms, edges.to_vec())
    })
}

/// Circular version over all pixels; no edge terms remain.
pub fn global_equivalence_check_periodic(seq: &FrameSequence, tau: usize) -> Result<EquivalenceReport> {
    let n = seq.dim;
    if n < 3 {
        return Err(Error::invalid("periodic check needs at least 3 pixels"));
    }
    evaluate_identity(seq, tau, n, true, |a, b| {
        let lhs = (0..n)
            .map(|i| (a[i] - b[i]) * (a[(i + 1) % n] - a[(i + n - 1) % n]))
            .collect();
        let rhs = (0..n)
            .map(|i| b[(i + 1) % n] * a[i] - b[i] * a[(i + 1) % n])
            .collect();
        (lhs, rhs, Vec::new())
    })
}

type Terms = (Vec<f64>, Vec<f64>, Vec<f64>);

fn evaluate_identity(seq: &FrameSequence, tau: usize, half_width: usize, periodic: bool, terms: impl Fn(&[f64], &[f64]) -> Terms) -> Result<EquivalenceReport> {
    if tau == 0 {
        return Err(Error::invalid("delay must be at least one step"));
    }
    if seq.len() <= tau {
        return Err(Error::OutOfRange(format!("stream of {} frames is too short for delay {tau}", seq.len())));
    }
    let mut rep = EquivalenceReport {
        tau,
        half_width,
        periodic,
        times: Vec::new(),
        lhs: Vec::new(),
        rhs: Vec::new(),
        boundary: Vec::new(),
        abs_residual: Vec::new(),
        rel_residual: Vec::new(),
        max_abs: 0.0,
        max_rel: 0.0,
    };
    for t in tau..seq.len() {
        let (l, r, e) = terms(seq.frame(t), seq.frame(t - tau));
        let lhs: f64 = l.iter().sum();
        let edge: f64 = e.iter().sum();
        let rhs = r.iter().sum::<f64>() + edge;
        let scale: f64 = l.iter().chain(&r).chain(&e).map(|v| v.abs()).sum();
        let abs = (lhs - rhs).abs();
        let rel = if scale > 0.0 { abs / scale } else { 0.0 };
        rep.times.push(t);
        rep.lhs.push(lhs);
        rep.rhs.push(rhs);
        rep.boundary.push(edge);
        rep.abs_residual.push(abs);
        rep.rel_residual.push(rel);
        rep.max_abs = rep.max_abs.max(abs);
        rep.max_rel = rep.max_rel.max(rel);
    }
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    #[default]
    Cartoon,
    Hrd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Contrast,
    /// Pixels per step; the temporal frequency becomes velocity / wavelength.
    Velocity,
    /// Wavelength in pixels at fixed temporal frequency.
    Wavelength,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GratingParams {
    /// Field width in pixels.
    pub n: usize,
    pub wavelength: f64,
    pub temporal_frequency: f64,
    pub contrast: f64,
    pub steps: usize,
    pub tau: usize,
    pub phase0: f64,
}

impl Default for GratingParams {
    fn default() -> Self {
        GratingParams {
            n: 5,
            wavelength: 8.0,
            temporal_frequency: 0.05,
            contrast: 1.0,
            steps: 400,
            tau: 1,
            phase0: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    /// Time average of the summed output.
    pub mean_output: f64,
    /// Dominant temporal frequency of the instantaneous output, cycles/step.
    pub dominant_frequency: f64,
    pub series: Vec<f64>,
}

/// Summed detector output over the field for every t ≥ τ.
pub fn summed_output(kind: DetectorKind, seq: &FrameSequence, tau: usize) -> Result<Vec<f64>> {
    if seq.dim < 3 {
        return Err(Error::invalid("field needs at least 3 pixels"));
    }
    let n = seq.dim;
    (tau..seq.len())
        .map(|t| {
            Ok(match kind {
                DetectorKind::Cartoon => (1..n - 1).map(|i| cartoon_local(seq, i, t, tau)).sum::<Result<f64>>()?,
                DetectorKind::Hrd => (0..n - 1).map(|i| hrd_local(seq, i, t, tau)).sum::<Result<f64>>()?,
            })
        })
        .collect()
}

/// Frequency (cycles/sample) of the largest non-DC DFT bin of a series.
pub fn dominant_frequency(series: &[f64]) -> f64 {
    let len = series.len();
    if len < 2 {
        return 0.0;
    }
    let mean = series.iter().sum::<f64>() / len as f64;
    let mut buf: Vec<Complex<f64>> = series.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let best = (1..=len / 2).fold(1, |b, k| if buf[k].norm() > buf[b].norm() { k } else { b });
    best as f64 / len as f64
}

pub fn grating_response(kind: DetectorKind, p: &GratingParams) -> Result<SweepPoint> {
    let seq = generate_grating(p.n, p.wavelength, p.temporal_frequency, p.contrast, p.steps, p.phase0)?;
    let series = summed_output(kind, &seq, p.tau)?;
    let mean_output = series.iter().sum::<f64>() / series.len().max(1) as f64;
    Ok(SweepPoint {
        value: 0.0,
        mean_output,
        dominant_frequency: dominant_frequency(&series),
        series,
    })
}

pub fn tuning_sweep(kind: DetectorKind, base: &GratingParams, axis: SweepAxis, values: &[f64], exec: Execution) -> Result<Vec<SweepPoint>> {
    if values.len() < 2 {
        return Err(Error::invalid("a sweep needs at least two points"));
    }
    map_indexed(values.len(), exec, |k| {
        let v = values[k];
        let mut p = *base;
        match axis {
            SweepAxis::Contrast => p.contrast = v,
            SweepAxis::Velocity => p.temporal_frequency = v / p.wavelength,
            SweepAxis::Wavelength => p.wavelength = v,
        }
        grating_response(kind, &p).map(|mut s| {
            s.value = v;
            s
        })
    })
    .into_iter()
    .collect()
}

/// Location of the peak of |mean output| along a sweep, refined by fitting a
/// parabola through the best grid point and its neighbours.
pub fn sweep_peak(points: &[SweepPoint]) -> f64 {
    let y: Vec<f64> = points.iter().map(|p| p.mean_output.abs()).collect();
    let k = (0..y.len()).fold(0, |b, i| if y[i] > y[b] { i } else { b });
    if k == 0 || k + 1 == y.len() {
        return points[k].value;
    }
    let (x0, x1, x2) = (points[k - 1].value, points[k].value, points[k + 1].value);
    let (y0, y1, y2) = (y[k - 1], y[k], y[k + 1]);
    let denom = (x0 - x1) * (x0 - x2) * (x1 - x2);
    let a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom;
    let b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom;
    if a >= 0.0 {
        x1
    } else {
        -b / (2.0 * a)
    }
}

/// Time-averaged summed cartoon output on an infinite drifting grating with
/// delay τ: −c² sin(2π/λ) sin(2πfτ) per interior pixel.
pub fn cartoon_mean_closed_form(p: &GratingParams) -> f64 {
    let interior = p.n as f64 - 2.0;
    -interior * p.contrast.powi(2) * (2.0 * PI / p.wavelength).sin() * (2.0 * PI * p.temporal_frequency * p.tau as f64).sin()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(frames: Vec<Vec<f64>>) -> FrameSequence {
        let t = frames.len();
        FrameSequence::from_frames(frames, 1, vec![vec![0.0]; t - 1]).unwrap()
    }

    #[test]
    fn cartoon_local_hand_case() {
        let s = seq(vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        assert_eq!(cartoon_local(&s, 1, 1, 1).unwrap(), -1.0);
        assert!(cartoon_local(&s, 0, 1, 1).is_err());
        assert!(cartoon_local(&s, 1, 0, 1).is_err());
    }

    #[test]
    fn hrd_impulse_moving_right() {
        let s = seq(vec![vec![0.0, 2.0, 0.0, 0.0], vec![0.0, 0.0, 3.0, 0.0]]);
        // x_2(t-1)x_1(t) - x_1(t-1)x_2(t) = 0·0 − 2·3
        assert_eq!(hrd_local(&s, 1, 1, 1).unwrap(), -6.0);
        assert!(hrd_local(&s, 3, 1, 1).is_err());
    }

    #[test]
    fn static_and_uniform_streams_are_silent() {
        let st = seq(vec![vec![0.3, -1.0, 2.0, 0.5]; 4]);
        let un = seq(vec![vec![1.0; 4], vec![2.0; 4], vec![-1.0; 4]]);
        for t in 1..3 {
            for i in 0..3 {
                assert_eq!(hrd_local(&st, i, t, 1).unwrap(), 0.0);
                assert_eq!(hrd_local(&un, i, t, 1).unwrap(), 0.0);
            }
            assert_eq!(cartoon_local(&st, 1, t, 1).unwrap(), 0.0);
        }
    }

    #[test]
    fn velocity_sign_on_moving_ramp() {
        let x: Vec<f64> = (0..7).map(|i| i as f64).collect();
        let right: Vec<f64> = x.iter().map(|v| v - 0.2).collect();
        let left: Vec<f64> = x.iter().map(|v| v + 0.2).collect();
        assert!(velocity_estimate(&x, &right, 1.0).unwrap() > 0.0);
        assert!(velocity_estimate(&x, &left, 1.0).unwrap() < 0.0);
        assert_eq!(velocity_estimate(&x, &x, 1.0).unwrap(), 0.0);
        assert!(velocity_estimate(&x, &x, 0.0).is_err());
    }

    #[test]
    fn velocity_is_quadratic_in_contrast() {
        let x = [0.1, 0.5, -0.2, 0.9, 0.3];
        let y = [0.2, 0.4, -0.1, 0.7, 0.35];
        let v1 = velocity_estimate(&x, &y, 1.0).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let ys: Vec<f64> = y.iter().map(|v| 3.0 * v).collect();
        let v3 = velocity_estimate(&xs, &ys, 1.0).unwrap();
        assert!((v3 - 9.0 * v1).abs() < 1e-12);
    }

    #[test]
    fn periodic_identity_has_no_edges() {
        let s = seq(vec![vec![0.2, -1.0, 0.7, 1.3, 0.0], vec![1.0, 0.1, -0.3, 0.4, 2.0]]);
        let r = global_equivalence_check_periodic(&s, 1).unwrap();
        assert!(r.max_rel < 1e-14);
        assert!(r.boundary.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn dominant_frequency_of_pure_tone() {
        let s: Vec<f64> = (0..200).map(|t| 3.0 + (2.0 * PI * 0.1 * t as f64).cos()).collect();
        assert!((dominant_frequency(&s) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn parabola_peak_recovers_vertex() {
        let pts: Vec<SweepPoint> = [0.0, 1.0, 2.0, 3.0]
            .iter()
            .map(|&x| SweepPoint {
                value: x,
                mean_output: -(5.0 - (x - 1.3f64).powi(2)),
                dominant_frequency: 0.0,
                series: vec![],
            })
            .collect();
        assert!((sweep_peak(&pts) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn single_point_sweep_is_rejected() {
        let r = tuning_sweep(DetectorKind::Cartoon, &GratingParams::default(), SweepAxis::Contrast, &[1.0], Execution::Sequential);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }
}
