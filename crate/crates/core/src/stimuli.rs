//! Synthetic worlds and motion-transformed frame sequences.
//!
//! A 1D world is an exponentially correlated Gaussian process realized by an
//! AR(1) recursion. Worlds can live on a grid finer than the eye's pixels and
//! be smoothed by a Gaussian acceptance profile before sampling; with one
//! sample per pixel and no blur this reduces to the plain AR(1) sequence.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::{map_indexed, Execution};

const RHO_CAP: f64 = 1.0 - 1e-12;

/// Deterministic generator for one named stream of a seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Sampling resolution and optics of a noise world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    /// Correlation length in pixels.
    pub correlation_length: f64,
    /// Fine-grid samples per pixel.
    pub samples_per_pixel: usize,
    /// Standard deviation of the Gaussian blur in pixels; 0 disables it.
    pub blur_sigma: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            correlation_length: 2.0,
            samples_per_pixel: 1,
            blur_sigma: 0.0,
        }
    }
}

impl WorldParams {
    fn validate(&self) -> Result<()> {
        if !(self.correlation_length > 0.0) {
            return Err(Error::invalid("correlation length must be positive"));
        }
        if self.samples_per_pixel == 0 {
            return Err(Error::invalid("samples_per_pixel must be at least 1"));
        }
        if !(self.blur_sigma >= 0.0) {
            return Err(Error::invalid("blur sigma must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World1D {
    /// Fine-grid samples; sample k sits at pixel coordinate k / samples_per_pixel.
    pub intensities: Vec<f64>,
    pub correlation_length: f64,
    pub seed: u64,
    pub samples_per_pixel: usize,
    pub blur_sigma: f64,
}

impl World1D {
    /// Extent in pixels, measured from the first to the last sample.
    pub fn extent(&self) -> f64 {
        (self.intensities.len() - 1) as f64 / self.samples_per_pixel as f64
    }
}

fn ar1_coefficient(correlation_length: f64) -> f64 {
    (-1.0 / correlation_length).exp().min(RHO_CAP)
}

/// Stationary AR(1) sequence with unit variance, filled in place.
fn ar1_fill<R: Rng>(out: &mut [f64], rho: f64, rng: &mut R) {
    let innov = (1.0 - rho * rho).sqrt();
    let mut prev: f64 = rng.sample(StandardNormal);
    for (k, v) in out.iter_mut().enumerate() {
        if k > 0 {
            let e: f64 = rng.sample(StandardNormal);
            prev = rho * prev + innov * e;
        }
        *v = prev;
    }
}

/// Normalized Gaussian kernel with radius ceil(4 sigma) samples.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|d| (-0.5 * (d as f64 / sigma).powi(2)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Valid-mode convolution: the output is `kernel.len() - 1` shorter than the input.
fn convolve_valid(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let m = kernel.len();
    (0..=x.len() - m)
        .map(|i| x[i..i + m].iter().zip(kernel).map(|(a, b)| a * b).sum())
        .collect()
}

/// Exponentially correlated noise world of `len` samples, one sample per pixel.
pub fn generate_world_1d(len: usize, correlation_length: f64, seed: u64) -> Result<World1D> {
    generate_world_1d_with(
        len,
        &WorldParams {
            correlation_length,
            ..WorldParams::default()
        },
        seed,
    )
}

/// World spanning `len` pixel positions (`(len - 1) * r + 1` fine samples).
pub fn generate_world_1d_with(len: usize, params: &WorldParams, seed: u64) -> Result<World1D> {
    if len < 2 {
        return Err(Error::invalid("world length must be at least 2"));
    }
    params.validate()?;
    let r = params.samples_per_pixel;
    let samples = (len - 1) * r + 1;
    let kernel = gaussian_kernel(params.blur_sigma * r as f64);
    let mut raw = vec![0.0; samples + kernel.len() - 1];
    let rho = ar1_coefficient(params.correlation_length * r as f64);
    ar1_fill(&mut raw, rho, &mut stream_rng(seed, 0));
    let intensities = if kernel.len() == 1 { raw } else { convolve_valid(&raw, &kernel) };
    Ok(World1D {
        intensities,
        correlation_length: params.correlation_length,
        seed,
        samples_per_pixel: r,
        blur_sigma: params.blur_sigma,
    })
}

fn lerp_at(samples: &[f64], q: f64) -> f64 {
    let i = q.floor() as usize;
    let f = q - i as f64;
    if f == 0.0 {
        samples[i]
    } else {
        (1.0 - f) * samples[i] + f * samples[i + 1]
    }
}

/// Reads `n` pixels starting at a real-valued pixel position.
pub fn sample_window(world: &World1D, position: f64, n: usize) -> Result<Vec<f64>> {
    let r = world.samples_per_pixel as f64;
    let last = (position + (n as f64 - 1.0)) * r;
    let max = (world.intensities.len() - 1) as f64;
    if !(position >= 0.0) || n == 0 || !(last <= max) {
        return Err(Error::OutOfRange(format!(
            "window at {position} of size {n} exceeds world extent {}",
            world.extent()
        )));
    }
    Ok((0..n)
        .map(|k| lerp_at(&world.intensities, ((position + k as f64) * r).min(max)))
        .collect())
}

/// Window read with wrap-around at the world's end.
pub fn sample_window_periodic(world: &World1D, position: f64, n: usize) -> Vec<f64> {
    let len = world.intensities.len();
    let r = world.samples_per_pixel as f64;
    (0..n)
        .map(|k| {
            let q = ((position + k as f64) * r).rem_euclid(len as f64);
            let i = q.floor() as usize % len;
            let f = q - q.floor();
            let a = world.intensities[i];
            if f == 0.0 {
                a
            } else {
                (1.0 - f) * a + f * world.intensities[(i + 1) % len]
            }
        })
        .collect()
}

/// Square seed image on a fine grid, `side` pixels across.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    pub side: usize,
    pub samples_per_pixel: usize,
    /// Row-major fine samples, `(side * r + 1)` per row.
    pub data: Vec<f64>,
}

impl Image2D {
    fn width(&self) -> usize {
        self.side * self.samples_per_pixel + 1
    }

    /// Bilinear read at pixel coordinates (x along rows, y down columns).
    pub fn bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let r = self.samples_per_pixel as f64;
        let w = self.width();
        let (qx, qy) = (x * r, y * r);
        let max = (w - 1) as f64;
        if !(qx >= 0.0 && qy >= 0.0 && qx <= max && qy <= max) {
            return None;
        }
        let (ix, iy) = ((qx.floor() as usize).min(w - 2), (qy.floor() as usize).min(w - 2));
        let (fx, fy) = (qx - ix as f64, qy - iy as f64);
        let at = |i: usize, j: usize| self.data[j * w + i];
        Some(
            (1.0 - fy) * ((1.0 - fx) * at(ix, iy) + fx * at(ix + 1, iy))
                + fy * ((1.0 - fx) * at(ix, iy + 1) + fx * at(ix + 1, iy + 1)),
        )
    }
}

/// Separable exponentially correlated noise image, optionally blurred.
pub fn generate_image_2d(side: usize, params: &WorldParams, seed: u64, stream: u64) -> Result<Image2D> {
    params.validate()?;
    let r = params.samples_per_pixel;
    let kernel = gaussian_kernel(params.blur_sigma * r as f64);
    let w = side * r + 1;
    let big = w + kernel.len() - 1;
    let rho = ar1_coefficient(params.correlation_length * r as f64);
    let innov = (1.0 - rho * rho).sqrt();
    let mut rng = stream_rng(seed, stream);
    let mut grid = vec![0.0; big * big];
    for row in grid.chunks_mut(big) {
        ar1_fill(row, rho, &mut rng);
    }
    // AR(1) down the columns on top of independent rows keeps unit variance
    // and gives a separable exponential autocovariance.
    for j in 1..big {
        for i in 0..big {
            grid[j * big + i] = rho * grid[(j - 1) * big + i] + innov * grid[j * big + i];
        }
    }
    let data = if kernel.len() == 1 {
        grid
    } else {
        let rows: Vec<f64> = grid.chunks(big).flat_map(|row| convolve_valid(row, &kernel)).collect();
        let mut out = vec![0.0; w * w];
        for i in 0..w {
            let col: Vec<f64> = (0..big).map(|j| rows[j * w + i]).collect();
            for (j, v) in convolve_valid(&col, &kernel).into_iter().enumerate() {
                out[j * w + i] = v;
            }
        }
        out
    };
    Ok(Image2D {
        side,
        samples_per_pixel: r,
        data,
    })
}

/// Pixel-center offsets (x, y) of an n×n patch relative to its center, row-major.
pub fn patch_offsets(n: usize) -> Vec<(f64, f64)> {
    let c = (n as f64 - 1.0) / 2.0;
    (0..n * n)
        .map(|p| ((p % n) as f64 - c, (p / n) as f64 - c))
        .collect()
}

/// Reads an n×n patch centered at (cx, cy) whose sampling grid is rotated by `phi`.
pub fn sample_patch(img: &Image2D, cx: f64, cy: f64, phi: f64, n: usize) -> Result<Vec<f64>> {
    let (s, c) = phi.sin_cos();
    patch_offsets(n)
        .into_iter()
        .map(|(x, y)| {
            let xr = c * x + s * y;
            let yr = -s * x + c * y;
            img.bilinear(cx + xr, cy + yr)
                .ok_or_else(|| Error::OutOfRange(format!("patch at ({cx}, {cy}) leaves the seed image")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StimulusKind {
    #[default]
    NoiseWorld1d,
    SineGrating1d,
    NoiseImage2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Transform2D {
    #[default]
    Translation,
    Rotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    WindowOnLargerWorld,
    Periodic,
}

/// Per-step transformation magnitudes, either listed or drawn from a rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MotionProgram {
    /// One row per step, one entry per generator.
    Explicit { steps: Vec<Vec<f64>> },
    Constant { step: f64 },
    /// Uniform on [-amplitude, amplitude].
    Uniform { amplitude: f64 },
    /// ±magnitude with a fair random sign.
    Signed { magnitude: f64 },
    /// One of the four axis directions, magnitude uniform on (0, max_step].
    Cardinal { max_step: f64 },
}

impl Default for MotionProgram {
    fn default() -> Self {
        MotionProgram::Constant { step: 0.0 }
    }
}

impl MotionProgram {
    /// Draws `count` steps for a transform with `generators` components.
    pub fn steps(&self, count: usize, generators: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = stream_rng(seed, 1);
        let along = |v: f64| -> Vec<f64> {
            let mut s = vec![0.0; generators];
            s[0] = v;
            s
        };
        match self {
            MotionProgram::Explicit { steps } => {
                if steps.len() < count {
                    return Err(Error::invalid(format!(
                        "motion program has {} steps, {count} needed",
                        steps.len()
                    )));
                }
                if steps.iter().any(|s| s.len() != generators) {
                    return Err(Error::invalid(format!("each explicit step needs {generators} entries")));
                }
                Ok(steps[..count].to_vec())
            }
            MotionProgram::Constant { step } => Ok((0..count).map(|_| along(*step)).collect()),
            MotionProgram::Uniform { amplitude } => Ok((0..count)
                .map(|_| along(rng.gen_range(-1.0..=1.0) * amplitude))
                .collect()),
            MotionProgram::Signed { magnitude } => Ok((0..count)
                .map(|_| along(if rng.gen::<bool>() { *magnitude } else { -magnitude }))
                .collect()),
            MotionProgram::Cardinal { max_step } => {
                if generators != 2 {
                    return Err(Error::invalid("cardinal motion needs a 2D translation stimulus"));
                }
                Ok((0..count)
                    .map(|_| {
                        let dir = rng.gen_range(0..4usize);
                        let m = max_step * (1.0 - rng.gen::<f64>());
                        let mut s = vec![0.0; 2];
                        s[dir / 2] = if dir % 2 == 0 { m } else { -m };
                        s
                    })
                    .collect())
            }
        }
    }
}

/// Declarative description of a synthetic stimulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StimulusSpec {
    pub kind: StimulusKind,
    /// Window size in pixels, per axis for 2D.
    pub n: usize,
    pub motion: MotionProgram,
    pub transform: Transform2D,
    pub contrast: f64,
    /// Grating wavelength in pixels.
    pub wavelength: f64,
    /// Grating temporal frequency in cycles per step.
    pub temporal_frequency: f64,
    pub phase0: f64,
    pub boundary: Boundary,
    pub world: WorldParams,
    /// 1D world length in pixels; defaults to 64·n.
    pub world_length: Option<usize>,
    /// Window start for unsegmented 1D streams; defaults to the leftmost
    /// integer position that keeps the whole trajectory inside the world.
    pub start: Option<f64>,
    /// Frames per independent segment. Consecutive frames across a segment
    /// boundary are not related by the motion program.
    pub segment_length: Option<usize>,
}

impl Default for StimulusSpec {
    fn default() -> Self {
        StimulusSpec {
            kind: StimulusKind::NoiseWorld1d,
            n: 5,
            motion: MotionProgram::default(),
            transform: Transform2D::Translation,
            contrast: 1.0,
            wavelength: 8.0,
            temporal_frequency: 0.0,
            phase0: 0.0,
            boundary: Boundary::WindowOnLargerWorld,
            world: WorldParams::default(),
            world_length: None,
            start: None,
            segment_length: None,
        }
    }
}

impl StimulusSpec {
    /// Number of transformation components recorded per step.
    pub fn generators(&self) -> usize {
        match (self.kind, self.transform) {
            (StimulusKind::NoiseImage2d, Transform2D::Translation) => 2,
            _ => 1,
        }
    }

    /// Length of one frame vector.
    pub fn frame_dim(&self) -> usize {
        match self.kind {
            StimulusKind::NoiseImage2d => self.n * self.n,
            _ => self.n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::invalid("window size n must be at least 3"));
        }
        if !(self.contrast > 0.0) {
            return Err(Error::invalid("contrast must be positive"));
        }
        if self.segment_length == Some(0) || self.segment_length == Some(1) {
            return Err(Error::invalid("segment_length must be at least 2"));
        }
        self.world.validate()
    }
}

/// Frames plus the transformation that produced each consecutive pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSequence {
    pub dim: usize,
    pub generators: usize,
    /// Row-major frames, `len() * dim` values.
    pub frames: Vec<f64>,
    /// Row-major per-step magnitudes, `(len() - 1) * generators` values.
    pub ground_truth: Vec<f64>,
    /// Steps t for which frame t+1 is not a transform of frame t.
    pub breaks: Vec<usize>,
}

impl FrameSequence {
    pub fn from_frames(frames: Vec<Vec<f64>>, generators: usize, ground_truth: Vec<Vec<f64>>) -> Result<Self> {
        let dim = frames.first().map(|f| f.len()).unwrap_or(0);
        if frames.iter().any(|f| f.len() != dim) {
            return Err(Error::invalid("frames differ in length"));
        }
        if ground_truth.len() + 1 != frames.len().max(1) || ground_truth.iter().any(|g| g.len() != generators) {
            return Err(Error::invalid("ground truth must hold one row per consecutive pair"));
        }
        Ok(FrameSequence {
            dim,
            generators,
            frames: frames.concat(),
            ground_truth: ground_truth.concat(),
            breaks: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.frames.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn truth(&self, t: usize) -> &[f64] {
        &self.ground_truth[t * self.generators..(t + 1) * self.generators]
    }

    /// Steps t whose pair (t, t+1) is a genuine transform pair.
    pub fn pair_steps(&self) -> impl Iterator<Item = usize> + '_ {
        let mut b = self.breaks.iter().peekable();
        (0..self.len().saturating_sub(1)).filter(move |t| {
            while b.peek().is_some_and(|&&x| x < *t) {
                b.next();
            }
            b.peek() != Some(&t)
        })
    }

    /// Multiplies every intensity by `c`.
    pub fn scale(&mut self, c: f64) {
        self.frames.iter_mut().for_each(|v| *v *= c);
    }
}

/// Frames of a drifting sine grating: c·sin(2πi/λ_s − 2πft + phase0).
pub fn generate_grating(n: usize, wavelength: f64, f: f64, contrast: f64, steps: usize, phase0: f64) -> Result<FrameSequence> {
    if !(wavelength >= 2.0) {
        return Err(Error::Aliasing(format!("wavelength {wavelength} is below two pixels")));
    }
    if !(contrast >= 0.0) {
        return Err(Error::invalid("contrast must be non-negative"));
    }
    let frames: Vec<f64> = (0..steps)
        .flat_map(|t| {
            (0..n).map(move |i| {
                contrast * (2.0 * PI * i as f64 / wavelength - 2.0 * PI * f * t as f64 + phase0).sin()
            })
        })
        .collect();
    Ok(FrameSequence {
        dim: n,
        generators: 1,
        frames,
        ground_truth: vec![f * wavelength; steps.saturating_sub(1)],
        breaks: Vec::new(),
    })
}

struct Segment {
    first: usize,
    len: usize,
}

fn segments(total: usize, seg: Option<usize>) -> Vec<Segment> {
    let seg = seg.unwrap_or(total).max(1);
    (0..total.div_ceil(seg))
        .map(|k| Segment {
            first: k * seg,
            len: seg.min(total - k * seg),
        })
        .collect()
}

/// Generates `steps` frames of the stimulus described by `spec`.
pub fn generate_sequence(spec: &StimulusSpec, steps: usize, seed: u64) -> Result<FrameSequence> {
    generate_sequence_with(spec, steps, seed, Execution::default())
}

pub fn generate_sequence_with(spec: &StimulusSpec, steps: usize, seed: u64, exec: Execution) -> Result<FrameSequence> {
    spec.validate()?;
    if steps == 0 {
        return Err(Error::invalid("a sequence needs at least one frame"));
    }
    if spec.kind == StimulusKind::SineGrating1d {
        return generate_grating(spec.n, spec.wavelength, spec.temporal_frequency, spec.contrast, steps, spec.phase0);
    }
    let g = spec.generators();
    let program = spec.motion.steps(steps - 1, g, seed)?;
    let segs = segments(steps, spec.segment_length);
    let world = match spec.kind {
        StimulusKind::NoiseWorld1d => Some(generate_world_1d_with(
            spec.world_length.unwrap_or(64 * spec.n),
            &spec.world,
            seed,
        )?),
        _ => None,
    };
    let single = segs.len() == 1;
    let parts: Vec<Result<Vec<f64>>> = map_indexed(segs.len(), exec, |k| {
        let s = &segs[k];
        let local = &program[s.first..s.first + s.len - 1];
        let mut rng = stream_rng(seed, 2 + k as u64);
        match (spec.kind, world.as_ref()) {
            (StimulusKind::NoiseWorld1d, Some(w)) => segment_1d(spec, w, local, single, &mut rng),
            _ => segment_2d(spec, local, seed, 2 + k as u64),
        }
    });
    let mut frames = Vec::with_capacity(steps * spec.frame_dim());
    for p in parts {
        frames.extend(p?);
    }
    let mut ground_truth = program.concat();
    let mut breaks = Vec::new();
    for s in &segs[..segs.len() - 1] {
        let t = s.first + s.len - 1;
        breaks.push(t);
        ground_truth[t * g..(t + 1) * g].iter_mut().for_each(|v| *v = 0.0);
    }
    let mut seq = FrameSequence {
        dim: spec.frame_dim(),
        generators: g,
        frames,
        ground_truth,
        breaks,
    };
    if spec.contrast != 1.0 {
        seq.scale(spec.contrast);
    }
    Ok(seq)
}

fn segment_1d<R: Rng>(spec: &StimulusSpec, world: &World1D, local: &[Vec<f64>], single: bool, rng: &mut R) -> Result<Vec<f64>> {
    let n = spec.n;
    let mut cum = Vec::with_capacity(local.len() + 1);
    cum.push(0.0);
    for s in local {
        cum.push(cum.last().unwrap() + s[0]);
    }
    let lo = cum.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = cum.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let extent = world.extent();
    let start = match (spec.boundary, spec.start, single) {
        (Boundary::Periodic, Some(p), _) => p,
        (Boundary::Periodic, None, _) => rng.gen::<f64>() * extent,
        (_, Some(p), true) => p,
        (_, _, true) => (-lo).ceil(),
        (_, _, false) => {
            let room = extent - (n as f64 - 1.0) - (hi - lo);
            if room < 0.0 {
                return Err(Error::OutOfRange("segment trajectory exceeds the world".into()));
            }
            rng.gen::<f64>() * room - lo
        }
    };
    let mut out = Vec::with_capacity(cum.len() * n);
    for c in cum {
        match spec.boundary {
            Boundary::Periodic => out.extend(sample_window_periodic(world, start + c, n)),
            Boundary::WindowOnLargerWorld => out.extend(sample_window(world, start + c, n)?),
        }
    }
    Ok(out)
}

fn segment_2d(spec: &StimulusSpec, local: &[Vec<f64>], seed: u64, stream: u64) -> Result<Vec<f64>> {
    let n = spec.n;
    let side = 3 * n;
    let img = generate_image_2d(side, &spec.world, seed, stream)?;
    let center = side as f64 / 2.0;
    let (mut cx, mut cy, mut phi) = (center, center, 0.0);
    let mut out = sample_patch(&img, cx, cy, phi, n)?;
    for s in local {
        match spec.transform {
            Transform2D::Translation => {
                cx += s[0];
                cy += s[1];
            }
            Transform2D::Rotation => phi += s[0],
        }
        out.extend(sample_patch(&img, cx, cy, phi, n)?);
    }
    Ok(out)
}

const MAGIC: &[u8; 8] = b"SMSEQ01\n";

/// JSON header of a sequence file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceHeader {
    pub spec: Option<StimulusSpec>,
    pub seed: Option<u64>,
    pub n: usize,
    pub dim: usize,
    #[serde(rename = "T")]
    pub steps: usize,
    pub dtype: String,
    pub generators: usize,
    pub ground_truth: Vec<f64>,
    pub breaks: Vec<usize>,
    pub config_hash: Option<String>,
}

/// Writes magic, header length (u64 LE), JSON header, then frames as f64 LE.
pub fn write_sequence(path: &Path, seq: &FrameSequence, spec: Option<&StimulusSpec>, seed: Option<u64>, config_hash: Option<&str>) -> Result<SequenceHeader> {
    let header = SequenceHeader {
        spec: spec.cloned(),
        seed,
        n: spec.map(|s| s.n).unwrap_or(seq.dim),
        dim: seq.dim,
        steps: seq.len(),
        dtype: "f64le".into(),
        generators: seq.generators,
        ground_truth: seq.ground_truth.clone(),
        breaks: seq.breaks.clone(),
        config_hash: config_hash.map(str::to_owned),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + seq.frames.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in &seq.frames {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(header)
}

pub fn read_sequence(path: &Path) -> Result<(SequenceHeader, FrameSequence)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::format(path, "missing sequence magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| Error::format(path, "truncated header"))?;
    let header: SequenceHeader = serde_json::from_slice(body)?;
    let data = &bytes[16 + hlen..];
    if data.len() != header.steps * header.dim * 8 {
        return Err(Error::format(path, "frame data length does not match header"));
    }
    let frames = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let seq = FrameSequence {
        dim: header.dim,
        generators: header.generators,
        frames,
        ground_truth: header.ground_truth.clone(),
        breaks: header.breaks.clone(),
    };
    Ok((header, seq))
}

/// One frame per row.
pub fn write_sequence_csv(path: &Path, seq: &FrameSequence) -> Result<()> {
    let mut s = String::new();
    for t in 0..seq.len() {
        let row: Vec<String> = seq.frame(t).iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn world_is_deterministic() {
        let a = generate_world_1d(500, 2.0, 7).unwrap();
        let b = generate_world_1d(500, 2.0, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.intensities.len(), 500);
    }

    #[test]
    fn world_rejects_bad_args() {
        assert!(matches!(generate_world_1d(1, 2.0, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(generate_world_1d(10, 0.0, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(generate_world_1d(10, -1.0, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn infinite_correlation_is_nearly_constant() {
        let w = generate_world_1d(100_000, f64::INFINITY, 3).unwrap();
        let x = &w.intensities;
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let c0: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        let c1: f64 = x.windows(2).map(|p| (p[0] - m) * (p[1] - m)).sum();
        assert!(c1 / c0 > 0.99);
    }

    #[test]
    fn fine_world_samples_align_with_pixels() {
        let p = WorldParams {
            correlation_length: 1.0,
            samples_per_pixel: 4,
            blur_sigma: 0.5,
        };
        let w = generate_world_1d_with(50, &p, 1).unwrap();
        assert_eq!(w.intensities.len(), 49 * 4 + 1);
        assert_eq!(w.extent(), 49.0);
        let win = sample_window(&w, 2.0, 5).unwrap();
        for k in 0..5 {
            assert_eq!(win[k], w.intensities[(2 + k) * 4]);
        }
    }

    #[test]
    fn window_examples() {
        let w = generate_world_1d(40, 2.0, 11).unwrap();
        assert_eq!(sample_window(&w, 3.0, 5).unwrap(), w.intensities[3..8].to_vec());
        let half = sample_window(&w, 3.5, 5).unwrap();
        for k in 0..5 {
            let mean = 0.5 * (w.intensities[3 + k] + w.intensities[4 + k]);
            assert!((half[k] - mean).abs() < 1e-15);
        }
        assert_eq!(sample_window(&w, 0.0, 40).unwrap(), w.intensities);
        assert!(matches!(sample_window(&w, 36.5, 5), Err(Error::OutOfRange(_))));
        assert!(matches!(sample_window(&w, -0.1, 5), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn periodic_window_wraps() {
        let w = generate_world_1d(10, 2.0, 0).unwrap();
        let win = sample_window_periodic(&w, 8.0, 4);
        assert_eq!(win, vec![w.intensities[8], w.intensities[9], w.intensities[0], w.intensities[1]]);
    }

    #[test]
    fn zero_motion_gives_identical_frames() {
        for kind in [StimulusKind::NoiseWorld1d, StimulusKind::NoiseImage2d] {
            let spec = StimulusSpec { kind, ..Default::default() };
            let seq = generate_sequence(&spec, 20, 1).unwrap();
            for t in 1..seq.len() {
                assert_eq!(seq.frame(t), seq.frame(0));
            }
        }
    }

    #[test]
    fn unit_steps_shift_by_one_pixel() {
        let spec = StimulusSpec {
            motion: MotionProgram::Constant { step: 1.0 },
            ..Default::default()
        };
        let seq = generate_sequence(&spec, 30, 4).unwrap();
        for t in 0..seq.len() - 1 {
            assert_eq!(&seq.frame(t + 1)[..4], &seq.frame(t)[1..]);
            assert_eq!(seq.truth(t), &[1.0]);
        }
    }

    #[test]
    fn trajectory_leaving_the_world_is_rejected() {
        let spec = StimulusSpec {
            motion: MotionProgram::Constant { step: 0.9 },
            world_length: Some(40),
            ..Default::default()
        };
        assert!(matches!(generate_sequence(&spec, 100, 0), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn segments_record_breaks() {
        let spec = StimulusSpec {
            motion: MotionProgram::Uniform { amplitude: 0.5 },
            segment_length: Some(10),
            world_length: Some(400),
            ..Default::default()
        };
        let seq = generate_sequence(&spec, 35, 2).unwrap();
        assert_eq!(seq.len(), 35);
        assert_eq!(seq.breaks, vec![9, 19, 29]);
        assert_eq!(seq.pair_steps().count(), 34 - 3);
        assert_eq!(seq.truth(19), &[0.0]);
    }

    #[test]
    fn grating_examples() {
        let g = generate_grating(12, 8.0, 0.0, 1.0, 5, 0.3).unwrap();
        assert!((1..5).all(|t| g.frame(t) == g.frame(0)));
        let z = generate_grating(12, 8.0, 0.1, 0.0, 5, 0.0).unwrap();
        assert!(z.frames.iter().all(|&v| v == 0.0));
        let p = generate_grating(12, 8.0, 0.125, 1.0, 20, 0.0).unwrap();
        for t in 0..12 {
            for (a, b) in p.frame(t + 8).iter().zip(p.frame(t)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!((p.truth(0)[0] - 1.0).abs() < 1e-15);
        assert!(matches!(generate_grating(12, 1.5, 0.1, 1.0, 5, 0.0), Err(Error::Aliasing(_))));
    }

    #[test]
    fn cardinal_program_moves_one_axis() {
        let steps = MotionProgram::Cardinal { max_step: 0.25 }.steps(500, 2, 9).unwrap();
        for s in &steps {
            let nz = s.iter().filter(|v| **v != 0.0).count();
            assert_eq!(nz, 1);
            assert!(s.iter().all(|v| v.abs() <= 0.25));
        }
    }

    #[test]
    fn sequence_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = StimulusSpec {
            kind: StimulusKind::NoiseImage2d,
            transform: Transform2D::Rotation,
            motion: MotionProgram::Signed { magnitude: 0.05 },
            ..Default::default()
        };
        let seq = generate_sequence(&spec, 6, 3).unwrap();
        let path = dir.path().join("s.bin");
        write_sequence(&path, &seq, Some(&spec), Some(3), None).unwrap();
        let (h, back) = read_sequence(&path).unwrap();
        assert_eq!(back, seq);
        assert_eq!(h.spec.unwrap().transform, Transform2D::Rotation);
        assert_eq!(h.ground_truth.len(), 5);
    }
}
