//! Repeated application of a rotation operator to a diagonal bar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{apply, rotation};
use crate::harness::io::{ensure_dir, write_json, Checkpoint};
use crate::harness::pgm;
use crate::metrics::{correlation, cosine, norm};
use crate::stimuli::patch_offsets;

/// Gaussian ridge along the x = y diagonal through the patch center.
pub fn bar_value(x: f64, y: f64, width: f64) -> f64 {
    let d = (x - y) / std::f64::consts::SQRT_2;
    (-d * d / (2.0 * width * width)).exp()
}

/// The bar as seen through an n×n grid rotated by `phi`, using the same
/// coordinate convention as rotated patch sampling.
pub fn rotated_bar(n: usize, phi: f64, width: f64) -> Vec<f64> {
    let (s, c) = phi.sin_cos();
    patch_offsets(n)
        .into_iter()
        .map(|(x, y)| bar_value(c * x + s * y, -s * x + c * y, width))
        .collect()
}

/// Rescales an operator to the Frobenius norm of the analytic rotation
/// generator and flips it to agree in sign. Returns the aligned operator and
/// the signed cosine before alignment.
pub fn align_to_rotation(op: &[Vec<f64>], side: usize) -> Result<(Vec<Vec<f64>>, f64)> {
    let g = rotation(side)?.concat();
    check_square(op, side)?;
    let flat = op.concat();
    let nf = norm(&flat);
    if nf == 0.0 {
        return Err(Error::NumericalFailure("operator is identically zero".into()));
    }
    let cos = cosine(&flat, &g);
    let scale = norm(&g) / nf * if cos < 0.0 { -1.0 } else { 1.0 };
    Ok((op.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect(), cos))
}

fn check_square(op: &[Vec<f64>], side: usize) -> Result<()> {
    let d = side * side;
    if op.len() != d || op.iter().any(|r| r.len() != d) {
        return Err(Error::invalid(format!("rotate demo needs a {d}×{d} operator")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotateDemo {
    pub side: usize,
    pub theta: f64,
    /// Frame 0 is the bar; frame k follows k applications of x ← x + θAx.
    pub frames: Vec<Vec<f64>>,
    /// Pearson correlation of frame k with the bar rotated by kθ.
    pub correlation: Vec<f64>,
    /// Correlation of the change since frame 0 with the reference change.
    pub increment_correlation: Vec<f64>,
    /// Correlation of the unchanged bar with the rotated reference, i.e. what
    /// doing nothing would score.
    pub baseline_correlation: Vec<f64>,
}

pub fn rotate_demo(op: &[Vec<f64>], side: usize, steps: usize, theta: f64, bar_width: f64) -> Result<RotateDemo> {
    check_square(op, side)?;
    if !theta.is_finite() || !(bar_width > 0.0) {
        return Err(Error::invalid("theta must be finite and bar width positive"));
    }
    let x0 = rotated_bar(side, 0.0, bar_width);
    let mut frames = vec![x0.clone()];
    let mut corr = vec![1.0];
    let mut inc = vec![f64::NAN];
    let mut base = vec![1.0];
    let mut x = x0.clone();
    for k in 1..=steps {
        let ax = apply(op, &x);
        for (xi, di) in x.iter_mut().zip(&ax) {
            *xi += theta * di;
        }
        let reference = rotated_bar(side, k as f64 * theta, bar_width);
        corr.push(correlation(&x, &reference));
        let dx: Vec<f64> = x.iter().zip(&x0).map(|(a, b)| a - b).collect();
        let dr: Vec<f64> = reference.iter().zip(&x0).map(|(a, b)| a - b).collect();
        inc.push(if norm(&dx) == 0.0 || norm(&dr) == 0.0 { f64::NAN } else { correlation(&dx, &dr) });
        base.push(correlation(&x0, &reference));
        frames.push(x.clone());
    }
    Ok(RotateDemo {
        side,
        theta,
        frames,
        correlation: corr,
        increment_correlation: inc,
        baseline_correlation: base,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotateDemoSummary {
    pub config_hash: String,
    pub seed: u64,
    pub operator: usize,
    pub cosine_to_generator: f64,
    pub demo: RotateDemo,
    pub affine: Vec<pgm::Affine>,
}

/// Runs the demo on one operator of a 2D checkpoint and writes one PGM per
/// step plus CSV and JSON summaries into `out`.
pub fn cli_rotate_demo(checkpoint: &Path, operator: usize, steps: usize, theta: f64, bar_width: f64, out: &Path) -> Result<PathBuf> {
    let ck = Checkpoint::load(checkpoint)?;
    let side = ck
        .manifest
        .patch_side
        .ok_or_else(|| Error::invalid("rotate demo needs a checkpoint trained on square patches"))?;
    let row = ck
        .w
        .get(operator)
        .ok_or_else(|| Error::OutOfRange(format!("operator {operator} of {}", ck.w.len())))?;
    let op = crate::features::unvec(row)?;
    let (aligned, cos) = align_to_rotation(&op, side)?;
    let demo = rotate_demo(&aligned, side, steps, theta, bar_width)?;
    ensure_dir(out)?;
    let mut affine = Vec::new();
    for (k, f) in demo.frames.iter().enumerate() {
        affine.push(pgm::write(&out.join(format!("step_{k:03}.pgm")), f, side)?);
    }
    let mut csv = String::from("step,correlation,increment_correlation,baseline_correlation\n");
    for k in 0..demo.frames.len() {
        csv.push_str(&format!(
            "{k},{:e},{:e},{:e}\n",
            demo.correlation[k], demo.increment_correlation[k], demo.baseline_correlation[k]
        ));
    }
    let path = out.join("rotate_demo.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    write_json(
        &out.join("rotate_demo.json"),
        &RotateDemoSummary {
            config_hash: ck.manifest.config_hash.clone(),
            seed: ck.manifest.seed,
            operator,
            cosine_to_generator: cos,
            demo,
            affine,
        },
    )?;
    Ok(path)
}
