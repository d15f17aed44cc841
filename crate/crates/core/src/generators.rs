//! Analytic generators of small image transformations.
//!
//! 2D patches are flattened row-major, pixel p = row·n + col, with x along a
//! row and y down the columns.

use crate::error::{Error, Result};
use crate::stimuli::patch_offsets;

/// Central-difference matrix: (i, i+1) = +1/2 and (i+1, i) = −1/2.
pub fn cartoon(n: usize) -> Result<Vec<Vec<f64>>> {
    if n < 3 {
        return Err(Error::invalid("cartoon matrix needs n ≥ 3"));
    }
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n - 1 {
        a[i][i + 1] = 0.5;
        a[i + 1][i] = -0.5;
    }
    Ok(a)
}

fn kron(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (p, q) = (a.len(), b.len());
    (0..p * q)
        .map(|r| (0..p * q).map(|c| a[r / q][c / q] * b[r % q][c % q]).collect())
        .collect()
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Derivative along x: I ⊗ A.
pub fn translation_x(n: usize) -> Result<Vec<Vec<f64>>> {
    Ok(kron(&identity(n), &cartoon(n)?))
}

/// Derivative along y: A ⊗ I.
pub fn translation_y(n: usize) -> Result<Vec<Vec<f64>>> {
    Ok(kron(&cartoon(n)?, &identity(n)))
}

/// y∂x − x∂y with coordinates measured from the patch center. A patch whose
/// sampling grid turns by +φ changes by φ times this operator to first order.
pub fn rotation(n: usize) -> Result<Vec<Vec<f64>>> {
    let dx = translation_x(n)?;
    let dy = translation_y(n)?;
    let off = patch_offsets(n);
    Ok((0..n * n)
        .map(|p| {
            let (x, y) = off[p];
            (0..n * n).map(|q| y * dx[p][q] - x * dy[p][q]).collect()
        })
        .collect())
}

/// Applies a square matrix to a vector.
pub fn apply(op: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    op.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}
