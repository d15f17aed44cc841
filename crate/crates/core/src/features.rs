//! Outer-product features of consecutive frames.
//!
//! Index convention for every kind: the n×n matrix entry (i, j) lives at
//! α = i·n + j (row-major, zero-based).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// vec(Δx xᵀ)
    #[default]
    Standard,
    /// vec((x_next + x) Δxᵀ)
    Midpoint,
    /// vec(x_next xᵀ − x x_nextᵀ)
    Antisymmetric,
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FeatureKind::Standard => "standard",
            FeatureKind::Midpoint => "midpoint",
            FeatureKind::Antisymmetric => "antisymmetric",
        };
        f.write_str(s)
    }
}

fn check(x: &[f64], x_next: &[f64]) -> Result<()> {
    if x.len() != x_next.len() {
        return Err(Error::invalid(format!(
            "frame lengths differ: {} vs {}",
            x.len(),
            x_next.len()
        )));
    }
    Ok(())
}

/// Writes vec(u vᵀ) into `out`.
pub fn outer_into(u: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for (i, ui) in u.iter().enumerate() {
        for (o, vj) in out[i * n..(i + 1) * n].iter_mut().zip(v) {
            *o = ui * vj;
        }
    }
}

/// The two vectors (u, v) with χ = vec(u vᵀ) for the rank-one kinds.
pub fn rank1_factors(kind: FeatureKind, x: &[f64], x_next: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let dx: Vec<f64> = x_next.iter().zip(x).map(|(a, b)| a - b).collect();
    match kind {
        FeatureKind::Standard => Some((dx, x.to_vec())),
        FeatureKind::Midpoint => Some((x_next.iter().zip(x).map(|(a, b)| a + b).collect(), dx)),
        FeatureKind::Antisymmetric => None,
    }
}

/// Fills `out` (length n²) with the feature of the given kind.
pub fn feature_into(kind: FeatureKind, x: &[f64], x_next: &[f64], out: &mut [f64]) -> Result<()> {
    check(x, x_next)?;
    let n = x.len();
    if out.len() != n * n {
        return Err(Error::invalid("feature buffer must have n² entries"));
    }
    match kind {
        FeatureKind::Standard => {
            for i in 0..n {
                let d = x_next[i] - x[i];
                for j in 0..n {
                    out[i * n + j] = d * x[j];
                }
            }
        }
        FeatureKind::Midpoint => {
            for i in 0..n {
                let s = x_next[i] + x[i];
                for j in 0..n {
                    out[i * n + j] = s * (x_next[j] - x[j]);
                }
            }
        }
        FeatureKind::Antisymmetric => {
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = x_next[i] * x[j] - x[i] * x_next[j];
                }
            }
        }
    }
    Ok(())
}

pub fn feature(kind: FeatureKind, x: &[f64], x_next: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len() * x.len()];
    feature_into(kind, x, x_next, &mut out)?;
    Ok(out)
}

pub fn feature_standard(x: &[f64], x_next: &[f64]) -> Result<Vec<f64>> {
    feature(FeatureKind::Standard, x, x_next)
}

pub fn feature_midpoint(x: &[f64], x_next: &[f64]) -> Result<Vec<f64>> {
    feature(FeatureKind::Midpoint, x, x_next)
}

pub fn feature_antisymmetric(x: &[f64], x_next: &[f64]) -> Result<Vec<f64>> {
    feature(FeatureKind::Antisymmetric, x, x_next)
}

/// Row-major vectorization of an n×n matrix given as rows.
pub fn vec_matrix(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.concat()
}

/// Inverse of [`vec_matrix`].
pub fn unvec(v: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = (v.len() as f64).sqrt().round() as usize;
    if n * n != v.len() {
        return Err(Error::invalid(format!("length {} is not a perfect square", v.len())));
    }
    Ok(v.chunks(n.max(1)).map(|c| c.to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_examples() {
        assert_eq!(feature_standard(&[1.0, 2.0], &[4.0, 6.0]).unwrap(), vec![3.0, 6.0, 4.0, 8.0]);
        assert_eq!(feature_standard(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 9]);
        let n = 4;
        for i in 0..n {
            for j in 0..n {
                let mut x = vec![0.0; n];
                x[j] = 1.0;
                let mut xn = x.clone();
                xn[i] += 1.0;
                let chi = feature_standard(&x, &xn).unwrap();
                for (a, v) in chi.iter().enumerate() {
                    assert_eq!(*v, if a == i * n + j { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn midpoint_examples() {
        assert_eq!(feature_midpoint(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), vec![-1.0, 1.0, -1.0, 1.0]);
        assert_eq!(feature_midpoint(&[2.0, 5.0], &[2.0, 5.0]).unwrap(), vec![0.0; 4]);
        let a = feature_midpoint(&[1.0, 3.0, -2.0], &[0.5, 2.0, 1.0]).unwrap();
        let b = feature_midpoint(&[0.5, 2.0, 1.0], &[1.0, 3.0, -2.0]).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| *p == -*q));
    }

    #[test]
    fn antisymmetric_examples() {
        let x = [1.0, -2.0, 0.5];
        let scaled: Vec<f64> = x.iter().map(|v| v * -3.0).collect();
        assert!(feature_antisymmetric(&x, &scaled).unwrap().iter().all(|v| *v == 0.0));
        let y = [0.3, 1.0, 2.0];
        let m = unvec(&feature_antisymmetric(&x, &y).unwrap()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m[i][j] + m[j][i], 0.0);
            }
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        for kind in [FeatureKind::Standard, FeatureKind::Midpoint, FeatureKind::Antisymmetric] {
            assert!(matches!(feature(kind, &[1.0], &[1.0, 2.0]), Err(Error::InvalidArgument(_))));
        }
        assert!(unvec(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn rank1_factors_rebuild_feature() {
        let x = [0.2, -1.0, 0.7];
        let y = [0.1, 0.4, -0.3];
        for kind in [FeatureKind::Standard, FeatureKind::Midpoint] {
            let (u, v) = rank1_factors(kind, &x, &y).unwrap();
            let mut out = vec![0.0; 9];
            outer_into(&u, &v, &mut out);
            assert_eq!(out, feature(kind, &x, &y).unwrap());
        }
        assert!(rank1_factors(FeatureKind::Antisymmetric, &x, &y).is_none());
    }
}
