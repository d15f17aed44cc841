//! Spatial ZCA whitening fitted once on a set of frames.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    pub mean: Vec<f64>,
    /// Symmetric n×n matrix.
    pub matrix: DMatrix<f64>,
    /// Absolute floor added to every eigenvalue.
    pub epsilon: f64,
    /// SHA-256 of the fitting frames.
    pub fit_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    n: usize,
    epsilon: f64,
    fit_hash: String,
}

/// Hex SHA-256 of frames serialized as little-endian f64.
pub fn frames_hash<'a>(frames: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut h = Sha256::new();
    for f in frames {
        for v in f {
            h.update(v.to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

/// Sample mean and covariance (normalized by the frame count).
pub fn mean_and_covariance(frames: &[&[f64]]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if frames.len() < 2 {
        return Err(Error::InsufficientData(format!("{} frames, need at least 2", frames.len())));
    }
    let n = frames[0].len();
    if n == 0 || frames.iter().any(|f| f.len() != n) {
        return Err(Error::invalid("frames must be non-empty and equal length"));
    }
    let count = frames.len() as f64;
    let mut mean = vec![0.0; n];
    for f in frames {
        mean.iter_mut().zip(*f).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut cov = DMatrix::zeros(n, n);
    let mut c = DVector::zeros(n);
    for f in frames {
        for i in 0..n {
            c[i] = f[i] - mean[i];
        }
        cov.syger(1.0, &c, &c, 1.0);
    }
    cov.fill_upper_triangle_with_lower_triangle();
    cov /= count;
    Ok((mean, cov))
}

fn zca_from(mean: Vec<f64>, cov: DMatrix<f64>, epsilon: impl Fn(f64) -> f64, fit_hash: String) -> Result<WhiteningTransform> {
    let eig = SymmetricEigen::new(cov);
    let d: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
    let dmax = d.iter().cloned().fold(0.0, f64::max);
    let eps = epsilon(dmax);
    if !(eps >= 0.0) {
        return Err(Error::invalid("epsilon must be non-negative"));
    }
    // A direction with zero variance and no floor carries no signal on the
    // fitting set; it is mapped to zero instead of infinity.
    let scale = DVector::from_iterator(
        d.len(),
        d.iter().map(|&v| if v + eps > 0.0 { (v + eps).powf(-0.5) } else { 0.0 }),
    );
    let e = &eig.eigenvectors;
    let mut z = e * DMatrix::from_diagonal(&scale) * e.transpose();
    let zt = z.transpose();
    z = (&z + zt) * 0.5;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("whitening matrix is not finite".into()));
    }
    Ok(WhiteningTransform {
        mean,
        matrix: z,
        epsilon: eps,
        fit_hash,
    })
}

/// ZCA transform E diag((d + epsilon)^(-1/2)) Eᵀ with an absolute floor.
pub fn fit_zca(frames: &[&[f64]], epsilon: f64) -> Result<WhiteningTransform> {
    if !(epsilon >= 0.0) {
        return Err(Error::invalid("epsilon must be non-negative"));
    }
    let (mean, cov) = mean_and_covariance(frames)?;
    zca_from(mean, cov, |_| epsilon, frames_hash(frames.iter().copied()))
}

/// ZCA transform whose floor is `relative` times the largest eigenvalue.
pub fn fit_zca_relative(frames: &[&[f64]], relative: f64) -> Result<WhiteningTransform> {
    if !(relative >= 0.0) {
        return Err(Error::invalid("epsilon must be non-negative"));
    }
    let (mean, cov) = mean_and_covariance(frames)?;
    zca_from(mean, cov, |dmax| relative * dmax, frames_hash(frames.iter().copied()))
}

impl WhiteningTransform {
    pub fn identity(n: usize) -> Self {
        WhiteningTransform {
            mean: vec![0.0; n],
            matrix: DMatrix::identity(n, n),
            epsilon: 0.0,
            fit_hash: String::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, frame: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(frame, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, frame: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.dim();
        if frame.len() != n || out.len() != n {
            return Err(Error::invalid(format!("frame length {} does not match transform size {n}", frame.len())));
        }
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for j in 0..n {
                s += self.matrix[(i, j)] * (frame[j] - self.mean[j]);
            }
            *o = s;
        }
        Ok(())
    }

    /// CSV with the mean on the first row and the matrix rows after it, plus
    /// a JSON sidecar next to it with the extension replaced by `.json`.
    pub fn save(&self, csv_path: &Path) -> Result<PathBuf> {
        let n = self.dim();
        let mut s = join_row(&self.mean);
        for i in 0..n {
            let row: Vec<f64> = (0..n).map(|j| self.matrix[(i, j)]).collect();
            s.push_str(&join_row(&row));
        }
        std::fs::write(csv_path, s).map_err(|e| Error::io(csv_path, e))?;
        let side = csv_path.with_extension("json");
        let meta = Sidecar {
            n,
            epsilon: self.epsilon,
            fit_hash: self.fit_hash.clone(),
        };
        std::fs::write(&side, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&side, e))?;
        Ok(side)
    }

    pub fn load(csv_path: &Path) -> Result<Self> {
        let rows = crate::harness::io::read_csv_matrix(csv_path)?;
        let side = csv_path.with_extension("json");
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: Sidecar = serde_json::from_str(&text)?;
        let n = meta.n;
        if rows.len() != n + 1 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::format(csv_path, "expected a mean row and an n×n matrix"));
        }
        Ok(WhiteningTransform {
            mean: rows[0].clone(),
            matrix: DMatrix::from_fn(n, n, |i, j| rows[i + 1][j]),
            epsilon: meta.epsilon,
            fit_hash: meta.fit_hash,
        })
    }
}

fn join_row(v: &[f64]) -> String {
    let mut s = v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_distr::StandardNormal;

    fn gaussian_frames(count: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        // Diagonally dominant mixing keeps the smallest eigenvalue O(1), so the
        // floor biases the whitened covariance by about epsilon.
        let mix: Vec<f64> = (0..n * n)
            .map(|k| 0.3 * rng.sample::<f64, _>(StandardNormal) + if k % (n + 1) == 0 { 1.5 } else { 0.0 })
            .collect();
        (0..count)
            .map(|_| {
                let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                (0..n).map(|i| (0..n).map(|j| mix[i * n + j] * z[j]).sum::<f64>() + 3.0).collect()
            })
            .collect()
    }

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(|f| f.as_slice()).collect()
    }

    #[test]
    fn whitens_fitting_set() {
        let frames = gaussian_frames(400, 5, 1);
        let z = fit_zca(&refs(&frames), 1e-6).unwrap();
        let out: Vec<Vec<f64>> = frames.iter().map(|f| z.apply(f).unwrap()).collect();
        let (m, c) = mean_and_covariance(&refs(&out)).unwrap();
        assert!(m.iter().all(|v| v.abs() < 1e-10));
        assert!((c - DMatrix::identity(5, 5)).norm() < 1e-6 * 5.0);
        assert!((&z.matrix - z.matrix.transpose()).amax() < 1e-10);
    }

    #[test]
    fn identical_frames_map_to_zero() {
        let frames = vec![vec![1.0, 2.0, 3.0]; 10];
        let z = fit_zca(&refs(&frames), 1e-3).unwrap();
        assert_eq!(z.apply(&frames[0]).unwrap(), vec![0.0; 3]);
        let z0 = fit_zca(&refs(&frames), 0.0).unwrap();
        assert_eq!(z0.apply(&frames[0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn rejects_bad_input() {
        let one = vec![vec![1.0, 2.0]];
        assert!(matches!(fit_zca(&refs(&one), 0.0), Err(Error::InsufficientData(_))));
        let two = vec![vec![1.0, 2.0], vec![0.0, 1.0]];
        assert!(fit_zca(&refs(&two), -1.0).is_err());
        let z = WhiteningTransform::identity(2);
        assert!(z.apply(&[1.0]).is_err());
    }

    #[test]
    fn relative_floor_scales_with_spectrum() {
        let frames = gaussian_frames(300, 4, 2);
        let (_, c) = mean_and_covariance(&refs(&frames)).unwrap();
        let dmax = SymmetricEigen::new(c).eigenvalues.max();
        let z = fit_zca_relative(&refs(&frames), 1e-2).unwrap();
        assert!((z.epsilon - 1e-2 * dmax).abs() < 1e-12 * dmax);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let frames = gaussian_frames(50, 3, 3);
        let z = fit_zca(&refs(&frames), 1e-5).unwrap();
        let p = dir.path().join("zca.csv");
        z.save(&p).unwrap();
        let back = WhiteningTransform::load(&p).unwrap();
        assert_eq!(back.fit_hash, z.fit_hash);
        assert!((back.matrix - &z.matrix).amax() < 1e-14);
    }
}
