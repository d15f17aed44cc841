//! Offline PCA and K-means on a population of features.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::parallel::{chunked_reduce, map_indexed, Execution};
use crate::stimuli::stream_rng;

const CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    /// K orthonormal rows.
    pub components: Vec<Vec<f64>>,
    /// Non-increasing second-moment eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// True when K exceeds the numerical rank of the data.
    pub rank_deficient: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub centroids: Vec<Vec<f64>>,
    /// Index of the assigned centroid per sample.
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every Lloyd iteration.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub reseeded: usize,
}

fn check_set(x: &[Vec<f64>], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if x.len() < k {
        return Err(Error::InsufficientData(format!("{} samples for K = {k}", x.len())));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("samples must be non-empty and equal length"));
    }
    Ok(d)
}

/// Uncentered second moment (1/T) Σ χχᵀ, summed chunk by chunk in order.
pub fn second_moment(x: &[Vec<f64>], exec: Execution) -> Result<DMatrix<f64>> {
    let d = check_set(x, 1)?;
    let s = chunked_reduce(
        x.len(),
        CHUNK,
        exec,
        |r| {
            let rows = &x[r];
            let block = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
            block.transpose() * block
        },
        |a, b| a + b,
    )
    .unwrap();
    Ok(s / x.len() as f64)
}

/// Top-K eigenvectors of the uncentered second moment, each signed so its
/// largest-magnitude entry is positive.
pub fn pca_features(x: &[Vec<f64>], k: usize) -> Result<PcaResult> {
    pca_features_with(x, k, Execution::default())
}

pub fn pca_features_with(x: &[Vec<f64>], k: usize, exec: Execution) -> Result<PcaResult> {
    let d = check_set(x, k)?;
    if k > d {
        return Err(Error::invalid(format!("K = {k} exceeds feature dimension {d}")));
    }
    pca_from_moment(second_moment(x, exec)?, k)
}

pub fn pca_from_moment(s: DMatrix<f64>, k: usize) -> Result<PcaResult> {
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * 1e-12 * eig.eigenvalues.len() as f64;
    let mut components = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    let mut rank_deficient = false;
    for &i in order.iter().take(k) {
        let lam = eig.eigenvalues[i].max(0.0);
        if lam <= tol {
            rank_deficient = true;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let big = v.iter().enumerate().fold(0, |b, (j, x)| if x.abs() > v[b].abs() { j } else { b });
        if v[big] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        eigenvalues.push(lam);
    }
    if rank_deficient {
        log::warn!("K exceeds the numerical rank; trailing components span the null space");
    }
    Ok(PcaResult {
        components,
        eigenvalues,
        rank_deficient,
    })
}

/// Σ_t ‖χ_t − AᵀAχ_t‖² for orthonormal rows A.
pub fn pca_objective(x: &[Vec<f64>], rows: &[Vec<f64>]) -> f64 {
    x.iter()
        .map(|c| {
            let proj: Vec<f64> = rows.iter().map(|r| r.iter().zip(c).map(|(a, b)| a * b).sum()).collect();
            let mut err = 0.0;
            for (j, cj) in c.iter().enumerate() {
                let rec: f64 = rows.iter().zip(&proj).map(|(r, p)| r[j] * p).sum();
                err += (cj - rec).powi(2);
            }
            err
        })
        .sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Nearest centroid, ties to the lowest index.
fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (a, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (a, d);
        }
    }
    best
}

fn assign(x: &[Vec<f64>], centroids: &[Vec<f64>], exec: Execution) -> Vec<(usize, f64)> {
    let chunks = map_indexed(x.len().div_ceil(CHUNK), exec, |c| {
        x[c * CHUNK..((c + 1) * CHUNK).min(x.len())]
            .iter()
            .map(|r| nearest(r, centroids))
            .collect::<Vec<_>>()
    });
    chunks.concat()
}

/// k-means++ seeding followed by Lloyd iterations until assignments stop
/// changing or `max_iter` is reached.
pub fn kmeans_features(x: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KmeansResult> {
    kmeans_features_with(x, k, seed, max_iter, Execution::default())
}

pub fn kmeans_features_with(x: &[Vec<f64>], k: usize, seed: u64, max_iter: usize, exec: Execution) -> Result<KmeansResult> {
    let d = check_set(x, k)?;
    let mut rng = stream_rng(seed, 7);
    let mut centroids = vec![x[rng.gen_range(0..x.len())].clone()];
    let mut dist: Vec<f64> = x.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = x.len() - 1;
            for (i, w) in dist.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.gen_range(0..x.len())
        };
        centroids.push(x[pick].clone());
        for (di, r) in dist.iter_mut().zip(x) {
            *di = di.min(sq_dist(r, &centroids[centroids.len() - 1]));
        }
    }

    let mut assignments: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut reseeded = 0;
    let mut iterations = 0;
    let mut near = assign(x, &centroids, exec);
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let new: Vec<usize> = near.iter().map(|p| p.0).collect();
        let stable = new == assignments;
        assignments = new;
        if stable {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (r, &a) in x.iter().zip(&assignments) {
            counts[a] += 1;
            sums[a].iter_mut().zip(r).for_each(|(s, v)| *s += v);
        }
        for a in 0..k {
            if counts[a] == 0 {
                let far = near
                    .iter()
                    .enumerate()
                    .fold(0, |b, (i, p)| if p.1 > near[b].1 { i } else { b });
                log::info!("cluster {a} emptied; re-seeding at sample {far}");
                centroids[a] = x[far].clone();
                reseeded += 1;
            } else {
                centroids[a] = sums[a].iter().map(|s| s / counts[a] as f64).collect();
            }
        }
        near = assign(x, &centroids, exec);
        history.push(near.iter().map(|p| p.1).sum());
    }
    let assignments: Vec<usize> = near.iter().map(|p| p.0).collect();
    let inertia = near.iter().map(|p| p.1).sum();
    Ok(KmeansResult {
        centroids,
        assignments,
        inertia,
        inertia_history: history,
        iterations,
        reseeded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    #[test]
    fn rank_one_data() {
        let v = vec![0.0, -0.6, 0.8];
        let x = vec![v.clone(); 10];
        let p = pca_features(&x, 1).unwrap();
        let expect = [0.0, -0.6, 0.8];
        for (a, b) in p.components[0].iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p.eigenvalues[0] - 1.0).abs() < 1e-12);
        let p2 = pca_features(&x, 2).unwrap();
        assert!(p2.rank_deficient);
    }

    #[test]
    fn components_are_orthonormal() {
        let mut rng = stream_rng(3, 0);
        let x: Vec<Vec<f64>> = (0..200).map(|_| (0..6).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let p = pca_features(&x, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let d: f64 = p.components[i].iter().zip(&p.components[j]).map(|(a, b)| a * b).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
        assert!(p.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn moment_is_mode_independent() {
        let mut rng = stream_rng(4, 0);
        let x: Vec<Vec<f64>> = (0..5000).map(|_| (0..4).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let a = second_moment(&x, Execution::Parallel).unwrap();
        let b = second_moment(&x, Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn separated_clouds() {
        let mut rng = stream_rng(5, 0);
        let radius = 0.1;
        let mut x = Vec::new();
        for c in [[5.0, 0.0], [-5.0, 1.0]] {
            for _ in 0..100 {
                x.push(vec![c[0] + radius * rng.sample::<f64, _>(StandardNormal), c[1] + radius * rng.sample::<f64, _>(StandardNormal)]);
            }
        }
        let r = kmeans_features(&x, 2, 0, 100).unwrap();
        for c in &r.centroids {
            let target = if c[0] > 0.0 { [5.0, 0.0] } else { [-5.0, 1.0] };
            assert!(sq_dist(c, &target).sqrt() < radius);
        }
        assert!(r.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn distinct_points_reach_zero_inertia() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 3.0], vec![0.0, 0.0]];
        let r = kmeans_features(&x, 3, 1, 50).unwrap();
        assert_eq!(r.inertia, 0.0);
        assert_eq!(r.assignments[0], r.assignments[3]);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = stream_rng(6, 0);
        let x: Vec<Vec<f64>> = (0..300).map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect()).collect();
        assert_eq!(kmeans_features(&x, 4, 9, 100).unwrap(), kmeans_features(&x, 4, 9, 100).unwrap());
        assert!(kmeans_features(&x[..2], 3, 0, 10).is_err());
    }
}
