//! Comparisons between learned operators, analytic generators and subspaces.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        dot(a, b) / d
    }
}

/// Pearson correlation; 0 when either input is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let ca: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let cb: Vec<f64> = b.iter().map(|v| v - mb).collect();
    cosine(&ca, &cb)
}

/// Cosine between row r+1 shifted one pixel left and row r, for consecutive
/// interior rows r = 1..n-3 (zero-based), over the overlapping columns.
pub fn toeplitz_scores(op: &[Vec<f64>]) -> Vec<f64> {
    let n = op.len();
    (1..n.saturating_sub(2))
        .map(|r| cosine(&op[r][..n - 1], &op[r + 1][1..]))
        .collect()
}

/// ‖A + Aᵀ‖_F / ‖A‖_F
pub fn antisymmetry_ratio(op: &[Vec<f64>]) -> f64 {
    let n = op.len();
    let mut sym = 0.0;
    let mut tot = 0.0;
    for i in 0..n {
        for j in 0..n {
            sym += (op[i][j] + op[j][i]).powi(2);
            tot += op[i][j].powi(2);
        }
    }
    if tot == 0.0 {
        0.0
    } else {
        (sym / tot).sqrt()
    }
}

fn orthonormal_basis(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let k = rows.len();
    let d = rows.first().map(|r| r.len()).unwrap_or(0);
    if k == 0 || d < k || rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("subspace needs 1..=d rows of equal length d"));
    }
    let a = DMatrix::from_fn(d, k, |i, j| rows[j][i]);
    let svd = a.svd(true, false);
    let smax = svd.singular_values.max();
    if svd.singular_values.iter().any(|&s| s <= 1e-12 * smax) || smax == 0.0 {
        return Err(Error::NumericalFailure("subspace rows are linearly dependent".into()));
    }
    Ok(svd.u.unwrap())
}

/// Principal angles (radians, ascending) between the row spans of two sets of
/// vectors. Cosines come from the singular values of Q₁ᵀQ₂ and sines from
/// those of (I − Q₁Q₁ᵀ)Q₂; each angle is atan2(sin, cos), which stays
/// accurate near both 0 and π/2.
pub fn principal_angles(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<f64>> {
    let (qa, qb) = if a.len() >= b.len() { (orthonormal_basis(a)?, orthonormal_basis(b)?) } else { (orthonormal_basis(b)?, orthonormal_basis(a)?) };
    if qa.nrows() != qb.nrows() {
        return Err(Error::invalid("subspaces live in different dimensions"));
    }
    let c = qa.transpose() * &qb;
    let mut cos: Vec<f64> = c.clone().svd(false, false).singular_values.iter().map(|v| v.min(1.0)).collect();
    cos.sort_by(|x, y| y.total_cmp(x));
    cos.truncate(qb.ncols());
    let resid = &qb - &qa * &c;
    let mut sin: Vec<f64> = resid.svd(false, false).singular_values.iter().map(|v| v.min(1.0)).collect();
    sin.sort_by(|x, y| x.total_cmp(y));
    Ok(cos.iter().zip(&sin).map(|(c, s)| s.atan2(*c)).collect())
}

/// Largest principal angle in degrees.
pub fn max_principal_angle_deg(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    Ok(principal_angles(a, b)?.into_iter().fold(0.0, f64::max).to_degrees())
}

/// Best one-to-one assignment of filters to targets by |cosine|, found by
/// exhaustive search (K ≤ 8). Returns, per filter, (target index, cosine).
pub fn match_targets(filters: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Vec<(usize, f64)>> {
    let k = filters.len();
    if k > targets.len() || k > 8 {
        return Err(Error::invalid("need at most 8 filters and no more filters than targets"));
    }
    let cos: Vec<Vec<f64>> = filters
        .iter()
        .map(|f| targets.iter().map(|t| cosine(f, t)).collect())
        .collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut perm = Vec::with_capacity(k);
    let mut used = vec![false; targets.len()];
    fn search(i: usize, cos: &[Vec<f64>], perm: &mut Vec<usize>, used: &mut [bool], best: &mut Option<(f64, Vec<usize>)>) {
        if i == cos.len() {
            let score = perm.iter().enumerate().map(|(f, &t)| cos[f][t]).fold(f64::INFINITY, f64::min);
            if best.as_ref().map_or(true, |(s, _)| score > *s) {
                *best = Some((score, perm.clone()));
            }
            return;
        }
        for t in 0..used.len() {
            if !used[t] {
                used[t] = true;
                perm.push(t);
                search(i + 1, cos, perm, used, best);
                perm.pop();
                used[t] = false;
            }
        }
    }
    search(0, &cos, &mut perm, &mut used, &mut best);
    let (_, p) = best.unwrap();
    Ok(p.iter().enumerate().map(|(f, &t)| (t, cos[f][t])).collect())
}
