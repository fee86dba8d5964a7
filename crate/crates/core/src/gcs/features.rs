use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};

use super::GcsError;

/// Spread below which a dimension counts as constant and is dropped.
const MIN_VARIANCE: f64 = 1e-12;

/// Standardizes the union of two feature sets, projects it onto its top `dim`
/// principal components, re-standardizes the projection and splits it back.
///
/// Means and variances are population statistics of the union. When `dim` is at
/// least the number of non-constant input dimensions the projection is skipped.
pub fn standardize_and_project(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    dim: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), GcsError> {
    if a.is_empty() || b.is_empty() {
        return Err(GcsError::Argument("both feature sets must be nonempty".into()));
    }
    if dim == 0 {
        return Err(GcsError::Argument("feature_dim must be at least 1".into()));
    }
    let width = a[0].len();
    if a.iter().chain(b).any(|r| r.len() != width) {
        return Err(GcsError::Argument("feature rows differ in width".into()));
    }
    let union: Vec<&Vec<f64>> = a.iter().chain(b).collect();
    let z = standardize(&union, width);
    let kept = z.first().map_or(0, Vec::len);
    if kept == 0 {
        return Err(GcsError::Argument("every feature dimension is constant".into()));
    }

    let projected = if dim >= kept {
        z
    } else {
        let refs: Vec<&Vec<f64>> = z.iter().collect();
        let p = project(&refs, kept, dim);
        let refs: Vec<&Vec<f64>> = p.iter().collect();
        standardize(&refs, dim)
    };
    if projected.first().map_or(0, Vec::len) == 0 {
        return Err(GcsError::Argument("projection has no spread".into()));
    }
    let mut rows = projected.into_iter();
    let fa = rows.by_ref().take(a.len()).collect();
    let fb = rows.collect();
    Ok((fa, fb))
}

/// Whether any feature dimension varies over the union of `a` and `b`.
pub fn has_spread(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    let Some(first) = a.first().or(b.first()) else {
        return false;
    };
    let rows: Vec<&Vec<f64>> = a.iter().chain(b).collect();
    let n = rows.len() as f64;
    (0..first.len()).any(|d| {
        let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n;
        rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n > MIN_VARIANCE
    })
}

/// Zero mean, unit variance per column; constant columns are dropped.
fn standardize(rows: &[&Vec<f64>], width: usize) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let mut stats = Vec::with_capacity(width);
    for d in 0..width {
        let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n;
        if var > MIN_VARIANCE {
            stats.push((d, mean, var.sqrt()));
        } else {
            warn!("feature dimension {d} has variance {var:e}; dropped");
        }
    }
    rows.iter()
        .map(|r| stats.iter().map(|&(d, m, s)| (r[d] - m) / s).collect())
        .collect()
}

/// Scores on the `dim` leading eigenvectors of the covariance of centred rows.
fn project(rows: &[&Vec<f64>], width: usize, dim: usize) -> Vec<Vec<f64>> {
    let n = rows.len();
    let x = DMatrix::from_fn(n, width, |i, j| rows[i][j]);
    let cov = x.transpose() * &x / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..width).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut basis = DMatrix::zeros(width, dim);
    for (k, &c) in order.iter().take(dim).enumerate() {
        let mut v = eig.eigenvectors.column(c).clone_owned();
        // Fix the sign so the largest loading is positive.
        let lead = v.iter().copied().fold(0.0f64, |acc, e| if e.abs() > acc.abs() { e } else { acc });
        if lead < 0.0 {
            v.neg_mut();
        }
        basis.set_column(k, &v);
    }
    let scores = x * basis;
    (0..n).map(|i| scores.row(i).iter().copied().collect()).collect()
}
