use nalgebra::{DMatrix, SymmetricEigen};

use super::{EvalError, Result};

/// Principal components of a point set.
#[derive(Debug, Clone)]
pub struct Pca {
    pub n: usize,
    pub dim: usize,
    pub out_dim: usize,
    pub mean: Vec<f64>,
    /// `out_dim` unit vectors of length `dim`, by decreasing variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub explained_ratio: Vec<f64>,
    /// `n x out_dim` coordinates, row-major.
    pub projected: Vec<f64>,
}

/// Projects `n` rows of `dim` values onto their top `out_dim` principal
/// components. Each component's largest-magnitude loading is positive.
pub fn pca(points: &[f64], dim: usize, out_dim: usize) -> Result<Pca> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(EvalError::ShapeMismatch(format!("{} values are not rows of {dim}", points.len())));
    }
    let n = points.len() / dim;
    if out_dim == 0 || out_dim > dim || n <= out_dim {
        return Err(EvalError::InvalidInput(format!("{n} points of dimension {dim} cannot give {out_dim} components")));
    }
    let mut mean = vec![0.0; dim];
    for row in points.chunks_exact(dim) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dim, |r, c| points[r * dim + c] - mean[c]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let total: f64 = cov.trace();
    if !(total > 0.0) {
        return Err(EvalError::DegenerateData("points have zero variance".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut components = Vec::with_capacity(out_dim);
    let mut explained_variance = Vec::with_capacity(out_dim);
    for &k in order.iter().take(out_dim) {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(eig.eigenvalues[k].max(0.0));
    }
    let mut projected = vec![0.0; n * out_dim];
    for r in 0..n {
        for (j, comp) in components.iter().enumerate() {
            projected[r * out_dim + j] = (0..dim).map(|c| centered[(r, c)] * comp[c]).sum();
        }
    }
    Ok(Pca {
        n,
        dim,
        out_dim,
        mean,
        explained_ratio: explained_variance.iter().map(|v| v / total).collect(),
        components,
        explained_variance,
        projected,
    })
}
