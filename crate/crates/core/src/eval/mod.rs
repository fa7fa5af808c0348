//! Reconstruction metrics, PCA, exact t-SNE, silhouette scores and
//! projection export.

mod metrics;
mod pca;
mod plot;
mod report;
mod tsne;

pub use metrics::{
    evaluate, mse, ssim, ssim_with_range, FamilyMetrics, MetricReport, MetricSpace, NotePair, SSIM_WINDOW,
};
pub use pca::{pca, Pca};
pub use report::{build_projection, encode_means, reconstruct, reconstruction_reports, LabeledNote};
pub use plot::{export_projection, import_projection, render_scatter, scatter_svg, Projection, ProjectionMeta, ProjectionPoint};
pub use tsne::{affinities, effective_perplexity, tsne, Affinities, TsneConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input of {rows}x{cols} is smaller than the {window}x{window} SSIM window")]
    TooSmall { rows: usize, cols: usize, window: usize },
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("silhouette needs at least two distinct labels")]
    SingleCluster,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean silhouette coefficient of `points` (`n` rows of `dim`) under
/// Euclidean distance. Points alone in their cluster score 0.
pub fn silhouette<L: Eq + std::hash::Hash + Clone>(points: &[f64], dim: usize, labels: &[L]) -> Result<f64> {
    if dim == 0 || points.len() != labels.len() * dim {
        return Err(EvalError::ShapeMismatch(format!(
            "{} values for {} labels of dimension {dim}",
            points.len(),
            labels.len()
        )));
    }
    let mut ids = std::collections::HashMap::new();
    let label_ids: Vec<usize> = labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l.clone()).or_insert(next)
        })
        .collect();
    let k = ids.len();
    if k < 2 {
        return Err(EvalError::SingleCluster);
    }
    let mut counts = vec![0usize; k];
    for &l in &label_ids {
        counts[l] += 1;
    }
    let n = labels.len();
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.fill(0.0);
        let pi = &points[i * dim..(i + 1) * dim];
        for j in 0..n {
            if i != j {
                sums[label_ids[j]] += sq_dist(pi, &points[j * dim..(j + 1) * dim]).sqrt();
            }
        }
        let own = label_ids[i];
        if counts[own] == 1 {
            continue;
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn far_apart_pairs_score_near_one() {
        let pts = [0.0, 0.0, 0.0, 0.1, 100.0, 0.0, 100.0, 0.1];
        let s = silhouette(&pts, 2, &["a", "a", "b", "b"]).unwrap();
        assert!(s > 0.99, "{s}");
    }

    #[test]
    fn identical_points_score_at_most_zero() {
        let pts = [1.0; 8];
        assert!(silhouette(&pts, 2, &[0, 0, 1, 1]).unwrap() <= 0.0);
    }

    #[test]
    fn random_labels_on_one_blob_score_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 400;
        let pts: Vec<f64> = (0..n * 2).map(|_| rng.sample(StandardNormal)).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let s = silhouette(&pts, 2, &labels).unwrap();
        assert!(s.abs() <= 0.1, "{s}");
    }

    #[test]
    fn single_cluster_is_rejected() {
        assert!(matches!(silhouette(&[0.0, 1.0], 1, &["x", "x"]), Err(EvalError::SingleCluster)));
        assert!(matches!(silhouette(&[0.0, 1.0], 1, &["x"]), Err(EvalError::ShapeMismatch(_))));
    }
}
