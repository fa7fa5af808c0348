use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::pca::pca;
use super::{sq_dist, EvalError, Result};

const ENTROPY_TOL_BITS: f64 = 1e-4;
const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub out_dim: usize,
    pub iters: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum: (f64, f64),
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 50.0,
            out_dim: 2,
            iters: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum: (0.5, 0.8),
            seed: 0,
        }
    }
}

/// The perplexity actually used for `n` points: the requested value, or
/// `floor((n - 1) / 3)` when `n < 3 * perplexity`.
pub fn effective_perplexity(n: usize, perplexity: f64) -> f64 {
    if (n as f64) < 3.0 * perplexity {
        ((n.saturating_sub(1)) / 3) as f64
    } else {
        perplexity
    }
}

/// Conditional input affinities.
#[derive(Debug, Clone)]
pub struct Affinities {
    pub n: usize,
    pub perplexity: f64,
    /// Row-stochastic `p_{j|i}`, `n x n`.
    pub conditional: Vec<f64>,
    /// Shannon entropy of each row in bits.
    pub entropies: Vec<f64>,
    pub betas: Vec<f64>,
}

/// Row `i` of `p_{j|i}` for precision `beta`, returning its entropy in bits.
fn row_entropy(d: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let dmin = d
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (o, &dj)) in out.iter_mut().zip(d).enumerate() {
        *o = if j == i { 0.0 } else { (-beta * (dj - dmin)).exp() };
        sum += *o;
    }
    let mut h = 0.0;
    for (j, o) in out.iter_mut().enumerate() {
        *o /= sum;
        if j != i && *o > 0.0 {
            h -= *o * o.log2();
        }
    }
    h
}

/// Binary-searches a Gaussian precision per point so that each row of
/// `p_{j|i}` has entropy `log2(perplexity)` within 1e-4 bits.
pub fn affinities(points: &[f64], dim: usize, perplexity: f64) -> Result<Affinities> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(EvalError::ShapeMismatch(format!("{} values are not rows of {dim}", points.len())));
    }
    let n = points.len() / dim;
    if n < 4 {
        return Err(EvalError::InvalidInput(format!("t-SNE needs at least 4 points, got {n}")));
    }
    let perp = effective_perplexity(n, perplexity);
    if perp != perplexity {
        log::warn!("perplexity {perplexity} is too large for {n} points; using {perp}");
    }
    if !(perp >= 1.0) {
        return Err(EvalError::InvalidInput(format!("perplexity {perp} below 1")));
    }
    let target = perp.log2();
    let mut cond = vec![0.0; n * n];
    let mut entropies = vec![0.0; n];
    let mut betas = vec![1.0; n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        let pi = &points[i * dim..(i + 1) * dim];
        for (j, dj) in d.iter_mut().enumerate() {
            *dj = sq_dist(pi, &points[j * dim..(j + 1) * dim]);
        }
        let spread = d.iter().copied().fold(0.0, f64::max);
        if spread == 0.0 {
            return Err(EvalError::DegenerateData(format!("point {i} coincides with every other point")));
        }
        let row = &mut cond[i * n..(i + 1) * n];
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut beta = 1.0 / (spread / n as f64).max(f64::MIN_POSITIVE);
        let mut h = row_entropy(&d, i, beta, row);
        for _ in 0..MAX_BISECTIONS {
            if (h - target).abs() <= ENTROPY_TOL_BITS {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
            h = row_entropy(&d, i, beta, row);
        }
        if (h - target).abs() > ENTROPY_TOL_BITS {
            log::warn!("point {i}: entropy {h:.6} bits missed target {target:.6}");
        }
        entropies[i] = h;
        betas[i] = beta;
    }
    Ok(Affinities {
        n,
        perplexity: perp,
        conditional: cond,
        entropies,
        betas,
    })
}

/// Exact t-SNE of `n` rows of `dim` values, returned as `n x out_dim`.
///
/// The embedding starts from the top principal components scaled to a
/// standard deviation of 1e-4, plus seeded noise a thousand times smaller
/// that separates coincident starts.
pub fn tsne(points: &[f64], dim: usize, cfg: &TsneConfig) -> Result<Vec<f64>> {
    let aff = affinities(points, dim, cfg.perplexity)?;
    let n = aff.n;
    let od = cfg.out_dim;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((aff.conditional[i * n + j] + aff.conditional[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
        p[i * n + i] = 0.0;
    }

    let init = pca(points, dim, od)?;
    let std = {
        let c0: Vec<f64> = init.projected.iter().step_by(od).copied().collect();
        let m = c0.iter().sum::<f64>() / n as f64;
        (c0.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jitter = Normal::new(0.0, 1e-7).expect("valid normal");
    let mut y: Vec<f64> = init
        .projected
        .iter()
        .map(|v| v / std.max(f64::MIN_POSITIVE) * 1e-4 + jitter.sample(&mut rng))
        .collect();

    let mut update = vec![0.0; n * od];
    let mut gains = vec![1.0f64; n * od];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; n * od];
    for iter in 0..cfg.iters {
        let exag = if iter < cfg.exaggeration_iters { cfg.early_exaggeration } else { 1.0 };
        let momentum = if iter < cfg.exaggeration_iters { cfg.momentum.0 } else { cfg.momentum.1 };
        let mut zsum = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let q = 1.0 / (1.0 + sq_dist(&y[i * od..(i + 1) * od], &y[j * od..(j + 1) * od]));
                num[i * n + j] = q;
                num[j * n + i] = q;
                zsum += 2.0 * q;
            }
        }
        grad.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let mult = 4.0 * (exag * p[i * n + j] - w / zsum) * w;
                for k in 0..od {
                    grad[i * od + k] += mult * (y[i * od + k] - y[j * od + k]);
                }
            }
        }
        for k in 0..n * od {
            let same_sign = (grad[k] > 0.0) == (update[k] > 0.0);
            gains[k] = if same_sign { (gains[k] * 0.8).max(0.01) } else { gains[k] + 0.2 };
            update[k] = momentum * update[k] - cfg.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        for k in 0..od {
            let m = (0..n).map(|i| y[i * od + k]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[i * od + k] -= m);
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::DegenerateData("embedding diverged".into()));
    }
    Ok(y)
}
