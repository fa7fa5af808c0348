use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

/// Side length of the Gaussian SSIM window.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_len(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(EvalError::ShapeMismatch(format!("{} vs {} values", x.len(), y.len())));
    }
    Ok(())
}

/// Mean squared difference over all elements.
pub fn mse(x: &[f64], y: &[f64]) -> Result<f64> {
    check_len(x, y)?;
    if x.is_empty() {
        return Err(EvalError::InvalidInput("mse of empty inputs".into()));
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut k: [f64; SSIM_WINDOW] = std::array::from_fn(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian filter over every fully contained window.
fn filter_valid(img: &[f64], rows: usize, cols: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (or, oc) = (rows - SSIM_WINDOW + 1, cols - SSIM_WINDOW + 1);
    let mut tmp = vec![0.0; rows * oc];
    for r in 0..rows {
        let row = &img[r * cols..(r + 1) * cols];
        for c in 0..oc {
            tmp[r * oc + c] = k.iter().zip(&row[c..c + SSIM_WINDOW]).map(|(w, v)| w * v).sum();
        }
    }
    let mut out = vec![0.0; or * oc];
    for r in 0..or {
        for c in 0..oc {
            out[r * oc + c] = k.iter().enumerate().map(|(i, w)| w * tmp[(r + i) * oc + c]).sum();
        }
    }
    out
}

/// Mean structural similarity of two `rows x cols` images with values in
/// `[0, 1]`.
pub fn ssim(x: &[f64], y: &[f64], rows: usize, cols: usize) -> Result<f64> {
    ssim_with_range(x, y, rows, cols, 1.0)
}

/// SSIM for a given dynamic range `l`.
pub fn ssim_with_range(x: &[f64], y: &[f64], rows: usize, cols: usize, l: f64) -> Result<f64> {
    check_len(x, y)?;
    if x.len() != rows * cols {
        return Err(EvalError::ShapeMismatch(format!("{} values for {rows}x{cols}", x.len())));
    }
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(EvalError::TooSmall {
            rows,
            cols,
            window: SSIM_WINDOW,
        });
    }
    let k = gaussian_kernel();
    let (c1, c2) = ((K1 * l).powi(2), (K2 * l).powi(2));
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = filter_valid(x, rows, cols, &k);
    let my = filter_valid(y, rows, cols, &k);
    let sxx = filter_valid(&prod(x, x), rows, cols, &k);
    let syy = filter_valid(&prod(y, y), rows, cols, &k);
    let sxy = filter_valid(&prod(x, y), rows, cols, &k);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cxy = sxy[i] - ux * uy;
        let num = (2.0 * ux * uy + c1) * (2.0 * cxy + c2);
        let den = (ux * ux + uy * uy + c1) * (vx + vy + c2);
        total += num / den;
    }
    Ok(total / mx.len() as f64)
}

/// Units the metrics were computed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricSpace {
    /// The model's `[0, 1]` representation, SSIM range 1.
    Normalized,
    /// Physical channel units (ln Hz and dB); SSIM range is the widest
    /// channel span of the normalization statistics.
    Denormalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMetrics {
    pub notes: usize,
    pub mse: f64,
    pub ssim: f64,
}

/// Metrics computed per note and averaged over notes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub computed_on: MetricSpace,
    pub notes: usize,
    pub mse: f64,
    pub ssim: f64,
    pub per_family: BTreeMap<String, FamilyMetrics>,
    /// Description of the SSIM window.
    pub ssim_window: String,
}

/// A reference note and its reconstruction, both `rows x cols`.
#[derive(Debug, Clone)]
pub struct NotePair<'a> {
    pub family: &'a str,
    pub reference: &'a [f64],
    pub reconstruction: &'a [f64],
}

pub fn evaluate(pairs: &[NotePair<'_>], rows: usize, cols: usize, space: MetricSpace, range: f64) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(EvalError::InvalidInput("no notes to evaluate".into()));
    }
    let mut fam: BTreeMap<String, (usize, f64, f64)> = BTreeMap::new();
    let (mut tm, mut ts) = (0.0, 0.0);
    for p in pairs {
        let m = mse(p.reference, p.reconstruction)?;
        let s = ssim_with_range(p.reference, p.reconstruction, rows, cols, range)?;
        tm += m;
        ts += s;
        let e = fam.entry(p.family.to_string()).or_default();
        e.0 += 1;
        e.1 += m;
        e.2 += s;
    }
    let n = pairs.len() as f64;
    Ok(MetricReport {
        computed_on: space,
        notes: pairs.len(),
        mse: tm / n,
        ssim: ts / n,
        per_family: fam
            .into_iter()
            .map(|(k, (c, m, s))| {
                (
                    k,
                    FamilyMetrics {
                        notes: c,
                        mse: m / c as f64,
                        ssim: s / c as f64,
                    },
                )
            })
            .collect(),
        ssim_window: format!("gaussian {SSIM_WINDOW}x{SSIM_WINDOW} sigma {SSIM_SIGMA}, K1 {K1}, K2 {K2}, L {range}, valid windows"),
    })
}
