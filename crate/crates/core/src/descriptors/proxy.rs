//! Differentiable descriptor proxies computed from a normalized
//! representation.
//!
//! Both proxies work on linear harmonic amplitudes recovered from the dB
//! channels. Gradients are exact (analytic) with respect to every
//! representation value, so they can be used as a loss term.

use super::{DescriptorError, DescriptorStats, Result};
use crate::repr::{erb_rate, erb_rate_to_hz, median, NormalizationStats, NoteRepresentation};
use crate::{N_BANDS, N_CHANNELS, N_HARMONICS};

const DB_TO_LN: f64 = std::f64::consts::LN_10 / 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxyConfig {
    pub sample_rate: u32,
    pub hop_seconds: f64,
    pub lo_frac: f64,
    pub hi_frac: f64,
    /// Logistic softness of the threshold crossing; 0 gives the hard rule.
    pub tau: f64,
    /// Adds the ERB bands to the centroid at their ERB-rate center frequency.
    pub include_bands: bool,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            sample_rate: crate::SAMPLE_RATE,
            hop_seconds: crate::hop_seconds(),
            lo_frac: 0.1,
            hi_frac: 0.9,
            tau: 0.01,
            include_bands: false,
        }
    }
}

/// A proxy value with its gradient over the `frames x 12` normalized values.
#[derive(Debug, Clone)]
pub struct ProxyOutput {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn linear_amplitudes(x: &[f64], stats: &NormalizationStats) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i % N_CHANNELS;
            if c == 0 {
                (stats.min[0] + v * stats.span(0)).exp()
            } else {
                ((stats.min[c] + v * stats.span(c)) * DB_TO_LN).exp()
            }
        })
        .collect()
}

/// Derivative of an amplitude (or f0) with respect to its normalized value.
fn amplitude_slope(c: usize, amp: f64, stats: &NormalizationStats) -> f64 {
    if c == 0 {
        amp * stats.span(0)
    } else {
        amp * DB_TO_LN * stats.span(c)
    }
}

fn band_centers(median_f0: f64, nyquist: f64) -> Option<([f64; N_BANDS], [f64; N_BANDS])> {
    let lo = (N_HARMONICS as f64 + 1.0) * median_f0;
    if lo >= nyquist {
        return None;
    }
    let (r_lo, r_hi) = (erb_rate(lo), erb_rate(nyquist));
    // d erb_rate / df at `lo`, times d lo / d median
    let d_rlo = 21.4 * 0.00437 / ((0.00437 * lo + 1.0) * std::f64::consts::LN_10) * (N_HARMONICS as f64 + 1.0);
    let mut centers = [0.0; N_BANDS];
    let mut slopes = [0.0; N_BANDS];
    for b in 0..N_BANDS {
        let w = (b as f64 + 0.5) / N_BANDS as f64;
        let rate = r_lo * (1.0 - w) + r_hi * w;
        centers[b] = erb_rate_to_hz(rate);
        let d_inv = 10f64.powf(rate / 21.4) * std::f64::consts::LN_10 / 21.4 / 0.00437;
        slopes[b] = d_inv * (1.0 - w) * d_rlo;
    }
    Some((centers, slopes))
}

/// Energy-weighted centroid (Hz) of the harmonic partials and its gradient
/// over the normalized values `x` (`frames x 12`).
pub fn centroid_value_grad(
    x: &[f64],
    frames: usize,
    stats: &NormalizationStats,
    cfg: &ProxyConfig,
) -> (f64, Vec<f64>) {
    debug_assert_eq!(x.len(), frames * N_CHANNELS);
    let amp = linear_amplitudes(x, stats);
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let f0: Vec<f64> = (0..frames).map(|i| amp[i * N_CHANNELS]).collect();
    let bands = if cfg.include_bands {
        band_centers(median(f0.clone()), nyquist)
    } else {
        None
    };
    let last = if bands.is_some() { N_CHANNELS } else { 1 + N_HARMONICS };
    let freq = |i: usize, c: usize| -> f64 {
        if c <= N_HARMONICS {
            c as f64 * f0[i]
        } else {
            bands.as_ref().unwrap().0[c - 1 - N_HARMONICS]
        }
    };

    let mut c_frame = vec![0.0; frames];
    let mut d_frame = vec![0.0; frames];
    let mut e_frame = vec![0.0; frames];
    for i in 0..frames {
        let row = &amp[i * N_CHANNELS..(i + 1) * N_CHANNELS];
        let (mut num, mut den, mut en) = (0.0, 0.0, 0.0);
        for c in 1..last {
            num += freq(i, c) * row[c];
            den += row[c];
            en += row[c] * row[c];
        }
        c_frame[i] = num / den;
        d_frame[i] = den;
        e_frame[i] = en;
    }
    let total_e: f64 = e_frame.iter().sum();
    let centroid = c_frame.iter().zip(&e_frame).map(|(c, e)| c * e).sum::<f64>() / total_e;

    let mut grad = vec![0.0; x.len()];
    let mut d_median = 0.0;
    for i in 0..frames {
        let row = &amp[i * N_CHANNELS..(i + 1) * N_CHANNELS];
        let dc = e_frame[i] / total_e;
        let de = (c_frame[i] - centroid) / total_e;
        let mut d_f0 = 0.0;
        for c in 1..last {
            let d_amp = dc * (freq(i, c) - c_frame[i]) / d_frame[i] + de * 2.0 * row[c];
            grad[i * N_CHANNELS + c] = d_amp * amplitude_slope(c, row[c], stats);
            if c <= N_HARMONICS {
                d_f0 += dc * c as f64 * row[c] / d_frame[i];
            } else {
                d_median += dc * row[c] / d_frame[i] * bands.as_ref().unwrap().1[c - 1 - N_HARMONICS];
            }
        }
        grad[i * N_CHANNELS] = d_f0 * amplitude_slope(0, f0[i], stats);
    }
    if bands.is_some() && d_median != 0.0 {
        for (i, share) in median_weights(&f0) {
            grad[i * N_CHANNELS] += share * d_median * amplitude_slope(0, f0[i], stats);
        }
    }
    (centroid, grad)
}

/// Indices (and weights) of the element(s) selected by the median.
fn median_weights(xs: &[f64]) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let n = xs.len();
    if n % 2 == 1 {
        vec![(idx[n / 2], 1.0)]
    } else {
        vec![(idx[n / 2 - 1], 0.5), (idx[n / 2], 0.5)]
    }
}

/// Time of the first crossing of `frac * max(env)` and its gradient with
/// respect to `env`.
///
/// Each segment `(k-1, k)` carries a linearly interpolated crossing time.
/// With `tau == 0` the first segment whose right end reaches the threshold
/// is selected; with `tau > 0` the selection is a logistic soft-first-crossing
/// over segments, which converges to the hard rule as `tau -> 0`.
pub fn crossing_time(env: &[f64], frac: f64, tau: f64, hop: f64) -> (f64, Vec<f64>) {
    let n = env.len();
    let (m_idx, max) = env
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let theta = frac * max;

    // interpolated crossing time per segment, and its partials
    let mut seg_t = vec![0.0; n];
    let mut seg_d = vec![(0.0, 0.0, 0.0); n]; // (d/d env[k-1], d/d env[k], d/d theta)
    for k in 1..n {
        let (a, b) = (env[k - 1], env[k]);
        let delta = b - a;
        let base = (k - 1) as f64 * hop;
        if delta > 0.0 {
            let r = (theta - a) / delta;
            if r <= 0.0 {
                seg_t[k] = base;
            } else if r >= 1.0 {
                seg_t[k] = base + hop;
            } else {
                seg_t[k] = base + r * hop;
                seg_d[k] = (
                    hop * (theta - b) / (delta * delta),
                    -hop * (theta - a) / (delta * delta),
                    hop / delta,
                );
            }
        } else {
            seg_t[k] = k as f64 * hop;
        }
    }

    // soft indicator of "at or above threshold"
    let mut s = vec![0.0; n];
    let mut ds = vec![0.0; n];
    for k in 0..n {
        if tau > 0.0 {
            let z = (env[k] - theta) / (tau * max);
            let sk = 1.0 / (1.0 + (-z).exp());
            s[k] = sk;
            ds[k] = sk * (1.0 - sk);
        } else {
            s[k] = if env[k] >= theta { 1.0 } else { 0.0 };
        }
    }

    // t = G_0 with G_k = s_k t_k + (1 - s_k) G_{k+1}, G_n = end of envelope
    let end = (n - 1) as f64 * hop;
    let mut g = vec![0.0; n + 1];
    g[n] = end;
    for k in (0..n).rev() {
        g[k] = s[k] * seg_t[k] + (1.0 - s[k]) * g[k + 1];
    }
    let mut grad = vec![0.0; n];
    let mut d_max = 0.0;
    let mut survive = 1.0;
    for k in 0..n {
        let w = survive * s[k];
        if w != 0.0 && k > 0 {
            let (da, db, dth) = seg_d[k];
            grad[k - 1] += w * da;
            grad[k] += w * db;
            d_max += w * dth * frac;
        }
        if tau > 0.0 {
            let dt_ds = survive * (seg_t[k] - g[k + 1]);
            let dz = dt_ds * ds[k];
            grad[k] += dz / (tau * max);
            d_max += -dz * env[k] / (tau * max * max);
        }
        survive *= 1.0 - s[k];
    }
    grad[m_idx] += d_max;
    (g[0], grad)
}

/// Attack time (s) of the summed linear harmonic amplitudes and its gradient
/// over the normalized values.
pub fn attack_value_grad(
    x: &[f64],
    frames: usize,
    stats: &NormalizationStats,
    cfg: &ProxyConfig,
) -> (f64, Vec<f64>) {
    let amp = linear_amplitudes(x, stats);
    let env: Vec<f64> = (0..frames)
        .map(|i| amp[i * N_CHANNELS + 1..i * N_CHANNELS + 1 + N_HARMONICS].iter().sum())
        .collect();
    let (t_lo, g_lo) = crossing_time(&env, cfg.lo_frac, cfg.tau, cfg.hop_seconds);
    let (t_hi, g_hi) = crossing_time(&env, cfg.hi_frac, cfg.tau, cfg.hop_seconds);
    let attack = t_hi - t_lo;
    let mut grad = vec![0.0; x.len()];
    if attack <= 0.0 {
        return (0.0, grad);
    }
    for i in 0..frames {
        let d_env = g_hi[i] - g_lo[i];
        for c in 1..=N_HARMONICS {
            let a = amp[i * N_CHANNELS + c];
            grad[i * N_CHANNELS + c] = d_env * amplitude_slope(c, a, stats);
        }
    }
    (attack, grad)
}

/// Normalized `(centroid, attack)` pair and the gradient of
/// `w0 * centroid_norm + w1 * attack_norm` for a single note.
pub fn normalized_pair_grad(
    x: &[f64],
    frames: usize,
    stats: &NormalizationStats,
    dstats: &DescriptorStats,
    cfg: &ProxyConfig,
) -> ([f64; 2], [Vec<f64>; 2]) {
    let (c, mut gc) = centroid_value_grad(x, frames, stats, cfg);
    let (a, mut ga) = attack_value_grad(x, frames, stats, cfg);
    let c_span = dstats.centroid_max - dstats.centroid_min;
    let a_span = dstats.attack_max - dstats.attack_min;
    let cn = (c - dstats.centroid_min) / c_span;
    let an = (a - dstats.attack_min) / a_span;
    let scale = |g: &mut Vec<f64>, inside: bool, span: f64| {
        let k = if inside { 1.0 / span } else { 0.0 };
        g.iter_mut().for_each(|v| *v *= k);
    };
    scale(&mut gc, (0.0..=1.0).contains(&cn), c_span);
    scale(&mut ga, (0.0..=1.0).contains(&an), a_span);
    ([cn.clamp(0.0, 1.0), an.clamp(0.0, 1.0)], [gc, ga])
}

fn as_f64(repr: &NoteRepresentation) -> Vec<f64> {
    repr.values.iter().map(|&v| v as f64).collect()
}

fn all_at_floor(x: &[f64], stats: &NormalizationStats, channels: std::ops::Range<usize>) -> bool {
    x.chunks_exact(N_CHANNELS).all(|row| {
        channels
            .clone()
            .all(|c| stats.denormalize_value(c, row[c]) <= stats.log_floor_db)
    })
}

/// Centroid (Hz) recomputed from a representation, with its gradient.
pub fn centroid_from_repr(
    repr: &NoteRepresentation,
    stats: &NormalizationStats,
    cfg: &ProxyConfig,
) -> Result<ProxyOutput> {
    stats.check(repr)?;
    let x = as_f64(repr);
    let last = if cfg.include_bands { N_CHANNELS } else { 1 + N_HARMONICS };
    if all_at_floor(&x, stats, 1..last) {
        return Err(DescriptorError::ZeroMagnitude);
    }
    let (value, grad) = centroid_value_grad(&x, repr.frames, stats, cfg);
    Ok(ProxyOutput { value, grad })
}

/// Attack time (s) recomputed from a representation. With `cfg.tau == 0`
/// this equals [`super::attack_time`] on the summed-amplitude envelope.
pub fn attack_from_repr(
    repr: &NoteRepresentation,
    stats: &NormalizationStats,
    cfg: &ProxyConfig,
) -> Result<ProxyOutput> {
    stats.check(repr)?;
    let x = as_f64(repr);
    if all_at_floor(&x, stats, 1..1 + N_HARMONICS) {
        return Err(DescriptorError::SilentNote);
    }
    let (value, grad) = attack_value_grad(&x, repr.frames, stats, cfg);
    Ok(ProxyOutput { value, grad })
}

/// Summed linear harmonic amplitude per frame, the proxy's envelope.
pub fn repr_envelope(repr: &NoteRepresentation, stats: &NormalizationStats) -> Vec<f64> {
    let amp = linear_amplitudes(&as_f64(repr), stats);
    amp.chunks_exact(N_CHANNELS)
        .map(|row| row[1..=N_HARMONICS].iter().sum())
        .collect()
}
