//! Resynthesis of a representation: an additive bank for the seven
//! harmonics plus white noise shaped into the four ERB bands.

mod wav;

pub use wav::{decode_wav, encode_wav, read_wav, write_wav};

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::repr::{median, note_band_edges, NormalizationStats, NoteRepresentation, ReprError};
use crate::{FFT_SIZE, HOP, N_BANDS, N_CHANNELS, N_HARMONICS, WINDOW};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("representation has no frames")]
    EmptyRepresentation,
    #[error("sample {index} is {value}, outside [-1, 1]")]
    ClippedInput { index: usize, value: f32 },
    #[error("unsupported WAV: {0}")]
    UnsupportedWav(String),
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Repr(#[from] ReprError),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

/// Peak level applied when a render would otherwise clip (-1 dBFS).
pub const CLIP_PEAK: f32 = 0.891;
/// Length of the band-pass filters shaping the noise.
pub const NOISE_TAPS: usize = 512;
/// Channels within this many dB of the analysis log floor are silent.
pub const GATE_DB: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub sample_rate: u32,
    pub noise_enabled: bool,
    pub fade_ms: f64,
    pub noise_seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            sample_rate: crate::SAMPLE_RATE,
            noise_enabled: true,
            fade_ms: 5.0,
            noise_seed: 0,
        }
    }
}

/// Output length for `frames` analysis frames: the span the frames covered.
pub fn render_len(frames: usize) -> usize {
    (frames - 1) * HOP + WINDOW
}

/// Linear interpolation of per-frame controls onto samples, with control
/// points at the frame centers. Beyond the first/last center the value is
/// held, or with `extrapolate` continued along the end segment and clamped
/// at zero.
fn interpolate(points: &[f64], len: usize, extrapolate: bool) -> Vec<f64> {
    let center = (WINDOW / 2) as f64;
    let last = (points.len() - 1) as f64;
    (0..len)
        .map(|t| {
            let raw = (t as f64 - center) / HOP as f64;
            let u = raw.clamp(0.0, last);
            let i = (u.floor() as usize).min(points.len().saturating_sub(2));
            let j = (i + 1).min(points.len() - 1);
            let v = if extrapolate && i != j {
                points[i] + (points[j] - points[i]) * (raw - i as f64)
            } else {
                let frac = u - i as f64;
                points[i] * (1.0 - frac) + points[j] * frac
            };
            if extrapolate && !(0.0..=last).contains(&raw) { v.max(0.0) } else { v }
        })
        .collect()
}

fn db_to_amp(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Blackman-windowed sinc band-pass between `lo` and `hi` Hz.
fn bandpass(lo: f64, hi: f64, sr: f64) -> Vec<f64> {
    let m = (NOISE_TAPS - 1) as f64 / 2.0;
    let sinc = |x: f64| if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
    let (f1, f2) = (lo / sr, (hi / sr).min(0.5));
    (0..NOISE_TAPS)
        .map(|n| {
            let t = n as f64 - m;
            let w = 0.42 - 0.5 * (2.0 * PI * n as f64 / (NOISE_TAPS - 1) as f64).cos()
                + 0.08 * (4.0 * PI * n as f64 / (NOISE_TAPS - 1) as f64).cos();
            w * (2.0 * f2 * sinc(2.0 * f2 * t) - 2.0 * f1 * sinc(2.0 * f1 * t))
        })
        .collect()
}

/// Expected analysis band energy (linear) of unit-variance white noise
/// passed through `h`, using the same window, scaling and bins as the
/// analyzer.
fn unit_band_energy(h: &[f64], lo: f64, hi: f64, sr: f64) -> f64 {
    let window = crate::repr::hann_window(WINDOW);
    let sum_w: f64 = window.iter().sum();
    let sum_w2: f64 = window.iter().map(|w| w * w).sum();
    let scale = 2.0 / sum_w;
    let mut e = 0.0;
    for k in 0..=FFT_SIZE / 2 {
        let f = k as f64 * sr / FFT_SIZE as f64;
        if f < lo || f > hi {
            continue;
        }
        let w = 2.0 * PI * f / sr;
        let (mut re, mut im) = (0.0, 0.0);
        for (n, &c) in h.iter().enumerate() {
            re += c * (w * n as f64).cos();
            im -= c * (w * n as f64).sin();
        }
        e += scale * scale * sum_w2 * (re * re + im * im);
    }
    e
}

fn fade(samples: &mut [f32], fade_ms: f64, sr: u32) {
    let n = ((fade_ms / 1000.0) * sr as f64).round() as usize;
    let n = n.min(samples.len() / 2);
    for i in 0..n {
        let g = (0.5 - 0.5 * (PI * i as f64 / n as f64).cos()) as f32;
        samples[i] *= g;
        let j = samples.len() - 1 - i;
        samples[j] *= g;
    }
}

/// Renders a normalized representation to audio.
///
/// Harmonic `n` runs an oscillator with cumulative phase at `n * f0`, its
/// amplitude linearly interpolated between frame centers; partials at or
/// above Nyquist stay silent. Band noise is shaped by [`NOISE_TAPS`]-tap
/// band-pass filters at the note's ERB edges with gains calibrated so
/// re-analysis recovers the band energies. The result is scaled to
/// [`CLIP_PEAK`] only if it would clip.
pub fn synthesize(repr: &NoteRepresentation, stats: &NormalizationStats, cfg: &RenderConfig) -> Result<Vec<f32>> {
    if repr.frames == 0 {
        return Err(SynthError::EmptyRepresentation);
    }
    let raw = stats.denormalize(repr)?;
    let frames = raw.frames;
    let sr = cfg.sample_rate as f64;
    let len = render_len(frames);
    let gated = |db: f64| db <= stats.log_floor_db + GATE_DB;

    let f0_points: Vec<f64> = (0..frames).map(|i| raw.row(i)[0].exp()).collect();
    let f0 = interpolate(&f0_points, len, false);
    let mut out = vec![0.0f64; len];

    for n in 1..=N_HARMONICS {
        let amps: Vec<f64> = (0..frames)
            .map(|i| {
                let db = raw.row(i)[n];
                if gated(db) {
                    0.0
                } else {
                    db_to_amp(db)
                }
            })
            .collect();
        if amps.iter().all(|&a| a == 0.0) {
            continue;
        }
        let amp = interpolate(&amps, len, true);
        let mut phase = 0.0f64;
        for t in 0..len {
            let f = n as f64 * f0[t];
            if f < sr / 2.0 {
                out[t] += amp[t] * phase.sin();
            }
            phase += 2.0 * PI * f / sr;
            if phase > 2.0 * PI {
                phase -= 2.0 * PI;
            }
        }
    }

    if cfg.noise_enabled {
        let edges = note_band_edges(median(f0_points.clone()), cfg.sample_rate);
        if let Some(edges) = edges {
            for b in 0..N_BANDS {
                let c = 1 + N_HARMONICS + b;
                let h = bandpass(edges[b], edges[b + 1], sr);
                let unit = unit_band_energy(&h, edges[b], edges[b + 1], sr);
                let gains: Vec<f64> = (0..frames)
                    .map(|i| {
                        let db = raw.row(i)[c];
                        if gated(db) || unit <= 0.0 {
                            0.0
                        } else {
                            (10f64.powf(db / 10.0) / unit).sqrt()
                        }
                    })
                    .collect();
                if gains.iter().all(|&g| g == 0.0) {
                    continue;
                }
                let gain = interpolate(&gains, len, true);
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed);
                rng.set_stream(b as u64 + 1);
                let white: Vec<f64> = (0..len + NOISE_TAPS - 1).map(|_| StandardNormal.sample(&mut rng)).collect();
                for t in 0..len {
                    let seg = &white[t..t + NOISE_TAPS];
                    let y: f64 = seg.iter().zip(h.iter().rev()).map(|(x, k)| x * k).sum();
                    out[t] += gain[t] * y;
                }
            }
        }
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let k = if peak > 1.0 { CLIP_PEAK as f64 / peak } else { 1.0 };
    let mut samples: Vec<f32> = out.iter().map(|v| (v * k) as f32).collect();
    if cfg.fade_ms > 0.0 {
        fade(&mut samples, cfg.fade_ms, cfg.sample_rate);
    }
    debug_assert_eq!(N_CHANNELS, 12);
    Ok(samples)
}
