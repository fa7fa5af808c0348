//! Frame spectra and the harmonic / band measurements taken from them.

use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};

use crate::{FFT_SIZE, N_BANDS, N_HARMONICS};

/// Magnitude spectrum of one frame, bins `0..=FFT_SIZE/2`.
///
/// Magnitudes are amplitude-calibrated: a stationary sinusoid of amplitude
/// `A` centered on a bin reads `A` at that bin.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSpectrum {
    pub magnitudes: Vec<f64>,
    pub bin_frequencies: Vec<f64>,
}

impl FrameSpectrum {
    pub fn bin_width(&self) -> f64 {
        self.bin_frequencies[1] - self.bin_frequencies[0]
    }

    pub fn nyquist(&self) -> f64 {
        *self.bin_frequencies.last().unwrap()
    }

    /// Builds a spectrum on the standard bin grid from raw magnitudes.
    pub fn from_magnitudes(magnitudes: Vec<f64>, sample_rate: u32) -> Self {
        let n_fft = 2 * (magnitudes.len() - 1);
        let bin_frequencies = (0..magnitudes.len())
            .map(|k| k as f64 * sample_rate as f64 / n_fft as f64)
            .collect();
        Self {
            magnitudes,
            bin_frequencies,
        }
    }
}

/// Hann-windowed, zero-padded DFT with a cached plan.
pub struct SpectrumAnalyzer {
    window: Vec<f64>,
    scale: f64,
    sample_rate: u32,
    fft: Arc<dyn Fft<f64>>,
}

impl SpectrumAnalyzer {
    pub fn new(frame_len: usize, sample_rate: u32) -> Self {
        assert!(frame_len > 1 && frame_len <= FFT_SIZE);
        let window = hann(frame_len);
        let scale = 2.0 / window.iter().sum::<f64>();
        let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
        Self {
            window,
            scale,
            sample_rate,
            fft,
        }
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Factor converting raw DFT magnitudes to calibrated amplitudes.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn analyze(&self, frame: &[f32]) -> FrameSpectrum {
        assert_eq!(frame.len(), self.window.len(), "frame length");
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
            b.re = x as f64 * w;
        }
        self.fft.process(&mut buf);
        let magnitudes = buf[..=FFT_SIZE / 2]
            .iter()
            .map(|c| c.norm() * self.scale)
            .collect();
        FrameSpectrum::from_magnitudes(magnitudes, self.sample_rate)
    }
}

/// Symmetric Hann window.
pub(crate) fn hann(n: usize) -> Vec<f64> {
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
        .collect()
}

/// One-shot spectrum of a frame at the given sample rate.
pub fn compute_spectrum(frame: &[f32], sample_rate: u32) -> FrameSpectrum {
    SpectrumAnalyzer::new(frame.len(), sample_rate).analyze(frame)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harmonic {
    pub frequency: f64,
    /// At or above Nyquist; such partials are read as the log floor.
    pub above_nyquist: bool,
}

/// The first `n` integer multiples of `f0`.
pub fn harmonic_frequencies(f0: f64, n: usize, sample_rate: u32) -> Vec<Harmonic> {
    assert!(f0 > 0.0, "f0 must be positive");
    let nyquist = sample_rate as f64 / 2.0;
    (1..=n)
        .map(|k| {
            let frequency = k as f64 * f0;
            Harmonic {
                frequency,
                above_nyquist: frequency >= nyquist,
            }
        })
        .collect()
}

fn to_db(m: f64) -> f64 {
    20.0 * m.max(1e-12).log10()
}

/// Log-amplitude (dB) of harmonics 1..=7, read off the spectrum with
/// quadratic interpolation of the dB peak around each `n * f0`.
pub fn harmonic_log_amplitudes(spec: &FrameSpectrum, f0: f64, floor_db: f64) -> [f64; N_HARMONICS] {
    let mut out = [floor_db; N_HARMONICS];
    let nyquist = spec.nyquist();
    let width = spec.bin_width();
    let last = spec.magnitudes.len() - 1;
    let mags = &spec.magnitudes;
    for (n, slot) in out.iter_mut().enumerate() {
        let f = (n + 1) as f64 * f0;
        if f >= nyquist {
            continue;
        }
        let center = ((f / width).round() as usize).clamp(1, last - 1);
        let peak = [center - 1, center, center + 1]
            .into_iter()
            .filter(|&k| k >= 1 && k < last)
            .max_by(|&a, &b| mags[a].total_cmp(&mags[b]))
            .unwrap_or(center);
        let (a, b, c) = (to_db(mags[peak - 1]), to_db(mags[peak]), to_db(mags[peak + 1]));
        let denom = a - 2.0 * b + c;
        let db = if denom < 0.0 {
            let p = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
            b - 0.25 * (a - c) * p
        } else {
            b
        };
        *slot = db.max(floor_db);
    }
    out
}

/// Log-energy (dB) per band. Band `i` collects bins in `[edges[i], edges[i+1])`;
/// the last band is closed on the right so Nyquist is included.
pub fn band_energies(spec: &FrameSpectrum, edges: &[f64], floor_db: f64) -> [f64; N_BANDS] {
    assert_eq!(edges.len(), N_BANDS + 1, "expected {} band edges", N_BANDS + 1);
    let mut energy = [0.0f64; N_BANDS];
    for (&f, &m) in spec.bin_frequencies.iter().zip(&spec.magnitudes) {
        if f < edges[0] || f > edges[N_BANDS] {
            continue;
        }
        let band = edges[1..N_BANDS].iter().take_while(|&&e| f >= e).count();
        energy[band] += m * m;
    }
    energy.map(|e| {
        if e > 0.0 {
            (10.0 * e.log10()).max(floor_db)
        } else {
            floor_db
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{repr::erb_band_edges, LOG_FLOOR_DB, SAMPLE_RATE, WINDOW};
    use std::f64::consts::PI;

    fn tone(partials: &[(f64, f64)]) -> Vec<f32> {
        (0..WINDOW)
            .map(|i| {
                let t = i as f64 / SAMPLE_RATE as f64;
                partials.iter().map(|(f, a)| a * (2.0 * PI * f * t).sin()).sum::<f64>() as f32
            })
            .collect()
    }

    #[test]
    fn zero_frame_is_zero() {
        let s = compute_spectrum(&[0.0; WINDOW], SAMPLE_RATE);
        assert_eq!(s.magnitudes.len(), 513);
        assert!(s.magnitudes.iter().all(|&m| m == 0.0));
        assert_eq!(s.bin_frequencies[1], 15.625);
        assert_eq!(s.nyquist(), 8000.0);
    }

    #[test]
    fn impulse_is_flat_and_scaled_by_window() {
        let pos = 345;
        let mut frame = vec![0.0f32; WINDOW];
        frame[pos] = 1.0;
        let an = SpectrumAnalyzer::new(WINDOW, SAMPLE_RATE);
        let s = an.analyze(&frame);
        // direct evaluation: |sum_n x_n w_n e^{-i...}| = w_pos for an impulse
        let expected = an.window()[pos] * an.scale();
        for m in &s.magnitudes {
            assert!((m - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_peaks_at_nearest_bin() {
        let s = compute_spectrum(&tone(&[(440.0, 1.0)]), SAMPLE_RATE);
        let k = s
            .magnitudes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(k, (440.0f64 / 15.625).round() as usize);
    }

    #[test]
    fn harmonic_grid() {
        let h: Vec<f64> = harmonic_frequencies(220.0, 7, SAMPLE_RATE).iter().map(|h| h.frequency).collect();
        assert_eq!(h, vec![220.0, 440.0, 660.0, 880.0, 1100.0, 1320.0, 1540.0]);
        let unit: Vec<f64> = harmonic_frequencies(1.0, 7, SAMPLE_RATE).iter().map(|h| h.frequency).collect();
        assert_eq!(unit, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let flags: Vec<bool> = harmonic_frequencies(2100.0, 7, SAMPLE_RATE).iter().map(|h| h.above_nyquist).collect();
        assert_eq!(flags, vec![false, false, false, true, true, true, true]);
    }

    #[test]
    fn known_amplitudes_are_recovered() {
        let amps = [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625];
        for f0 in [110.0, 220.0, 347.0, 440.0, 880.0] {
            let partials: Vec<(f64, f64)> = amps.iter().enumerate().map(|(n, &a)| ((n + 1) as f64 * f0, a)).collect();
            let s = compute_spectrum(&tone(&partials), SAMPLE_RATE);
            let db = harmonic_log_amplitudes(&s, f0, LOG_FLOOR_DB);
            for (n, &a) in amps.iter().enumerate() {
                let truth = 20.0 * f64::log10(a);
                assert!((db[n] - truth).abs() < 0.5, "f0 {f0} h{} {} vs {truth}", n + 1, db[n]);
            }
        }
    }

    #[test]
    fn zero_spectrum_reads_floor() {
        let s = compute_spectrum(&[0.0; WINDOW], SAMPLE_RATE);
        assert_eq!(harmonic_log_amplitudes(&s, 220.0, LOG_FLOOR_DB), [LOG_FLOOR_DB; 7]);
        let e = erb_band_edges(1760.0, 8000.0, 4).unwrap();
        assert_eq!(band_energies(&s, &e, LOG_FLOOR_DB), [LOG_FLOOR_DB; 4]);
    }

    #[test]
    fn lone_fundamental_leaves_upper_harmonics_at_floor() {
        let s = compute_spectrum(&tone(&[(440.0, 1.0)]), SAMPLE_RATE);
        let db = harmonic_log_amplitudes(&s, 440.0, LOG_FLOOR_DB);
        assert!(db[0].abs() < 0.5);
        for h in &db[1..] {
            assert!(*h <= LOG_FLOOR_DB + 3.0, "{h}");
        }
    }

    #[test]
    fn band_energy_concentrates_in_the_tone_band() {
        let e = erb_band_edges(1760.0, 8000.0, 4).unwrap();
        let center = crate::repr::erb_rate_to_hz(0.5 * (crate::repr::erb_rate(e[1]) + crate::repr::erb_rate(e[2])));
        let s = compute_spectrum(&tone(&[(center, 0.5)]), SAMPLE_RATE);
        let b = band_energies(&s, &e, LOG_FLOOR_DB);
        for (i, v) in b.iter().enumerate() {
            if i != 1 {
                assert!(b[1] - v >= 30.0, "{b:?}");
            }
        }
        // linear share of the containing band
        let lin: Vec<f64> = b.iter().map(|d| 10f64.powf(d / 10.0)).collect();
        assert!(lin[1] / lin.iter().sum::<f64>() >= 0.99);
    }

    #[test]
    fn symmetric_tones_have_equal_band_energy() {
        let e = erb_band_edges(1760.0, 8000.0, 4).unwrap();
        let mid = |i: usize| crate::repr::erb_rate_to_hz(0.5 * (crate::repr::erb_rate(e[i]) + crate::repr::erb_rate(e[i + 1])));
        let s = compute_spectrum(&tone(&[(mid(0), 0.3), (mid(2), 0.3)]), SAMPLE_RATE);
        let b = band_energies(&s, &e, LOG_FLOOR_DB);
        assert!((b[0] - b[2]).abs() < 1.0, "{b:?}");
    }
}
