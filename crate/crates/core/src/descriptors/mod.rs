//! Spectral centroid and attack time.
//!
//! Audio-domain measurements live here; [`proxy`] recomputes both from a
//! normalized representation with analytic gradients so they can be used
//! inside the training loss.

pub mod proxy;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::repr::{frame_signal, AudioNote, ReprError, SpectrumAnalyzer};
use crate::{HOP, WINDOW};

pub use proxy::{attack_from_repr, centroid_from_repr, ProxyConfig, ProxyOutput};

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("spectrum has zero total magnitude in the requested band")]
    ZeroMagnitude,
    #[error("energy envelope is silent")]
    SilentNote,
    #[error("bin range [{b1}, {b2}] invalid for {bins} bins")]
    InvalidBins { b1: usize, b2: usize, bins: usize },
    #[error(transparent)]
    Repr(#[from] ReprError),
}

pub type Result<T, E = DescriptorError> = std::result::Result<T, E>;

/// Physical and normalized descriptors of one note.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimbreDescriptors {
    pub centroid: f64,
    pub attack: f64,
    pub centroid_norm: f64,
    pub attack_norm: f64,
}

impl TimbreDescriptors {
    pub fn new(centroid: f64, attack: f64, stats: &DescriptorStats) -> Self {
        Self {
            centroid,
            attack,
            centroid_norm: stats.normalize_centroid(centroid),
            attack_norm: stats.normalize_attack(attack),
        }
    }

    pub fn normalized(&self) -> [f64; 2] {
        [self.centroid_norm, self.attack_norm]
    }
}

/// Training-split extrema used to map descriptors onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorStats {
    pub centroid_min: f64,
    pub centroid_max: f64,
    pub attack_min: f64,
    pub attack_max: f64,
}

impl DescriptorStats {
    /// Fits extrema over `(centroid, attack)` pairs. Degenerate ranges are
    /// widened so that `max > min` always holds.
    pub fn fit(pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let (mut cmin, mut cmax, mut amin, mut amax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (c, a) in pairs {
            cmin = cmin.min(c);
            cmax = cmax.max(c);
            amin = amin.min(a);
            amax = amax.max(a);
        }
        if !cmin.is_finite() {
            (cmin, cmax, amin, amax) = (0.0, 1.0, 0.0, 1.0);
        }
        if cmax - cmin < 1e-6 {
            cmax = cmin + 1.0;
        }
        if amax - amin < 1e-6 {
            amax = amin + crate::hop_seconds();
        }
        Self {
            centroid_min: cmin,
            centroid_max: cmax,
            attack_min: amin,
            attack_max: amax,
        }
    }

    pub fn normalize_centroid(&self, hz: f64) -> f64 {
        ((hz - self.centroid_min) / (self.centroid_max - self.centroid_min)).clamp(0.0, 1.0)
    }

    pub fn normalize_attack(&self, s: f64) -> f64 {
        ((s - self.attack_min) / (self.attack_max - self.attack_min)).clamp(0.0, 1.0)
    }

    pub fn denormalize_centroid(&self, v: f64) -> f64 {
        self.centroid_min + v * (self.centroid_max - self.centroid_min)
    }

    pub fn denormalize_attack(&self, v: f64) -> f64 {
        self.attack_min + v * (self.attack_max - self.attack_min)
    }
}

/// Magnitude-weighted mean frequency over bins `b1..=b2`.
pub fn spectral_centroid(spec: &crate::repr::FrameSpectrum, b1: usize, b2: usize) -> Result<f64> {
    let bins = spec.magnitudes.len();
    if b1 > b2 || b2 >= bins {
        return Err(DescriptorError::InvalidBins { b1, b2, bins });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for k in b1..=b2 {
        num += spec.bin_frequencies[k] * spec.magnitudes[k];
        den += spec.magnitudes[k];
    }
    if den <= 0.0 {
        return Err(DescriptorError::ZeroMagnitude);
    }
    Ok(num / den)
}

/// Per-frame RMS with a rectangular window.
pub fn energy_envelope(samples: &[f32], window: usize, hop: usize) -> Result<Vec<f64>> {
    Ok(frame_signal(samples, window, hop)?
        .iter()
        .map(|f| (f.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>() / f.len() as f64).sqrt())
        .collect())
}

/// Time between the first crossings of `lo_frac * max` and `hi_frac * max`,
/// each located by linear interpolation between neighbouring frames.
pub fn attack_time(envelope: &[f64], hop_seconds: f64, lo_frac: f64, hi_frac: f64) -> Result<f64> {
    let max = envelope.iter().copied().fold(0.0, f64::max);
    if envelope.is_empty() || max <= 0.0 {
        return Err(DescriptorError::SilentNote);
    }
    let lo = proxy::crossing_time(envelope, lo_frac, 0.0, hop_seconds).0;
    let hi = proxy::crossing_time(envelope, hi_frac, 0.0, hop_seconds).0;
    Ok((hi - lo).max(0.0))
}

/// Physical descriptors of a note: energy-weighted mean of the per-frame
/// spectral centroids (bins 1 to Nyquist) and the 10-90 % attack time of
/// the RMS envelope.
pub fn measure_note(note: &AudioNote) -> Result<(f64, f64)> {
    note.validate()?;
    let frames = frame_signal(&note.samples, WINDOW, HOP)?;
    let analyzer = SpectrumAnalyzer::new(WINDOW, note.sample_rate);
    let (mut num, mut den) = (0.0, 0.0);
    for frame in &frames {
        let spec = analyzer.analyze(frame);
        let energy: f64 = spec.magnitudes[1..].iter().map(|m| m * m).sum();
        if energy <= 0.0 {
            continue;
        }
        let c = spectral_centroid(&spec, 1, spec.magnitudes.len() - 1)?;
        num += energy * c;
        den += energy;
    }
    if den <= 0.0 {
        return Err(DescriptorError::ZeroMagnitude);
    }
    let hop_s = HOP as f64 / note.sample_rate as f64;
    let env = energy_envelope(&note.samples, WINDOW, HOP)?;
    let attack = attack_time(&env, hop_s, 0.1, 0.9)?;
    Ok((num / den, attack))
}

pub fn note_descriptors(note: &AudioNote, stats: &DescriptorStats) -> Result<TimbreDescriptors> {
    let (c, a) = measure_note(note)?;
    Ok(TimbreDescriptors::new(c, a, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repr::{compute_spectrum, FrameSpectrum};
    use crate::SAMPLE_RATE;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const HOP_S: f64 = 172.0 / 16000.0;

    fn spectrum_with(bins: &[(usize, f64)]) -> FrameSpectrum {
        let mut m = vec![0.0; 513];
        for &(k, v) in bins {
            m[k] = v;
        }
        FrameSpectrum::from_magnitudes(m, SAMPLE_RATE)
    }

    fn harmonic_note(f0: f64, amps: &[f64], onset_s: f64, secs: f64) -> AudioNote {
        let n = (secs * SAMPLE_RATE as f64) as usize;
        let norm: f64 = amps.iter().sum();
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / SAMPLE_RATE as f64;
                let env = if onset_s > 0.0 { (t / onset_s).min(1.0) } else { 1.0 };
                let s: f64 = amps
                    .iter()
                    .enumerate()
                    .map(|(k, a)| a * (2.0 * PI * (k + 1) as f64 * f0 * t).sin())
                    .sum();
                (0.8 * env * s / norm) as f32
            })
            .collect();
        AudioNote::new("n", "test", samples, SAMPLE_RATE, Some(f0)).unwrap()
    }

    #[test]
    fn centroid_of_two_equal_lines() {
        let s = spectrum_with(&[(8, 1.0), (24, 1.0)]);
        assert_eq!(spectral_centroid(&s, 0, 512).unwrap(), 0.5 * (8.0 + 24.0) * 15.625);
        let s = FrameSpectrum {
            magnitudes: vec![0.0, 1.0, 0.0, 1.0],
            bin_frequencies: vec![0.0, 100.0, 200.0, 300.0],
        };
        assert_eq!(spectral_centroid(&s, 0, 3).unwrap(), 200.0);
    }

    #[test]
    fn centroid_single_line_and_zero() {
        let s = FrameSpectrum {
            magnitudes: vec![0.0, 0.0, 2.0],
            bin_frequencies: vec![0.0, 220.0, 440.0],
        };
        assert_eq!(spectral_centroid(&s, 0, 2).unwrap(), 440.0);
        let z = spectrum_with(&[]);
        assert!(matches!(spectral_centroid(&z, 1, 512), Err(DescriptorError::ZeroMagnitude)));
        assert!(matches!(spectral_centroid(&z, 5, 2), Err(DescriptorError::InvalidBins { .. })));
    }

    #[test]
    fn sawtooth_centroid_matches_direct_sum() {
        let amps: Vec<f64> = (1..=7).map(|n| 1.0 / n as f64).collect();
        let frame: Vec<f32> = (0..WINDOW)
            .map(|i| {
                let t = i as f64 / SAMPLE_RATE as f64;
                amps.iter().enumerate().map(|(k, a)| a * (2.0 * PI * 220.0 * (k + 1) as f64 * t).sin()).sum::<f64>() as f32
            })
            .collect();
        let spec = compute_spectrum(&frame, SAMPLE_RATE);
        let got = spectral_centroid(&spec, 1, 512).unwrap();
        // brute force: independent accumulation over every bin
        let mut pairs: Vec<(f64, f64)> = spec.bin_frequencies.iter().copied().zip(spec.magnitudes.iter().copied()).skip(1).collect();
        pairs.reverse();
        let oracle = pairs.iter().map(|(f, m)| f * m).sum::<f64>() / pairs.iter().map(|(_, m)| m).sum::<f64>();
        assert!((got - oracle).abs() / oracle < 0.01);
        // and the closed form over partials agrees with the spectral estimate
        let closed = amps.iter().enumerate().map(|(k, a)| 220.0 * (k + 1) as f64 * a).sum::<f64>() / amps.iter().sum::<f64>();
        assert!((got - closed).abs() / closed < 0.1, "{got} vs {closed}");
    }

    #[test]
    fn envelope_basics() {
        let env = energy_envelope(&vec![0.25; 2000], WINDOW, HOP).unwrap();
        assert!(env.iter().all(|v| (v - 0.25).abs() < 1e-12));
        let env = energy_envelope(&vec![0.0; 2000], WINDOW, HOP).unwrap();
        assert!(env.iter().all(|&v| v == 0.0));
        assert!(energy_envelope(&[0.0; 100], WINDOW, HOP).is_err());
    }

    #[test]
    fn ramped_sine_envelope_rises() {
        let secs = 1.0;
        let n = (secs * SAMPLE_RATE as f64) as usize;
        let x: Vec<f32> = (0..n)
            .map(|i| {
                let t = i as f64 / SAMPLE_RATE as f64;
                ((t / 0.6).min(1.0) * (2.0 * PI * 330.0 * t).sin()) as f32
            })
            .collect();
        let env = energy_envelope(&x, WINDOW, HOP).unwrap();
        let ramp_end = ((0.6 * SAMPLE_RATE as f64 - WINDOW as f64) / HOP as f64) as usize;
        for w in env[..ramp_end].windows(2) {
            assert!(w[1] >= w[0] - 1e-3, "{w:?}");
        }
    }

    #[test]
    fn linear_ramp_attack() {
        let frames = (2.0 / HOP_S) as usize;
        let env: Vec<f64> = (0..frames).map(|i| (i as f64 * HOP_S).min(1.0)).collect();
        let a = attack_time(&env, HOP_S, 0.1, 0.9).unwrap();
        assert!((a - 0.8).abs() <= 2.0 * HOP_S, "{a}");
    }

    #[test]
    fn instant_and_silent_envelopes() {
        assert_eq!(attack_time(&[1.0, 0.9, 0.8], HOP_S, 0.1, 0.9).unwrap(), 0.0);
        assert!(matches!(attack_time(&[0.0; 5], HOP_S, 0.1, 0.9), Err(DescriptorError::SilentNote)));
        assert!(matches!(attack_time(&[], HOP_S, 0.1, 0.9), Err(DescriptorError::SilentNote)));
    }

    #[test]
    fn pure_tone_descriptors() {
        let note = harmonic_note(440.0, &[1.0], 0.0, 1.0);
        let (c, a) = measure_note(&note).unwrap();
        assert!((c - 440.0).abs() < 5.0, "{c}");
        assert!(a <= 2.0 * HOP_S, "{a}");
    }

    #[test]
    fn half_second_onset() {
        let note = harmonic_note(440.0, &[1.0], 0.5, 1.5);
        let (_, a) = measure_note(&note).unwrap();
        assert!((a - 0.4).abs() < 0.03, "{a}");
    }

    #[test]
    fn brighter_tone_has_higher_centroid() {
        let dark: Vec<f64> = (0..7).map(|n| 10f64.powf(-12.0 * n as f64 / 20.0)).collect();
        let bright: Vec<f64> = (0..7).map(|n| 10f64.powf(-3.0 * n as f64 / 20.0)).collect();
        let (cd, _) = measure_note(&harmonic_note(220.0, &dark, 0.0, 0.5)).unwrap();
        let (cb, _) = measure_note(&harmonic_note(220.0, &bright, 0.0, 0.5)).unwrap();
        assert!(cb > cd);
    }

    #[test]
    fn stats_clamp_and_are_monotone() {
        let s = DescriptorStats::fit([(200.0, 0.1), (1200.0, 0.5)]);
        assert_eq!(s.normalize_centroid(100.0), 0.0);
        assert_eq!(s.normalize_centroid(5000.0), 1.0);
        assert!(s.normalize_centroid(400.0) < s.normalize_centroid(500.0));
        assert!((s.normalize_attack(0.3) - 0.5).abs() < 1e-12);
        let d = DescriptorStats::fit([(300.0, 0.2)]);
        assert!(d.centroid_max > d.centroid_min && d.attack_max > d.attack_min);
    }

    proptest! {
        #[test]
        fn centroid_scale_invariant_and_bounded(mags in proptest::collection::vec(0.0f64..1.0, 513), c in 0.01f64..100.0) {
            let s = FrameSpectrum::from_magnitudes(mags.clone(), SAMPLE_RATE);
            let scaled = FrameSpectrum::from_magnitudes(mags.iter().map(|m| m * c).collect(), SAMPLE_RATE);
            if let Ok(a) = spectral_centroid(&s, 1, 512) {
                let b = spectral_centroid(&scaled, 1, 512).unwrap();
                prop_assert!((a - b).abs() <= 1e-9 * a.abs());
                prop_assert!(a >= s.bin_frequencies[1] && a <= 8000.0);
            }
        }

        #[test]
        fn attack_scale_invariant(env in proptest::collection::vec(0.0f64..1.0, 2..60), c in 0.01f64..100.0) {
            if env.iter().any(|&v| v > 0.0) {
                let a = attack_time(&env, HOP_S, 0.1, 0.9).unwrap();
                let scaled: Vec<f64> = env.iter().map(|v| v * c).collect();
                let b = attack_time(&scaled, HOP_S, 0.1, 0.9).unwrap();
                prop_assert!((a - b).abs() < 1e-9);
                prop_assert!(a >= 0.0);
            }
        }
    }
}
