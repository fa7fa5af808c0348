//! YIN-style fundamental frequency tracking.

use super::{frame_signal, AudioNote, ReprError, Result};
use crate::{F0_MAX, F0_MIN, HOP, WINDOW};

#[derive(Debug, Clone, Copy)]
pub struct PitchConfig {
    pub min_hz: f64,
    pub max_hz: f64,
    /// Minimum periodicity (one minus the cumulative mean normalized
    /// difference) for a frame to count as voiced.
    pub voicing_threshold: f64,
    /// Absolute threshold for the first-dip rule in the unguided search.
    pub dip_threshold: f64,
    /// Half-width of the guided search around a pitch hint, in semitones.
    pub hint_semitones: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        Self {
            min_hz: F0_MIN,
            max_hz: F0_MAX,
            voicing_threshold: 0.3,
            dip_threshold: 0.15,
            hint_semitones: 1.0,
        }
    }
}

/// Per-frame f0 in Hz, one value per analysis frame of the note.
///
/// With a pitch hint the lag search is restricted to one semitone around the
/// hint; otherwise the full 80 Hz - 2.1 kHz range is searched with the YIN
/// first-dip rule. Unvoiced frames inherit the nearest voiced estimate.
pub fn estimate_f0(note: &AudioNote) -> Result<Vec<f64>> {
    estimate_f0_with(note, &PitchConfig::default())
}

pub fn estimate_f0_with(note: &AudioNote, cfg: &PitchConfig) -> Result<Vec<f64>> {
    let frames = frame_signal(&note.samples, WINDOW, HOP)?;
    let sr = note.sample_rate as f64;
    let max_lag = (sr / cfg.min_hz).ceil() as usize + 1;
    let integration = WINDOW.saturating_sub(max_lag).max(1);

    let (lo_lag, hi_lag, first_dip) = match note.pitch_hint {
        Some(hint) => {
            let ratio = 2f64.powf(cfg.hint_semitones / 12.0);
            let lo = (sr / (hint * ratio)).floor().max(2.0) as usize;
            let hi = ((sr / (hint / ratio)).ceil() as usize).min(max_lag - 1);
            (lo, hi, false)
        }
        None => (
            ((sr / cfg.max_hz).floor() as usize).max(2),
            (sr / cfg.min_hz).ceil() as usize,
            true,
        ),
    };

    let mut diff = vec![0.0f64; hi_lag + 2];
    let mut cmnd = vec![1.0f64; hi_lag + 2];
    let estimates: Vec<Option<f64>> = frames
        .iter()
        .map(|frame| {
            difference(frame, integration, &mut diff);
            cumulative_mean_normalize(&diff, &mut cmnd);
            let lag = pick_lag(&cmnd, lo_lag, hi_lag, first_dip, cfg.dip_threshold);
            let periodicity = 1.0 - cmnd[lag];
            if periodicity <= cfg.voicing_threshold {
                return None;
            }
            let refined = parabolic_lag(&diff, lag);
            Some((sr / refined).clamp(cfg.min_hz, cfg.max_hz))
        })
        .collect();

    fill_unvoiced(&estimates).ok_or(ReprError::UnvoicedNote)
}

fn difference(frame: &[f32], integration: usize, out: &mut [f64]) {
    for (lag, d) in out.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for j in 0..integration.min(frame.len() - lag.min(frame.len())) {
            let delta = frame[j] as f64 - frame[j + lag] as f64;
            acc += delta * delta;
        }
        *d = acc;
    }
}

fn cumulative_mean_normalize(diff: &[f64], out: &mut [f64]) {
    out[0] = 1.0;
    let mut running = 0.0;
    for lag in 1..diff.len() {
        running += diff[lag];
        out[lag] = if running > 0.0 {
            diff[lag] * lag as f64 / running
        } else {
            1.0
        };
    }
}

fn pick_lag(cmnd: &[f64], lo: usize, hi: usize, first_dip: bool, threshold: f64) -> usize {
    if first_dip {
        if let Some(mut lag) = (lo..=hi).find(|&l| cmnd[l] < threshold) {
            while lag < hi && cmnd[lag + 1] < cmnd[lag] {
                lag += 1;
            }
            return lag;
        }
    }
    (lo..=hi)
        .min_by(|&a, &b| cmnd[a].total_cmp(&cmnd[b]))
        .unwrap_or(lo)
}

fn parabolic_lag(cmnd: &[f64], lag: usize) -> f64 {
    if lag < 1 || lag + 1 >= cmnd.len() {
        return lag as f64;
    }
    let (a, b, c) = (cmnd[lag - 1], cmnd[lag], cmnd[lag + 1]);
    let denom = a - 2.0 * b + c;
    if denom <= 0.0 {
        return lag as f64;
    }
    lag as f64 + (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
}

fn fill_unvoiced(est: &[Option<f64>]) -> Option<Vec<f64>> {
    let first = est.iter().flatten().next().copied()?;
    let mut out = Vec::with_capacity(est.len());
    let mut last = first;
    for e in est {
        if let Some(v) = e {
            last = *v;
        }
        out.push(last);
    }
    // leading unvoiced frames take the first voiced value, which `last`
    // started from, so the forward pass is sufficient
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SAMPLE_RATE;
    use std::f64::consts::PI;

    fn tone(freqs: &[(f64, f64)], secs: f64) -> Vec<f32> {
        let n = (secs * SAMPLE_RATE as f64) as usize;
        (0..n)
            .map(|i| {
                let t = i as f64 / SAMPLE_RATE as f64;
                freqs.iter().map(|(f, a)| a * (2.0 * PI * f * t).sin()).sum::<f64>() as f32
            })
            .collect()
    }

    fn note(samples: Vec<f32>, hint: Option<f64>) -> AudioNote {
        AudioNote::new("t", "test", samples, SAMPLE_RATE, hint).unwrap()
    }

    #[test]
    fn pure_440_is_tracked_within_one_hz() {
        let f0 = estimate_f0(&note(tone(&[(440.0, 0.5)], 1.0), None)).unwrap();
        assert!(!f0.is_empty());
        for f in &f0 {
            assert!((f - 440.0).abs() < 1.0, "{f}");
        }
    }

    #[test]
    fn hint_agrees_with_unguided_search() {
        let x = tone(&[(440.0, 0.5)], 1.0);
        let free = estimate_f0(&note(x.clone(), None)).unwrap();
        let hinted = estimate_f0(&note(x, Some(440.0))).unwrap();
        for (a, b) in free.iter().zip(&hinted) {
            assert!((a - b).abs() < 0.5);
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let r = estimate_f0(&note(vec![0.0; 16000], None));
        assert!(matches!(r, Err(ReprError::UnvoicedNote)));
    }

    #[test]
    fn harmonic_tone_does_not_jump_octaves() {
        let partials: Vec<(f64, f64)> = (1..=7).map(|n| (110.0 * n as f64, 0.3 / n as f64)).collect();
        let f0 = estimate_f0(&note(tone(&partials, 0.5), None)).unwrap();
        for f in &f0 {
            assert!((f - 110.0).abs() < 1.0, "{f}");
        }
    }

    #[test]
    fn extremes_of_range() {
        for f in [82.0, 2000.0] {
            let est = estimate_f0(&note(tone(&[(f, 0.5)], 0.5), None)).unwrap();
            for e in &est {
                assert!((e - f).abs() / f < 0.01, "{f}: {e}");
            }
        }
    }

    #[test]
    fn unvoiced_frames_are_filled() {
        let filled = fill_unvoiced(&[None, Some(2.0), None, Some(3.0)]).unwrap();
        assert_eq!(filled, vec![2.0, 2.0, 2.0, 3.0]);
        assert!(fill_unvoiced(&[None, None]).is_none());
    }
}
