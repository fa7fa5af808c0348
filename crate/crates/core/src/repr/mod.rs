//! The compact per-note representation.
//!
//! Every analysis frame is reduced to 12 numbers:
//!
//! | channel | content                                   | physical unit |
//! |---------|-------------------------------------------|---------------|
//! | 0       | fundamental frequency                     | ln(Hz)        |
//! | 1..=7   | log-amplitude of harmonics 1..7           | dB            |
//! | 8..=11  | log-energy of four ERB bands above them   | dB            |
//!
//! [`RawRepresentation`] holds the physical values; [`NoteRepresentation`]
//! holds the `[0, 1]` form produced by [`NormalizationStats`].

mod erb;
mod frames;
mod io;
mod pitch;
mod spectrum;
mod stats;

pub use erb::{erb_band_edges, erb_rate, erb_rate_to_hz};
pub use frames::{frame_count, frame_signal};
pub use io::{decode_repr, encode_repr, read_repr, write_repr, TSR_MAGIC};
pub use pitch::{estimate_f0, PitchConfig};
pub use spectrum::{
    band_energies, compute_spectrum, harmonic_frequencies, harmonic_log_amplitudes, FrameSpectrum,
    Harmonic, SpectrumAnalyzer,
};
pub use stats::NormalizationStats;
pub(crate) use spectrum::hann as hann_window;

use thiserror::Error;

use crate::{
    F0_MAX, F0_MIN, HOP, LOG_FLOOR_DB, N_BANDS, N_CHANNELS, N_HARMONICS, SAMPLE_RATE, WINDOW,
};

#[derive(Debug, Error)]
pub enum ReprError {
    #[error("input has {len} samples, fewer than the {window}-sample window")]
    InputTooShort { len: usize, window: usize },
    #[error("no frame shows a periodicity peak above the voicing threshold")]
    UnvoicedNote,
    #[error("invalid band range: lo={lo} Hz, hi={hi} Hz")]
    InvalidBandRange { lo: f64, hi: f64 },
    #[error("normalization stats mismatch: expected {expected}, found {found}")]
    UnknownStats { expected: String, found: String },
    #[error("invalid note: {0}")]
    InvalidNote(String),
    #[error("bad magic bytes in representation file")]
    BadMagic,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ReprError> = std::result::Result<T, E>;

/// A monophonic note as read from disk or generated.
#[derive(Debug, Clone)]
pub struct AudioNote {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub pitch_hint: Option<f64>,
    pub note_id: String,
    pub family: String,
}

impl AudioNote {
    pub fn new(
        note_id: impl Into<String>,
        family: impl Into<String>,
        samples: Vec<f32>,
        sample_rate: u32,
        pitch_hint: Option<f64>,
    ) -> Result<Self> {
        let note = Self {
            samples,
            sample_rate,
            pitch_hint,
            note_id: note_id.into(),
            family: family.into(),
        };
        note.validate()?;
        Ok(note)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(ReprError::InvalidNote("sample rate is zero".into()));
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(ReprError::InvalidNote(format!("sample {i} is not finite")));
        }
        if let Some(p) = self.pitch_hint {
            if !(F0_MIN..=F0_MAX).contains(&p) {
                return Err(ReprError::InvalidNote(format!(
                    "pitch hint {p} Hz outside [{F0_MIN}, {F0_MAX}]"
                )));
            }
        }
        Ok(())
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }
}

/// Per-frame values in physical units (ln Hz, dB), `frames x 12` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRepresentation {
    pub frames: usize,
    pub values: Vec<f64>,
}

impl RawRepresentation {
    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * N_CHANNELS..(frame + 1) * N_CHANNELS]
    }

    pub fn f0_hz(&self, frame: usize) -> f64 {
        self.row(frame)[0].exp()
    }

    /// Median fundamental over all frames, in Hz.
    pub fn median_f0(&self) -> f64 {
        median((0..self.frames).map(|i| self.f0_hz(i)).collect())
    }

    /// Center-crops or pads (repeating the last frame) to `target` frames.
    pub fn canonicalize(&self, target: usize) -> RawRepresentation {
        let mut values = Vec::with_capacity(target * N_CHANNELS);
        if self.frames >= target {
            let start = (self.frames - target) / 2;
            values.extend_from_slice(&self.values[start * N_CHANNELS..(start + target) * N_CHANNELS]);
        } else {
            values.extend_from_slice(&self.values);
            let last = self.row(self.frames - 1).to_vec();
            for _ in self.frames..target {
                values.extend_from_slice(&last);
            }
        }
        RawRepresentation { frames: target, values }
    }
}

/// Normalized `frames x 12` matrix, the model's input and output.
#[derive(Debug, Clone, PartialEq)]
pub struct NoteRepresentation {
    pub frames: usize,
    pub values: Vec<f32>,
    pub norm_stats_id: String,
}

impl NoteRepresentation {
    pub fn new(frames: usize, values: Vec<f32>, norm_stats_id: impl Into<String>) -> Result<Self> {
        if frames == 0 || values.len() != frames * N_CHANNELS {
            return Err(ReprError::ShapeMismatch(format!(
                "{} values for {frames} frames x {N_CHANNELS} channels",
                values.len()
            )));
        }
        Ok(Self {
            frames,
            values,
            norm_stats_id: norm_stats_id.into(),
        })
    }

    pub fn channels(&self) -> usize {
        N_CHANNELS
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        &self.values[frame * N_CHANNELS..(frame + 1) * N_CHANNELS]
    }

    pub fn get(&self, frame: usize, channel: usize) -> f32 {
        self.values[frame * N_CHANNELS + channel]
    }
}

pub(crate) fn median(mut xs: Vec<f64>) -> f64 {
    assert!(!xs.is_empty());
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// ERB band edges used for a note whose median fundamental is `median_f0`.
///
/// The bands start just above the 7th harmonic and run to Nyquist. Returns
/// `None` when that range is empty (fundamentals above ~1 kHz at 16 kHz).
pub fn note_band_edges(median_f0: f64, sample_rate: u32) -> Option<Vec<f64>> {
    let lo = (N_HARMONICS as f64 + 1.0) * median_f0;
    let hi = sample_rate as f64 / 2.0;
    erb_band_edges(lo, hi, N_BANDS).ok()
}

/// Runs the full analysis on a note and returns every frame in physical
/// units. Frame count follows [`frame_count`] (no tail padding).
pub fn analyze_note(note: &AudioNote) -> Result<RawRepresentation> {
    note.validate()?;
    let frames = frame_signal(&note.samples, WINDOW, HOP)?;
    let f0s = estimate_f0(note)?;
    let median_f0 = median(f0s.clone());
    let edges = note_band_edges(median_f0, note.sample_rate);

    let analyzer = SpectrumAnalyzer::new(WINDOW, note.sample_rate);
    let mut values = Vec::with_capacity(frames.len() * N_CHANNELS);
    for (frame, &f0) in frames.iter().zip(&f0s) {
        let spec = analyzer.analyze(frame);
        values.push(f0.ln());
        values.extend(harmonic_log_amplitudes(&spec, f0, LOG_FLOOR_DB));
        match &edges {
            Some(e) => values.extend(band_energies(&spec, e, LOG_FLOOR_DB)),
            None => values.extend([LOG_FLOOR_DB; N_BANDS]),
        }
    }
    Ok(RawRepresentation {
        frames: frames.len(),
        values,
    })
}

/// Analysis, frame canonicalization and normalization in one step.
pub fn extract_representation(
    note: &AudioNote,
    stats: &NormalizationStats,
    target_frames: usize,
) -> Result<NoteRepresentation> {
    let raw = analyze_note(note)?.canonicalize(target_frames);
    Ok(stats.normalize(&raw))
}

/// Default sample rate as `f64`, convenient for frequency arithmetic.
pub fn default_nyquist() -> f64 {
    SAMPLE_RATE as f64 / 2.0
}
