use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NoteRepresentation, RawRepresentation, ReprError, Result};
use crate::{F0_MAX, F0_MIN, N_CHANNELS};

/// Smallest allowed per-channel span, in channel units.
const MIN_SPAN: f64 = 1.0;

/// Per-channel affine map between physical units and `[0, 1]`.
///
/// Channel 0 always spans `[ln 80, ln 2100]`; the others are fitted on the
/// training split and frozen into the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min: [f64; N_CHANNELS],
    pub max: [f64; N_CHANNELS],
    pub log_floor_db: f64,
    pub stats_id: String,
}

impl NormalizationStats {
    pub fn new(min: [f64; N_CHANNELS], max: [f64; N_CHANNELS], log_floor_db: f64) -> Self {
        for c in 0..N_CHANNELS {
            assert!(max[c] > min[c], "channel {c}: max must exceed min");
        }
        let stats_id = content_id(&min, &max, log_floor_db);
        Self {
            min,
            max,
            log_floor_db,
            stats_id,
        }
    }

    /// Fits min/max over every frame of the given representations. Channels
    /// whose observed span is under 1 unit are widened upward.
    pub fn fit<'a>(raws: impl IntoIterator<Item = &'a RawRepresentation>, log_floor_db: f64) -> Self {
        let mut min = [f64::INFINITY; N_CHANNELS];
        let mut max = [f64::NEG_INFINITY; N_CHANNELS];
        for raw in raws {
            for row in raw.values.chunks_exact(N_CHANNELS) {
                for c in 1..N_CHANNELS {
                    min[c] = min[c].min(row[c]);
                    max[c] = max[c].max(row[c]);
                }
            }
        }
        min[0] = F0_MIN.ln();
        max[0] = F0_MAX.ln();
        for c in 1..N_CHANNELS {
            if !min[c].is_finite() {
                min[c] = log_floor_db;
                max[c] = log_floor_db;
            }
            min[c] = min[c].max(log_floor_db);
            if max[c] - min[c] < MIN_SPAN {
                max[c] = min[c] + MIN_SPAN;
            }
        }
        Self::new(min, max, log_floor_db)
    }

    pub fn span(&self, channel: usize) -> f64 {
        self.max[channel] - self.min[channel]
    }

    pub fn normalize_value(&self, channel: usize, v: f64) -> f64 {
        ((v - self.min[channel]) / self.span(channel)).clamp(0.0, 1.0)
    }

    pub fn denormalize_value(&self, channel: usize, v: f64) -> f64 {
        self.min[channel] + v.clamp(0.0, 1.0) * self.span(channel)
    }

    /// Normalizes a `frames x 12` row-major matrix.
    pub fn normalize_values(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| self.normalize_value(i % N_CHANNELS, v))
            .collect()
    }

    pub fn denormalize_values(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| self.denormalize_value(i % N_CHANNELS, v))
            .collect()
    }

    pub fn normalize(&self, raw: &RawRepresentation) -> NoteRepresentation {
        NoteRepresentation {
            frames: raw.frames,
            values: self.normalize_values(&raw.values).into_iter().map(|v| v as f32).collect(),
            norm_stats_id: self.stats_id.clone(),
        }
    }

    pub fn denormalize(&self, repr: &NoteRepresentation) -> Result<RawRepresentation> {
        self.check(repr)?;
        let values: Vec<f64> = repr.values.iter().map(|&v| v as f64).collect();
        Ok(RawRepresentation {
            frames: repr.frames,
            values: self.denormalize_values(&values),
        })
    }

    pub fn check(&self, repr: &NoteRepresentation) -> Result<()> {
        if repr.norm_stats_id != self.stats_id {
            return Err(ReprError::UnknownStats {
                expected: self.stats_id.clone(),
                found: repr.norm_stats_id.clone(),
            });
        }
        Ok(())
    }

    /// True when `stats_id` matches the content.
    pub fn is_consistent(&self) -> bool {
        self.stats_id == content_id(&self.min, &self.max, self.log_floor_db)
    }
}

fn content_id(min: &[f64], max: &[f64], floor: f64) -> String {
    let mut h = Sha256::new();
    for v in min.iter().chain(max).chain(std::iter::once(&floor)) {
        h.update(v.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}
