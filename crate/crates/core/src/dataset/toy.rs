use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusEntry, CorpusIndex, DatasetError, GroundTruth, Result, Source, Split, CORPUS_FILE};
use crate::{N_HARMONICS, SAMPLE_RATE};

/// Parameters of the synthetic harmonic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySpec {
    pub n_notes: usize,
    /// The last `n_test` notes form the test split.
    pub n_test: usize,
    pub f0_range: [f64; 2],
    /// Harmonic amplitude slope in dB per harmonic.
    pub slope_range: [f64; 2],
    /// Duration of the linear onset ramp in seconds.
    pub attack_range: [f64; 2],
    /// Time constant of the exponential decay after the onset, in seconds.
    pub decay_range: [f64; 2],
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            n_notes: 250,
            n_test: 50,
            f0_range: [110.0, 880.0],
            slope_range: [-12.0, 0.0],
            attack_range: [0.05, 1.0],
            decay_range: [0.5, 4.0],
            duration_s: 4.0,
            seed: 0,
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DatasetError::InvalidSpec(m));
        for (name, r) in [
            ("f0_range", self.f0_range),
            ("slope_range", self.slope_range),
            ("attack_range", self.attack_range),
            ("decay_range", self.decay_range),
        ] {
            if !(r[0] < r[1]) || !r[0].is_finite() || !r[1].is_finite() {
                return bad(format!("{name} must satisfy lo < hi, got {r:?}"));
            }
        }
        if self.f0_range[0] < crate::F0_MIN || self.f0_range[1] > crate::F0_MAX {
            return bad(format!("f0_range {:?} leaves [{}, {}]", self.f0_range, crate::F0_MIN, crate::F0_MAX));
        }
        if self.attack_range[0] <= 0.0 || self.decay_range[0] <= 0.0 {
            return bad("attack and decay ranges must be positive".into());
        }
        if self.attack_range[1] >= self.duration_s {
            return bad("attack ramps must end before the note does".into());
        }
        if self.n_notes == 0 || self.n_test > self.n_notes {
            return bad(format!("{} test notes out of {}", self.n_test, self.n_notes));
        }
        Ok(())
    }
}

/// Linear harmonic amplitudes `a_n = 10^(slope (n-1) / 20)`, zero for
/// partials at or above Nyquist.
fn harmonic_weights(f0: f64, slope_db: f64) -> [f64; N_HARMONICS] {
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    std::array::from_fn(|n| if (n + 1) as f64 * f0 < nyquist { 10f64.powf(slope_db * n as f64 / 20.0) } else { 0.0 })
}

/// Amplitude-weighted mean harmonic frequency.
fn closed_form_centroid(f0: f64, slope_db: f64) -> f64 {
    let a = harmonic_weights(f0, slope_db);
    let num: f64 = a.iter().enumerate().map(|(n, w)| (n + 1) as f64 * f0 * w).sum();
    num / a.iter().sum::<f64>()
}

/// Renders one toy note: zero-phase harmonics with a linear onset of
/// `attack_s` followed by exponential decay, peak at most 0.9.
pub fn toy_note(f0: f64, slope_db: f64, attack_s: f64, decay_s: f64, duration_s: f64) -> Vec<f32> {
    let sr = SAMPLE_RATE as f64;
    let a = harmonic_weights(f0, slope_db);
    let gain = 0.9 / a.iter().sum::<f64>();
    let n = (duration_s * sr).round() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let env = if t < attack_s { t / attack_s } else { (-(t - attack_s) / decay_s).exp() };
            let s: f64 = a
                .iter()
                .enumerate()
                .map(|(k, w)| w * (2.0 * PI * (k + 1) as f64 * f0 * t).sin())
                .sum();
            (gain * env * s) as f32
        })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    rng.random_range(r[0]..r[1])
}

/// Writes the toy corpus (`audio/*.wav` plus `corpus.json` with ground
/// truth) into `out` and returns its index.
///
/// Families are the quadrants of slope and onset duration around the
/// middle of their ranges: `bright`/`dark` by slope, `fast`/`slow` by onset.
pub fn toy_generate(spec: &ToySpec, out: impl AsRef<Path>) -> Result<CorpusIndex> {
    spec.validate()?;
    let out = out.as_ref();
    std::fs::create_dir_all(out.join("audio"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let slope_mid = 0.5 * (spec.slope_range[0] + spec.slope_range[1]);
    let attack_mid = 0.5 * (spec.attack_range[0] + spec.attack_range[1]);
    let mut entries = Vec::with_capacity(spec.n_notes);
    for i in 0..spec.n_notes {
        let f0 = uniform(&mut rng, [spec.f0_range[0].ln(), spec.f0_range[1].ln()]).exp();
        let slope = uniform(&mut rng, spec.slope_range);
        let attack = uniform(&mut rng, spec.attack_range);
        let decay = uniform(&mut rng, spec.decay_range);
        let note_id = format!("toy-{i:04}");
        let wav = PathBuf::from("audio").join(format!("{note_id}.wav"));
        let samples = toy_note(f0, slope, attack, decay, spec.duration_s);
        crate::synth::write_wav(out.join(&wav), &samples, SAMPLE_RATE)?;
        let family = format!(
            "{}-{}",
            if slope >= slope_mid { "bright" } else { "dark" },
            if attack < attack_mid { "fast" } else { "slow" }
        );
        entries.push(CorpusEntry {
            note_id,
            wav,
            pitch_midi: 69.0 + 12.0 * (f0 / 440.0).log2(),
            pitch_hz: f0,
            family,
            split: if i >= spec.n_notes - spec.n_test { Split::Test } else { Split::Train },
            qualities: Vec::new(),
            ground_truth: Some(GroundTruth {
                slope_db: slope,
                attack_ramp_s: attack,
                decay_s: decay,
                centroid: closed_form_centroid(f0, slope),
                attack: 0.8 * attack,
            }),
        });
    }
    let index = CorpusIndex {
        source: Source::Toy,
        root: PathBuf::from("."),
        entries,
        missing_audio: Vec::new(),
    };
    index.save(out.join(CORPUS_FILE))?;
    CorpusIndex::load(out.join(CORPUS_FILE))
}
