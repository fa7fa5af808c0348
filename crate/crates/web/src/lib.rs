//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Build with `wasm-pack build crates/web --target web --out-dir www/pkg`
//! and serve `crates/web/www`.

use wasm_bindgen::prelude::*;

use timbre_core::dataset::toy_note;
use timbre_core::descriptors::measure_note;
use timbre_core::repr::{analyze_note, AudioNote, NormalizationStats, NoteRepresentation};
use timbre_core::synth::{encode_wav, synthesize, RenderConfig};
use timbre_core::vae::VaeCheckpoint;
use timbre_core::{LOG_FLOOR_DB, N_CHANNELS, SAMPLE_RATE};

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn msg(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn tone(f0_hz: f64, slope_db: f64, attack_s: f64, decay_s: f64, duration_s: f64) -> Result<Vec<f32>, String> {
    if !(duration_s > attack_s && attack_s > 0.0 && decay_s > 0.0) {
        return Err("need 0 < attack < duration and a positive decay".into());
    }
    if !(timbre_core::F0_MIN..=timbre_core::F0_MAX).contains(&f0_hz) {
        return Err(format!("f0 must lie in [{}, {}] Hz", timbre_core::F0_MIN, timbre_core::F0_MAX));
    }
    Ok(toy_note(f0_hz, slope_db, attack_s, decay_s, duration_s))
}

/// A toy tone's normalized representation and measured descriptors.
#[wasm_bindgen]
pub struct Analysis {
    frames: usize,
    heatmap: Vec<f32>,
    centroid_hz: f64,
    attack_s: f64,
    median_f0_hz: f64,
    wav: Vec<u8>,
}

#[wasm_bindgen]
impl Analysis {
    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[wasm_bindgen(getter)]
    pub fn channels(&self) -> usize {
        N_CHANNELS
    }

    /// `frames x channels` values in `[0, 1]`, row-major.
    #[wasm_bindgen(getter)]
    pub fn heatmap(&self) -> Vec<f32> {
        self.heatmap.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn centroid_hz(&self) -> f64 {
        self.centroid_hz
    }

    #[wasm_bindgen(getter)]
    pub fn attack_s(&self) -> f64 {
        self.attack_s
    }

    #[wasm_bindgen(getter)]
    pub fn median_f0_hz(&self) -> f64 {
        self.median_f0_hz
    }

    /// The analyzed tone as 16-bit WAV.
    #[wasm_bindgen(getter)]
    pub fn wav(&self) -> Vec<u8> {
        self.wav.clone()
    }
}

fn analyze(samples: Vec<f32>) -> Result<(NoteRepresentation, NormalizationStats, f64, f64, f64), String> {
    let note = AudioNote::new("demo", "toy", samples, SAMPLE_RATE, None).map_err(msg)?;
    let raw = analyze_note(&note).map_err(msg)?;
    let stats = NormalizationStats::fit([&raw], LOG_FLOOR_DB);
    let (centroid, attack) = measure_note(&note).map_err(msg)?;
    Ok((stats.normalize(&raw), stats, centroid, attack, raw.median_f0()))
}

/// Renders a toy tone (harmonic slope in dB per harmonic, linear onset,
/// exponential decay) and analyzes it.
pub fn tone_analysis(f0_hz: f64, slope_db: f64, attack_s: f64, decay_s: f64, duration_s: f64) -> Result<Analysis, String> {
    let samples = tone(f0_hz, slope_db, attack_s, decay_s, duration_s)?;
    let wav = encode_wav(&samples, SAMPLE_RATE).map_err(msg)?;
    let (repr, _, centroid_hz, attack, median_f0_hz) = analyze(samples)?;
    Ok(Analysis {
        frames: repr.frames,
        heatmap: repr.values,
        centroid_hz,
        attack_s: attack,
        median_f0_hz,
        wav,
    })
}

/// Analyzes a toy tone and resynthesizes it from its representation alone.
pub fn tone_resynthesis(
    f0_hz: f64,
    slope_db: f64,
    attack_s: f64,
    decay_s: f64,
    duration_s: f64,
    noise: bool,
) -> Result<Vec<u8>, String> {
    let samples = tone(f0_hz, slope_db, attack_s, decay_s, duration_s)?;
    let (repr, stats, ..) = analyze(samples)?;
    let cfg = RenderConfig {
        noise_enabled: noise,
        ..Default::default()
    };
    let out = synthesize(&repr, &stats, &cfg).map_err(msg)?;
    encode_wav(&out, SAMPLE_RATE).map_err(msg)
}

#[wasm_bindgen]
pub fn analyze_tone(f0_hz: f64, slope_db: f64, attack_s: f64, decay_s: f64, duration_s: f64) -> Result<Analysis, JsError> {
    tone_analysis(f0_hz, slope_db, attack_s, decay_s, duration_s).map_err(js_err)
}

#[wasm_bindgen]
pub fn resynthesize_tone(
    f0_hz: f64,
    slope_db: f64,
    attack_s: f64,
    decay_s: f64,
    duration_s: f64,
    noise: bool,
) -> Result<Vec<u8>, JsError> {
    tone_resynthesis(f0_hz, slope_db, attack_s, decay_s, duration_s, noise).map_err(js_err)
}

/// A trained model loaded from checkpoint bytes, decoding latent vectors
/// to audio.
#[wasm_bindgen]
pub struct Decoder {
    ckpt: VaeCheckpoint,
    last: Option<NoteRepresentation>,
}

#[wasm_bindgen]
impl Decoder {
    #[wasm_bindgen(constructor)]
    pub fn new(bytes: &[u8]) -> Result<Decoder, JsError> {
        Self::from_bytes(bytes).map_err(js_err)
    }

    #[wasm_bindgen(getter)]
    pub fn latent_dim(&self) -> usize {
        self.ckpt.config().latent_dim
    }

    #[wasm_bindgen(getter)]
    pub fn checkpoint_id(&self) -> String {
        self.ckpt.checkpoint_id()
    }

    /// Decodes `z` and returns WAV bytes; the representation is kept for
    /// [`last_heatmap`](Self::last_heatmap).
    pub fn decode(&mut self, z: &[f32]) -> Result<Vec<u8>, JsError> {
        self.decode_wav(z).map_err(js_err)
    }

    /// Representation of the most recent decode, `frames x 12` row-major.
    pub fn last_heatmap(&self) -> Vec<f32> {
        self.last.as_ref().map(|r| r.values.clone()).unwrap_or_default()
    }
}

impl Decoder {
    pub fn from_bytes(bytes: &[u8]) -> Result<Decoder, String> {
        let ckpt = VaeCheckpoint::from_bytes(bytes).map_err(msg)?;
        Ok(Decoder { ckpt, last: None })
    }

    pub fn decode_wav(&mut self, z: &[f32]) -> Result<Vec<u8>, String> {
        let dim = self.latent_dim();
        if z.len() != dim || z.iter().any(|v| !v.is_finite()) {
            return Err(format!("expected {dim} finite values"));
        }
        let cfg = self.ckpt.config();
        let values = self.ckpt.model.decode(z).map_err(msg)?;
        let repr = NoteRepresentation::new(cfg.input_frames, values, self.ckpt.norm_stats.stats_id.clone()).map_err(msg)?;
        let samples = synthesize(&repr, &self.ckpt.norm_stats, &RenderConfig::default()).map_err(msg)?;
        let wav = encode_wav(&samples, SAMPLE_RATE).map_err(msg)?;
        self.last = Some(repr);
        Ok(wav)
    }
}
