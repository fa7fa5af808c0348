//! Compact harmonic note representation, timbre descriptors, and a
//! convolutional VAE whose latent space is tied to spectral centroid and
//! attack time.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`repr`]: audio framing, pitch tracking, harmonic/ERB analysis and the
//!   normalized 12-channel representation.
//! - [`descriptors`]: spectral centroid and attack time from audio, plus
//!   differentiable proxies computed from the representation.
//! - [`autodiff`]: a small reverse-mode tape with the layers the model needs
//!   and an Adam optimizer.
//! - [`vae`]: the model, its loss, training loop and checkpoint format.
//! - [`dataset`]: NSynth scanning, the synthetic toy corpus, extraction and
//!   batching.
//! - [`eval`]: reconstruction metrics, PCA, exact t-SNE and plot export.
//! - [`synth`]: sinusoidal + filtered-noise resynthesis and WAV I/O.

pub mod autodiff;
pub mod dataset;
pub mod descriptors;
pub mod eval;
pub mod repr;
pub mod synth;
pub mod vae;

/// Analysis sample rate in Hz.
pub const SAMPLE_RATE: u32 = 16_000;
/// Analysis window length in samples.
pub const WINDOW: usize = 690;
/// Analysis hop size in samples.
pub const HOP: usize = 172;
/// Zero-padded DFT size used for every frame spectrum.
pub const FFT_SIZE: usize = 1024;
/// Number of tracked harmonics, fundamental included.
pub const N_HARMONICS: usize = 7;
/// Number of ERB-spaced bands above the tracked harmonics.
pub const N_BANDS: usize = 4;
/// Channels per frame: f0, harmonics, bands.
pub const N_CHANNELS: usize = 1 + N_HARMONICS + N_BANDS;
/// Canonical frame count of a representation fed to the model.
pub const TARGET_FRAMES: usize = 368;
/// Lowest admitted fundamental in Hz.
pub const F0_MIN: f64 = 80.0;
/// Highest admitted fundamental in Hz.
pub const F0_MAX: f64 = 2100.0;
/// Default floor for every log-amplitude / log-energy channel.
pub const LOG_FLOOR_DB: f64 = -80.0;

/// Duration of one analysis hop in seconds.
pub fn hop_seconds() -> f64 {
    HOP as f64 / SAMPLE_RATE as f64
}
