//! Descriptor-regularized convolutional VAE.
//!
//! The encoder reads a note as a one-channel `frames x 12` image:
//! two stride-2 convolutions with ReLU, a flatten, and two parallel dense
//! heads for the posterior mean and log-variance. The decoder mirrors it with
//! a dense layer, a reshape and two transposed convolutions.

mod checkpoint;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, VaeCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{assemble_loss, LossParts, LossVars, ParamSpec, VaeModel};
pub use train::{train, EpochStats, TrainingSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error)]
pub enum VaeError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss became non-finite ({value}) at epoch {epoch}, step {step}")]
    DivergedLoss { epoch: usize, step: usize, value: f64 },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint payload checksum does not match its header")]
    ChecksumMismatch,
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T, E = VaeError> = std::result::Result<T, E>;

/// What the regularization term ties to the descriptors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RegMode {
    /// Latent dims 0 and 1 of the posterior mean follow the normalized
    /// centroid and attack.
    #[default]
    LatentAttribute,
    /// Descriptors recomputed from the reconstruction follow the targets.
    ReconstructionDescriptor,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OutputActivation {
    #[default]
    Sigmoid,
    Softmax,
}

/// Axis normalized by the softmax output activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SoftmaxAxis {
    Frames,
    #[default]
    Channels,
}

/// Scale of the KL term relative to the mean per-element cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KlReduction {
    /// KL of each note's code, averaged over notes.
    PerNote,
    /// Per-note KL divided by the number of input elements per note
    /// (`frames * channels`), matching the per-element cross-entropy.
    #[default]
    PerElement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub conv_filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub input_frames: usize,
    pub input_channels: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub kl_weight: f64,
    pub reg_weight: f64,
    pub reg_mode: RegMode,
    pub output_activation: OutputActivation,
    pub softmax_axis: SoftmaxAxis,
    pub kl_reduction: KlReduction,
    /// Softness of the attack proxy in reconstruction-descriptor mode.
    pub proxy_tau: f64,
    pub workers: usize,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 14,
            conv_filters: 32,
            kernel: 3,
            stride: 2,
            input_frames: crate::TARGET_FRAMES,
            input_channels: crate::N_CHANNELS,
            batch_size: 128,
            lr: 1e-3,
            epochs: 30,
            kl_weight: 1.0,
            reg_weight: 1.0,
            reg_mode: RegMode::LatentAttribute,
            output_activation: OutputActivation::Sigmoid,
            softmax_axis: SoftmaxAxis::Channels,
            kl_reduction: KlReduction::PerElement,
            proxy_tau: 0.01,
            workers: 1,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(VaeError::InvalidConfig(m.to_string()));
        if self.latent_dim == 0 || self.conv_filters == 0 || self.kernel == 0 || self.stride == 0 {
            return bad("latent_dim, conv_filters, kernel and stride must be positive");
        }
        if self.reg_mode == RegMode::LatentAttribute && self.latent_dim < 2 {
            return bad("latent-attribute regularization needs latent_dim >= 2");
        }
        let s2 = self.stride * self.stride;
        if self.input_frames == 0 || self.input_channels == 0 || self.input_frames % s2 != 0 || self.input_channels % s2 != 0 {
            return bad("input dimensions must be positive multiples of stride^2");
        }
        if self.batch_size == 0 || self.workers == 0 {
            return bad("batch_size and workers must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive and finite");
        }
        if !(self.kl_weight >= 0.0 && self.reg_weight >= 0.0 && self.proxy_tau >= 0.0) {
            return bad("kl_weight, reg_weight and proxy_tau must be non-negative");
        }
        Ok(())
    }

    /// Spatial sizes after the first and second encoder convolution.
    pub fn stage_shapes(&self) -> [(usize, usize); 2] {
        let h1 = (self.input_frames.div_ceil(self.stride), self.input_channels.div_ceil(self.stride));
        let h2 = (h1.0.div_ceil(self.stride), h1.1.div_ceil(self.stride));
        [h1, h2]
    }

    /// Length of the flattened encoder feature map.
    pub fn flat_len(&self) -> usize {
        let (h, w) = self.stage_shapes()[1];
        self.conv_filters * h * w
    }

    pub fn note_len(&self) -> usize {
        self.input_frames * self.input_channels
    }
}

/// Where a latent vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Sampled,
    EncodedMean,
    UserEdited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub z: Vec<f32>,
    pub provenance: Provenance,
}

impl LatentCode {
    pub fn new(z: Vec<f32>, provenance: Provenance, config: &VaeConfig) -> Result<Self> {
        if z.len() != config.latent_dim {
            return Err(VaeError::ShapeMismatch(format!(
                "latent code has {} values, model expects {}",
                z.len(),
                config.latent_dim
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(VaeError::ShapeMismatch("latent code contains non-finite values".into()));
        }
        Ok(Self { z, provenance })
    }
}
