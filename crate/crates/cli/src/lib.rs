//! Command-line pipeline (toy corpus, extraction, training, evaluation,
//! projection, decoding) and the HTTP service used by the latent explorer.

pub mod commands;
pub mod config;
pub mod service;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;
use timbre_core::repr::NoteRepresentation;
use timbre_core::synth::{encode_wav, synthesize, RenderConfig};
use timbre_core::vae::VaeCheckpoint;
use timbre_core::SAMPLE_RATE;

/// A command failure and the process exit code it maps to.
#[derive(Debug, Error)]
pub enum Failure {
    #[error("corpus error: {0:#}")]
    Corpus(anyhow::Error),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("{0}")]
    MissingSplit(String),
    #[error("malformed latent code: {0}")]
    MalformedLatent(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("{0:#}")]
    Other(#[from] anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Corpus(_) => 2,
            Failure::Diverged(_) => 3,
            Failure::MissingSplit(_) => 4,
            Failure::MalformedLatent(_) => 5,
            Failure::Bind { .. } => 6,
        }
    }
}

pub type Result<T, E = Failure> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "timbre-cli", version, about = "Timbre representation, VAE training and latent exploration")]
pub struct Cli {
    /// Plain-text `key = value` file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic toy corpus with known descriptors.
    Toy(ToyArgs),
    /// Extract representations, descriptors and statistics from a corpus.
    Extract(ExtractArgs),
    /// Train a VAE on an extracted corpus.
    Train(TrainArgs),
    /// Reconstruction metrics on the test split.
    Eval(EvalArgs),
    /// Encode every note and embed the latent means in 2-D with t-SNE.
    Project(ProjectArgs),
    /// Decode a latent vector to a representation and audio.
    Decode(DecodeArgs),
    /// Serve projection data and latent decoding over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub notes: Option<usize>,
    /// Number of notes, taken from the end, that form the test split.
    #[arg(long)]
    pub test_notes: Option<usize>,
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// NSynth-style directory or a directory with `corpus.json`.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Re-extract notes that already have a representation.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Lowest kept pitch in Hz.
    #[arg(long)]
    pub min_hz: Option<f64>,
    /// Highest kept pitch in Hz.
    #[arg(long)]
    pub max_hz: Option<f64>,
    /// Comma-separated quality tags to drop.
    #[arg(long)]
    pub exclude: Option<String>,
}

/// Model and optimizer settings shared with the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub conv_filters: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub kl_weight: Option<f64>,
    #[arg(long)]
    pub reg_weight: Option<f64>,
    /// latent-attribute, reconstruction-descriptor or off.
    #[arg(long)]
    pub reg_mode: Option<String>,
    /// sigmoid or softmax.
    #[arg(long)]
    pub output_activation: Option<String>,
    /// per-element or per-note.
    #[arg(long)]
    pub kl_reduction: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Extracted corpus directory.
    #[arg(long)]
    pub reprs: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training-history CSV; defaults to the checkpoint path with a `.csv`
    /// extension.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// One or two checkpoints, for example trained with and without
    /// regularization.
    #[arg(long = "checkpoint", num_args = 1..=2)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub reprs: Option<PathBuf>,
    /// Report file; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Compare every note with itself instead of its reconstruction.
    #[arg(long)]
    pub identity: bool,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub reprs: Option<PathBuf>,
    /// Projection JSON to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Scatter plot; defaults to the JSON path with an `.svg` extension.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated latent vector.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "note_id")]
    pub z: Option<String>,
    /// Decode the encoded mean of this note (needs --reprs).
    #[arg(long)]
    pub note_id: Option<String>,
    #[arg(long)]
    pub reprs: Option<PathBuf>,
    /// WAV file to write.
    #[arg(long)]
    pub wav: Option<PathBuf>,
    /// Representation file; defaults to the WAV path with a `.tsr`
    /// extension.
    #[arg(long)]
    pub repr: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub projection: Option<PathBuf>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
}

pub fn run(cli: Cli) -> Result<()> {
    let file = config::ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Toy(a) => commands::toy(&a, &file),
        Command::Extract(a) => commands::extract(&a, &file),
        Command::Train(a) => commands::train(&a, &file),
        Command::Eval(a) => commands::eval(&a, &file),
        Command::Project(a) => commands::project(&a, &file),
        Command::Decode(a) => commands::decode(&a, &file),
        Command::Serve(a) => commands::serve(&a, &file),
    }
}

/// Parses a comma-separated latent vector of exactly `dim` finite values.
pub fn parse_latent(csv: &str, dim: usize) -> Result<Vec<f32>> {
    let z = csv
        .split(',')
        .map(|s| s.trim().parse::<f32>().map_err(|e| Failure::MalformedLatent(format!("{s:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    check_latent(&z, dim)?;
    Ok(z)
}

pub fn check_latent(z: &[f32], dim: usize) -> Result<()> {
    if z.len() != dim {
        return Err(Failure::MalformedLatent(format!("expected {dim} values, got {}", z.len())));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Failure::MalformedLatent("values must be finite".into()));
    }
    Ok(())
}

/// A decoded latent vector: the representation and its rendering as WAV
/// bytes. Shared by the CLI and the service so both produce identical
/// audio.
pub struct Decoded {
    pub repr: NoteRepresentation,
    pub wav: Vec<u8>,
}

pub fn decode_latent(ckpt: &VaeCheckpoint, z: &[f32]) -> Result<Decoded> {
    check_latent(z, ckpt.config().latent_dim)?;
    let values = ckpt.model.decode(z).map_err(anyhow::Error::from)?;
    let repr = NoteRepresentation::new(ckpt.config().input_frames, values, ckpt.norm_stats.stats_id.clone())
        .map_err(anyhow::Error::from)?;
    let samples = synthesize(&repr, &ckpt.norm_stats, &RenderConfig::default()).map_err(anyhow::Error::from)?;
    let wav = encode_wav(&samples, SAMPLE_RATE).map_err(anyhow::Error::from)?;
    Ok(Decoded { repr, wav })
}
