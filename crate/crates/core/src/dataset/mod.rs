//! Corpora: NSynth scanning and filtering, the synthetic toy corpus,
//! representation extraction and batching.

mod batches;
mod extract;
mod nsynth;
mod toy;

pub use batches::{batch_plan, Batches};
pub use extract::{
    extract_corpus, DescriptorRecord, ExtractOptions, ExtractReport, ExtractedCorpus, ExtractedNote, DESCRIPTORS_FILE,
    DESCRIPTOR_STATS_FILE, NORM_STATS_FILE, REPRS_DIR,
};
pub use nsynth::{filter_corpus, midi_to_hz, scan_nsynth, DEFAULT_QUALITY_EXCLUDES};
pub use toy::{toy_generate, toy_note, ToySpec};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptors::DescriptorError;
use crate::repr::ReprError;
use crate::synth::SynthError;

/// File name of a serialized [`CorpusIndex`].
pub const CORPUS_FILE: &str = "corpus.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no dataset metadata found in {0}")]
    MissingMetadata(PathBuf),
    #[error("note {0} has no extracted representation or descriptors")]
    MissingRepresentation(String),
    #[error("invalid toy spec: {0}")]
    InvalidSpec(String),
    #[error("malformed metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Audio(#[from] SynthError),
    #[error(transparent)]
    Repr(#[from] ReprError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Nsynth,
    Toy,
}

/// Generator parameters and closed-form descriptors of a toy note.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub slope_db: f64,
    pub attack_ramp_s: f64,
    pub decay_s: f64,
    pub centroid: f64,
    pub attack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub note_id: String,
    /// Audio path relative to the index root.
    pub wav: PathBuf,
    pub pitch_midi: f64,
    pub pitch_hz: f64,
    pub family: String,
    pub split: Split,
    #[serde(default)]
    pub qualities: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub source: Source,
    /// Directory the entries' audio paths are relative to.
    pub root: PathBuf,
    pub entries: Vec<CorpusEntry>,
    /// Notes listed in the metadata whose audio file is absent.
    #[serde(default)]
    pub missing_audio: Vec<String>,
}

impl CorpusIndex {
    pub fn wav_path(&self, entry: &CorpusEntry) -> PathBuf {
        self.root.join(&entry.wav)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn families(&self) -> Vec<String> {
        let mut f: Vec<String> = self.entries.iter().map(|e| e.family.clone()).collect();
        f.sort();
        f.dedup();
        f
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Loads an index; a relative root is resolved against the file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut index: CorpusIndex = serde_json::from_slice(&std::fs::read(path)?)?;
        if index.root.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            index.root = base.join(&index.root);
        }
        Ok(index)
    }

    /// Loads `dir/corpus.json`, or scans `dir` as an NSynth tree.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let file = dir.join(CORPUS_FILE);
        if file.is_file() {
            Self::load(file)
        } else {
            scan_nsynth(dir)
        }
    }
}
