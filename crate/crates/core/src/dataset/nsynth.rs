use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{CorpusEntry, CorpusIndex, DatasetError, Result, Source, Split};

/// Quality tags excluded unless the caller says otherwise.
pub const DEFAULT_QUALITY_EXCLUDES: [&str; 3] = ["fast_decay", "nonlinear_env", "tempo-synced"];

const METADATA_FILE: &str = "examples.json";

pub fn midi_to_hz(midi: f64) -> f64 {
    440.0 * 2f64.powf((midi - 69.0) / 12.0)
}

#[derive(Debug, Deserialize)]
struct Example {
    pitch: f64,
    #[serde(default)]
    instrument_family_str: Option<String>,
    #[serde(default)]
    qualities_str: Vec<String>,
}

fn split_of(dir: &Path) -> Split {
    let name = dir.file_name().map(|n| n.to_string_lossy().to_lowercase()).unwrap_or_default();
    if name.contains("test") {
        Split::Test
    } else {
        Split::Train
    }
}

fn scan_part(root: &Path, rel: &Path, index: &mut CorpusIndex) -> Result<()> {
    let dir = root.join(rel);
    let bytes = std::fs::read(dir.join(METADATA_FILE))?;
    let examples: BTreeMap<String, Example> =
        serde_json::from_slice(&bytes).map_err(|e| DatasetError::Metadata(format!("{}: {e}", dir.display())))?;
    let split = split_of(&dir);
    for (id, ex) in examples {
        let wav = rel.join("audio").join(format!("{id}.wav"));
        if !root.join(&wav).is_file() {
            log::warn!("{id}: audio file {} is missing", wav.display());
            index.missing_audio.push(id);
            continue;
        }
        index.entries.push(CorpusEntry {
            note_id: id,
            wav,
            pitch_midi: ex.pitch,
            pitch_hz: midi_to_hz(ex.pitch),
            family: ex.instrument_family_str.unwrap_or_else(|| "unknown".into()),
            split,
            qualities: ex.qualities_str,
            ground_truth: None,
        });
    }
    Ok(())
}

/// Indexes an NSynth directory: either one split directory holding
/// `examples.json` and `audio/`, or a parent of several such directories
/// (e.g. `nsynth-train`, `nsynth-test`). Directories whose name contains
/// "test" form the test split; all others are training data.
pub fn scan_nsynth(dir: impl AsRef<Path>) -> Result<CorpusIndex> {
    let root = dir.as_ref();
    let mut index = CorpusIndex {
        source: Source::Nsynth,
        root: root.to_path_buf(),
        entries: Vec::new(),
        missing_audio: Vec::new(),
    };
    if root.join(METADATA_FILE).is_file() {
        scan_part(root, Path::new(""), &mut index)?;
        return Ok(index);
    }
    let mut parts: Vec<PathBuf> = match std::fs::read_dir(root) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(METADATA_FILE).is_file())
            .map(|e| PathBuf::from(e.file_name()))
            .collect(),
        Err(_) => Vec::new(),
    };
    if parts.is_empty() {
        return Err(DatasetError::MissingMetadata(root.to_path_buf()));
    }
    parts.sort();
    for rel in parts {
        scan_part(root, &rel, &mut index)?;
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = index.entries.iter().find(|e| !seen.insert(e.note_id.as_str())) {
        return Err(DatasetError::Metadata(format!("note id {} appears twice", dup.note_id)));
    }
    Ok(index)
}

/// Keeps entries with `lo <= pitch <= hi` that carry none of `excludes`.
pub fn filter_corpus(index: &CorpusIndex, lo: f64, hi: f64, excludes: &[String]) -> CorpusIndex {
    let entries: Vec<CorpusEntry> = index
        .entries
        .iter()
        .filter(|e| (lo..=hi).contains(&e.pitch_hz))
        .filter(|e| !e.qualities.iter().any(|q| excludes.contains(q)))
        .cloned()
        .collect();
    if entries.is_empty() && !index.entries.is_empty() {
        log::warn!("filtering removed all {} notes", index.entries.len());
    }
    CorpusIndex {
        entries,
        ..index.clone()
    }
}
