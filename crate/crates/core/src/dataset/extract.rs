use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CorpusEntry, CorpusIndex, DatasetError, Result, Split, CORPUS_FILE};
use crate::descriptors::{measure_note, DescriptorStats};
use crate::repr::{analyze_note, read_repr, write_repr, AudioNote, NormalizationStats, NoteRepresentation, RawRepresentation};
use crate::vae::{TrainingSet, VaeConfig};
use crate::{F0_MAX, F0_MIN, LOG_FLOOR_DB, TARGET_FRAMES};

pub const REPRS_DIR: &str = "reprs";
pub const DESCRIPTORS_FILE: &str = "descriptors.jsonl";
pub const NORM_STATS_FILE: &str = "norm_stats.json";
pub const DESCRIPTOR_STATS_FILE: &str = "descriptor_stats.json";

#[derive(Debug, Clone)]
pub struct ExtractOptions {
    /// Re-extract everything and refit the statistics.
    pub force: bool,
    pub workers: usize,
    pub target_frames: usize,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            force: false,
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            target_frames: TARGET_FRAMES,
        }
    }
}

/// One line of `descriptors.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorRecord {
    pub note_id: String,
    pub family: String,
    pub split: Split,
    pub centroid_hz: f64,
    pub attack_s: f64,
    pub centroid_norm: f64,
    pub attack_norm: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ExtractReport {
    pub total: usize,
    pub extracted: usize,
    /// Notes whose outputs from an earlier run were kept.
    pub reused: usize,
    pub failed: Vec<(String, String)>,
}

impl ExtractReport {
    pub fn success_rate(&self) -> f64 {
        if self.total == 0 {
            return 1.0;
        }
        (self.extracted + self.reused) as f64 / self.total as f64
    }
}

struct Analyzed {
    raw: RawRepresentation,
    centroid: f64,
    attack: f64,
}

fn analyze_entry(index: &CorpusIndex, entry: &CorpusEntry, target_frames: usize) -> Result<Analyzed> {
    let (samples, sr) = crate::synth::read_wav(index.wav_path(entry))?;
    let hint = (F0_MIN..=F0_MAX).contains(&entry.pitch_hz).then_some(entry.pitch_hz);
    let note = AudioNote::new(&entry.note_id, &entry.family, samples, sr, hint)?;
    let raw = analyze_note(&note)?.canonicalize(target_frames);
    let (centroid, attack) = measure_note(&note)?;
    Ok(Analyzed { raw, centroid, attack })
}

fn analyze_all(
    index: &CorpusIndex,
    entries: &[&CorpusEntry],
    opts: &ExtractOptions,
) -> Vec<std::result::Result<Analyzed, String>> {
    let run = |chunk: &[&CorpusEntry]| -> Vec<_> {
        chunk
            .iter()
            .map(|e| analyze_entry(index, e, opts.target_frames).map_err(|err| err.to_string()))
            .collect()
    };
    let workers = opts.workers.clamp(1, entries.len().max(1));
    if workers == 1 {
        return run(entries);
    }
    let chunk = entries.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = entries.chunks(chunk).map(|c| s.spawn(move || run(c))).collect();
        handles.into_iter().flat_map(|h| h.join().expect("extraction worker panicked")).collect()
    })
}

fn repr_path(out: &Path, id: &str) -> PathBuf {
    out.join(REPRS_DIR).join(format!("{id}.tsr"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

fn read_records(path: &Path) -> Result<Vec<DescriptorRecord>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn write_records(path: &Path, records: &[DescriptorRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn record(entry: &CorpusEntry, centroid: f64, attack: f64, d: &DescriptorStats) -> DescriptorRecord {
    DescriptorRecord {
        note_id: entry.note_id.clone(),
        family: entry.family.clone(),
        split: entry.split,
        centroid_hz: centroid,
        attack_s: attack,
        centroid_norm: d.normalize_centroid(centroid),
        attack_norm: d.normalize_attack(attack),
    }
}

/// Extracts normalized representations and descriptors for every entry
/// into `out`.
///
/// Normalization and descriptor statistics are fitted on the training
/// split and written before any representation. A later run without
/// `force` keeps those statistics and only processes notes that have no
/// representation yet. Notes that fail are reported and left out of the
/// output index. All raw analyses of one run are held in memory until
/// the statistics are fitted.
pub fn extract_corpus(index: &CorpusIndex, out: impl AsRef<Path>, opts: &ExtractOptions) -> Result<ExtractReport> {
    let out = out.as_ref();
    std::fs::create_dir_all(out.join(REPRS_DIR))?;
    let stats_path = out.join(NORM_STATS_FILE);
    let dstats_path = out.join(DESCRIPTOR_STATS_FILE);
    let records_path = out.join(DESCRIPTORS_FILE);

    let resume = !opts.force && stats_path.is_file() && dstats_path.is_file() && records_path.is_file();
    let mut kept: HashMap<String, DescriptorRecord> = HashMap::new();
    if resume {
        for r in read_records(&records_path)? {
            if repr_path(out, &r.note_id).is_file() {
                kept.insert(r.note_id.clone(), r);
            }
        }
    }
    let todo: Vec<&CorpusEntry> = index.entries.iter().filter(|e| !kept.contains_key(&e.note_id)).collect();
    log::info!("extracting {} notes ({} already done)", todo.len(), kept.len());
    let results = analyze_all(index, &todo, opts);

    let mut report = ExtractReport {
        total: index.entries.len(),
        ..Default::default()
    };
    let mut fresh: Vec<(&CorpusEntry, Analyzed)> = Vec::with_capacity(todo.len());
    for (entry, res) in todo.iter().zip(results) {
        match res {
            Ok(a) => fresh.push((entry, a)),
            Err(msg) => {
                log::warn!("{}: {msg}", entry.note_id);
                report.failed.push((entry.note_id.clone(), msg));
            }
        }
    }

    let (stats, dstats) = if resume {
        (read_json::<NormalizationStats>(&stats_path)?, read_json::<DescriptorStats>(&dstats_path)?)
    } else {
        let train: Vec<&(&CorpusEntry, Analyzed)> = fresh.iter().filter(|(e, _)| e.split == Split::Train).collect();
        let stats = NormalizationStats::fit(train.iter().map(|(_, a)| &a.raw), LOG_FLOOR_DB);
        let dstats = DescriptorStats::fit(train.iter().map(|(_, a)| (a.centroid, a.attack)));
        std::fs::write(&stats_path, serde_json::to_vec_pretty(&stats)?)?;
        std::fs::write(&dstats_path, serde_json::to_vec_pretty(&dstats)?)?;
        (stats, dstats)
    };

    let mut records: Vec<DescriptorRecord> = Vec::with_capacity(index.entries.len());
    let mut written: HashMap<&str, DescriptorRecord> = HashMap::new();
    for (entry, a) in &fresh {
        written.insert(&entry.note_id, record(entry, a.centroid, a.attack, &dstats));
    }
    let mut ok_entries = Vec::with_capacity(index.entries.len());
    for entry in &index.entries {
        if let Some(r) = kept.remove(&entry.note_id) {
            report.reused += 1;
            records.push(r);
            ok_entries.push(entry.clone());
        } else if let Some(r) = written.remove(entry.note_id.as_str()) {
            records.push(r);
            ok_entries.push(entry.clone());
        }
    }
    // Descriptors go to disk before the representations so an interrupted
    // run resumes with every statistic it needs.
    write_records(&records_path, &records)?;
    for (entry, a) in &fresh {
        write_repr(repr_path(out, &entry.note_id), &stats.normalize(&a.raw))?;
        report.extracted += 1;
    }

    let root = std::fs::canonicalize(&index.root).unwrap_or_else(|_| index.root.clone());
    let out_index = CorpusIndex {
        source: index.source,
        root,
        entries: ok_entries,
        missing_audio: index.missing_audio.clone(),
    };
    out_index.save(out.join(CORPUS_FILE))?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct ExtractedNote {
    pub entry: CorpusEntry,
    pub repr: NoteRepresentation,
    pub descriptors: DescriptorRecord,
}

/// The output of [`extract_corpus`] loaded back into memory.
#[derive(Debug, Clone)]
pub struct ExtractedCorpus {
    pub index: CorpusIndex,
    pub notes: Vec<ExtractedNote>,
    pub norm_stats: NormalizationStats,
    pub descriptor_stats: DescriptorStats,
}

impl ExtractedCorpus {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        for f in [CORPUS_FILE, NORM_STATS_FILE, DESCRIPTOR_STATS_FILE, DESCRIPTORS_FILE] {
            if !dir.join(f).is_file() {
                return Err(DatasetError::MissingMetadata(dir.join(f)));
            }
        }
        let index = CorpusIndex::load(dir.join(CORPUS_FILE))?;
        let norm_stats: NormalizationStats = read_json(&dir.join(NORM_STATS_FILE))?;
        let descriptor_stats: DescriptorStats = read_json(&dir.join(DESCRIPTOR_STATS_FILE))?;
        let mut records: HashMap<String, DescriptorRecord> =
            read_records(&dir.join(DESCRIPTORS_FILE))?.into_iter().map(|r| (r.note_id.clone(), r)).collect();
        let mut notes = Vec::with_capacity(index.entries.len());
        for entry in &index.entries {
            let path = repr_path(dir, &entry.note_id);
            let descriptors = records
                .remove(&entry.note_id)
                .ok_or_else(|| DatasetError::MissingRepresentation(entry.note_id.clone()))?;
            if !path.is_file() {
                return Err(DatasetError::MissingRepresentation(entry.note_id.clone()));
            }
            let repr = read_repr(&path)?;
            norm_stats.check(&repr)?;
            notes.push(ExtractedNote {
                entry: entry.clone(),
                repr,
                descriptors,
            });
        }
        Ok(Self {
            index,
            notes,
            norm_stats,
            descriptor_stats,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&ExtractedNote> {
        self.notes.iter().filter(|n| n.entry.split == split).collect()
    }

    pub fn note(&self, id: &str) -> Option<&ExtractedNote> {
        self.notes.iter().find(|n| n.entry.note_id == id)
    }

    pub fn families(&self) -> Vec<String> {
        self.index.families()
    }

    pub fn training_set(&self, split: Split, config: &VaeConfig) -> Result<TrainingSet, crate::vae::VaeError> {
        let notes = self.split(split);
        let reprs: Vec<&NoteRepresentation> = notes.iter().map(|n| &n.repr).collect();
        let targets = notes
            .iter()
            .map(|n| [n.descriptors.centroid_norm, n.descriptors.attack_norm])
            .collect();
        TrainingSet::new(&reprs, targets, config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{toy_generate, ToySpec};

    fn small_toy(dir: &Path) -> CorpusIndex {
        let spec = ToySpec {
            n_notes: 5,
            n_test: 1,
            seed: 9,
            ..Default::default()
        };
        toy_generate(&spec, dir).unwrap()
    }

    #[test]
    fn extraction_writes_loadable_outputs_and_resumes() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let index = small_toy(src.path());
        let opts = ExtractOptions {
            workers: 2,
            ..Default::default()
        };
        let report = extract_corpus(&index, out.path(), &opts).unwrap();
        assert_eq!((report.total, report.extracted, report.reused), (5, 5, 0));
        assert!(report.failed.is_empty());

        let corpus = ExtractedCorpus::load(out.path()).unwrap();
        assert_eq!(corpus.notes.len(), 5);
        assert_eq!(corpus.split(Split::Test).len(), 1);
        for n in &corpus.notes {
            assert_eq!(n.repr.frames, TARGET_FRAMES);
            assert_eq!(n.repr.norm_stats_id, corpus.norm_stats.stats_id);
            assert!((0.0..=1.0).contains(&n.descriptors.centroid_norm));
        }
        let before = std::fs::read(repr_path(out.path(), "toy-0002")).unwrap();

        std::fs::remove_file(repr_path(out.path(), "toy-0003")).unwrap();
        let again = extract_corpus(&index, out.path(), &opts).unwrap();
        assert_eq!((again.extracted, again.reused), (1, 4));
        assert_eq!(std::fs::read(repr_path(out.path(), "toy-0002")).unwrap(), before);
        assert_eq!(ExtractedCorpus::load(out.path()).unwrap().notes.len(), 5);

        let forced = extract_corpus(&index, out.path(), &ExtractOptions { force: true, ..opts }).unwrap();
        assert_eq!(forced.extracted, 5);
    }

    #[test]
    fn unreadable_notes_are_reported() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let index = small_toy(src.path());
        std::fs::write(index.wav_path(&index.entries[1]), b"not a wav").unwrap();
        let report = extract_corpus(&index, out.path(), &ExtractOptions::default()).unwrap();
        assert_eq!(report.failed.len(), 1);
        assert_eq!(report.failed[0].0, "toy-0001");
        assert!((report.success_rate() - 0.8).abs() < 1e-12);
        let corpus = ExtractedCorpus::load(out.path()).unwrap();
        assert!(corpus.note("toy-0001").is_none());
        assert_eq!(corpus.notes.len(), 4);
    }

    #[test]
    fn loading_an_empty_directory_fails() {
        let out = tempfile::tempdir().unwrap();
        assert!(matches!(ExtractedCorpus::load(out.path()), Err(DatasetError::MissingMetadata(_))));
    }
}
