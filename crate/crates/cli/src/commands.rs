use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;
use timbre_core::dataset::{
    extract_corpus, filter_corpus, toy_generate, CorpusIndex, ExtractOptions, ExtractedCorpus, Split, ToySpec,
    DEFAULT_QUALITY_EXCLUDES,
};
use timbre_core::eval::{
    build_projection, export_projection, reconstruction_reports, render_scatter, LabeledNote, MetricReport, TsneConfig,
};
use timbre_core::repr::write_repr;
use timbre_core::vae::{load_checkpoint, save_checkpoint, EpochStats, RegMode, VaeCheckpoint, VaeConfig, VaeError};
use timbre_core::{F0_MAX, F0_MIN};

use crate::config::{parse_enum, ConfigFile};
use crate::{
    decode_latent, parse_latent, service, DecodeArgs, EvalArgs, ExtractArgs, Failure, ModelArgs, ProjectArgs, Result,
    ServeArgs, ToyArgs, TrainArgs,
};

/// Share of notes that must extract cleanly for the command to succeed.
pub const MIN_EXTRACT_SUCCESS: f64 = 0.99;

fn require_dir(p: &Path, what: &str) -> anyhow::Result<()> {
    if !p.is_dir() {
        return Err(anyhow!("{what} {} is not a readable directory", p.display()));
    }
    Ok(())
}

fn require_file(p: &Path, what: &str) -> anyhow::Result<()> {
    if !p.is_file() {
        return Err(anyhow!("{what} {} does not exist", p.display()));
    }
    Ok(())
}

fn load_corpus(dir: &Path) -> Result<ExtractedCorpus> {
    require_dir(dir, "extracted corpus").map_err(Failure::Corpus)?;
    ExtractedCorpus::load(dir).map_err(|e| Failure::Corpus(e.into()))
}

fn load_ckpt(path: &Path) -> Result<VaeCheckpoint> {
    require_file(path, "checkpoint")?;
    Ok(load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?)
}

fn with_extension(p: &Path, ext: &str) -> PathBuf {
    p.with_extension(ext)
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.write_all(b"\n")?;
            Ok(())
        }
    }
}

pub fn toy(args: &ToyArgs, file: &ConfigFile) -> Result<()> {
    let out = file.path(args.out.clone(), "out")?;
    let d = ToySpec::default();
    let spec = ToySpec {
        n_notes: file.pick(args.notes, "notes")?.unwrap_or(d.n_notes),
        n_test: file.pick(args.test_notes, "test_notes")?.unwrap_or(d.n_test),
        duration_s: file.pick(args.duration, "duration")?.unwrap_or(d.duration_s),
        seed: file.pick(args.seed, "seed")?.unwrap_or(d.seed),
        ..d
    };
    let index = toy_generate(&spec, &out).map_err(|e| Failure::Corpus(e.into()))?;
    log::info!("wrote {} toy notes to {}", index.entries.len(), out.display());
    Ok(())
}

pub fn extract(args: &ExtractArgs, file: &ConfigFile) -> Result<()> {
    let corpus = file.path(args.corpus.clone(), "corpus")?;
    let out = file.path(args.out.clone(), "out")?;
    require_dir(&corpus, "corpus").map_err(Failure::Corpus)?;
    let index = CorpusIndex::open(&corpus).map_err(|e| Failure::Corpus(e.into()))?;
    let lo = file.pick(args.min_hz, "min_hz")?.unwrap_or(F0_MIN);
    let hi = file.pick(args.max_hz, "max_hz")?.unwrap_or(F0_MAX);
    let excludes: Vec<String> = match file.pick(args.exclude.clone(), "exclude")? {
        Some(s) => s.split(',').map(|q| q.trim().to_string()).filter(|q| !q.is_empty()).collect(),
        None => DEFAULT_QUALITY_EXCLUDES.iter().map(|s| s.to_string()).collect(),
    };
    let index = filter_corpus(&index, lo, hi, &excludes);
    let mut opts = ExtractOptions {
        force: args.force,
        ..Default::default()
    };
    if let Some(w) = file.pick(args.workers, "workers")? {
        opts.workers = w.max(1);
    }
    let report = extract_corpus(&index, &out, &opts).map_err(|e| Failure::Corpus(e.into()))?;
    for (id, err) in &report.failed {
        log::warn!("{id}: {err}");
    }
    println!(
        "{} notes: {} extracted, {} reused, {} failed",
        report.total,
        report.extracted,
        report.reused,
        report.failed.len()
    );
    if report.success_rate() < MIN_EXTRACT_SUCCESS {
        return Err(Failure::Corpus(anyhow!(
            "only {:.1}% of notes extracted",
            100.0 * report.success_rate()
        )));
    }
    Ok(())
}

/// Default model configuration overridden by the config file and then by
/// flags.
pub fn model_config(args: &ModelArgs, file: &ConfigFile) -> anyhow::Result<VaeConfig> {
    let mut c = VaeConfig::default();
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = file.pick(args.$field, stringify!($field))? {
                c.$field = v;
            }
        )*};
    }
    set!(latent_dim, conv_filters, batch_size, lr, epochs, kl_weight, reg_weight, workers, seed);
    macro_rules! set_enum {
        ($($field:ident),*) => {$(
            match &args.$field {
                Some(s) => c.$field = parse_enum(s).context(concat!("--", stringify!($field)))?,
                None => {
                    if let Some(v) = file.get_enum(stringify!($field))? {
                        c.$field = v;
                    }
                }
            }
        )*};
    }
    set_enum!(reg_mode, output_activation, kl_reduction);
    c.validate()?;
    Ok(c)
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,bce,kl,reg,total\n");
    for h in history {
        let _ = writeln!(s, "{},{},{},{},{}", h.epoch, h.bce, h.kl, h.reg, h.total);
    }
    s
}

pub fn train(args: &TrainArgs, file: &ConfigFile) -> Result<()> {
    let reprs = file.path(args.reprs.clone(), "reprs")?;
    let out = file.path(args.out.clone(), "checkpoint")?;
    let history = match file.pick(args.history.clone(), "history")? {
        Some(p) => p,
        None => with_extension(&out, "csv"),
    };
    let config = model_config(&args.model, file)?;
    let corpus = load_corpus(&reprs)?;
    let set = corpus.training_set(Split::Train, &config).map_err(anyhow::Error::from)?;
    if set.is_empty() {
        return Err(Failure::MissingSplit(format!("{} has no training notes", reprs.display())));
    }
    log::info!("training on {} notes for {} epochs", set.len(), config.epochs);
    let ckpt = match timbre_core::vae::train(&set, &config, &corpus.norm_stats, &corpus.descriptor_stats) {
        Ok(c) => c,
        Err(e @ VaeError::DivergedLoss { .. }) => return Err(Failure::Diverged(e.to_string())),
        Err(e) => return Err(anyhow::Error::from(e).into()),
    };
    save_checkpoint(&out, &ckpt).with_context(|| format!("writing {}", out.display()))?;
    std::fs::write(&history, history_csv(&ckpt.history)).with_context(|| format!("writing {}", history.display()))?;
    println!("checkpoint {} written to {}", ckpt.checkpoint_id(), out.display());
    Ok(())
}

/// One row of the evaluation report, one per checkpoint.
#[derive(Debug, Clone, Serialize)]
pub struct EvalRow {
    pub checkpoint: String,
    pub checkpoint_id: String,
    pub reg_mode: RegMode,
    pub reg_weight: f64,
    pub normalized: MetricReport,
    pub denormalized: MetricReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub split: Split,
    pub identity: bool,
    pub rows: Vec<EvalRow>,
}

fn labels<'a>(notes: &[&'a timbre_core::dataset::ExtractedNote]) -> Vec<LabeledNote<'a>> {
    notes
        .iter()
        .map(|n| LabeledNote {
            id: &n.entry.note_id,
            family: &n.entry.family,
            repr: &n.repr,
        })
        .collect()
}

pub fn eval(args: &EvalArgs, file: &ConfigFile) -> Result<()> {
    let checkpoints = if args.checkpoints.is_empty() {
        vec![file.path(None, "checkpoint")?]
    } else {
        args.checkpoints.clone()
    };
    let reprs = file.path(args.reprs.clone(), "reprs")?;
    let corpus = load_corpus(&reprs)?;
    let test = corpus.split(Split::Test);
    if test.is_empty() {
        return Err(Failure::MissingSplit(format!("{} has no test notes", reprs.display())));
    }
    let notes = labels(&test);
    let mut rows = Vec::new();
    for path in &checkpoints {
        let ckpt = load_ckpt(path)?;
        if ckpt.norm_stats.stats_id != corpus.norm_stats.stats_id {
            return Err(anyhow!(
                "{} was trained with different normalization statistics than {}",
                path.display(),
                reprs.display()
            )
            .into());
        }
        let [normalized, denormalized] =
            reconstruction_reports(&ckpt.model, &ckpt.norm_stats, &notes, args.identity).map_err(anyhow::Error::from)?;
        rows.push(EvalRow {
            checkpoint: path.display().to_string(),
            checkpoint_id: ckpt.checkpoint_id(),
            reg_mode: ckpt.config().reg_mode,
            reg_weight: ckpt.config().reg_weight,
            normalized,
            denormalized,
        });
    }
    let report = EvalReport {
        split: Split::Test,
        identity: args.identity,
        rows,
    };
    let out = file.pick(args.out.clone(), "out")?;
    write_output(out.as_deref(), &serde_json::to_vec_pretty(&report).map_err(anyhow::Error::from)?)?;
    Ok(())
}

pub fn project(args: &ProjectArgs, file: &ConfigFile) -> Result<()> {
    let ckpt_path = file.path(args.checkpoint.clone(), "checkpoint")?;
    let reprs = file.path(args.reprs.clone(), "reprs")?;
    let out = file.path(args.out.clone(), "projection")?;
    let svg = match file.pick(args.svg.clone(), "svg")? {
        Some(p) => p,
        None => with_extension(&out, "svg"),
    };
    let d = TsneConfig::default();
    let cfg = TsneConfig {
        perplexity: file.pick(args.perplexity, "perplexity")?.unwrap_or(d.perplexity),
        iters: file.pick(args.iters, "iters")?.unwrap_or(d.iters),
        seed: file.pick(args.seed, "seed")?.unwrap_or(d.seed),
        ..d
    };
    let ckpt = load_ckpt(&ckpt_path)?;
    let corpus = load_corpus(&reprs)?;
    let all: Vec<&timbre_core::dataset::ExtractedNote> = corpus.notes.iter().collect();
    if all.len() < 4 {
        return Err(Failure::MissingSplit(format!(
            "{} has {} notes; the projection needs at least 4",
            reprs.display(),
            all.len()
        )));
    }
    let notes = labels(&all);
    let projection = build_projection(&ckpt.model, &notes, &cfg, &ckpt.checkpoint_id()).map_err(anyhow::Error::from)?;
    export_projection(&projection, &out).map_err(anyhow::Error::from)?;
    render_scatter(&projection.points, &svg).map_err(anyhow::Error::from)?;
    println!("{} points written to {} and {}", projection.points.len(), out.display(), svg.display());
    Ok(())
}

pub fn decode(args: &DecodeArgs, file: &ConfigFile) -> Result<()> {
    let ckpt = load_ckpt(&file.path(args.checkpoint.clone(), "checkpoint")?)?;
    let wav = file.path(args.wav.clone(), "wav")?;
    let repr_out = args.repr.clone().unwrap_or_else(|| with_extension(&wav, "tsr"));
    let dim = ckpt.config().latent_dim;
    let z = match (&args.z, &args.note_id) {
        (Some(csv), None) => parse_latent(csv, dim)?,
        (None, Some(id)) => {
            let reprs = file.path(args.reprs.clone(), "reprs")?;
            let corpus = load_corpus(&reprs)?;
            let note = corpus
                .note(id)
                .ok_or_else(|| anyhow!("note {id} is not in {}", reprs.display()))?;
            ckpt.model.encode(&note.repr.values).map_err(anyhow::Error::from)?.0
        }
        _ => return Err(anyhow!("give exactly one of --z and --note-id").into()),
    };
    let decoded = decode_latent(&ckpt, &z)?;
    std::fs::write(&wav, &decoded.wav).with_context(|| format!("writing {}", wav.display()))?;
    write_repr(&repr_out, &decoded.repr).with_context(|| format!("writing {}", repr_out.display()))?;
    println!("wrote {} and {}", wav.display(), repr_out.display());
    Ok(())
}

pub const DEFAULT_PORT: u16 = 8080;

pub fn serve(args: &ServeArgs, file: &ConfigFile) -> Result<()> {
    let ckpt = load_ckpt(&file.path(args.checkpoint.clone(), "checkpoint")?)?;
    let proj_path = file.path(args.projection.clone(), "projection")?;
    require_file(&proj_path, "projection")?;
    let projection = timbre_core::eval::import_projection(&proj_path).map_err(anyhow::Error::from)?;
    let state = service::AppState::new(ckpt, projection)?;
    let host = file.pick(args.host.clone(), "host")?.unwrap_or_else(|| "127.0.0.1".into());
    let port = file.pick(args.port, "port")?.unwrap_or(DEFAULT_PORT);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting the async runtime")?;
    rt.block_on(async move {
        let addr = format!("{host}:{port}");
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|source| Failure::Bind { addr: addr.clone(), source })?;
        log::info!("listening on http://{addr}");
        axum::serve(listener, service::router(state)).await.context("serving")?;
        Ok(())
    })
}
