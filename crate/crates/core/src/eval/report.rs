use crate::repr::{NormalizationStats, NoteRepresentation};
use crate::vae::VaeModel;

use super::{
    evaluate, tsne, EvalError, MetricReport, MetricSpace, NotePair, Projection, ProjectionMeta, ProjectionPoint, Result,
    TsneConfig,
};

const CHUNK: usize = 64;

/// A note to encode, with its identity.
#[derive(Debug, Clone, Copy)]
pub struct LabeledNote<'a> {
    pub id: &'a str,
    pub family: &'a str,
    pub repr: &'a NoteRepresentation,
}

/// Posterior means of `notes`, `[N, latent_dim]` row-major.
pub fn encode_means(model: &VaeModel<f32>, notes: &[LabeledNote<'_>]) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(notes.len() * model.config.latent_dim);
    for chunk in notes.chunks(CHUNK) {
        let x: Vec<f32> = chunk.iter().flat_map(|n| n.repr.values.iter().copied()).collect();
        out.extend(model.encode(&x).map_err(vae_err)?.0);
    }
    Ok(out)
}

/// Decodes the posterior mean of every note.
pub fn reconstruct(model: &VaeModel<f32>, notes: &[LabeledNote<'_>]) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(notes.len() * model.config.note_len());
    let z = encode_means(model, notes)?;
    for chunk in z.chunks(CHUNK * model.config.latent_dim) {
        out.extend(model.decode(chunk).map_err(vae_err)?);
    }
    Ok(out)
}

fn vae_err(e: crate::vae::VaeError) -> EvalError {
    EvalError::InvalidInput(e.to_string())
}

/// Normalized and denormalized reconstruction metrics of `notes` through
/// the model's posterior mean. With `identity`, each note is compared with
/// itself instead.
pub fn reconstruction_reports(
    model: &VaeModel<f32>,
    stats: &NormalizationStats,
    notes: &[LabeledNote<'_>],
    identity: bool,
) -> Result<[MetricReport; 2]> {
    if notes.is_empty() {
        return Err(EvalError::InvalidInput("no notes to evaluate".into()));
    }
    let (rows, cols) = (model.config.input_frames, model.config.input_channels);
    let len = rows * cols;
    let reference: Vec<f64> = notes.iter().flat_map(|n| n.repr.values.iter().map(|&v| v as f64)).collect();
    if reference.len() != notes.len() * len {
        return Err(EvalError::ShapeMismatch(format!("notes are not {rows}x{cols}")));
    }
    let recon: Vec<f64> = if identity {
        reference.clone()
    } else {
        reconstruct(model, notes)?.into_iter().map(f64::from).collect()
    };
    let build = |a: &[f64], b: &[f64], space, range| {
        let p: Vec<NotePair<'_>> = notes
            .iter()
            .zip(a.chunks(len).zip(b.chunks(len)))
            .map(|(n, (reference, reconstruction))| NotePair {
                family: n.family,
                reference,
                reconstruction,
            })
            .collect();
        evaluate(&p, rows, cols, space, range)
    };
    let normalized = build(&reference, &recon, MetricSpace::Normalized, 1.0)?;
    let denorm = |v: &[f64]| -> Vec<f64> { v.chunks(len).flat_map(|note| stats.denormalize_values(note)).collect() };
    let (dr, dx) = (denorm(&reference), denorm(&recon));
    let range = (0..cols).map(|c| stats.span(c)).fold(0.0, f64::max);
    let denormalized = build(&dr, &dx, MetricSpace::Denormalized, range)?;
    Ok([normalized, denormalized])
}

/// Encodes every note and embeds the means with t-SNE.
pub fn build_projection(
    model: &VaeModel<f32>,
    notes: &[LabeledNote<'_>],
    cfg: &TsneConfig,
    checkpoint_id: &str,
) -> Result<Projection> {
    let m = model.config.latent_dim;
    let z: Vec<f64> = encode_means(model, notes)?.into_iter().map(f64::from).collect();
    let xy = tsne(&z, m, cfg)?;
    let od = cfg.out_dim;
    let points = notes
        .iter()
        .enumerate()
        .map(|(i, n)| ProjectionPoint {
            id: n.id.to_string(),
            family: n.family.to_string(),
            x: xy[i * od],
            y: xy[i * od + 1],
            z: z[i * m..(i + 1) * m].to_vec(),
        })
        .collect();
    Ok(Projection {
        points,
        meta: ProjectionMeta {
            perplexity: super::effective_perplexity(notes.len(), cfg.perplexity),
            seed: cfg.seed,
            checkpoint_id: checkpoint_id.to_string(),
        },
    })
}
