use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::pack_batch;
use super::{LossParts, RegMode, Result, VaeCheckpoint, VaeConfig, VaeError, VaeModel};
use crate::autodiff::{adam_step, AdamState, ProxyContext};
use crate::dataset::batch_plan;
use crate::descriptors::proxy::ProxyConfig;
use crate::descriptors::DescriptorStats;
use crate::repr::{NormalizationStats, NoteRepresentation};

/// Per-epoch means of the loss components, weighted by notes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub bce: f64,
    pub kl: f64,
    pub reg: f64,
    pub total: f64,
}

/// Packed model inputs with their normalized `(centroid, attack)` targets.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub x: Vec<f32>,
    pub targets: Vec<[f64; 2]>,
    note_len: usize,
}

impl TrainingSet {
    pub fn new(reprs: &[&NoteRepresentation], targets: Vec<[f64; 2]>, config: &VaeConfig) -> Result<Self> {
        if reprs.len() != targets.len() {
            return Err(VaeError::ShapeMismatch(format!(
                "{} representations but {} descriptor rows",
                reprs.len(),
                targets.len()
            )));
        }
        Ok(Self {
            x: pack_batch(reprs, config)?,
            targets,
            note_len: config.note_len(),
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn gather(&self, idx: &[usize]) -> (Vec<f32>, Vec<[f64; 2]>) {
        let mut x = Vec::with_capacity(idx.len() * self.note_len);
        for &i in idx {
            x.extend_from_slice(&self.x[i * self.note_len..(i + 1) * self.note_len]);
        }
        (x, idx.iter().map(|&i| self.targets[i]).collect())
    }
}

/// Splits `n` items into at most `workers` contiguous, near-equal ranges.
fn worker_ranges(n: usize, workers: usize) -> Vec<std::ops::Range<usize>> {
    let w = workers.min(n).max(1);
    let (base, extra) = (n / w, n % w);
    let mut start = 0;
    (0..w)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

type StepOutput = (LossParts, Vec<Vec<f32>>);

/// Batch-mean loss and gradients, computed over micro-batches and reduced
/// in worker order.
fn step(
    model: &VaeModel<f32>,
    x: &[f32],
    targets: &[[f64; 2]],
    noise: &[f32],
    workers: usize,
    proxy: Option<&ProxyContext>,
) -> Result<StepOutput> {
    let batch = targets.len();
    let (nl, m) = (model.config.note_len(), model.config.latent_dim);
    let ranges = worker_ranges(batch, workers);
    let run = |r: &std::ops::Range<usize>| {
        model.loss_and_grads(&x[r.start * nl..r.end * nl], &targets[r.clone()], &noise[r.start * m..r.end * m], proxy)
    };
    let outputs: Vec<Result<StepOutput>> = if ranges.len() == 1 {
        vec![run(&ranges[0])]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = ranges.iter().map(|r| s.spawn(move || run(r))).collect();
            handles.into_iter().map(|h| h.join().expect("training worker panicked")).collect()
        })
    };
    if ranges.len() == 1 {
        return outputs.into_iter().next().unwrap();
    }
    let mut parts = LossParts::default();
    let mut grads: Vec<Vec<f32>> = model.params.iter().map(|p| vec![0.0; p.numel()]).collect();
    for (r, out) in ranges.iter().zip(outputs) {
        let (p, g) = out?;
        let w = r.len() as f64 / batch as f64;
        parts.bce += w * p.bce;
        parts.kl += w * p.kl;
        parts.reg += w * p.reg;
        parts.total += w * p.total;
        let wf = w as f32;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.iter_mut().zip(gi).for_each(|(a, v)| *a += wf * v);
        }
    }
    Ok((parts, grads))
}

/// Trains a fresh model on `set` and returns its checkpoint.
///
/// Batches are reshuffled each epoch from `config.seed`; reparameterization
/// noise comes from a separate stream of the same seed, drawn per batch
/// before it is split across workers, so the run is bitwise reproducible
/// for a given worker count.
pub fn train(
    set: &TrainingSet,
    config: &VaeConfig,
    norm_stats: &NormalizationStats,
    descriptor_stats: &DescriptorStats,
) -> Result<VaeCheckpoint> {
    config.validate()?;
    if set.is_empty() {
        return Err(VaeError::EmptyDataset);
    }
    if set.note_len != config.note_len() {
        return Err(VaeError::ShapeMismatch("training set was packed for a different input shape".into()));
    }
    let mut model = VaeModel::<f32>::new(config.clone())?;
    let proxy = (config.reg_mode == RegMode::ReconstructionDescriptor).then(|| ProxyContext {
        stats: norm_stats.clone(),
        dstats: *descriptor_stats,
        cfg: ProxyConfig {
            tau: config.proxy_tau,
            ..Default::default()
        },
    });
    let sizes: Vec<usize> = model.params.iter().map(|p| p.numel()).collect();
    let mut adam = AdamState::<f32>::with_lr(&sizes, config.lr);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(2);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut sums = LossParts::default();
        for (step_idx, idx) in batch_plan(set.len(), config.batch_size, config.seed, epoch as u64).iter().enumerate() {
            let (x, targets) = set.gather(idx);
            let noise: Vec<f32> = (0..idx.len() * config.latent_dim)
                .map(|_| StandardNormal.sample(&mut noise_rng))
                .collect();
            let (parts, grads) = step(&model, &x, &targets, &noise, config.workers, proxy.as_ref())?;
            if !parts.total.is_finite() {
                return Err(VaeError::DivergedLoss {
                    epoch,
                    step: step_idx,
                    value: parts.total,
                });
            }
            let mut params: Vec<&mut [f32]> = model.params.iter_mut().map(|p| p.data.as_mut_slice()).collect();
            let grad_refs: Vec<&[f32]> = grads.iter().map(|g| g.as_slice()).collect();
            adam_step(&mut adam, &mut params, &grad_refs)?;
            let w = idx.len() as f64;
            sums.bce += w * parts.bce;
            sums.kl += w * parts.kl;
            sums.reg += w * parts.reg;
            sums.total += w * parts.total;
        }
        let n = set.len() as f64;
        let stats = EpochStats {
            epoch,
            bce: sums.bce / n,
            kl: sums.kl / n,
            reg: sums.reg / n,
            total: sums.total / n,
        };
        log::info!(
            "epoch {epoch}: total {:.4} bce {:.4} kl {:.4} reg {:.4}",
            stats.total,
            stats.bce,
            stats.kl,
            stats.reg
        );
        history.push(stats);
    }
    Ok(VaeCheckpoint {
        model,
        norm_stats: norm_stats.clone(),
        descriptor_stats: *descriptor_stats,
        history,
    })
}
