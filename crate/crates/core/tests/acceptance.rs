//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line per criterion, and exits non-zero if any failed.
//!
//! The toy corpus (250 notes, the last 50 held out) is generated and
//! extracted once into a temporary directory and shared by the training,
//! alignment, trade-off and determinism criteria.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use timbre_core::autodiff::{ProxyContext, Tape, Tensor, Var};
use timbre_core::dataset::{extract_corpus, CorpusIndex, toy_generate, toy_note, ExtractOptions, ExtractedCorpus, Split, ToySpec};
use timbre_core::descriptors::proxy::ProxyConfig;
use timbre_core::descriptors::{attack_time, energy_envelope, measure_note, DescriptorStats};
use timbre_core::eval::{
    affinities, effective_perplexity, mse, reconstruction_reports, silhouette, ssim, tsne, LabeledNote, TsneConfig,
};
use timbre_core::repr::{
    analyze_note, compute_spectrum, decode_repr, encode_repr, estimate_f0, harmonic_log_amplitudes, read_repr,
    write_repr, AudioNote, NormalizationStats, NoteRepresentation,
};
use timbre_core::synth::{read_wav, synthesize, RenderConfig};
use timbre_core::vae::{train, RegMode, VaeCheckpoint, VaeConfig, VaeModel};
use timbre_core::{hop_seconds, LOG_FLOOR_DB, N_CHANNELS, SAMPLE_RATE, WINDOW};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

// ---------------------------------------------------------------------------
// gradients

type Builder = dyn Fn(&mut Tape<f64>, &[Var]) -> timbre_core::autodiff::Result<Var>;

fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Worst relative error of every input coordinate of
/// `sum(w * f(inputs))` for random weights `w`.
fn op_error(inputs: &[Tensor<f64>], f: &Builder, rng: &mut ChaCha8Rng) -> f64 {
    let weights = {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| t.param(x.clone())).collect();
        let y = f(&mut t, &vars).unwrap();
        rand_tensor(&t.value(y).unwrap().shape.clone(), -1.0, 1.0, rng)
    };
    let eval = |xs: &[Tensor<f64>], grads: bool| -> (f64, Vec<Vec<f64>>) {
        let mut t = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| t.param(x.clone())).collect();
        let y = f(&mut t, &vars).unwrap();
        let w = t.constant(weights.clone());
        let prod = t.mul(y, w).unwrap();
        let loss = t.sum(prod).unwrap();
        let value = t.value(loss).unwrap().data[0];
        if !grads {
            return (value, Vec::new());
        }
        t.backward(loss).unwrap();
        let g = vars
            .iter()
            .map(|&v| t.grad(v).unwrap().map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.value(v).unwrap().numel()]))
            .collect();
        (value, g)
    };
    let (_, analytic) = eval(inputs, true);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (ti, x) in inputs.iter().enumerate() {
        for k in 0..x.numel() {
            let mut xs = inputs.to_vec();
            xs[ti].data[k] = x.data[k] + h;
            let fp = eval(&xs, false).0;
            xs[ti].data[k] = x.data[k] - h;
            let fm = eval(&xs, false).0;
            let fd = (fp - fm) / (2.0 * h);
            let a = analytic[ti][k];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
        }
    }
    worst
}

fn proxy_context() -> ProxyContext {
    let mut min = [LOG_FLOOR_DB; N_CHANNELS];
    let mut max = [0.0; N_CHANNELS];
    min[0] = 80f64.ln();
    max[0] = 2100f64.ln();
    max[8..].fill(-20.0);
    ProxyContext {
        stats: NormalizationStats::new(min, max, LOG_FLOOR_DB),
        dstats: DescriptorStats {
            centroid_min: 0.0,
            centroid_max: 20_000.0,
            attack_min: 0.0,
            attack_max: 5.0,
        },
        cfg: ProxyConfig {
            tau: 0.05,
            ..Default::default()
        },
    }
}

/// ReLU input signs along one forward pass of a 2-note batch.
fn relu_signs(m: &VaeModel<f64>, x: &[f64], noise: &[f64]) -> Vec<bool> {
    let mut tape = Tape::new();
    let p = m.bind(&mut tape, false);
    let c = &m.config;
    let xv = tape.constant(Tensor::new([2, 1, c.input_frames, c.input_channels], x.to_vec()).unwrap());
    let e = m.encode_graph(&mut tape, &p, xv).unwrap();
    let z = tape.reparameterize(e.mu, e.logvar, noise).unwrap();
    let d = m.decode_graph(&mut tape, &p, z).unwrap();
    [e.conv1, e.conv2, d.deconv1]
        .iter()
        .flat_map(|&v| tape.value(v).unwrap().data.iter().map(|&a| a > 0.0).collect::<Vec<_>>())
        .collect()
}

/// Full loss of a 2-note batch against central differences: per parameter
/// tensor its largest-gradient entry plus three random entries (error of
/// the sampled sub-vector, relative to its norm), then one random unit
/// direction through all parameters. Perturbations whose two sides
/// disagree on any ReLU sign straddle a kink and are redrawn.
fn full_model_error(cfg: VaeConfig, ctx: Option<&ProxyContext>) -> f64 {
    let m = VaeModel::<f64>::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x: Vec<f64> = (0..2 * cfg.note_len()).map(|_| rng.random_range(0.05..0.95)).collect();
    let targets = [[0.3, 0.6], [0.8, 0.2]];
    let noise: Vec<f64> = (0..2 * cfg.latent_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, grads) = m.loss_and_grads(&x, &targets, &noise, ctx).unwrap();
    let f = |model: &VaeModel<f64>| model.loss(&x, &targets, &noise, ctx).unwrap().total;
    let smooth = |a: &VaeModel<f64>, b: &VaeModel<f64>| relu_signs(a, &x, &noise) == relu_signs(b, &x, &noise);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (ti, g) in grads.iter().enumerate() {
        let mut by_size: Vec<usize> = (0..g.len()).collect();
        by_size.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()));
        let mut pairs = Vec::new();
        let (mut largest, mut random, mut attempts) = (0, 0, 0);
        while largest < 1 || random < 3 {
            attempts += 1;
            assert!(attempts < 200, "tensor {ti}: no smooth perturbation found");
            let k = if largest < 1 { by_size[attempts - 1] } else { rng.random_range(0..g.len()) };
            let (mut mp, mut mm) = (m.clone(), m.clone());
            mp.params[ti].data[k] += h;
            mm.params[ti].data[k] -= h;
            if !smooth(&mp, &mm) {
                continue;
            }
            pairs.push((g[k], (f(&mp) - f(&mm)) / (2.0 * h)));
            if largest < 1 {
                largest += 1;
            } else {
                random += 1;
            }
        }
        let diff = pairs.iter().map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na = pairs.iter().map(|(a, _)| a * a).sum::<f64>().sqrt();
        let nb = pairs.iter().map(|(_, b)| b * b).sum::<f64>().sqrt();
        worst = worst.max(diff / na.max(nb).max(1e-6));
    }
    for _ in 0..50 {
        let mut dir: Vec<Vec<f64>> = m.params.iter().map(|p| (0..p.numel()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let norm = dir.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().flatten().for_each(|v| *v /= norm);
        let shifted = |s: f64| {
            let mut mm = m.clone();
            for (p, d) in mm.params.iter_mut().zip(&dir) {
                p.data.iter_mut().zip(d).for_each(|(v, dv)| *v += s * dv);
            }
            mm
        };
        let (mp, mm) = (shifted(h), shifted(-h));
        if !smooth(&mp, &mm) {
            continue;
        }
        let analytic: f64 = grads.iter().zip(&dir).flat_map(|(g, d)| g.iter().zip(d).map(|(a, b)| a * b)).sum();
        let fd = (f(&mp) - f(&mm)) / (2.0 * h);
        return worst.max((analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6));
    }
    panic!("no smooth random direction found");
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let ctx = proxy_context();
    let mut cases: Vec<(&str, Vec<Tensor<f64>>, Box<Builder>)> = vec![
        (
            "dense",
            vec![rand_tensor(&[3, 4], -1.0, 1.0, &mut rng), rand_tensor(&[4, 2], -1.0, 1.0, &mut rng), rand_tensor(&[2], -1.0, 1.0, &mut rng)],
            Box::new(|t, v| t.dense(v[0], v[1], v[2])),
        ),
        (
            "conv2d",
            vec![rand_tensor(&[2, 2, 5, 4], -1.0, 1.0, &mut rng), rand_tensor(&[3, 2, 3, 3], -1.0, 1.0, &mut rng), rand_tensor(&[3], -1.0, 1.0, &mut rng)],
            Box::new(|t, v| t.conv2d(v[0], v[1], v[2], 2)),
        ),
        (
            "conv2d_transpose",
            vec![rand_tensor(&[2, 3, 3, 2], -1.0, 1.0, &mut rng), rand_tensor(&[3, 2, 3, 3], -1.0, 1.0, &mut rng), rand_tensor(&[2], -1.0, 1.0, &mut rng)],
            Box::new(|t, v| t.conv2d_transpose(v[0], v[1], v[2], 2, (6, 4))),
        ),
        ("sigmoid", vec![rand_tensor(&[10], -3.0, 3.0, &mut rng)], Box::new(|t, v| t.sigmoid(v[0]))),
        ("softmax", vec![rand_tensor(&[2, 4, 3], -2.0, 2.0, &mut rng)], Box::new(|t, v| t.softmax(v[0], 1))),
        (
            "bce",
            vec![rand_tensor(&[3, 4], 0.05, 0.95, &mut rng), rand_tensor(&[3, 4], 0.0, 1.0, &mut rng)],
            Box::new(|t, v| t.bce_loss(v[0], v[1])),
        ),
        (
            "kl",
            vec![rand_tensor(&[3, 4], -1.0, 1.0, &mut rng), rand_tensor(&[3, 4], -1.0, 1.0, &mut rng)],
            Box::new(|t, v| t.kl_standard_normal(v[0], v[1])),
        ),
        (
            "mae",
            vec![rand_tensor(&[6], -1.0, 1.0, &mut rng), rand_tensor(&[6], 2.0, 3.0, &mut rng)],
            Box::new(|t, v| t.mae_loss(v[0], v[1])),
        ),
        ("reshape", vec![rand_tensor(&[2, 6], -1.0, 1.0, &mut rng)], Box::new(|t, v| t.reshape(v[0], &[3, 4]))),
        ("column", vec![rand_tensor(&[4, 3], -1.0, 1.0, &mut rng)], Box::new(|t, v| t.column(v[0], 1))),
        ("scale", vec![rand_tensor(&[4], -1.0, 1.0, &mut rng)], Box::new(|t, v| t.scale(v[0], -2.5))),
        (
            "add_mul",
            vec![rand_tensor(&[5], -1.0, 1.0, &mut rng), rand_tensor(&[5], -1.0, 1.0, &mut rng)],
            Box::new(|t, v| {
                let a = t.add(v[0], v[1])?;
                t.mul(a, v[0])
            }),
        ),
        (
            "descriptor_proxy",
            vec![rand_tensor(&[2, 16, N_CHANNELS], 0.2, 0.8, &mut rng)],
            Box::new(move |t, v| t.descriptor_proxy(v[0], &ctx)),
        ),
    ];
    // ReLU away from its kink
    let relu_in: Vec<f64> = (0..10)
        .map(|_| {
            let v: f64 = rng.random_range(0.1..1.0);
            if rng.random::<bool>() { v } else { -v }
        })
        .collect();
    cases.push(("relu", vec![Tensor::new([10], relu_in).unwrap()], Box::new(|t, v| t.relu(v[0]))));
    let noise: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
    cases.push((
        "reparameterize",
        vec![rand_tensor(&[2, 3], -1.0, 1.0, &mut rng), rand_tensor(&[2, 3], -1.0, 1.0, &mut rng)],
        Box::new(move |t, v| t.reparameterize(v[0], v[1], &noise)),
    ));

    let mut op_worst = ("", 0.0f64);
    for (name, inputs, f) in &cases {
        let err = op_error(inputs, f.as_ref(), &mut rng);
        check(err < 1e-4, || format!("{name}: rel err {err:.2e} >= 1e-4"))?;
        if err > op_worst.1 {
            op_worst = (name, err);
        }
    }
    let latent = full_model_error(VaeConfig::default(), None);
    check(latent < 1e-3, || format!("full model (latent-attribute): rel err {latent:.2e} >= 1e-3"))?;
    let pctx = proxy_context();
    let recon_cfg = VaeConfig {
        reg_mode: RegMode::ReconstructionDescriptor,
        ..Default::default()
    };
    let recon = full_model_error(recon_cfg, Some(&pctx));
    check(recon < 1e-3, || format!("full model (reconstruction-descriptor): rel err {recon:.2e} >= 1e-3"))?;
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(120), || format!("took {elapsed:.1?}"))?;
    Ok(format!(
        "{} ops, worst {} {:.1e}; full model {latent:.1e} / {recon:.1e}; {elapsed:.1?}",
        cases.len(),
        op_worst.0,
        op_worst.1
    ))
}

// ---------------------------------------------------------------------------
// DSP

fn partials(components: &[(f64, f64)], secs: f64, onset_s: f64) -> Vec<f32> {
    let n = (secs * SAMPLE_RATE as f64) as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let env = if onset_s > 0.0 { (t / onset_s).min(1.0) } else { 1.0 };
            (env * components.iter().map(|&(f, a)| a * (2.0 * PI * f * t).sin()).sum::<f64>()) as f32
        })
        .collect()
}

fn dsp_oracles() -> Outcome {
    let tone = AudioNote::new("sine", "test", partials(&[(440.0, 0.5)], 1.0, 0.0), SAMPLE_RATE, None).unwrap();
    let f0 = estimate_f0(&tone).map_err(|e| e.to_string())?;
    let f0_err = f0.iter().map(|f| (f - 440.0).abs()).fold(0.0, f64::max);
    check(f0_err <= 1.0, || format!("f0 off by {f0_err:.3} Hz"))?;
    let (centroid, _) = measure_note(&tone).map_err(|e| e.to_string())?;
    check((centroid - 440.0).abs() <= 5.0, || format!("centroid {centroid:.2} Hz"))?;

    let amps = [0.4, 0.2, 0.1, 0.05, 0.025, 0.0125, 0.00625];
    let mut db_err = 0.0f64;
    for f0 in [110.0, 220.0, 347.0, 440.0, 880.0] {
        let comps: Vec<(f64, f64)> = amps.iter().enumerate().map(|(n, &a)| ((n + 1) as f64 * f0, a)).collect();
        let frame = &partials(&comps, 0.2, 0.0)[..WINDOW];
        let db = harmonic_log_amplitudes(&compute_spectrum(frame, SAMPLE_RATE), f0, LOG_FLOOR_DB);
        for (n, &a) in amps.iter().enumerate() {
            db_err = db_err.max((db[n] - 20.0 * a.log10()).abs());
        }
    }
    check(db_err <= 0.5, || format!("harmonic level off by {db_err:.3} dB"))?;

    let ramp = AudioNote::new("ramp", "test", partials(&[(330.0, 0.5)], 2.0, 1.0), SAMPLE_RATE, None).unwrap();
    let (_, attack) = measure_note(&ramp).map_err(|e| e.to_string())?;
    let tol = 2.0 * hop_seconds();
    check((attack - 0.8).abs() <= tol, || format!("audio attack {attack:.4} s"))?;
    let hop = hop_seconds();
    let env: Vec<f64> = (0..(2.0 / hop) as usize).map(|i| (i as f64 * hop).min(1.0)).collect();
    let env_attack = attack_time(&env, hop, 0.1, 0.9).map_err(|e| e.to_string())?;
    check((env_attack - 0.8).abs() <= tol, || format!("envelope attack {env_attack:.4} s"))?;
    let _ = energy_envelope(&ramp.samples, WINDOW, timbre_core::HOP).map_err(|e| e.to_string())?;
    Ok(format!(
        "f0 err {f0_err:.3} Hz, centroid {centroid:.2} Hz, harmonic err {db_err:.3} dB, attack {attack:.4} s"
    ))
}

// ---------------------------------------------------------------------------
// shapes and losses

fn shape_contract() -> Outcome {
    let m = VaeModel::<f32>::new(VaeConfig::default()).map_err(|e| e.to_string())?;
    let mut tape = Tape::new();
    let p = m.bind(&mut tape, false);
    let x = tape.constant(Tensor::zeros([2, 1, 368, 12]));
    let e = m.encode_graph(&mut tape, &p, x).map_err(|e| e.to_string())?;
    let d = m.decode_graph(&mut tape, &p, e.mu).map_err(|e| e.to_string())?;
    let shapes = [
        (e.conv1, vec![2, 32, 184, 6]),
        (e.conv2, vec![2, 32, 92, 3]),
        (e.flat, vec![2, 8832]),
        (e.mu, vec![2, 14]),
        (e.logvar, vec![2, 14]),
        (d.dense, vec![2, 8832]),
        (d.deconv1, vec![2, 32, 184, 6]),
        (d.deconv2, vec![2, 1, 368, 12]),
        (d.output, vec![2, 368, 12]),
    ];
    for (v, want) in &shapes {
        let got = tape.shape(*v).unwrap();
        check(got == want.as_slice(), || format!("{got:?} != {want:?}"))?;
    }
    let cfg = VaeConfig::default();
    check(cfg.stage_shapes() == [(184, 6), (92, 3)] && cfg.flat_len() == 8832, || "config stage shapes".into())?;
    Ok("368x12 -> 184x6 -> 92x3 -> 8832 -> 14 and mirror".into())
}

fn analytic_losses() -> Outcome {
    let mut t = Tape::<f64>::new();
    let zero = t.constant(Tensor::zeros([1, 1]));
    let one = t.constant(Tensor::new([1, 1], vec![1.0]).unwrap());
    let kl0 = t.kl_standard_normal(zero, zero).unwrap();
    let kl1 = t.kl_standard_normal(one, zero).unwrap();
    let half = t.constant(Tensor::new([1], vec![0.5]).unwrap());
    let bce = t.bce_loss(half, half).unwrap();
    let (kl0, kl1, bce) = (t.value(kl0).unwrap().data[0], t.value(kl1).unwrap().data[0], t.value(bce).unwrap().data[0]);
    check(kl0 == 0.0, || format!("KL(0,0) = {kl0}"))?;
    check((kl1 - 0.5).abs() < 1e-12, || format!("KL(1,0) = {kl1}"))?;
    check((bce - 2f64.ln()).abs() <= 1e-6, || format!("BCE(0.5,0.5) = {bce}"))?;

    let cfg = VaeConfig {
        reg_weight: 0.0,
        ..Default::default()
    };
    let m = VaeModel::<f64>::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..2 * cfg.note_len()).map(|_| rng.random_range(0.05..0.95)).collect();
    let noise: Vec<f64> = (0..28).map(|_| rng.sample(StandardNormal)).collect();
    let parts = m.loss(&x, &[[0.2, 0.3], [0.7, 0.1]], &noise, None).map_err(|e| e.to_string())?;
    check(parts.total == parts.bce + parts.kl && parts.reg == 0.0, || format!("lambda=0: {parts:?}"))?;
    Ok(format!("KL {kl0} / {kl1}, BCE {bce:.9}, lambda=0 total {:.6} = bce + kl", parts.total))
}

// ---------------------------------------------------------------------------
// toy corpus and training

struct Toy {
    _dir: tempfile::TempDir,
    source: CorpusIndex,
    extracted: std::path::PathBuf,
    corpus: ExtractedCorpus,
}

fn toy_corpus() -> Result<Toy, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = ToySpec::default();
    let index = toy_generate(&spec, dir.path().join("toy")).map_err(|e| e.to_string())?;
    let extracted = dir.path().join("extracted");
    let report = extract_corpus(&index, &extracted, &ExtractOptions::default()).map_err(|e| e.to_string())?;
    if !report.failed.is_empty() {
        return Err(format!("{} toy notes failed to extract", report.failed.len()));
    }
    let corpus = ExtractedCorpus::load(&extracted).map_err(|e| e.to_string())?;
    Ok(Toy {
        _dir: dir,
        source: index,
        extracted,
        corpus,
    })
}

fn toy_config(seed: u64, reg_weight: f64) -> VaeConfig {
    VaeConfig {
        seed,
        reg_weight,
        epochs: 30,
        batch_size: 32,
        ..Default::default()
    }
}

fn fit(toy: &Toy, cfg: &VaeConfig) -> Result<VaeCheckpoint, String> {
    let set = toy.corpus.training_set(Split::Train, cfg).map_err(|e| e.to_string())?;
    train(&set, cfg, &toy.corpus.norm_stats, &toy.corpus.descriptor_stats).map_err(|e| e.to_string())
}

fn labeled(toy: &Toy, split: Split) -> Vec<LabeledNote<'_>> {
    toy.corpus
        .split(split)
        .into_iter()
        .map(|n| LabeledNote {
            id: &n.entry.note_id,
            family: &n.entry.family,
            repr: &n.repr,
        })
        .collect()
}

/// Mean over notes of the per-note MSE between each note and the decoded
/// posterior mean.
fn per_note_mse(ckpt: &VaeCheckpoint, notes: &[LabeledNote<'_>]) -> f64 {
    let recon = timbre_core::eval::reconstruct(&ckpt.model, notes).unwrap();
    let len = ckpt.config().note_len();
    notes
        .iter()
        .zip(recon.chunks(len))
        .map(|(n, r)| {
            let a: Vec<f64> = n.repr.values.iter().map(|&v| v as f64).collect();
            let b: Vec<f64> = r.iter().map(|&v| v as f64).collect();
            mse(&a, &b).unwrap()
        })
        .sum::<f64>()
        / notes.len() as f64
}

fn toy_training(toy: &Toy, ckpt: &VaeCheckpoint, elapsed: Duration) -> Outcome {
    let train_notes = labeled(toy, Split::Train);
    check(train_notes.len() == 200, || format!("{} training notes", train_notes.len()))?;
    let totals: Vec<f64> = ckpt.history.iter().map(|h| h.total).collect();
    check(totals.len() == 30, || format!("{} epochs recorded", totals.len()))?;
    check(totals[..5].windows(2).all(|w| w[1] < w[0]), || format!("first epochs {:?}", &totals[..5]))?;
    let train_mse = per_note_mse(ckpt, &train_notes);
    let test_mse = per_note_mse(ckpt, &labeled(toy, Split::Test));
    check(train_mse < 0.01, || format!("training MSE {train_mse:.5}"))?;
    check(test_mse < 0.01, || format!("held-out MSE {test_mse:.5}"))?;
    check(elapsed < Duration::from_secs(600), || format!("took {elapsed:.1?}"))?;
    let first: Vec<String> = totals[..5].iter().map(|v| format!("{v:.3}")).collect();
    Ok(format!(
        "loss {} ...; MSE train {train_mse:.5}, held-out {test_mse:.5}; {elapsed:.1?}",
        first.join(" > ")
    ))
}

fn alignment(toy: &Toy, ckpt: &VaeCheckpoint) -> Outcome {
    let test = toy.corpus.split(Split::Test);
    check(test.len() == 50, || format!("{} held-out notes", test.len()))?;
    let mu = timbre_core::eval::encode_means(&ckpt.model, &labeled(toy, Split::Test)).map_err(|e| e.to_string())?;
    let dim = ckpt.config().latent_dim;
    let col = |k: usize| -> Vec<f64> { mu.chunks(dim).map(|z| z[k] as f64).collect() };
    let centroid: Vec<f64> = test.iter().map(|n| n.descriptors.centroid_norm).collect();
    let attack: Vec<f64> = test.iter().map(|n| n.descriptors.attack_norm).collect();
    let (rc, ra) = (pearson(&col(0), &centroid), pearson(&col(1), &attack));
    check(rc.abs() >= 0.8 && ra.abs() >= 0.8, || format!("|r| centroid {rc:.3}, attack {ra:.3}"))?;
    Ok(format!("r(mu0, centroid) {rc:.3}, r(mu1, attack) {ra:.3}"))
}

const TRADE_OFF_SEEDS: [u64; 3] = [0, 1, 2];

/// Held-out MSE and SSIM (normalized units) for regularized and plain
/// runs from the same seeds, judged on their means over seeds.
fn trade_off(toy: &Toy, seed0_reg: &VaeCheckpoint) -> Outcome {
    let notes = labeled(toy, Split::Test);
    let score = |c: &VaeCheckpoint| -> Result<(f64, f64), String> {
        let [n, _] = reconstruction_reports(&c.model, &c.norm_stats, &notes, false).map_err(|e| e.to_string())?;
        Ok((n.mse, n.ssim))
    };
    let mut rows = Vec::new();
    for seed in TRADE_OFF_SEEDS {
        let reg = if seed == 0 { seed0_reg.clone() } else { fit(toy, &toy_config(seed, 1.0))? };
        let plain = fit(toy, &toy_config(seed, 0.0))?;
        let (r, p) = (score(&reg)?, score(&plain)?);
        println!(
            "    seed {seed}: lambda=1 mse {:.5} ssim {:.4} | lambda=0 mse {:.5} ssim {:.4}",
            r.0, r.1, p.0, p.1
        );
        rows.push((r, p));
    }
    let k = rows.len() as f64;
    let mean = |f: &dyn Fn(&((f64, f64), (f64, f64))) -> f64| rows.iter().map(f).sum::<f64>() / k;
    let (mse_reg, mse_plain) = (mean(&|r| r.0 .0), mean(&|r| r.1 .0));
    let (ssim_reg, ssim_plain) = (mean(&|r| r.0 .1), mean(&|r| r.1 .1));
    let summary = format!(
        "mean over seeds {TRADE_OFF_SEEDS:?}: MSE {mse_reg:.5} (lambda=1) vs {mse_plain:.5} (lambda=0), SSIM {ssim_reg:.4} vs {ssim_plain:.4}"
    );
    check(mse_reg >= mse_plain && ssim_reg <= ssim_plain, || summary.clone())?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// t-SNE and metrics

fn tsne_criterion() -> Outcome {
    let start = Instant::now();
    let (per, dim) = (50, 14);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut points = Vec::with_capacity(3 * per * dim);
    let mut labels = Vec::new();
    for c in 0..3 {
        for _ in 0..per {
            for d in 0..dim {
                let center = if d == c { 2.0 } else { 0.0 };
                points.push(center + 0.1 * rng.sample::<f64, _>(StandardNormal));
            }
            labels.push(c);
        }
    }
    check(effective_perplexity(150, 50.0) == 50.0, || "perplexity 50 should be kept for 150 points".into())?;
    let reduced = effective_perplexity(100, 50.0);
    check(reduced == 33.0, || format!("100 points: perplexity {reduced}"))?;
    let aff = affinities(&points, dim, 50.0).map_err(|e| e.to_string())?;
    let target = 50f64.log2();
    let h_err = aff.entropies.iter().map(|h| (h - target).abs()).fold(0.0, f64::max);
    check(h_err <= 1e-4, || format!("entropy off by {h_err:.2e} bits"))?;
    let y = tsne(&points, dim, &TsneConfig::default()).map_err(|e| e.to_string())?;
    let s = silhouette(&y, 2, &labels).map_err(|e| e.to_string())?;
    check(s >= 0.3, || format!("silhouette {s:.3}"))?;
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(60), || format!("took {elapsed:.1?}"))?;
    Ok(format!("entropy err {h_err:.1e} bits, silhouette {s:.3}, {elapsed:.1?}"))
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_sym = 0.0f64;
    let mut worst_one = 0.0f64;
    for _ in 0..20 {
        let x: Vec<f64> = (0..368 * 12).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..368 * 12).map(|_| rng.random::<f64>()).collect();
        check(mse(&x, &x).unwrap() == 0.0, || "mse(x, x) != 0".into())?;
        worst_one = worst_one.max((ssim(&x, &x, 368, 12).unwrap() - 1.0).abs());
        worst_sym = worst_sym.max((ssim(&x, &y, 368, 12).unwrap() - ssim(&y, &x, 368, 12).unwrap()).abs());
    }
    check(worst_one <= 1e-9, || format!("|ssim(x, x) - 1| = {worst_one:.2e}"))?;
    check(worst_sym <= 1e-12, || format!("ssim asymmetry {worst_sym:.2e}"))?;
    Ok(format!("|ssim(x,x)-1| {worst_one:.1e}, asymmetry {worst_sym:.1e}"))
}

// ---------------------------------------------------------------------------
// round trips

/// Worst per-frame harmonic level difference (harmonics at least 40 dB
/// above the floor in the original), centroid ratio error and attack
/// difference after rendering a note from its own representation.
fn resynthesis_errors(samples: Vec<f32>) -> Result<(f64, f64, f64), String> {
    let note = AudioNote::new("t", "toy", samples, SAMPLE_RATE, None).map_err(|e| e.to_string())?;
    let raw = analyze_note(&note).map_err(|e| e.to_string())?;
    let stats = NormalizationStats::fit([&raw], LOG_FLOOR_DB);
    let cfg = RenderConfig {
        fade_ms: 0.0,
        ..Default::default()
    };
    let rendered = synthesize(&stats.normalize(&raw), &stats, &cfg).map_err(|e| e.to_string())?;
    let again = AudioNote::new("t2", "toy", rendered, SAMPLE_RATE, None).map_err(|e| e.to_string())?;
    let raw2 = analyze_note(&again).map_err(|e| e.to_string())?;
    if raw2.frames != raw.frames {
        return Err(format!("{} frames became {}", raw.frames, raw2.frames));
    }
    let mut db_err = 0.0f64;
    for i in 0..raw.frames {
        for h in 1..=7 {
            let a = raw.row(i)[h];
            if a >= LOG_FLOOR_DB + 40.0 {
                db_err = db_err.max((a - raw2.row(i)[h]).abs());
            }
        }
    }
    let (c1, a1) = measure_note(&note).map_err(|e| e.to_string())?;
    let (c2, a2) = measure_note(&again).map_err(|e| e.to_string())?;
    Ok((db_err, (c2 - c1).abs() / c1, (a2 - a1).abs()))
}

fn round_trips(toy: &Toy) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let repr = &toy.corpus.notes[0].repr;
    let bytes = encode_repr(repr);
    check(encode_repr(&decode_repr(&bytes).unwrap()) == bytes, || "repr bytes changed".into())?;
    let path = dir.path().join("n.tsr");
    write_repr(&path, repr).map_err(|e| e.to_string())?;
    let back: NoteRepresentation = read_repr(&path).map_err(|e| e.to_string())?;
    check(&back == repr && std::fs::read(&path).unwrap() == bytes, || "repr file round trip".into())?;

    let ckpt = fit(toy, &VaeConfig { epochs: 1, ..toy_config(3, 1.0) })?;
    let cb = ckpt.to_bytes().map_err(|e| e.to_string())?;
    let loaded = VaeCheckpoint::from_bytes(&cb).map_err(|e| e.to_string())?;
    check(loaded == ckpt && loaded.to_bytes().unwrap() == cb, || "checkpoint round trip".into())?;
    let cpath = dir.path().join("m.ckpt");
    timbre_core::vae::save_checkpoint(&cpath, &ckpt).map_err(|e| e.to_string())?;
    check(std::fs::read(&cpath).unwrap() == cb, || "checkpoint file bytes".into())?;

    // every 10th toy note plus tones at the ends of the pitch range
    let mut sources: Vec<Vec<f32>> = toy
        .source
        .entries
        .iter()
        .step_by(10)
        .map(|e| read_wav(toy.source.wav_path(e)).map(|(s, _)| s).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    sources.push(toy_note(82.0, 0.0, 0.05, 0.5, 1.0));
    sources.push(toy_note(2000.0, -12.0, 1.0, 4.0, 2.0));
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for samples in sources {
        let (d, c, a) = resynthesis_errors(samples)?;
        worst = (worst.0.max(d), worst.1.max(c), worst.2.max(a));
    }
    let hops = worst.2 / hop_seconds();
    check(worst.0 <= 1.0 && worst.1 <= 0.10 && hops <= 2.0, || {
        format!("harmonics {:.3} dB, centroid {:.2}%, attack {hops:.2} hops", worst.0, 100.0 * worst.1)
    })?;
    Ok(format!(
        "repr and checkpoint bitwise; resynthesis: harmonics {:.3} dB, centroid {:.2}%, attack {hops:.2} hops",
        worst.0,
        100.0 * worst.1
    ))
}

// ---------------------------------------------------------------------------
// determinism through the command line

fn cli(args: &[&str]) -> Result<(), String> {
    use clap::Parser;
    let cli = timbre_cli::Cli::try_parse_from(std::iter::once("timbre-cli").chain(args.iter().copied()))
        .map_err(|e| e.to_string())?;
    timbre_cli::run(cli).map_err(|e| e.to_string())
}

fn determinism(toy: &Toy) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let reprs = s(&toy.extracted);
    let mut ckpts = Vec::new();
    let mut projections = Vec::new();
    for run in 0..2 {
        let ckpt = dir.path().join(format!("run{run}.ckpt"));
        cli(&["train", "--reprs", &reprs, "--out", &s(&ckpt), "--epochs", "3", "--batch-size", "32", "--seed", "11"])?;
        let proj = dir.path().join(format!("run{run}.json"));
        cli(&["project", "--checkpoint", &s(&dir.path().join("run0.ckpt")), "--reprs", &reprs, "--out", &s(&proj), "--seed", "4"])?;
        ckpts.push(std::fs::read(&ckpt).map_err(|e| e.to_string())?);
        projections.push(std::fs::read(&proj).map_err(|e| e.to_string())?);
    }
    check(ckpts[0] == ckpts[1], || "checkpoints differ".into())?;
    check(projections[0] == projections[1], || "projection JSON differs".into())?;
    Ok(format!(
        "{} checkpoint bytes and {} projection bytes identical",
        ckpts[0].len(),
        projections[0].len()
    ))
}

// ---------------------------------------------------------------------------

fn report(results: &mut Vec<(String, bool)>, name: &str, outcome: Outcome) {
    let pass = outcome.is_ok();
    match outcome {
        Ok(detail) => println!("PASS {name}: {detail}"),
        Err(detail) => println!("FAIL {name}: {detail}"),
    }
    results.push((name.to_string(), pass));
}

fn main() {
    let mut results = Vec::new();
    report(&mut results, "gradient suite", gradient_suite());
    report(&mut results, "DSP oracles", dsp_oracles());
    report(&mut results, "shape contract", shape_contract());
    report(&mut results, "analytic loss values", analytic_losses());
    report(&mut results, "metric identities", metric_identities());
    report(&mut results, "t-SNE", tsne_criterion());

    match toy_corpus() {
        Ok(toy) => {
            let start = Instant::now();
            let reg = fit(&toy, &toy_config(0, 1.0));
            let elapsed = start.elapsed();
            match reg {
                Ok(ckpt) => {
                    report(&mut results, "toy training", toy_training(&toy, &ckpt, elapsed));
                    report(&mut results, "regularization alignment", alignment(&toy, &ckpt));
                    report(&mut results, "trade-off direction", trade_off(&toy, &ckpt));
                }
                Err(e) => {
                    for name in ["toy training", "regularization alignment", "trade-off direction"] {
                        report(&mut results, name, Err(e.clone()));
                    }
                }
            }
            report(&mut results, "round trips", round_trips(&toy));
            report(&mut results, "determinism", determinism(&toy));
        }
        Err(e) => {
            for name in ["toy training", "regularization alignment", "trade-off direction", "round trips", "determinism"] {
                report(&mut results, name, Err(format!("toy corpus: {e}")));
            }
        }
    }

    let failed: Vec<&str> = results.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
