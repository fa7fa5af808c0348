use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{KlReduction, OutputActivation, RegMode, Result, SoftmaxAxis, VaeConfig, VaeError};
use crate::autodiff::{ProxyContext, Scalar, Tape, Tensor, Var};
use crate::repr::NoteRepresentation;

/// Name, shape and Glorot fans of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
    pub bias: bool,
}

const CONV1_W: usize = 0;
const CONV1_B: usize = 1;
const CONV2_W: usize = 2;
const CONV2_B: usize = 3;
const MU_W: usize = 4;
const MU_B: usize = 5;
const LOGVAR_W: usize = 6;
const LOGVAR_B: usize = 7;
const DENSE_W: usize = 8;
const DENSE_B: usize = 9;
const DECONV1_W: usize = 10;
const DECONV1_B: usize = 11;
const DECONV2_W: usize = 12;
const DECONV2_B: usize = 13;

impl VaeConfig {
    /// Parameter tensors in storage order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let (f, k, m, flat) = (self.conv_filters, self.kernel, self.latent_dim, self.flat_len());
        let kk = k * k;
        let w = |name: &str, shape: Vec<usize>, fan_in: usize, fan_out: usize| ParamSpec {
            name: name.to_string(),
            shape,
            fan_in,
            fan_out,
            bias: false,
        };
        let b = |name: &str, n: usize| ParamSpec {
            name: name.to_string(),
            shape: vec![n],
            fan_in: 0,
            fan_out: 0,
            bias: true,
        };
        vec![
            w("enc.conv1.w", vec![f, 1, k, k], kk, f * kk),
            b("enc.conv1.b", f),
            w("enc.conv2.w", vec![f, f, k, k], f * kk, f * kk),
            b("enc.conv2.b", f),
            w("enc.mu.w", vec![flat, m], flat, m),
            b("enc.mu.b", m),
            w("enc.logvar.w", vec![flat, m], flat, m),
            b("enc.logvar.b", m),
            w("dec.dense.w", vec![m, flat], m, flat),
            b("dec.dense.b", flat),
            w("dec.deconv1.w", vec![f, f, k, k], f * kk, f * kk),
            b("dec.deconv1.b", f),
            w("dec.deconv2.w", vec![f, 1, k, k], f * kk, kk),
            b("dec.deconv2.b", 1),
        ]
    }
}

/// Loss components of one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    /// Mean per-element binary cross-entropy.
    pub bce: f64,
    /// KL divergence to the prior after the configured reduction.
    pub kl: f64,
    pub reg: f64,
    pub total: f64,
}

/// Tape handles of the loss components.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub bce: Var,
    pub kl: Var,
    pub reg: Option<Var>,
    pub total: Var,
}

impl LossVars {
    pub fn values<T: Scalar>(&self, tape: &Tape<T>) -> Result<LossParts> {
        let get = |v: Var| -> Result<f64> { Ok(tape.value(v)?.data[0].as_f64()) };
        Ok(LossParts {
            bce: get(self.bce)?,
            kl: get(self.kl)?,
            reg: match self.reg {
                Some(r) => get(r)?,
                None => 0.0,
            },
            total: get(self.total)?,
        })
    }
}

/// `BCE + beta * KL + lambda * R` on a tape.
///
/// `x` and `xhat` are `[B, frames, channels]`, `mu`/`logvar` are `[B, M]`
/// and `d_norm` is `[B, 2]` (normalized centroid, attack). With
/// `reg_weight == 0` the regularizer is skipped and reported as zero.
#[allow(clippy::too_many_arguments)]
pub fn assemble_loss<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &VaeConfig,
    x: Var,
    xhat: Var,
    mu: Var,
    logvar: Var,
    d_norm: Var,
    proxy: Option<&ProxyContext>,
) -> Result<LossVars> {
    let bce = tape.bce_loss(xhat, x)?;
    let kl_note = tape.kl_standard_normal(mu, logvar)?;
    let kl = match cfg.kl_reduction {
        KlReduction::PerNote => kl_note,
        KlReduction::PerElement => {
            let per_note = tape.value(x)?.numel() / tape.shape(x)?[0].max(1);
            tape.scale(kl_note, 1.0 / per_note as f64)?
        }
    };
    let mode = if cfg.reg_weight == 0.0 { RegMode::Off } else { cfg.reg_mode };
    let reg = match mode {
        RegMode::Off => None,
        RegMode::LatentAttribute => {
            let (m0, m1) = (tape.column(mu, 0)?, tape.column(mu, 1)?);
            let (d0, d1) = (tape.column(d_norm, 0)?, tape.column(d_norm, 1)?);
            let r0 = tape.mae_loss(m0, d0)?;
            let r1 = tape.mae_loss(m1, d1)?;
            Some(tape.add(r0, r1)?)
        }
        RegMode::ReconstructionDescriptor => {
            let ctx = proxy.ok_or_else(|| {
                VaeError::InvalidConfig("reconstruction-descriptor mode needs normalization and descriptor stats".into())
            })?;
            let pred = tape.descriptor_proxy(xhat, ctx)?;
            let (p0, p1) = (tape.column(pred, 0)?, tape.column(pred, 1)?);
            let (d0, d1) = (tape.column(d_norm, 0)?, tape.column(d_norm, 1)?);
            let r0 = tape.mae_loss(p0, d0)?;
            let r1 = tape.mae_loss(p1, d1)?;
            Some(tape.add(r0, r1)?)
        }
    };
    let kl_term = if cfg.kl_weight == 1.0 { kl } else { tape.scale(kl, cfg.kl_weight)? };
    let mut total = tape.add(bce, kl_term)?;
    if let Some(r) = reg {
        let term = if cfg.reg_weight == 1.0 { r } else { tape.scale(r, cfg.reg_weight)? };
        total = tape.add(total, term)?;
    }
    Ok(LossVars { bce, kl, reg, total })
}

/// Encoder intermediates, kept for shape checks.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub conv1: Var,
    pub conv2: Var,
    pub flat: Var,
    pub mu: Var,
    pub logvar: Var,
}

/// Decoder intermediates, kept for shape checks.
#[derive(Debug, Clone, Copy)]
pub struct DecoderVars {
    pub dense: Var,
    pub deconv1: Var,
    pub deconv2: Var,
    pub output: Var,
}

/// Model parameters with their architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel<T> {
    pub config: VaeConfig,
    pub params: Vec<Tensor<T>>,
}

impl<T: Scalar> VaeModel<T> {
    /// Glorot-uniform kernels and zero biases drawn from `config.seed`.
    pub fn new(config: VaeConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = config
            .param_specs()
            .into_iter()
            .map(|s| {
                if s.bias {
                    Tensor::zeros(s.shape)
                } else {
                    Tensor::glorot(s.shape, s.fan_in, s.fan_out, &mut rng)
                }
            })
            .collect();
        Ok(Self { config, params })
    }

    pub fn from_params(config: VaeConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let specs = config.param_specs();
        if specs.len() != params.len() {
            return Err(VaeError::ShapeMismatch(format!("expected {} tensors, got {}", specs.len(), params.len())));
        }
        for (s, p) in specs.iter().zip(&params) {
            if s.shape != p.shape {
                return Err(VaeError::ShapeMismatch(format!("{}: expected {:?}, got {:?}", s.name, s.shape, p.shape)));
            }
        }
        Ok(Self { config, params })
    }

    pub fn cast<U: Scalar>(&self) -> VaeModel<U> {
        VaeModel {
            config: self.config.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    /// Records the parameters on `tape`, as trainable leaves if `trainable`.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if trainable { tape.param(p.clone()) } else { tape.constant(p.clone()) })
            .collect()
    }

    fn input(&self, tape: &mut Tape<T>, x: &[T], batch: usize) -> Result<Var> {
        let c = &self.config;
        let shape = vec![batch, 1, c.input_frames, c.input_channels];
        Ok(tape.constant(Tensor::new(shape, x.to_vec())?))
    }

    pub fn encode_graph(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<EncoderVars> {
        let s = self.config.stride;
        let c1 = tape.conv2d(x, p[CONV1_W], p[CONV1_B], s)?;
        let conv1 = tape.relu(c1)?;
        let c2 = tape.conv2d(conv1, p[CONV2_W], p[CONV2_B], s)?;
        let conv2 = tape.relu(c2)?;
        let batch = tape.shape(x)?[0];
        let flat = tape.reshape(conv2, &[batch, self.config.flat_len()])?;
        let mu = tape.dense(flat, p[MU_W], p[MU_B])?;
        let logvar = tape.dense(flat, p[LOGVAR_W], p[LOGVAR_B])?;
        Ok(EncoderVars { conv1, conv2, flat, mu, logvar })
    }

    pub fn decode_graph(&self, tape: &mut Tape<T>, p: &[Var], z: Var) -> Result<DecoderVars> {
        let c = &self.config;
        let [(h1, w1), (h2, w2)] = c.stage_shapes();
        let batch = tape.shape(z)?[0];
        let dense = tape.dense(z, p[DENSE_W], p[DENSE_B])?;
        let grid = tape.reshape(dense, &[batch, c.conv_filters, h2, w2])?;
        let d1 = tape.conv2d_transpose(grid, p[DECONV1_W], p[DECONV1_B], c.stride, (h1, w1))?;
        let deconv1 = tape.relu(d1)?;
        let deconv2 = tape.conv2d_transpose(deconv1, p[DECONV2_W], p[DECONV2_B], c.stride, (c.input_frames, c.input_channels))?;
        let logits = tape.reshape(deconv2, &[batch, c.input_frames, c.input_channels])?;
        let output = match c.output_activation {
            OutputActivation::Sigmoid => tape.sigmoid(logits)?,
            OutputActivation::Softmax => {
                let axis = match c.softmax_axis {
                    SoftmaxAxis::Frames => 1,
                    SoftmaxAxis::Channels => 2,
                };
                tape.softmax(logits, axis)?
            }
        };
        Ok(DecoderVars { dense, deconv1, deconv2, output })
    }

    fn check_batch(&self, x: &[T]) -> Result<usize> {
        let n = self.config.note_len();
        if x.is_empty() || x.len() % n != 0 {
            return Err(VaeError::ShapeMismatch(format!("{} values is not a whole number of {n}-value notes", x.len())));
        }
        Ok(x.len() / n)
    }

    /// Posterior mean and log-variance, each `[B, M]` row-major.
    pub fn encode(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let batch = self.check_batch(x)?;
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let xv = self.input(&mut tape, x, batch)?;
        let e = self.encode_graph(&mut tape, &p, xv)?;
        Ok((tape.value(e.mu)?.data.clone(), tape.value(e.logvar)?.data.clone()))
    }

    /// Decoded notes `[B, frames, channels]` for latent rows `z` (`[B, M]`).
    pub fn decode(&self, z: &[T]) -> Result<Vec<T>> {
        let m = self.config.latent_dim;
        if z.is_empty() || z.len() % m != 0 {
            return Err(VaeError::ShapeMismatch(format!("{} values is not a whole number of {m}-dim codes", z.len())));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(VaeError::ShapeMismatch("latent code contains non-finite values".into()));
        }
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let zv = tape.constant(Tensor::new([z.len() / m, m], z.to_vec())?);
        let d = self.decode_graph(&mut tape, &p, zv)?;
        Ok(tape.value(d.output)?.data.clone())
    }

    /// Full forward pass and loss on an existing tape. `noise` is `[B, M]`.
    pub fn loss_graph(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        x: &[T],
        targets: &[[f64; 2]],
        noise: &[T],
        proxy: Option<&ProxyContext>,
    ) -> Result<LossVars> {
        let batch = self.check_batch(x)?;
        if targets.len() != batch {
            return Err(VaeError::ShapeMismatch(format!("{} descriptor rows for {batch} notes", targets.len())));
        }
        let c = &self.config;
        let xv = self.input(tape, x, batch)?;
        let e = self.encode_graph(tape, p, xv)?;
        let z = tape.reparameterize(e.mu, e.logvar, noise)?;
        let d = self.decode_graph(tape, p, z)?;
        let target = tape.constant(Tensor::new([batch, c.input_frames, c.input_channels], x.to_vec())?);
        let dn = Tensor::new([batch, 2], targets.iter().flatten().map(|&v| T::of(v)).collect())?;
        let dn = tape.constant(dn);
        assemble_loss(tape, c, target, d.output, e.mu, e.logvar, dn, proxy)
    }

    /// Loss parts without gradients.
    pub fn loss(&self, x: &[T], targets: &[[f64; 2]], noise: &[T], proxy: Option<&ProxyContext>) -> Result<LossParts> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let l = self.loss_graph(&mut tape, &p, x, targets, noise, proxy)?;
        l.values(&tape)
    }

    /// Loss parts and the gradient of the total for every parameter tensor.
    pub fn loss_and_grads(
        &self,
        x: &[T],
        targets: &[[f64; 2]],
        noise: &[T],
        proxy: Option<&ProxyContext>,
    ) -> Result<(LossParts, Vec<Vec<T>>)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, true);
        let l = self.loss_graph(&mut tape, &p, x, targets, noise, proxy)?;
        tape.backward(l.total)?;
        let parts = l.values(&tape)?;
        let grads = p
            .iter()
            .zip(&self.params)
            .map(|(&v, t)| Ok(tape.take_grad(v)?.unwrap_or_else(|| vec![T::zero(); t.numel()])))
            .collect::<Result<Vec<_>>>()?;
        Ok((parts, grads))
    }
}

/// Concatenates the values of `reprs` into one model input buffer.
pub fn pack_batch<T: Scalar>(reprs: &[&NoteRepresentation], config: &VaeConfig) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(reprs.len() * config.note_len());
    for r in reprs {
        if r.frames != config.input_frames || r.channels() != config.input_channels {
            return Err(VaeError::ShapeMismatch(format!(
                "representation is {}x{}, model expects {}x{}",
                r.frames,
                r.channels(),
                config.input_frames,
                config.input_channels
            )));
        }
        out.extend(r.values.iter().map(|&v| T::of(v as f64)));
    }
    Ok(out)
}
