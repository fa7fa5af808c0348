use std::sync::atomic::{AtomicU64, Ordering};

use super::conv::{col2im_add, im2col, ConvGeometry};
use super::{matmul, AutodiffError, Result, Scalar, Tensor};
use crate::descriptors::proxy::{normalized_pair_grad, ProxyConfig};
use crate::descriptors::DescriptorStats;
use crate::repr::NormalizationStats;
use crate::N_CHANNELS;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

/// Everything the descriptor proxy needs to map a normalized output back to
/// normalized descriptor values.
#[derive(Debug, Clone)]
pub struct ProxyContext {
    pub stats: NormalizationStats,
    pub dstats: DescriptorStats,
    pub cfg: ProxyConfig,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Dense { x: usize, w: usize, b: usize },
    Conv { x: usize, w: usize, b: usize, g: ConvGeometry },
    ConvT { x: usize, w: usize, b: usize, g: ConvGeometry },
    Relu(usize),
    Sigmoid(usize),
    Softmax { x: usize, outer: usize, len: usize, inner: usize },
    Reshape(usize),
    Bce { p: usize, t: usize },
    Kl { mu: usize, logvar: usize },
    Reparam { mu: usize, logvar: usize, noise: Vec<T> },
    Mae { a: usize, b: usize },
    Column { x: usize, col: usize },
    Add(usize, usize),
    Scale(usize, f64),
    Mul(usize, usize),
    Sum(usize),
    Proxy { x: usize, jac: Vec<f64> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Execution record for one forward pass.
#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(msg: String) -> AutodiffError {
    AutodiffError::ShapeMismatch(msg)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(AutodiffError::DetachedTensor);
        }
        Ok(v.idx)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[usize]) -> Var {
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    /// Records a trainable tensor.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Records a tensor that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(&self.nodes[self.idx(v)?].value.shape)
    }

    /// Gradient of the last [`Tape::backward`] loss, if `v` was reached.
    pub fn grad(&self, v: Var) -> Result<Option<&[T]>> {
        Ok(self.nodes[self.idx(v)?].grad.as_deref())
    }

    pub fn take_grad(&mut self, v: Var) -> Result<Option<Vec<T>>> {
        let i = self.idx(v)?;
        Ok(self.nodes[i].grad.take())
    }

    fn val(&self, i: usize) -> &Tensor<T> {
        &self.nodes[i].value
    }

    fn same_shape(&self, a: usize, b: usize, what: &str) -> Result<()> {
        if self.val(a).shape != self.val(b).shape {
            return Err(mismatch(format!(
                "{what}: {:?} vs {:?}",
                self.val(a).shape,
                self.val(b).shape
            )));
        }
        Ok(())
    }

    /// `x W + b` for `x: [B, I]`, `W: [I, O]`, `b: [O]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (xs, ws, bs) = (&self.val(xi).shape, &self.val(wi).shape, &self.val(bi).shape);
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs.as_slice() != [ws[1]] {
            return Err(mismatch(format!("dense: x {xs:?}, W {ws:?}, b {bs:?}")));
        }
        let (batch, inp, out) = (xs[0], ws[0], ws[1]);
        let mut y = vec![T::zero(); batch * out];
        for row in y.chunks_exact_mut(out) {
            row.copy_from_slice(&self.val(bi).data);
        }
        matmul(&self.val(xi).data, false, &self.val(wi).data, false, &mut y, batch, inp, out, true);
        Ok(self.push(Tensor { shape: vec![batch, out], data: y }, Op::Dense { x: xi, w: wi, b: bi }, &[xi, wi, bi]))
    }

    /// Cross-correlation with "same" padding: `x: [B, C, H, W]`,
    /// `w: [F, C, k, k]`, `b: [F]` gives `[B, F, ceil(H/s), ceil(W/s)]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (xs, ws, bs) = (&self.val(xi).shape, &self.val(wi).shape, &self.val(bi).shape);
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || bs.as_slice() != [ws[0]] || stride == 0 {
            return Err(mismatch(format!("conv2d: x {xs:?}, k {ws:?}, b {bs:?}")));
        }
        let batch = xs[0];
        let g = ConvGeometry::same(xs[1], xs[2], xs[3], ws[0], ws[2], stride);
        let (p, patch) = (g.positions(), g.patch_len());
        let mut y = vec![T::zero(); batch * g.output_len()];
        let mut col = vec![T::zero(); patch * p];
        let (xd, wd, bd) = (&self.val(xi).data, &self.val(wi).data, &self.val(bi).data);
        for n in 0..batch {
            im2col(&xd[n * g.input_len()..(n + 1) * g.input_len()], &g, &mut col);
            let out = &mut y[n * g.output_len()..(n + 1) * g.output_len()];
            for (f, chunk) in out.chunks_exact_mut(p).enumerate() {
                chunk.fill(bd[f]);
            }
            matmul(wd, false, &col, false, out, g.filters, patch, p, true);
        }
        let shape = vec![batch, g.filters, g.out_h, g.out_w];
        Ok(self.push(Tensor { shape, data: y }, Op::Conv { x: xi, w: wi, b: bi, g }, &[xi, wi, bi]))
    }

    /// Adjoint of [`Tape::conv2d`] with respect to its input:
    /// `x: [B, Cin, H, W]`, `w: [Cin, Cout, k, k]`, `b: [Cout]` gives
    /// `[B, Cout, out_h, out_w]` where `ceil(out / stride) == in`.
    pub fn conv2d_transpose(&mut self, x: Var, w: Var, b: Var, stride: usize, out_hw: (usize, usize)) -> Result<Var> {
        let (xi, wi, bi) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (xs, ws, bs) = (&self.val(xi).shape, &self.val(wi).shape, &self.val(bi).shape);
        if xs.len() != 4 || ws.len() != 4 || ws[0] != xs[1] || ws[2] != ws[3] || bs.as_slice() != [ws[1]] || stride == 0 {
            return Err(mismatch(format!("conv2d_transpose: x {xs:?}, k {ws:?}, b {bs:?}")));
        }
        let g = ConvGeometry::same(ws[1], out_hw.0, out_hw.1, ws[0], ws[2], stride);
        if g.out_h != xs[2] || g.out_w != xs[3] {
            return Err(mismatch(format!(
                "conv2d_transpose: output {out_hw:?} does not downsample to input {}x{}",
                xs[2], xs[3]
            )));
        }
        let batch = xs[0];
        let (p, patch) = (g.positions(), g.patch_len());
        let cin = g.filters;
        let mut y = vec![T::zero(); batch * g.input_len()];
        let mut col = vec![T::zero(); patch * p];
        let (xd, wd, bd) = (&self.val(xi).data, &self.val(wi).data, &self.val(bi).data);
        let plane = g.height * g.width;
        for n in 0..batch {
            matmul(wd, true, &xd[n * cin * p..(n + 1) * cin * p], false, &mut col, patch, cin, p, false);
            let out = &mut y[n * g.input_len()..(n + 1) * g.input_len()];
            for (c, chunk) in out.chunks_exact_mut(plane).enumerate() {
                chunk.fill(bd[c]);
            }
            col2im_add(&col, &g, out);
        }
        let shape = vec![batch, g.channels, g.height, g.width];
        Ok(self.push(Tensor { shape, data: y }, Op::ConvT { x: xi, w: wi, b: bi, g }, &[xi, wi, bi]))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: impl FnOnce(usize) -> Op<T>) -> Result<Var> {
        let xi = self.idx(x)?;
        let v = self.val(xi);
        let out = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&a| f(a)).collect(),
        };
        Ok(self.push(out, op(xi), &[xi]))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |a| a.max(T::zero()), Op::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |a| T::one() / (T::one() + (-a).exp()), Op::Sigmoid)
    }

    /// Exponential normalization along `axis` with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let shape = self.val(xi).shape.clone();
        if axis >= shape.len() {
            return Err(mismatch(format!("softmax: axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xd = &self.val(xi).data;
        let mut y = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * len + k) * inner + i;
                let m = (0..len).map(|k| xd[at(k)]).fold(T::neg_infinity(), T::max);
                let mut s = 0.0f64;
                for k in 0..len {
                    let e = (xd[at(k)] - m).exp();
                    y[at(k)] = e;
                    s += e.as_f64();
                }
                let inv = T::of(1.0 / s);
                for k in 0..len {
                    y[at(k)] = y[at(k)] * inv;
                }
            }
        }
        Ok(self.push(Tensor { shape, data: y }, Op::Softmax { x: xi, outer, len, inner }, &[xi]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xi = self.idx(x)?;
        let v = self.val(xi);
        if shape.iter().product::<usize>() != v.numel() {
            return Err(mismatch(format!("reshape: {:?} to {shape:?}", v.shape)));
        }
        let out = Tensor {
            shape: shape.to_vec(),
            data: v.data.clone(),
        };
        Ok(self.push(out, Op::Reshape(xi), &[xi]))
    }

    fn scalar_out(&mut self, v: f64, op: Op<T>, parents: &[usize]) -> Var {
        self.push(Tensor::scalar(T::of(v)), op, parents)
    }

    /// Mean binary cross-entropy, predictions clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.idx(pred)?, self.idx(target)?);
        self.same_shape(p, t, "bce_loss")?;
        let (pd, td) = (&self.val(p).data, &self.val(t).data);
        let mut s = 0.0f64;
        for (&pv, &tv) in pd.iter().zip(td) {
            let pv = clamp_prob(pv.as_f64());
            let tv = tv.as_f64();
            s -= tv * pv.ln() + (1.0 - tv) * (1.0 - pv).ln();
        }
        let n = pd.len().max(1) as f64;
        Ok(self.scalar_out(s / n, Op::Bce { p, t }, &[p, t]))
    }

    /// Batch mean of `KL(N(mu, exp(logvar)) || N(0, I))` for `[B, M]` inputs.
    pub fn kl_standard_normal(&mut self, mu: Var, logvar: Var) -> Result<Var> {
        let (m, l) = (self.idx(mu)?, self.idx(logvar)?);
        self.same_shape(m, l, "kl_standard_normal")?;
        let batch = self.val(m).shape.first().copied().unwrap_or(1).max(1);
        let mut s = 0.0f64;
        for (&mv, &lv) in self.val(m).data.iter().zip(&self.val(l).data) {
            let (mv, lv) = (mv.as_f64(), lv.as_f64());
            s += -0.5 * (1.0 + lv - mv * mv - lv.exp());
        }
        Ok(self.scalar_out(s / batch as f64, Op::Kl { mu: m, logvar: l }, &[m, l]))
    }

    /// `mu + exp(logvar / 2) * noise`; the noise is a constant.
    pub fn reparameterize(&mut self, mu: Var, logvar: Var, noise: &[T]) -> Result<Var> {
        let (m, l) = (self.idx(mu)?, self.idx(logvar)?);
        self.same_shape(m, l, "reparameterize")?;
        if noise.len() != self.val(m).numel() {
            return Err(mismatch(format!("reparameterize: {} noise values for {:?}", noise.len(), self.val(m).shape)));
        }
        let half = T::of(0.5);
        let data = self
            .val(m)
            .data
            .iter()
            .zip(&self.val(l).data)
            .zip(noise)
            .map(|((&mv, &lv), &e)| mv + (half * lv).exp() * e)
            .collect();
        let shape = self.val(m).shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Reparam { mu: m, logvar: l, noise: noise.to_vec() }, &[m, l]))
    }

    /// Mean absolute error.
    pub fn mae_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(ai, bi, "mae_loss")?;
        let (ad, bd) = (&self.val(ai).data, &self.val(bi).data);
        let s: f64 = ad.iter().zip(bd).map(|(&x, &y)| (x.as_f64() - y.as_f64()).abs()).sum();
        let n = ad.len().max(1) as f64;
        Ok(self.scalar_out(s / n, Op::Mae { a: ai, b: bi }, &[ai, bi]))
    }

    /// Column `col` of a `[B, K]` tensor, as `[B]`.
    pub fn column(&mut self, x: Var, col: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let shape = &self.val(xi).shape;
        if shape.len() != 2 || col >= shape[1] {
            return Err(mismatch(format!("column {col} of {shape:?}")));
        }
        let k = shape[1];
        let data = self.val(xi).data.iter().skip(col).step_by(k).copied().collect();
        let b = shape[0];
        Ok(self.push(Tensor { shape: vec![b], data }, Op::Column { x: xi, col }, &[xi]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(ai, bi, "add")?;
        let data = self.val(ai).data.iter().zip(&self.val(bi).data).map(|(&x, &y)| x + y).collect();
        let shape = self.val(ai).shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Add(ai, bi), &[ai, bi]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(ai, bi, "mul")?;
        let data = self.val(ai).data.iter().zip(&self.val(bi).data).map(|(&x, &y)| x * y).collect();
        let shape = self.val(ai).shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Mul(ai, bi), &[ai, bi]))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let ai = self.idx(a)?;
        let kt = T::of(k);
        let v = self.val(ai);
        let out = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&x| x * kt).collect(),
        };
        Ok(self.push(out, Op::Scale(ai, k), &[ai]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ai = self.idx(a)?;
        let s: f64 = self.val(ai).data.iter().map(|v| v.as_f64()).sum();
        Ok(self.scalar_out(s, Op::Sum(ai), &[ai]))
    }

    /// Normalized `(centroid, attack)` of each note in a decoded batch
    /// `[B, frames, 12]` (any shape whose trailing size is a multiple of 12
    /// per note), as `[B, 2]`.
    pub fn descriptor_proxy(&mut self, x: Var, ctx: &ProxyContext) -> Result<Var> {
        let xi = self.idx(x)?;
        let shape = &self.val(xi).shape;
        let batch = shape.first().copied().unwrap_or(0);
        let per = if batch == 0 { 0 } else { self.val(xi).numel() / batch };
        if batch == 0 || per == 0 || per % N_CHANNELS != 0 {
            return Err(mismatch(format!("descriptor_proxy: {shape:?}")));
        }
        let frames = per / N_CHANNELS;
        let mut out = Vec::with_capacity(batch * 2);
        let mut jac = Vec::with_capacity(batch * 2 * per);
        for n in 0..batch {
            let note: Vec<f64> = self.val(xi).data[n * per..(n + 1) * per].iter().map(|v| v.as_f64()).collect();
            let (vals, grads) = normalized_pair_grad(&note, frames, &ctx.stats, &ctx.dstats, &ctx.cfg);
            out.extend(vals.iter().map(|&v| T::of(v)));
            jac.extend_from_slice(&grads[0]);
            jac.extend_from_slice(&grads[1]);
        }
        Ok(self.push(Tensor { shape: vec![batch, 2], data: out }, Op::Proxy { x: xi, jac }, &[xi]))
    }

    /// Reverse pass from a one-element `loss`; gradients of all reachable
    /// tensors that require them are summed over every use.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.idx(loss)?;
        if self.val(li).numel() != 1 {
            return Err(AutodiffError::NotScalar(self.val(li).shape.clone()));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[li].grad = Some(vec![T::one()]);
        for i in (0..=li).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = self.nodes[i].grad.take() else {
                continue;
            };
            self.propagate(i, &dy);
            self.nodes[i].grad = Some(dy);
        }
        Ok(())
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn acc(&mut self, i: usize) -> &mut [T] {
        let n = self.nodes[i].value.numel();
        self.nodes[i].grad.get_or_insert_with(|| vec![T::zero(); n])
    }

    fn acc_map(&mut self, i: usize, f: impl Fn(usize) -> T) {
        if self.wants(i) {
            for (k, g) in self.acc(i).iter_mut().enumerate() {
                *g = *g + f(k);
            }
        }
    }

    fn propagate(&mut self, i: usize, dy: &[T]) {
        // Temporarily move the op out so parents can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let (batch, inp) = (self.val(x).shape[0], self.val(x).shape[1]);
                let out = self.val(w).shape[1];
                if self.wants(x) {
                    let wd = self.val(w).data.clone();
                    matmul(dy, false, &wd, true, self.acc(x), batch, out, inp, true);
                }
                if self.wants(w) {
                    let xd = self.val(x).data.clone();
                    matmul(&xd, true, dy, false, self.acc(w), inp, batch, out, true);
                }
                if self.wants(b) {
                    let mut colsum = vec![0.0f64; out];
                    for row in dy.chunks_exact(out) {
                        for (s, v) in colsum.iter_mut().zip(row) {
                            *s += v.as_f64();
                        }
                    }
                    self.acc_map(b, |k| T::of(colsum[k]));
                }
            }
            Op::Conv { x, w, b, g } => self.conv_backward(*x, *w, *b, g, dy),
            Op::ConvT { x, w, b, g } => self.conv_t_backward(*x, *w, *b, g, dy),
            Op::Relu(x) => {
                let xv = self.val(*x).data.clone();
                self.acc_map(*x, |k| if xv[k] > T::zero() { dy[k] } else { T::zero() });
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[i].value.data.clone();
                self.acc_map(*x, |k| dy[k] * y[k] * (T::one() - y[k]));
            }
            Op::Softmax { x, outer, len, inner } => {
                let (outer, len, inner) = (*outer, *len, *inner);
                let y = &self.nodes[i].value.data;
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + j;
                        let dot: f64 = (0..len).map(|k| (dy[at(k)] * y[at(k)]).as_f64()).sum();
                        let dot = T::of(dot);
                        for k in 0..len {
                            dx[at(k)] = y[at(k)] * (dy[at(k)] - dot);
                        }
                    }
                }
                self.acc_map(*x, |k| dx[k]);
            }
            Op::Reshape(x) => self.acc_map(*x, |k| dy[k]),
            Op::Bce { p, t } => {
                let (p, t) = (*p, *t);
                let n = self.val(p).numel().max(1) as f64;
                let g = dy[0].as_f64() / n;
                let pd: Vec<f64> = self.val(p).data.iter().map(|v| v.as_f64()).collect();
                let td: Vec<f64> = self.val(t).data.iter().map(|v| v.as_f64()).collect();
                self.acc_map(p, |k| {
                    let pv = pd[k];
                    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&pv) {
                        return T::zero();
                    }
                    T::of(g * ((1.0 - td[k]) / (1.0 - pv) - td[k] / pv))
                });
                self.acc_map(t, |k| {
                    let pv = clamp_prob(pd[k]);
                    T::of(g * ((1.0 - pv).ln() - pv.ln()))
                });
            }
            Op::Kl { mu, logvar } => {
                let (m, l) = (*mu, *logvar);
                let batch = self.val(m).shape.first().copied().unwrap_or(1).max(1) as f64;
                let g = dy[0].as_f64() / batch;
                let md = self.val(m).data.clone();
                let ld = self.val(l).data.clone();
                self.acc_map(m, |k| T::of(g * md[k].as_f64()));
                self.acc_map(l, |k| T::of(g * 0.5 * (ld[k].as_f64().exp() - 1.0)));
            }
            Op::Reparam { mu, logvar, noise } => {
                let (m, l) = (*mu, *logvar);
                self.acc_map(m, |k| dy[k]);
                let ld = self.val(l).data.clone();
                let half = T::of(0.5);
                self.acc_map(l, |k| dy[k] * half * (half * ld[k]).exp() * noise[k]);
            }
            Op::Mae { a, b } => {
                let (a, b) = (*a, *b);
                let n = self.val(a).numel().max(1) as f64;
                let g = T::of(dy[0].as_f64() / n);
                let sign: Vec<T> = self
                    .val(a)
                    .data
                    .iter()
                    .zip(&self.val(b).data)
                    .map(|(&x, &y)| {
                        if x > y {
                            T::one()
                        } else if x < y {
                            -T::one()
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                self.acc_map(a, |k| g * sign[k]);
                self.acc_map(b, |k| -g * sign[k]);
            }
            Op::Column { x, col } => {
                let (x, col) = (*x, *col);
                if self.wants(x) {
                    let k = self.val(x).shape[1];
                    let gx = self.acc(x);
                    for (r, &d) in dy.iter().enumerate() {
                        gx[r * k + col] = gx[r * k + col] + d;
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc_map(*a, |k| dy[k]);
                self.acc_map(*b, |k| dy[k]);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let ad = self.val(a).data.clone();
                let bd = self.val(b).data.clone();
                self.acc_map(a, |k| dy[k] * bd[k]);
                self.acc_map(b, |k| dy[k] * ad[k]);
            }
            Op::Scale(a, s) => {
                let s = T::of(*s);
                self.acc_map(*a, |k| dy[k] * s);
            }
            Op::Sum(a) => self.acc_map(*a, |_| dy[0]),
            Op::Proxy { x, jac } => {
                let x = *x;
                if self.wants(x) {
                    let batch = dy.len() / 2;
                    let per = self.val(x).numel() / batch;
                    let gx = self.acc(x);
                    for n in 0..batch {
                        let (d0, d1) = (dy[2 * n].as_f64(), dy[2 * n + 1].as_f64());
                        let j0 = &jac[(2 * n) * per..(2 * n + 1) * per];
                        let j1 = &jac[(2 * n + 1) * per..(2 * n + 2) * per];
                        for k in 0..per {
                            let g = &mut gx[n * per + k];
                            *g = *g + T::of(d0 * j0[k] + d1 * j1[k]);
                        }
                    }
                }
            }
        }
        self.nodes[i].op = op;
    }

    fn bias_grad(&mut self, b: usize, dy: &[T], channels: usize, plane: usize) {
        if !self.wants(b) {
            return;
        }
        let mut sums = vec![0.0f64; channels];
        for sample in dy.chunks_exact(channels * plane) {
            for (c, chunk) in sample.chunks_exact(plane).enumerate() {
                sums[c] += chunk.iter().map(|v| v.as_f64()).sum::<f64>();
            }
        }
        self.acc_map(b, |k| T::of(sums[k]));
    }

    fn conv_backward(&mut self, x: usize, w: usize, b: usize, g: &ConvGeometry, dy: &[T]) {
        let batch = self.val(x).shape[0];
        let (p, patch) = (g.positions(), g.patch_len());
        let (want_x, want_w) = (self.wants(x), self.wants(w));
        let xd = self.val(x).data.clone();
        let wd = self.val(w).data.clone();
        let mut col = vec![T::zero(); patch * p];
        let mut dw = vec![T::zero(); wd.len()];
        let mut dx = if want_x { vec![T::zero(); xd.len()] } else { Vec::new() };
        for n in 0..batch {
            let dout = &dy[n * g.output_len()..(n + 1) * g.output_len()];
            if want_w {
                im2col(&xd[n * g.input_len()..(n + 1) * g.input_len()], g, &mut col);
                matmul(dout, false, &col, true, &mut dw, g.filters, p, patch, true);
            }
            if want_x {
                matmul(&wd, true, dout, false, &mut col, patch, g.filters, p, false);
                col2im_add(&col, g, &mut dx[n * g.input_len()..(n + 1) * g.input_len()]);
            }
        }
        if want_w {
            self.acc_map(w, |k| dw[k]);
        }
        if want_x {
            self.acc_map(x, |k| dx[k]);
        }
        self.bias_grad(b, dy, g.filters, p);
    }

    fn conv_t_backward(&mut self, x: usize, w: usize, b: usize, g: &ConvGeometry, dy: &[T]) {
        let batch = self.val(x).shape[0];
        let (p, patch, cin) = (g.positions(), g.patch_len(), g.filters);
        let (want_x, want_w) = (self.wants(x), self.wants(w));
        let xd = self.val(x).data.clone();
        let wd = self.val(w).data.clone();
        let mut col = vec![T::zero(); patch * p];
        let mut dw = vec![T::zero(); wd.len()];
        let mut dx = if want_x { vec![T::zero(); xd.len()] } else { Vec::new() };
        for n in 0..batch {
            if !(want_x || want_w) {
                break;
            }
            im2col(&dy[n * g.input_len()..(n + 1) * g.input_len()], g, &mut col);
            if want_x {
                matmul(&wd, false, &col, false, &mut dx[n * cin * p..(n + 1) * cin * p], cin, patch, p, false);
            }
            if want_w {
                matmul(&xd[n * cin * p..(n + 1) * cin * p], false, &col, true, &mut dw, cin, p, patch, true);
            }
        }
        if want_w {
            self.acc_map(w, |k| dw[k]);
        }
        if want_x {
            self.acc_map(x, |k| dx[k]);
        }
        self.bias_grad(b, dy, g.channels, g.height * g.width);
    }
}

const PROB_EPS: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}
