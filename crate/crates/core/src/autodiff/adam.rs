use serde::{Deserialize, Serialize};

use super::{AutodiffError, Result, Scalar};

/// Adam optimizer state for a list of parameter tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(sizes: &[usize]) -> Self {
        Self::with_lr(sizes, 1e-3)
    }

    pub fn with_lr(sizes: &[usize], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Scalar>(state: &mut AdamState<T>, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(AutodiffError::ShapeMismatch(format!(
            "adam tracks {} tensors, got {} params and {} grads",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != state.m[i].len() || g.len() != p.len() {
            return Err(AutodiffError::ShapeMismatch(format!("adam tensor {i} has inconsistent length")));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);
    let (tb1, tb2) = (T::of(b1), T::of(b2));
    let (ob1, ob2) = (T::of(1.0 - b1), T::of(1.0 - b2));
    let lr = T::of(state.lr);
    let (ic1, ic2) = (T::of(1.0 / c1), T::of(1.0 / c2));
    let eps = T::of(state.eps);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..p.len() {
            let gj = g[j];
            m[j] = tb1 * m[j] + ob1 * gj;
            v[j] = tb2 * v[j] + ob2 * gj * gj;
            let mh = m[j] * ic1;
            let vh = v[j] * ic2;
            p[j] = p[j] - lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}
