//! A small reverse-mode differentiation tape.
//!
//! Only the operations needed by the model are provided: dense layers,
//! stride-2 "same" convolutions and their transposes, a few activations and
//! the loss terms. The engine is generic over [`Scalar`] so the same graph
//! can be run in `f32` for training and in `f64` for gradient checks.

mod adam;
mod conv;
mod tape;

pub use adam::{adam_step, AdamState};
pub use conv::ConvGeometry;
pub use tape::{ProxyContext, Tape, Var};

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tensor does not belong to this tape")]
    DetachedTensor,
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;

/// Element type of the tape.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + Sum + 'static
{
    /// `C = A * B + beta * C` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );

    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).unwrap()
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap()
    }
}

impl Scalar for f32 {
    fn gemm(m: usize, k: usize, n: usize, a: &[f32], rsa: isize, csa: isize, b: &[f32], rsb: isize, csb: isize, beta: f32, c: &mut [f32]) {
        assert!(c.len() >= m * n);
        // SAFETY: callers pass slices whose extents cover the strided views;
        // `matmul` below derives strides from the checked logical shapes.
        unsafe {
            matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
        }
    }
}

impl Scalar for f64 {
    fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: isize, csa: isize, b: &[f64], rsb: isize, csb: isize, beta: f64, c: &mut [f64]) {
        assert!(c.len() >= m * n);
        // SAFETY: see the f32 implementation.
        unsafe {
            matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
        }
    }
}

/// Row-major product of logical `A (m x k)` and `B (k x n)` into `C (m x n)`.
/// `ta`/`tb` mean the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Scalar>(
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, a, rsa, csa, b, rsb, csb, beta, c);
}

/// Shaped, row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Glorot-uniform initialization with the given fans.
    pub fn glorot(shape: impl Into<Vec<usize>>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let shape = shape.into();
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::of(rng.random_range(-limit..limit)))
            .collect();
        Self { shape, data }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}
