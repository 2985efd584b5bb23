//! Dense tensors with a small define-by-run reverse-mode autodiff engine.
//!
//! Every network in this crate is a fixed CNN over `[N, C, H, W]` batches, so
//! the engine only carries the handful of op kinds those networks need. Ops
//! execute eagerly as they are recorded on a [`Graph`]; [`Graph::backward`]
//! replays the record in reverse.
//!
//! Storage is generic over [`Element`] so the same network code runs in `f32`
//! for training and in `f64` for finite-difference gradient checks.

mod graph;
mod kernels;
pub mod nn;
mod optim;

use std::fmt::Debug;
use std::ops::AddAssign;

use num_traits::Float;
use thiserror::Error;

pub use graph::{Gradients, Graph, NodeId, Reduction};
pub use kernels::conv_output_len;
pub use optim::{Adam, AdamConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error at node {node}: {msg}")]
    Dimension { node: usize, msg: String },
    #[error("invalid tensor: {0}")]
    Invalid(String),
    #[error("loss node {node} is not scalar (dims {dims:?})")]
    NonScalarLoss { node: usize, dims: Vec<usize> },
    #[error("non-finite value produced at node {node} by {op}")]
    NonFinite { node: usize, op: &'static str },
    #[error("optimizer state poisoned: non-finite gradient for parameter {param}")]
    PoisonedState { param: usize },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Scalar storage type of a tensor.
pub trait Element:
    Float + Default + Debug + Send + Sync + AddAssign + std::iter::Sum + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Row-major `C = A' * B' (+ C if accumulate)`, where `A'` is `A` or its
    /// transpose. `A'` is `m x k`, `B'` is `k x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        c: &mut [Self],
        accumulate: bool,
    );
}

fn gemm_strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // Strides of the logical (rows x cols) view of a row-major buffer.
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_element {
    ($t:ty, $gemm:path) => {
        impl Element for $t {
            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_trans: bool,
                b: &[Self],
                b_trans: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = gemm_strides(m, k, a_trans);
                let (rsb, csb) = gemm_strides(k, n, b_trans);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the asserts above bound every index the kernel touches.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_element!(f32, matrixmultiply::sgemm);
impl_element!(f64, matrixmultiply::dgemm);

/// Row-major dense tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E = f32> {
    dims: Vec<usize>,
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    pub fn new(dims: Vec<usize>, data: Vec<E>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(TensorError::Invalid(format!("zero extent in dims {dims:?}")));
        }
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(TensorError::Invalid(format!(
                "dims {dims:?} need {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, E::zero())
    }

    pub fn full(dims: &[usize], value: E) -> Self {
        let numel = dims.iter().product();
        Self { dims: dims.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: E) -> Self {
        Self { dims: vec![1], data: vec![value] }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> E) -> Self {
        let numel: usize = dims.iter().product();
        Self { dims: dims.to_vec(), data: (0..numel).map(&mut f).collect() }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let numel: usize = dims.iter().product();
        if numel != self.data.len() || dims.iter().any(|&d| d == 0) {
            return Err(TensorError::Invalid(format!(
                "cannot reshape {:?} into {dims:?}",
                self.dims
            )));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Self { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(E, E) -> E) -> Result<Self> {
        if self.dims != other.dims {
            return Err(TensorError::Invalid(format!(
                "shape mismatch {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(Self {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor { dims: self.dims.clone(), data: self.data.iter().map(|v| F::of(v.as_f64())).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sum with 64-bit accumulation.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn mean_f64(&self) -> f64 {
        self.sum_f64() / self.data.len() as f64
    }

    /// Batch item `n` of an `[N, ...]` tensor, keeping a leading extent of 1.
    pub fn batch_item(&self, n: usize) -> Result<Self> {
        let batch = *self.dims.first().ok_or_else(|| TensorError::Invalid("rank 0".into()))?;
        if n >= batch {
            return Err(TensorError::Invalid(format!("batch index {n} out of range {batch}")));
        }
        let per = self.data.len() / batch;
        let mut dims = self.dims.clone();
        dims[0] = 1;
        Ok(Self { dims, data: self.data[n * per..(n + 1) * per].to_vec() })
    }

    /// Stack same-shaped tensors along a new leading axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| TensorError::Invalid("empty stack".into()))?;
        let mut dims = vec![items.len()];
        dims.extend(&first.dims);
        Self::join(items, dims)
    }

    /// Concatenate `[n_i, ...]` tensors with equal trailing dims along axis 0.
    pub fn concat_batch(items: &[Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| TensorError::Invalid("empty concat".into()))?;
        let mut dims = first.dims.clone();
        dims[0] = items.iter().map(|t| t.dims[0]).sum();
        Self::join(items, dims)
    }

    fn join(items: &[Self], dims: Vec<usize>) -> Result<Self> {
        let tail = &items[0].dims[1..];
        let mut data = Vec::with_capacity(dims.iter().product());
        for it in items {
            if it.dims.len() != items[0].dims.len() || &it.dims[1..] != tail {
                return Err(TensorError::Invalid(format!("cannot join {:?} with {:?}", it.dims, items[0].dims)));
            }
            data.extend_from_slice(&it.data);
        }
        Self::new(dims, data)
    }
}
