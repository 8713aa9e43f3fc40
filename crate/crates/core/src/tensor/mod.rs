//! Dense row-major tensors with a recorded gradient graph.
//!
//! Every op that has at least one input requiring gradients keeps a link to its
//! inputs; [`Tensor::backward`] walks that graph once in reverse topological order.
//! Tensors built only from constants carry no graph, so forward-only inference frees
//! intermediates as soon as they are dropped.

mod adam;
mod backward;
mod kernels;
mod ops;

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::quadtree::{KeySetTable, PoolingMatrix};
use crate::{HstError, Real, Result};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use kernels::{matmul_nn, matmul_nt, matmul_tn};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

pub(crate) enum Op<T: Real> {
    MatMul(Tensor<T>, Tensor<T>),
    Transpose(Tensor<T>),
    Add(Tensor<T>, Tensor<T>),
    Sub(Tensor<T>, Tensor<T>),
    Mul(Tensor<T>, Tensor<T>),
    AddRow(Tensor<T>, Tensor<T>),
    Scale(Tensor<T>, T),
    Relu(Tensor<T>),
    Gelu(Tensor<T>),
    Sum(Tensor<T>),
    Mean(Tensor<T>),
    LayerNorm { x: Tensor<T>, gamma: Tensor<T>, beta: Tensor<T>, xhat: Vec<T>, inv_std: Vec<T> },
    ConcatCols(Tensor<T>, Tensor<T>),
    ConcatRows(Tensor<T>, Tensor<T>),
    SliceCols(Tensor<T>, usize),
    SliceRows(Tensor<T>, usize),
    GatherRows { src: Tensor<T>, rows: Arc<Vec<usize>>, mask: Arc<Vec<bool>> },
    MaskedSoftmax { x: Tensor<T>, mask: Arc<Vec<bool>> },
    BatchedDot(Tensor<T>, Tensor<T>),
    BatchedMix(Tensor<T>, Tensor<T>),
    Pool { x: Tensor<T>, matrix: Arc<PoolingMatrix<T>> },
    KeyedAttention { q: Tensor<T>, k: Tensor<T>, v: Tensor<T>, table: Arc<KeySetTable>, heads: usize, weights: Vec<T> },
}

pub(crate) struct Node<T: Real> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    op: Option<Op<T>>,
    grad: Mutex<Option<Vec<T>>>,
    backward_ran: AtomicBool,
}

/// Shared handle to an immutable value plus its gradient slot.
pub struct Tensor<T: Real>(Arc<Node<T>>);

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self(Arc::clone(&self.0))
    }
}

impl<T: Real> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &self.0.data)
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    fn build(data: Vec<T>, shape: Vec<usize>, requires_grad: bool, op: Option<Op<T>>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Self(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            op,
            grad: Mutex::new(None),
            backward_ran: AtomicBool::new(false),
        }))
    }

    /// Output of an op: keeps the graph link only if some input needs gradients.
    pub(crate) fn from_op(data: Vec<T>, shape: Vec<usize>, inputs: &[&Tensor<T>], op: impl FnOnce() -> Op<T>) -> Self {
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let op = requires_grad.then(op);
        Self::build(data, shape, requires_grad, op)
    }

    /// Constant tensor.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::checked(data, shape, false)
    }

    /// Leaf tensor that accumulates a gradient.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Self::checked(data, shape, true)
    }

    fn checked(data: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(HstError::Shape(format!("{} values for shape {shape:?}", data.len())));
        }
        Ok(Self::build(data, shape.to_vec(), requires_grad, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(vec![T::zero(); shape.iter().product()], shape.to_vec(), false, None)
    }

    pub fn scalar(value: T) -> Self {
        Self::build(vec![value], Vec::new(), false, None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Gradient written by the last backward pass, if this leaf was reached.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    pub fn grad_or_zeros(&self) -> Vec<T> {
        self.grad().unwrap_or_else(|| vec![T::zero(); self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock") = None;
    }

    /// Same values, no graph, no gradient.
    pub fn detach(&self) -> Self {
        Self::build(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    /// Same values as a fresh gradient-tracking leaf.
    pub fn to_param(&self) -> Self {
        Self::build(self.0.data.clone(), self.0.shape.clone(), true, None)
    }

    /// Allow [`Tensor::backward`] to run again from this tensor.
    pub fn reset_backward(&self) {
        self.0.backward_ran.store(false, Ordering::SeqCst);
    }

    pub(crate) fn node(&self) -> &Node<T> {
        &self.0
    }

    pub(crate) fn id(&self) -> u64 {
        self.0.id
    }

    fn dims2(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(HstError::Shape(format!("{what} expects a matrix, got shape {s:?}"))),
        }
    }

    fn dims3(&self, what: &str) -> Result<(usize, usize, usize)> {
        match self.shape() {
            [a, b, c] => Ok((*a, *b, *c)),
            s => Err(HstError::Shape(format!("{what} expects a rank-3 tensor, got shape {s:?}"))),
        }
    }
}
