//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a reference-counted node holding contiguous row-major data.
//! Operations on tensors that require gradients record a backward closure and
//! their parents; [`Tensor::backward`] replays the recorded nodes in reverse
//! creation order through a [`GradTape`]. The graph is rebuilt on every
//! forward pass.
//!
//! Everything is generic over [`Real`] so that the same model code runs in
//! `f32` for training and in `f64` for finite-difference checks.

pub mod gradcheck;
mod ops;
pub mod window;

#[cfg(test)]
mod tests;

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

pub use ops::Target;

/// Errors raised by tensor construction and tensor operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Shape { op: &'static str, msg: String },
    #[error("{op}: non-finite value in input")]
    NonFinite { op: &'static str },
    #[error("{op}: every row is masked out")]
    EmptyBatch { op: &'static str },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Floating point element type usable in tensors.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * a * b + beta * c` with arbitrary element strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and `m x n`
    /// matrices; `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).unwrap()
    }

    fn f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap()
    }
}

impl Real for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

pub(crate) struct BackwardCtx<'a, F: Real> {
    pub grad: &'a [F],
    pub out: &'a [F],
    pub out_shape: &'a [usize],
    pub parents: &'a [Tensor<F>],
}

type BackwardFn<F> = Box<dyn Fn(&BackwardCtx<'_, F>) -> Vec<Option<Vec<F>>>>;

struct Op<F: Real> {
    name: &'static str,
    parents: Vec<Tensor<F>>,
    backward: BackwardFn<F>,
}

struct Node<F: Real> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<F>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<F>>>,
    op: Option<Op<F>>,
}

/// Dense n-dimensional array participating in the gradient tape.
pub struct Tensor<F: Real = f32>(Rc<Node<F>>);

impl<F: Real> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<F: Real> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.0.data.borrow();
        let preview: Vec<_> = data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.op.as_ref().map(|o| o.name))
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Real> Tensor<F> {
    fn leaf(data: Vec<F>, shape: Vec<usize>, requires_grad: bool) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            requires_grad,
            grad: RefCell::new(None),
            op: None,
        }))
    }

    /// Builds a constant (non-differentiable) tensor.
    pub fn from_vec(data: Vec<F>, shape: &[usize]) -> Result<Self> {
        if shape.is_empty() && data.len() == 1 {
            return Ok(Self::leaf(data, vec![], false));
        }
        if shape.iter().any(|&d| d == 0) || numel(shape) != data.len() {
            return Err(TensorError::Shape {
                op: "from_vec",
                msg: format!("{} values do not fill shape {:?}", data.len(), shape),
            });
        }
        Ok(Self::leaf(data, shape.to_vec(), false))
    }

    /// Builds a trainable leaf tensor.
    pub fn param(data: Vec<F>, shape: &[usize]) -> Result<Self> {
        let t = Self::from_vec(data, shape)?;
        Ok(Self::leaf(t.to_vec(), t.shape().to_vec(), true))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(vec![F::zero(); numel(shape)], shape.to_vec(), false)
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        Self::leaf(vec![value; numel(shape)], shape.to_vec(), false)
    }

    pub fn scalar(value: F) -> Self {
        Self::leaf(vec![value], vec![], false)
    }

    /// Records the result of an operation. The backward closure is kept only
    /// when some parent participates in differentiation.
    pub(crate) fn from_op(
        data: Vec<F>,
        shape: Vec<usize>,
        name: &'static str,
        parents: Vec<Tensor<F>>,
        backward: impl Fn(&BackwardCtx<'_, F>) -> Vec<Option<Vec<F>>> + 'static,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len(), "{name}");
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let op = requires_grad.then(|| Op {
            name,
            parents,
            backward: Box::new(backward),
        });
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            requires_grad,
            grad: RefCell::new(None),
            op,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// True for tensors not produced by a recorded operation.
    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn data(&self) -> Ref<'_, Vec<F>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.0.data.borrow().clone()
    }

    pub fn item(&self) -> F {
        self.0.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Mutates the values of a leaf in place (optimizer steps, EMA, loading).
    ///
    /// Panics if called on a recorded operation output.
    pub fn update(&self, f: impl FnOnce(&mut [F])) {
        assert!(self.is_leaf(), "in-place update of a non-leaf tensor");
        f(&mut self.0.data.borrow_mut());
    }

    /// Copy of the values with no tape participation.
    pub fn detach(&self) -> Self {
        Self::leaf(self.to_vec(), self.shape().to_vec(), false)
    }

    /// Converts element type, producing a constant or a leaf parameter.
    pub fn cast<G: Real>(&self) -> Tensor<G> {
        let data = self.data().iter().map(|v| G::of(v.f64())).collect();
        Tensor::leaf(data, self.shape().to_vec(), self.requires_grad() && self.is_leaf())
    }

    /// Propagates gradients of this scalar to every reachable leaf that
    /// requires them. Leaf gradients accumulate across calls.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::Shape {
                op: "backward",
                msg: format!("loss must be scalar, got shape {:?}", self.shape()),
            });
        }
        if !self.requires_grad() {
            return Ok(());
        }
        GradTape::record(self).run(vec![F::one()]);
        Ok(())
    }
}

/// Operation records reachable from a loss, in creation (append) order.
pub struct GradTape<F: Real> {
    nodes: Vec<Tensor<F>>,
}

impl<F: Real> GradTape<F> {
    /// Collects every node feeding `root` that participates in
    /// differentiation.
    pub fn record(root: &Tensor<F>) -> Self {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![root.clone()];
        let mut nodes = Vec::new();
        while let Some(t) = stack.pop() {
            if !t.requires_grad() || !seen.insert(t.id()) {
                continue;
            }
            if let Some(op) = &t.0.op {
                stack.extend(op.parents.iter().cloned());
            }
            nodes.push(t);
        }
        nodes.sort_by_key(|t| t.id());
        GradTape { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node ids in the order backward visits them.
    pub fn visit_order(&self) -> Vec<u64> {
        self.nodes.iter().rev().map(|t| t.id()).collect()
    }

    fn run(&self, seed: Vec<F>) {
        let Some(root) = self.nodes.last() else {
            return;
        };
        let mut pending: HashMap<u64, Vec<F>> = HashMap::new();
        pending.insert(root.id(), seed);
        for node in self.nodes.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.op {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += *g),
                        None => *slot = Some(grad),
                    }
                }
                Some(op) => {
                    let out = node.0.data.borrow();
                    let ctx = BackwardCtx {
                        grad: &grad,
                        out: &out,
                        out_shape: &node.0.shape,
                        parents: &op.parents,
                    };
                    let parent_grads = (op.backward)(&ctx);
                    debug_assert_eq!(parent_grads.len(), op.parents.len(), "{}", op.name);
                    for (parent, pg) in op.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.numel(), "{}", op.name);
                        match pending.get_mut(&parent.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, g)| *a += *g),
                            None => {
                                pending.insert(parent.id(), pg);
                            }
                        }
                    }
                }
            }
        }
    }
}
