//! Dense row-major `f64` tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is a cheap reference-counted handle. Every operation applied
//! to a tensor that requires gradients records a backward closure and its
//! parents, so the recorded computation forms a DAG rooted at whatever value
//! the caller eventually calls [`Tensor::backward`] on. Leaves created with
//! [`Tensor::param`] accumulate gradients across calls until
//! [`Tensor::zero_grad`] is invoked.

use std::cell::{Cell, Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any operations. Tensors produced inside do not
/// require gradients, even when their inputs do.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward rule for a recorded operation: maps the gradient of the output to
/// one gradient per parent, in parent order, each with the parent's length.
pub type BackwardFn = Box<dyn Fn(&[f64], &[Tensor]) -> Vec<Vec<f64>>>;

struct GradFn {
    name: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Node>);

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        grad_fn: Option<GradFn>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            grad_fn,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::checked(shape, data, false)
    }

    /// Trainable leaf tensor.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::checked(shape, data, true)
    }

    fn checked(shape: &[usize], data: Vec<f64>, requires_grad: bool) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::contract(format!(
                "tensor shape {shape:?} has a zero dimension"
            )));
        }
        if numel(shape) != data.len() {
            return Err(Error::dim("tensor", shape, &[data.len()]));
        }
        Ok(Self::build(shape.to_vec(), data, requires_grad, None))
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(Vec::new(), vec![value], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::build(vec![n, n], data, false, None)
    }

    /// Records the result of a custom differentiable operation.
    ///
    /// `backward` receives the output gradient together with `parents` and
    /// must return one gradient per parent. When gradient recording is
    /// disabled or no parent requires gradients, the result is a plain
    /// constant and `backward` is dropped.
    pub fn from_op(
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(Tensor::requires_grad);
        if !track {
            return Self::build(shape, data, false, None);
        }
        Self::build(
            shape,
            data,
            true,
            Some(GradFn {
                name,
                parents,
                backward,
            }),
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn rows(&self) -> usize {
        self.0.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.0.shape.get(1).copied().unwrap_or(1)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|f| f.name)
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.0.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Overwrites the values of a leaf tensor in place.
    pub fn set_data(&self, data: Vec<f64>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(Error::dim("set_data", self.shape(), &[data.len()]));
        }
        *self.0.data.borrow_mut() = data;
        Ok(())
    }

    /// In-place update of a leaf's values given its current gradient
    /// (zeros when no gradient has been accumulated).
    pub fn update(&self, mut f: impl FnMut(&mut [f64], &[f64])) {
        let grad = self.0.grad.borrow();
        let zeros;
        let g: &[f64] = match grad.as_ref() {
            Some(g) => g,
            None => {
                zeros = vec![0.0; self.numel()];
                &zeros
            }
        };
        f(&mut self.0.data.borrow_mut(), g);
    }

    /// Copy of the values with no graph history.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.to_vec(), false, None)
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    fn id(&self) -> u64 {
        self.0.id
    }

    /// Back-propagates from this scalar, accumulating `d self / d t` into
    /// every reachable tensor `t` that requires gradients. Repeated calls
    /// without [`Tensor::zero_grad`] add to the existing gradients.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::contract(
                "backward called on a value with no recorded operations",
            ));
        }
        let graph = Graph::trace(self);
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for node in graph.nodes.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            if let Some(gf) = &node.0.grad_fn {
                let parent_grads = (gf.backward)(&g, &gf.parents);
                debug_assert_eq!(parent_grads.len(), gf.parents.len(), "{}", gf.name);
                for (p, pg) in gf.parents.iter().zip(parent_grads) {
                    if !p.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), p.numel(), "{}", gf.name);
                    match pending.get_mut(&p.id()) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(p.id(), pg);
                        }
                    }
                }
            }
            let mut slot = node.0.grad.borrow_mut();
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.op_name())
            .finish()
    }
}

/// Topologically ordered record of the operations that produced a value.
/// Parents always precede their children.
pub struct Graph {
    nodes: Vec<Tensor>,
}

impl Graph {
    /// Collects every gradient-requiring tensor reachable from `root`.
    pub fn trace(root: &Tensor) -> Graph {
        let mut nodes = Vec::new();
        let mut seen = HashSet::new();
        // (tensor, children already pushed)
        let mut stack = vec![(root.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                nodes.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = &t.0.grad_fn {
                for p in gf.parents.iter().rev() {
                    if p.requires_grad() && !seen.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        Graph { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Operation names in execution order; leaves are skipped.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().filter_map(Tensor::op_name).collect()
    }

    pub fn nodes(&self) -> &[Tensor] {
        &self.nodes
    }
}
