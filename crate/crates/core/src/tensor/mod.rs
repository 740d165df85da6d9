//! A small reverse-mode automatic differentiation engine.
//!
//! Tensors are reference-counted graph nodes. Operations on tensors that
//! require gradients record their inputs together with a [`Backward`] rule;
//! [`Tensor::backward`] walks the recorded graph in reverse topological
//! order and accumulates gradients into the leaves.
//!
//! The engine is generic over [`Float`] so the same operators run in `f32`
//! for training and in `f64` for tight finite-difference checks.

mod adam;
pub mod conv;
mod gradcheck;
mod ops;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard};

use thiserror::Error;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::{Activation, LossKind};

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("optimizer state error: {0}")]
    State(String),
    #[error("degenerate normalization: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Scalar element type of the engine.
pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }
}

impl Float for f32 {}
impl Float for f64 {}

/// Gradient rule of a recorded operation.
///
/// `grad_out` is the gradient of the loss with respect to the operation's
/// output. The returned vector has one entry per parent, in order; entries
/// for parents where `needs[i]` is false may be `None`.
pub trait Backward<T: Float>: Send + Sync {
    fn backward(&self, grad_out: &[T], parents: &[Tensor<T>], needs: &[bool]) -> Vec<Option<Vec<T>>>;
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

struct Node<T: Float> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    grad: RwLock<Option<Vec<T>>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    rule: Option<Box<dyn Backward<T>>>,
}

/// N-dimensional array of floats with an optional gradient slot.
pub struct Tensor<T: Float = f32>(Arc<Node<T>>);

impl<T: Float> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Float> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Float> Tensor<T> {
    fn with_node(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, parents: Vec<Tensor<T>>, rule: Option<Box<dyn Backward<T>>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            grad: RwLock::new(None),
            requires_grad,
            parents,
            rule,
        }))
    }

    /// Leaf tensor that does not track gradients.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(TensorError::Shape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self::with_node(shape.to_vec(), data, false, Vec::new(), None))
    }

    /// Trainable leaf: gradients accumulate into it on `backward`.
    pub fn parameter(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(TensorError::Shape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self::with_node(shape.to_vec(), data, true, Vec::new(), None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::with_node(shape.to_vec(), vec![T::zero(); numel(shape)], false, Vec::new(), None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::with_node(shape.to_vec(), vec![value; numel(shape)], false, Vec::new(), None)
    }

    pub fn scalar(value: T) -> Self {
        Self::with_node(Vec::new(), vec![value], false, Vec::new(), None)
    }

    /// Result of a recorded operation. The graph edge is kept only when some
    /// parent requires gradients.
    pub fn from_op(shape: Vec<usize>, data: Vec<T>, parents: Vec<Tensor<T>>, rule: Box<dyn Backward<T>>) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        if requires_grad {
            Self::with_node(shape, data, true, parents, Some(rule))
        } else {
            Self::with_node(shape, data, false, Vec::new(), None)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
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

    pub fn is_leaf(&self) -> bool {
        self.0.rule.is_none()
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.0.data.read().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.shape());
        d[0]
    }

    /// In-place update of the stored values (used by optimizers and
    /// finite-difference probes). The shape never changes.
    pub fn update_data<F: FnOnce(&mut [T])>(&self, f: F) {
        let mut d = self.0.data.write().expect("tensor data lock poisoned");
        f(&mut d);
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.read().expect("tensor grad lock poisoned").clone()
    }

    pub fn has_grad(&self) -> bool {
        self.0.grad.read().expect("tensor grad lock poisoned").is_some()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.write().expect("tensor grad lock poisoned") = None;
    }

    /// Copy of the values as a new leaf that carries no graph.
    pub fn detach(&self) -> Self {
        Self::with_node(self.0.shape.clone(), self.to_vec(), false, Vec::new(), None)
    }

    fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.0.grad.write().expect("tensor grad lock poisoned");
        match slot.as_mut() {
            Some(existing) => {
                for (e, v) in existing.iter_mut().zip(g) {
                    *e += *v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode differentiation from a single-element tensor.
    ///
    /// Gradients are accumulated into every reachable leaf that requires
    /// them; calling twice without clearing doubles them.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::Shape(format!(
                "backward needs a single-element root, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Post-order DFS: parents before children.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in node.0.parents.iter().rev() {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }

        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        grads.insert(self.id(), vec![T::one()]);
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            match &node.0.rule {
                None => node.accumulate_grad(&g),
                Some(rule) => {
                    let parents = &node.0.parents;
                    let needs: Vec<bool> = parents.iter().map(|p| p.requires_grad()).collect();
                    let pgrads = rule.backward(&g, parents, &needs);
                    for ((p, pg), need) in parents.iter().zip(pgrads).zip(&needs) {
                        if !need {
                            continue;
                        }
                        let Some(pg) = pg else { continue };
                        debug_assert_eq!(pg.len(), p.numel());
                        match grads.get_mut(&p.id()) {
                            Some(acc) => {
                                for (a, v) in acc.iter_mut().zip(&pg) {
                                    *a += *v;
                                }
                            }
                            None => {
                                grads.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl Tensor<f32> {
    /// Widen to a 64-bit leaf with the same values and grad flag.
    pub fn to_f64(&self) -> Tensor<f64> {
        let data: Vec<f64> = self.data().iter().map(|&v| v as f64).collect();
        Tensor::with_node(self.shape().to_vec(), data, self.requires_grad() && self.is_leaf(), Vec::new(), None)
    }
}
