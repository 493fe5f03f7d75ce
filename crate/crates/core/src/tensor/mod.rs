//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable row-major array of `f64` scalars plus an
//! optional gradient buffer. Operations live on a [`Graph`], which records a
//! tape of backward rules; [`Graph::backward`] replays the tape in reverse
//! and accumulates gradients additively into every contributing tensor.

mod graph;
mod gradcheck;
mod ops;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::Graph;

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Numerical floor used inside log/sqrt/division to keep results finite when
/// arguments approach zero.
pub const EPS_NUM: f64 = 1e-12;

/// Exponent clamp: exp() arguments above this are held constant so the result
/// stays finite.
pub(crate) const EXP_ARG_MAX: f64 = 700.0;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of a tensor within a differentiation graph.
pub type TensorId = u64;

struct TensorInner {
    id: TensorId,
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: RefCell<Option<Vec<f64>>>,
}

/// Dense n-dimensional real array. Cloning is cheap (shared storage); values
/// are immutable once created, only the gradient buffer mutates.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<TensorInner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("values", &self.inner.values)
            .finish()
    }
}

impl Tensor {
    /// Create a tensor from explicit shape and row-major values. Rejects
    /// shape/length mismatches and non-finite input.
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let count: usize = shape.iter().product();
        if count != values.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} holds {} scalars but {} were provided",
                shape,
                count,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract(
                "tensor values must be finite".to_string(),
            ));
        }
        Ok(Self::from_parts(shape.to_vec(), values))
    }

    /// Scalar tensor (rank 0).
    pub fn scalar(v: f64) -> Tensor {
        Self::from_parts(Vec::new(), vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let count: usize = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![0.0; count])
    }

    pub fn filled(shape: &[usize], v: f64) -> Tensor {
        let count: usize = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![v; count])
    }

    /// Internal constructor for op outputs; assumes the caller got the shape
    /// arithmetic right.
    pub(crate) fn from_parts(shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Tensor {
            inner: Rc::new(TensorInner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                values,
                grad: RefCell::new(None),
            }),
        }
    }

    pub fn id(&self) -> TensorId {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.inner.values
    }

    pub fn len(&self) -> usize {
        self.inner.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.inner.shape.is_empty()
    }

    /// Value of a scalar tensor. Panics on non-scalars; use only where rank
    /// is known statically.
    pub fn item(&self) -> f64 {
        assert!(
            self.is_scalar(),
            "item() called on tensor of shape {:?}",
            self.inner.shape
        );
        self.inner.values[0]
    }

    /// Copy of the accumulated gradient, if backward has touched this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    /// Drop any accumulated gradient.
    pub fn clear_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Take the gradient out, leaving none behind.
    pub fn take_grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow_mut().take()
    }

    pub(crate) fn set_grad(&self, g: Vec<f64>) {
        debug_assert_eq!(g.len(), self.len());
        *self.inner.grad.borrow_mut() = Some(g);
    }

    /// Read the gradient for backward propagation; `None` means this node
    /// does not contribute to the loss.
    pub(crate) fn grad_for_backward(&self) -> Option<std::cell::Ref<'_, Vec<f64>>> {
        let borrow = self.inner.grad.borrow();
        if borrow.is_some() {
            Some(std::cell::Ref::map(borrow, |g| g.as_ref().unwrap()))
        } else {
            None
        }
    }

    /// Mutable access to the gradient buffer, allocating zeros on first use.
    pub(crate) fn grad_mut(&self) -> std::cell::RefMut<'_, Vec<f64>> {
        let mut borrow = self.inner.grad.borrow_mut();
        if borrow.is_none() {
            *borrow = Some(vec![0.0; self.len()]);
        }
        std::cell::RefMut::map(borrow, |g| g.as_mut().unwrap())
    }

    /// A detached copy: same shape and values, fresh identity, no gradient.
    pub fn detached(&self) -> Tensor {
        Self::from_parts(self.inner.shape.clone(), self.inner.values.clone())
    }
}

/// Check two shapes for exact equality, producing a dimension error naming
/// both on mismatch.
pub(crate) fn require_same_shape(ctx: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{ctx}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}
