//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation executed during the forward pass and
//! replays the record in reverse to accumulate gradients. The op set is
//! exactly what the hiding pipeline needs: elementwise arithmetic, 2-D
//! convolution, a few activations and losses, blockwise DCT and color
//! transforms for the differentiable JPEG surrogates, and the
//! stop-gradient / straight-through primitives the attack layer is built
//! on.
//!
//! Training runs in `f32`; gradient checking instantiates the same code at
//! `f64`, where central finite differences are trustworthy. All kernels
//! accumulate in a fixed order, so results are bit-reproducible for a
//! given build.

mod adam;
mod gradcheck;
mod kernels;
mod ops;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gradcheck::{central_diff, max_rel_err, run_gradcheck_suite, GradCheckResult};
pub use ops::Op;

use crate::error::{Error, Result};
use std::fmt::{Debug, Display};

/// Element type of a tape: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + std::iter::Sum
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Convert an `f64` constant into the tape's element type.
#[inline]
pub(crate) fn sc<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("f64 constant representable")
}

/// Handle to a node in a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

pub(crate) struct Node<S: Scalar> {
    pub data: Vec<S>,
    pub shape: Vec<usize>,
    pub op: Op<S>,
    /// True when this node is a leaf whose gradient the caller wants, or
    /// when any ancestor is. Backward skips everything else.
    pub needs_grad: bool,
}

/// Ordered record of executed operations with parent links.
///
/// One training session owns one tape; construction and backward are
/// single-context. Finished values are immutable and may be read from
/// other threads.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf tensor. `requires_grad` marks it as a gradient target.
    pub fn leaf(&mut self, data: Vec<S>, shape: &[usize], requires_grad: bool) -> Result<TensorId> {
        validate_shape(data.len(), shape, "leaf")?;
        Ok(self.push(data, shape.to_vec(), Op::Leaf, requires_grad))
    }

    /// Insert a constant leaf (no gradient).
    pub fn constant(&mut self, data: Vec<S>, shape: &[usize]) -> Result<TensorId> {
        self.leaf(data, shape, false)
    }

    /// Scalar constant with shape `[1]`.
    pub fn scalar(&mut self, value: S) -> TensorId {
        self.push(vec![value], vec![1], Op::Leaf, false)
    }

    pub fn data(&self, id: TensorId) -> &[S] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Scalar value of a `[1]`-shaped node.
    pub fn value(&self, id: TensorId) -> S {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    /// Gradient of the last `backward` target with respect to `id`.
    /// `None` until backward runs, or when the node needs no gradient.
    pub fn grad(&self, id: TensorId) -> Option<&[S]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn needs_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub(crate) fn push(
        &mut self,
        data: Vec<S>,
        shape: Vec<usize>,
        op: Op<S>,
        needs_grad: bool,
    ) -> TensorId {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        // Topological order holds by construction: parents exist before use.
        debug_assert!(op.parents().iter().all(|p| p.0 < self.nodes.len()));
        self.nodes.push(Node {
            data,
            shape,
            op,
            needs_grad,
        });
        TensorId(self.nodes.len() - 1)
    }

    pub(crate) fn node(&self, id: TensorId) -> &Node<S> {
        &self.nodes[id.0]
    }

    /// True when any of `ids` participates in gradient computation.
    pub(crate) fn any_needs_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    /// Drop gradients from a previous backward pass.
    pub fn clear_grads(&mut self) {
        self.grads.clear();
    }

    /// Reverse-mode sweep from a scalar `loss` node.
    ///
    /// Visits each node exactly once, in reverse construction order,
    /// accumulating partials into every node on a gradient path.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::BadDimensions {
                op: "backward",
                msg: format!(
                    "backward target must be scalar, got shape {:?}",
                    self.nodes[loss.0].shape
                ),
            });
        }
        self.grads.clear();
        self.grads.resize(self.nodes.len(), None);
        self.grads[loss.0] = Some(vec![S::one()]);

        for i in (0..=loss.0).rev() {
            if self.grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let upstream = self.grads[i].take().expect("present");
            self.accumulate_parents(i, &upstream)?;
            self.grads[i] = Some(upstream);
        }
        Ok(())
    }

    /// Ensure a gradient buffer exists for `id` and return it.
    fn grad_buf(&mut self, id: TensorId) -> &mut [S] {
        let len = self.nodes[id.0].data.len();
        self.grads[id.0].get_or_insert_with(|| vec![S::zero(); len])
    }
}

pub(crate) fn validate_shape(len: usize, shape: &[usize], op: &'static str) -> Result<()> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(Error::BadDimensions {
            op,
            msg: format!("shape dimensions must be positive, got {shape:?}"),
        });
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(Error::BadDimensions {
            op,
            msg: format!("shape {shape:?} implies {numel} elements, data has {len}"),
        });
    }
    Ok(())
}
