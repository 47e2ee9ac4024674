//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Forward values are computed eagerly when a node is appended to a
//! [`Graph`]; [`Graph::backward`] then walks the nodes in reverse append
//! order. Parameters enter a graph as leaves copied from a [`Tensor`], and
//! their gradients are copied back out with [`Graph::accumulate_into`] so
//! an optimizer can update the owning tensor.
//!
//! ```
//! use kgmod_core::autodiff::Graph;
//! use kgmod_core::Tensor;
//!
//! let mut g = Graph::new();
//! let x = g.leaf(&Tensor::scalar(3.0).trainable());
//! let y = g.mul(x, x).unwrap();
//! let loss = g.sum(y).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[6.0]);
//! ```

pub mod gradcheck;
mod graph;
mod optim;

use alloc::vec::Vec;

pub use graph::{Graph, NodeId, Op};
pub use optim::{AdamW, AdamWConfig, LrSchedule, Sgd};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("invalid shape {shape:?}")]
    BadShape { shape: Vec<usize> },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("{op}: index {index} out of range for extent {extent}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("{op}: non-finite value in forward output")]
    NonFinite { op: &'static str },
    #[error("loss must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("node {0} does not belong to this graph")]
    UnknownNode(usize),
    #[error("{op}: wrong number of inputs ({got})")]
    Arity { op: &'static str, got: usize },
    #[error("parameter {index} has no gradient")]
    MissingGrad { index: usize },
    #[error("parameter {index} is frozen and cannot be updated")]
    FrozenParameter { index: usize },
    #[error("optimizer state does not match parameter {index}")]
    StateMismatch { index: usize },
}
