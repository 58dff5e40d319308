//! Dense `f64` tensors and a tape-based reverse-mode autodiff graph.
//!
//! The graph is an append-only list of nodes. A node only refers to nodes
//! created before it, so the tape is acyclic and a single reverse sweep over
//! it is a valid topological order for backpropagation.

mod graph;
mod tensor;

pub use graph::{Axis, Graph, Node, NodeId, Op};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} must be non-empty with positive dimensions")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs {} elements, got {len}", .shape.iter().product::<usize>())]
    Length { shape: Vec<usize>, len: usize },
    #[error("{op}: index {index} out of bounds for size {bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("masked_softmax: row {row} has no selected entry")]
    DegenerateMask { row: usize },
    #[error("backward: root must be scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("{0}")]
    Contract(String),
}
