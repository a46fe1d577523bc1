//! Dense tensors, reverse-mode autodiff, AdamW, learning-rate schedule,
//! seeded randomness and the named-tensor file format.

mod float;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod rng;
pub mod schedule;
mod tensor;
pub mod tensor_file;

pub use float::{gemm, Float, MatView};
pub use graph::{Gradients, Graph, Segments, Var};
pub use optim::{adamw_step, AdamWConfig, OptimizerState};
pub use params::{trunc_normal, ParamId, ParamStore};
pub use rng::{SeedTree, StreamRng};
pub use schedule::{cosine_lr, default_warmup};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NumError {
    #[error("shape {0:?} has a zero extent")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch { what: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("parameter {0:?} already exists")]
    DuplicateParam(String),
    #[error("{0}")]
    InvalidArgument(String),
}
