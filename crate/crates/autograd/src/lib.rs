//! Dense CPU tensors with a small reverse-mode autodiff tape, sized for
//! training convolutional segmentation networks on a single machine.
//!
//! Supported operations: planar and volumetric convolution, batch
//! normalisation, ReLU, logistic sigmoid, 2x2 max pooling, time-axis mean
//! and max, channel concatenation, bilinear resampling, broadcast masking
//! and weighted binary cross-entropy.

mod conv;
mod float;
mod graph;
mod norm;
mod pool;
mod resize;
mod tensor;

pub use conv::ConvGeom;
pub use float::{DType, Float};
pub use graph::{Gradients, Graph, Var};
pub use norm::BatchStats;
pub use resize::nearest;
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
}
