//! Tape-based reverse-mode differentiation over dense row-major arrays.
//!
//! A [`Graph`] records every operation applied to its [`Tensor`] handles;
//! [`Graph::backward`] then walks the record in reverse. Operations whose
//! inputs need no gradient keep no derivative closure, so constant or frozen
//! sub-computations cost nothing in the backward sweep.

mod array;
mod gemm;
mod graph;
mod ops;
mod scalar;

pub use array::{numel, row_major_strides, split_at_axis, NdArray};
pub use graph::{Gradients, Graph, Tensor};
pub use ops::conv::{conv2d, conv_out_len, temporal_conv};
pub use ops::elementwise::{broadcast_shape, sum_to_shape};
pub use ops::norm::{batch_norm, BatchStats};
pub use ops::shape::{concat, roll_array};
pub use scalar::Float;
