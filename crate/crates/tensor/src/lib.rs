//! Reverse-mode automatic differentiation over dense NCHW arrays.
//!
//! Values are recorded on a [`Tape`]; each op returns a [`Var`] handle and
//! registers a backward rule. [`Tape::backward`] walks the tape in reverse and
//! returns [`Grads`]. Convolutions lower to im2col + GEMM.

mod array;
mod elem;
mod error;
pub mod ops;
mod tape;

pub use array::Array;
pub use elem::Elem;
pub use error::{Result, TensorError};
pub use ops::{conv_out_len, resize_bilinear, softmax_channels, AvgPoolOptions, BatchStats};
pub use tape::{Grads, Tape, Var};
