//! Reverse-mode automatic differentiation over [`Tensor`](crate::tensor::Tensor)s.

mod check;
mod nn_ops;
mod ops;
mod tape;

pub use check::{grad_check, relative_error, GradCheckReport, DEFAULT_STEP, RELATIVE_FLOOR};
pub use nn_ops::{
    batch_norm, conv3d, cross_entropy, layer_norm, max_pool3d, output_extent, ConvGeometry,
    NormStats, ObservedStats,
};
pub use ops::{concat, BinaryOp, ReduceOp, UnaryOp};
pub use tape::{Gradients, Tape, Var};
