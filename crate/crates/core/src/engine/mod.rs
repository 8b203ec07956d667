//! Tensors, convolution and tape-based reverse-mode differentiation.

mod conv;
mod gradcheck;
mod init;
mod real;
mod rng;
mod tape;
mod tensor;

pub use conv::{conv2d, conv2d_backward, maxpool2d, ConvGrads, Padding};
pub use gradcheck::{grad_check, grad_check_piecewise, relative_error, GradCheckConfig, GradCheckReport};
pub use init::{glorot_limit, glorot_uniform};
pub use real::{Precision, Real};
pub use rng::{RngState, SeededRng};
pub use tape::{ElementwiseKind, Gradients, NodeId, Tape};
pub use tensor::{Shape4, Tensor4};
