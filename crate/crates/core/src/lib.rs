//! Recurrent winner-take-all networks: a two-stream convolutional-recurrent
//! autoencoder with winner-take-all sparse codes, trained by backpropagation
//! through time on synthetic video, plus the linear classification protocols
//! used to evaluate the learned features.

mod bytes;
pub mod data;
pub mod engine;
pub mod error;
pub mod eval;
pub mod model;
pub mod par;
pub mod train;

pub use error::{Error, Result};
