//! Two-stream convolutional-recurrent autoencoder with winner-take-all codes.

mod head;
mod net;
pub mod wta;

pub use head::{classify, ClassifierHead};
pub use net::{
    convrnn_step, decode, encode_features, forward_loss, recurrent_encode, stateless_encode,
    BoundCell, BoundNet, ConvLayer, ConvRnnCell, LossReport, LossValues, ModelConfig,
    RecurrentCodes, RecurrentOutputs, StreamOutputs, TwoStreamNet, PARAM_NAMES,
};
pub(crate) use net::collect_grads;
pub use wta::{wta, wta_backward, wta_backward_literal, WtaRule};
