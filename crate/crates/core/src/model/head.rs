use crate::engine::{glorot_uniform, NodeId, Padding, Real, SeededRng, Shape4, Tape, Tensor4};
use crate::error::{Error, Result};

use super::net::{recurrent_encode, BoundNet};
use super::wta::WtaRule;

/// Linear classifier on the time-summed, spatially averaged dense RNN states.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead<T> {
    /// (classes, channels, 1, 1).
    pub weight: Tensor4<T>,
    /// (1, classes, 1, 1).
    pub bias: Tensor4<T>,
}

fn check_classes(classes: usize) -> Result<()> {
    if classes < 2 {
        return Err(Error::config(format!(
            "classifier head needs at least 2 classes, got {classes}"
        )));
    }
    Ok(())
}

impl<T: Real> ClassifierHead<T> {
    /// All-zero head: every class starts with equal scores whatever the
    /// magnitude of the network's states.
    pub fn zeros(channels: usize, classes: usize) -> Result<Self> {
        check_classes(classes)?;
        Ok(ClassifierHead {
            weight: Tensor4::zeros(Shape4::new(classes, channels, 1, 1)),
            bias: Tensor4::zeros(Shape4::new(1, classes, 1, 1)),
        })
    }

    pub fn glorot(channels: usize, classes: usize, rng: &mut SeededRng) -> Result<Self> {
        check_classes(classes)?;
        Ok(ClassifierHead {
            weight: glorot_uniform(Shape4::new(classes, channels, 1, 1), rng)?,
            bias: Tensor4::zeros(Shape4::new(1, classes, 1, 1)),
        })
    }

    pub fn classes(&self) -> usize {
        self.weight.shape().n()
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> (NodeId, NodeId) {
        if trainable {
            (tape.param(self.weight.clone()), tape.param(self.bias.clone()))
        } else {
            (tape.constant(self.weight.clone()), tape.constant(self.bias.clone()))
        }
    }
}

/// Class scores (n, classes, 1, 1) for a frame sequence.
pub fn classify<T: Real>(
    tape: &mut Tape<T>,
    net: &BoundNet,
    head: (NodeId, NodeId),
    frames: &[NodeId],
) -> Result<NodeId> {
    let out = recurrent_encode(tape, net, frames, None, WtaRule::Mask)?;
    let mut acc = out.states[0];
    for &h in &out.states[1..] {
        acc = tape.add(acc, h)?;
    }
    let pooled = tape.spatial_mean(acc);
    tape.conv2d(pooled, head.0, Some(head.1), Padding::Valid)
}
