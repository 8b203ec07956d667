use crate::engine::{
    glorot_uniform, Gradients, NodeId, Padding, Real, SeededRng, Shape4, Tape, Tensor4,
};
use crate::error::{Error, Result};

use super::wta::WtaRule;

/// Architecture hyperparameters.
///
/// The layout is fixed: two convolutional encoder layers, one convolutional
/// RNN layer, winner-take-all, then a single linear convolutional decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    /// Channels in every hidden layer.
    pub channels: usize,
    /// Kernel size of the encoder convolutions and of both recurrent kernels.
    pub enc_kernel: usize,
    pub dec_kernel: usize,
    /// 1 for grayscale, 3 for colour.
    pub input_channels: usize,
}

impl ModelConfig {
    pub const DEPTH: usize = 4;
    pub const CONV_LAYERS_BEFORE_RNN: usize = 2;

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::config("channels must be positive"));
        }
        if self.input_channels == 0 {
            return Err(Error::config("input_channels must be positive"));
        }
        for (name, k) in [("enc_kernel", self.enc_kernel), ("dec_kernel", self.dec_kernel)] {
            if k % 2 == 0 {
                return Err(Error::config(format!("{name} must be odd, got {k}")));
            }
        }
        Ok(())
    }

    fn shapes(&self) -> [Shape4; 9] {
        let (f, ke, kd, ci) = (
            self.channels,
            self.enc_kernel,
            self.dec_kernel,
            self.input_channels,
        );
        let bias = |c| Shape4::new(1, c, 1, 1);
        [
            Shape4::new(f, ci, ke, ke),
            bias(f),
            Shape4::new(f, f, ke, ke),
            bias(f),
            Shape4::new(f, f, ke, ke),
            Shape4::new(f, f, ke, ke),
            bias(f),
            Shape4::new(ci, f, kd, kd),
            bias(ci),
        ]
    }
}

/// A convolution with one bias per output channel (bias stored as (1, c, 1, 1)).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub kernel: Tensor4<T>,
    pub bias: Tensor4<T>,
}

/// `h_t = relu(W * h_{t-1} + V * x_t + b)` with same padding.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvRnnCell<T> {
    /// Hidden-to-hidden kernel (f, f, k, k).
    pub w: Tensor4<T>,
    /// Input-to-hidden kernel (f, f_in, k, k).
    pub v: Tensor4<T>,
    pub b: Tensor4<T>,
}

impl<T: Real> ConvRnnCell<T> {
    pub fn channels(&self) -> usize {
        self.w.shape().n()
    }

    /// One state update evaluated directly (no tape).
    pub fn step(&self, h_prev: &Tensor4<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut tape = Tape::new();
        let cell = BoundCell {
            w: tape.constant(self.w.clone()),
            v: tape.constant(self.v.clone()),
            b: tape.constant(self.b.clone()),
        };
        let h = tape.constant(h_prev.clone());
        let x = tape.constant(x.clone());
        let out = convrnn_step(&mut tape, &cell, Some(h), x)?;
        Ok(tape.value(out).clone())
    }
}

/// Two-stream network: stateless encoder E, recurrent encoder R and the
/// decoder D they share.
///
/// E and R share both encoder convolutions and the input-to-hidden kernel with
/// its bias; the hidden-to-hidden kernel is the only parameter exclusive to R,
/// so E is exactly R with that kernel and the carried state set to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoStreamNet<T> {
    pub config: ModelConfig,
    pub enc1: ConvLayer<T>,
    pub enc2: ConvLayer<T>,
    pub cell: ConvRnnCell<T>,
    pub dec: ConvLayer<T>,
}

pub const PARAM_NAMES: [&str; 9] = [
    "enc1.kernel",
    "enc1.bias",
    "enc2.kernel",
    "enc2.bias",
    "cell.w",
    "cell.v",
    "cell.b",
    "dec.kernel",
    "dec.bias",
];

/// Parameter node ids of a [`TwoStreamNet`] recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundNet {
    pub enc1: (NodeId, NodeId),
    pub enc2: (NodeId, NodeId),
    pub cell: BoundCell,
    pub dec: (NodeId, NodeId),
}

#[derive(Clone, Copy, Debug)]
pub struct BoundCell {
    pub w: NodeId,
    pub v: NodeId,
    pub b: NodeId,
}

impl BoundNet {
    /// Node ids in [`PARAM_NAMES`] order.
    pub fn ids(&self) -> [NodeId; 9] {
        [
            self.enc1.0,
            self.enc1.1,
            self.enc2.0,
            self.enc2.1,
            self.cell.w,
            self.cell.v,
            self.cell.b,
            self.dec.0,
            self.dec.1,
        ]
    }
}

impl<T: Real> TwoStreamNet<T> {
    /// Glorot-uniform kernels, zero biases.
    pub fn glorot(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let shapes = config.shapes();
        let params = shapes
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                if PARAM_NAMES[i].ends_with(".bias") || PARAM_NAMES[i] == "cell.b" {
                    Ok(Tensor4::zeros(s))
                } else {
                    glorot_uniform(s, rng)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_params(config, params)
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Self::from_params(config, config.shapes().iter().map(|&s| Tensor4::zeros(s)).collect())
    }

    pub fn from_params(config: ModelConfig, params: Vec<Tensor4<T>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.shapes();
        if params.len() != shapes.len() {
            return Err(Error::shape(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((p, s), name) in params.iter().zip(&shapes).zip(PARAM_NAMES) {
            if p.shape() != *s {
                return Err(Error::shape(format!(
                    "{name} should be {s}, got {}",
                    p.shape()
                )));
            }
        }
        let mut it = params.into_iter();
        let mut next = || it.next().expect("length checked");
        Ok(TwoStreamNet {
            config,
            enc1: ConvLayer {
                kernel: next(),
                bias: next(),
            },
            enc2: ConvLayer {
                kernel: next(),
                bias: next(),
            },
            cell: ConvRnnCell {
                w: next(),
                v: next(),
                b: next(),
            },
            dec: ConvLayer {
                kernel: next(),
                bias: next(),
            },
        })
    }

    pub fn params(&self) -> [&Tensor4<T>; 9] {
        [
            &self.enc1.kernel,
            &self.enc1.bias,
            &self.enc2.kernel,
            &self.enc2.bias,
            &self.cell.w,
            &self.cell.v,
            &self.cell.b,
            &self.dec.kernel,
            &self.dec.bias,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor4<T>; 9] {
        [
            &mut self.enc1.kernel,
            &mut self.enc1.bias,
            &mut self.enc2.kernel,
            &mut self.enc2.bias,
            &mut self.cell.w,
            &mut self.cell.v,
            &mut self.cell.b,
            &mut self.dec.kernel,
            &mut self.dec.bias,
        ]
    }

    pub fn into_params(self) -> Vec<Tensor4<T>> {
        vec![
            self.enc1.kernel,
            self.enc1.bias,
            self.enc2.kernel,
            self.enc2.bias,
            self.cell.w,
            self.cell.v,
            self.cell.b,
            self.dec.kernel,
            self.dec.bias,
        ]
    }

    pub fn cast<U: Real>(&self) -> TwoStreamNet<U> {
        TwoStreamNet::from_params(
            self.config,
            self.params().iter().map(|p| p.cast()).collect(),
        )
        .expect("same config")
    }

    /// Records the parameters on `tape`, as differentiable leaves when
    /// `trainable`, otherwise as constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundNet {
        let mut leaf = |t: &Tensor4<T>| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        BoundNet {
            enc1: (leaf(&self.enc1.kernel), leaf(&self.enc1.bias)),
            enc2: (leaf(&self.enc2.kernel), leaf(&self.enc2.bias)),
            cell: BoundCell {
                w: leaf(&self.cell.w),
                v: leaf(&self.cell.v),
                b: leaf(&self.cell.b),
            },
            dec: (leaf(&self.dec.kernel), leaf(&self.dec.bias)),
        }
    }

    fn check_frame(&self, x: &Tensor4<T>) -> Result<()> {
        if x.shape().c() != self.config.input_channels {
            return Err(Error::shape(format!(
                "frame {} has {} channels, model expects {}",
                x.shape(),
                x.shape().c(),
                self.config.input_channels
            )));
        }
        Ok(())
    }

    /// Sparse stateless code o^E of one frame batch.
    pub fn stateless_encode(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_frame(x)?;
        let mut tape = Tape::new();
        let net = self.bind(&mut tape, false);
        let x = tape.constant(x.clone());
        let code = stateless_encode(&mut tape, &net, x, WtaRule::Mask)?;
        Ok(tape.value(code).clone())
    }

    /// Runs the recurrent stream over `frames` starting from `h0` (zeros when `None`).
    pub fn recurrent_encode(
        &self,
        frames: &[Tensor4<T>],
        h0: Option<&Tensor4<T>>,
    ) -> Result<RecurrentCodes<T>> {
        if frames.is_empty() {
            return Err(Error::contract("recurrent_encode needs at least one frame"));
        }
        for f in frames {
            self.check_frame(f)?;
        }
        let mut tape = Tape::new();
        let net = self.bind(&mut tape, false);
        let xs: Vec<NodeId> = frames.iter().map(|f| tape.constant(f.clone())).collect();
        let h0 = h0.map(|h| tape.constant(h.clone()));
        let out = recurrent_encode(&mut tape, &net, &xs, h0, WtaRule::Mask)?;
        Ok(RecurrentCodes {
            codes: out.codes.iter().map(|&c| tape.value(c).clone()).collect(),
            states: out.states.iter().map(|&h| tape.value(h).clone()).collect(),
        })
    }

    pub fn decode(&self, code: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut tape = Tape::new();
        let net = self.bind(&mut tape, false);
        let c = tape.constant(code.clone());
        let out = decode(&mut tape, &net, c)?;
        Ok(tape.value(out).clone())
    }

    /// Two-stream loss and its gradient for every parameter (in [`PARAM_NAMES`] order).
    pub fn loss_and_grads(&self, frames: &[Tensor4<T>], rule: WtaRule) -> Result<LossValues<T>> {
        let mut tape = Tape::new();
        let net = self.bind(&mut tape, true);
        let xs: Vec<NodeId> = frames.iter().map(|f| tape.constant(f.clone())).collect();
        let report = forward_loss(&mut tape, &net, &xs, rule)?;
        let grads = tape.backward(report.loss)?;
        Ok(LossValues {
            recon: tape.value(report.recon).data()[0],
            pred: tape.value(report.pred).data()[0],
            total: tape.value(report.loss).data()[0],
            grads: collect_grads(&tape, &grads, &net.ids()),
        })
    }

    /// Two-stream loss only.
    pub fn loss(&self, frames: &[Tensor4<T>], rule: WtaRule) -> Result<T> {
        self.loss_with_pattern(frames, rule).map(|(l, _)| l)
    }

    /// Loss plus the relu/WTA branch pattern of the forward pass.
    pub fn loss_with_pattern(&self, frames: &[Tensor4<T>], rule: WtaRule) -> Result<(T, Vec<bool>)> {
        let mut tape = Tape::new();
        let net = self.bind(&mut tape, false);
        let xs: Vec<NodeId> = frames.iter().map(|f| tape.constant(f.clone())).collect();
        let report = forward_loss(&mut tape, &net, &xs, rule)?;
        Ok((tape.value(report.loss).data()[0], tape.branch_pattern()))
    }
}

pub(crate) fn collect_grads<T: Real>(
    tape: &Tape<T>,
    grads: &Gradients<T>,
    ids: &[NodeId],
) -> Vec<Tensor4<T>> {
    ids.iter()
        .map(|&id| grads.get_or_zeros(id, tape.shape(id)))
        .collect()
}

/// Per-frame recurrent codes plus the dense states behind them.
#[derive(Clone, Debug)]
pub struct RecurrentCodes<T> {
    /// Sparse (post winner-take-all) codes o^R_t.
    pub codes: Vec<Tensor4<T>>,
    /// Dense states h_t; the last one is the final state.
    pub states: Vec<Tensor4<T>>,
}

impl<T: Real> RecurrentCodes<T> {
    pub fn final_state(&self) -> &Tensor4<T> {
        self.states.last().expect("nonempty")
    }
}

/// Scalar loss components and parameter gradients of one batch.
#[derive(Clone, Debug)]
pub struct LossValues<T> {
    pub recon: T,
    pub pred: T,
    pub total: T,
    pub grads: Vec<Tensor4<T>>,
}

/// Tape-level outputs of both streams.
#[derive(Clone, Debug)]
pub struct StreamOutputs {
    /// Stateless sparse codes, one per input frame x_1..x_{T-1}.
    pub code_e: Vec<NodeId>,
    /// Recurrent sparse codes, one per input frame x_1..x_{T-1}.
    pub code_r: Vec<NodeId>,
    /// Reconstructions D(E(x_{t-1})).
    pub recon_e: Vec<NodeId>,
    /// Predictions D(R(x_{t-1})).
    pub pred_r: Vec<NodeId>,
    pub final_state: NodeId,
}

#[derive(Clone, Debug)]
pub struct LossReport {
    /// recon + pred.
    pub loss: NodeId,
    /// Reconstruction term averaged over t = 2..T.
    pub recon: NodeId,
    /// Prediction term averaged over t = 2..T.
    pub pred: NodeId,
    pub outputs: StreamOutputs,
}

#[derive(Clone, Debug)]
pub struct RecurrentOutputs {
    pub codes: Vec<NodeId>,
    pub states: Vec<NodeId>,
}

/// relu(enc2(relu(enc1(x)))), the feature stack shared by both streams.
pub fn encode_features<T: Real>(tape: &mut Tape<T>, net: &BoundNet, x: NodeId) -> Result<NodeId> {
    let a = tape.conv2d(x, net.enc1.0, Some(net.enc1.1), Padding::Same)?;
    let a = tape.relu(a);
    let b = tape.conv2d(a, net.enc2.0, Some(net.enc2.1), Padding::Same)?;
    Ok(tape.relu(b))
}

/// relu(W * h_prev + V * x + b); `h_prev = None` means a zero state.
pub fn convrnn_step<T: Real>(
    tape: &mut Tape<T>,
    cell: &BoundCell,
    h_prev: Option<NodeId>,
    x: NodeId,
) -> Result<NodeId> {
    if let Some(h) = h_prev {
        let (hs, xs) = (tape.shape(h), tape.shape(x));
        if hs.h() != xs.h() || hs.w() != xs.w() || hs.n() != xs.n() {
            return Err(Error::shape(format!(
                "state {hs} and input {xs} disagree on batch or spatial dims"
            )));
        }
    }
    let drive = tape.conv2d(x, cell.v, Some(cell.b), Padding::Same)?;
    recur(tape, cell, h_prev, drive)
}

fn recur<T: Real>(
    tape: &mut Tape<T>,
    cell: &BoundCell,
    h_prev: Option<NodeId>,
    drive: NodeId,
) -> Result<NodeId> {
    match h_prev {
        None => Ok(tape.relu(drive)),
        Some(h) => {
            let r = tape.conv2d(h, cell.w, None, Padding::Same)?;
            let s = tape.add(r, drive)?;
            Ok(tape.relu(s))
        }
    }
}

/// E path: wta(relu(V * features(x) + b)).
pub fn stateless_encode<T: Real>(
    tape: &mut Tape<T>,
    net: &BoundNet,
    x: NodeId,
    rule: WtaRule,
) -> Result<NodeId> {
    let feat = encode_features(tape, net, x)?;
    let drive = tape.conv2d(feat, net.cell.v, Some(net.cell.b), Padding::Same)?;
    let dense = tape.relu(drive);
    Ok(tape.wta(dense, rule))
}

/// R path over a frame sequence. The dense state carries the recurrence;
/// winner-take-all only touches the decoder-facing copy.
pub fn recurrent_encode<T: Real>(
    tape: &mut Tape<T>,
    net: &BoundNet,
    frames: &[NodeId],
    h0: Option<NodeId>,
    rule: WtaRule,
) -> Result<RecurrentOutputs> {
    if frames.is_empty() {
        return Err(Error::contract("recurrent_encode needs at least one frame"));
    }
    let mut h = h0;
    let mut codes = Vec::with_capacity(frames.len());
    let mut states = Vec::with_capacity(frames.len());
    for &x in frames {
        let feat = encode_features(tape, net, x)?;
        let next = convrnn_step(tape, &net.cell, h, feat)?;
        codes.push(tape.wta(next, rule));
        states.push(next);
        h = Some(next);
    }
    Ok(RecurrentOutputs { codes, states })
}

/// Linear decoder convolution back to input channels.
pub fn decode<T: Real>(tape: &mut Tape<T>, net: &BoundNet, code: NodeId) -> Result<NodeId> {
    tape.conv2d(code, net.dec.0, Some(net.dec.1), Padding::Same)
}

/// Two-stream loss over x_1..x_T:
/// mean over t = 2..T of mse(x_{t-1}, D(E(x_{t-1}))) + mse(x_t, D(R(x_{t-1}))).
pub fn forward_loss<T: Real>(
    tape: &mut Tape<T>,
    net: &BoundNet,
    frames: &[NodeId],
    rule: WtaRule,
) -> Result<LossReport> {
    let t_len = frames.len();
    if t_len < 2 {
        return Err(Error::contract(format!(
            "two-stream loss needs at least 2 frames, got {t_len}"
        )));
    }
    let mut out = StreamOutputs {
        code_e: Vec::new(),
        code_r: Vec::new(),
        recon_e: Vec::new(),
        pred_r: Vec::new(),
        final_state: frames[0],
    };
    let mut recon_terms = Vec::new();
    let mut pred_terms = Vec::new();
    let mut h: Option<NodeId> = None;
    for k in 0..t_len - 1 {
        let x = frames[k];
        let feat = encode_features(tape, net, x)?;
        // V * feat + b is shared by both streams.
        let drive = tape.conv2d(feat, net.cell.v, Some(net.cell.b), Padding::Same)?;
        let dense_e = tape.relu(drive);
        let code_e = tape.wta(dense_e, rule);
        let state = match h {
            None => dense_e,
            Some(_) => recur(tape, &net.cell, h, drive)?,
        };
        let code_r = tape.wta(state, rule);
        let recon = decode(tape, net, code_e)?;
        let pred = decode(tape, net, code_r)?;
        recon_terms.push(tape.mse(recon, x)?);
        pred_terms.push(tape.mse(pred, frames[k + 1])?);
        out.code_e.push(code_e);
        out.code_r.push(code_r);
        out.recon_e.push(recon);
        out.pred_r.push(pred);
        h = Some(state);
    }
    out.final_state = h.expect("at least one step");
    let inv = T::one() / T::from_usize(t_len - 1).unwrap();
    let recon = sum_scaled(tape, &recon_terms, inv)?;
    let pred = sum_scaled(tape, &pred_terms, inv)?;
    let loss = tape.add(recon, pred)?;
    Ok(LossReport {
        loss,
        recon,
        pred,
        outputs: out,
    })
}

fn sum_scaled<T: Real>(tape: &mut Tape<T>, terms: &[NodeId], factor: T) -> Result<NodeId> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(tape.scale(acc, factor))
}
