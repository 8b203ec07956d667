//! Append-only operation tape with a reverse sweep.
//!
//! Every recorded op stores its forward value and whatever it needs for the
//! adjoint. Node ids are indices into the tape, so inputs always precede the
//! node that consumes them and the reverse sweep is a plain countdown.

use super::conv::{conv2d, conv2d_backward, Padding};
use super::real::Real;
use super::tensor::{Shape4, Tensor4};
use crate::error::{Error, Result};
use crate::model::wta::{self, WtaRule};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Relu,
    Add,
    Sub,
    Mul,
    Scale,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        padding: Padding,
    },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Wta {
        input: NodeId,
        mask: Tensor4<T>,
        rule: WtaRule,
    },
    SumAll(NodeId),
    MeanAll(NodeId),
    /// mean((a - b)^2) as a 1x1x1x1 scalar.
    Mse(NodeId, NodeId),
    /// (n, c, h, w) -> (n, c, 1, 1) spatial average.
    SpatialMean(NodeId),
    /// Mean softmax cross-entropy of (n, classes, 1, 1) scores.
    SoftmaxXent {
        scores: NodeId,
        probs: Tensor4<T>,
        labels: Vec<usize>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                kernel,
                bias,
                ..
            } => {
                let mut v = vec![*input, *kernel];
                v.extend(bias.iter().copied());
                v
            }
            Op::Relu(a)
            | Op::Scale(a, _)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::SpatialMean(a) => vec![*a],
            Op::Wta { input, .. } => vec![*input],
            Op::SoftmaxXent { scores, .. } => vec![*scores],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Mse(a, b) => vec![*a, *b],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor4<T>,
    requires_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// A tape is single-owner: build it on one thread, differentiate it there (or
/// move it to another thread), never share it mutably.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints indexed by node id; `None` for nodes that receive no gradient.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor4<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor4<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `id`, or zeros shaped like `like` when none flowed there.
    pub fn get_or_zeros(&self, id: NodeId, like: Shape4) -> Tensor4<T> {
        self.get(id).cloned().unwrap_or_else(|| Tensor4::zeros(like))
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor4<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Which linear piece every relu and winner-take-all node sits on:
    /// one flag per input element (positive for relu, winner for WTA).
    /// Two evaluations with equal patterns lie on the same smooth piece.
    pub fn branch_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => out.extend(self.value(*a).data().iter().map(|&v| v > T::zero())),
                Op::Wta { mask, .. } => out.extend(mask.data().iter().map(|&m| m != T::zero())),
                _ => {}
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor4<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape4 {
        self.nodes[id.0].value.shape()
    }

    /// Ids of the inputs of `id`, in recording order.
    pub fn inputs(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.inputs()
    }

    fn push(&mut self, op: Op<T>, value: Tensor4<T>) -> NodeId {
        let requires_grad = op
            .inputs()
            .iter()
            .any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a differentiable leaf (a parameter).
    pub fn param(&mut self, value: Tensor4<T>) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a constant leaf (data, targets).
    pub fn constant(&mut self, value: Tensor4<T>) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// `bias` is a (1, cout, 1, 1) node when present.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        padding: Padding,
    ) -> Result<NodeId> {
        let value = {
            let b = bias.map(|b| self.value(b).data());
            conv2d(self.value(input), self.value(kernel), b, padding)?
        };
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                padding,
            },
            value,
        ))
    }

    /// Dispatches an elementwise op; `Scale` reads its factor from `factor`.
    pub fn elementwise(
        &mut self,
        kind: ElementwiseKind,
        args: &[NodeId],
        factor: Option<T>,
    ) -> Result<NodeId> {
        let arity = match kind {
            ElementwiseKind::Relu | ElementwiseKind::Scale => 1,
            _ => 2,
        };
        if args.len() != arity {
            return Err(Error::contract(format!(
                "{kind:?} takes {arity} operands, got {}",
                args.len()
            )));
        }
        match kind {
            ElementwiseKind::Relu => Ok(self.relu(args[0])),
            ElementwiseKind::Add => self.add(args[0], args[1]),
            ElementwiseKind::Sub => self.sub(args[0], args[1]),
            ElementwiseKind::Mul => self.mul(args[0], args[1]),
            ElementwiseKind::Scale => {
                let f = factor.ok_or_else(|| Error::contract("scale needs a factor"))?;
                Ok(self.scale(args[0], f))
            }
        }
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| v.max(T::zero()));
        self.push(Op::Relu(a), value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, a: NodeId, factor: T) -> NodeId {
        let value = self.value(a).map(|v| v * factor);
        self.push(Op::Scale(a, factor), value)
    }

    /// Winner-take-all per (sample, channel); see [`crate::model::wta`].
    pub fn wta(&mut self, input: NodeId, rule: WtaRule) -> NodeId {
        let (value, mask) = wta::wta(self.value(input));
        self.push(Op::Wta { input, mask, rule }, value)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let value = Tensor4::scalar(self.value(a).sum());
        self.push(Op::SumAll(a), value)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let value = Tensor4::scalar(self.value(a).mean());
        self.push(Op::MeanAll(a), value)
    }

    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        va.expect_same_shape(vb)?;
        let n = T::from_usize(va.len().max(1)).unwrap();
        let s: T = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Op::Mse(a, b), Tensor4::scalar(s / n)))
    }

    pub fn spatial_mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let s = v.shape();
        let plane = s.plane();
        let denom = T::from_usize(plane.max(1)).unwrap();
        let data = v
            .data()
            .chunks(plane.max(1))
            .map(|c| c.iter().copied().sum::<T>() / denom)
            .collect();
        let value = Tensor4::from_vec(Shape4::new(s.n(), s.c(), 1, 1), data)
            .expect("one mean per plane");
        self.push(Op::SpatialMean(a), value)
    }

    /// Mean cross-entropy of softmax(scores) against integer labels.
    pub fn softmax_xent(&mut self, scores: NodeId, labels: &[usize]) -> Result<NodeId> {
        let v = self.value(scores);
        let s = v.shape();
        if s.h() != 1 || s.w() != 1 || s.n() != labels.len() {
            return Err(Error::shape(format!(
                "softmax cross-entropy expects (n, classes, 1, 1) scores for {} labels, got {s}",
                labels.len()
            )));
        }
        let k = s.c();
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Data(format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = Tensor4::zeros(s);
        let mut loss = T::zero();
        for (i, &label) in labels.iter().enumerate() {
            let row = &v.data()[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&x| (x - max).exp()).sum();
            for (j, &x) in row.iter().enumerate() {
                probs.data_mut()[i * k + j] = (x - max).exp() / z;
            }
            loss += z.ln() + max - row[label];
        }
        let n = T::from_usize(labels.len().max(1)).unwrap();
        Ok(self.push(
            Op::SoftmaxXent {
                scores,
                probs,
                labels: labels.to_vec(),
            },
            Tensor4::scalar(loss / n),
        ))
    }

    /// Reverse sweep from a scalar node.
    ///
    /// Adjoints are accumulated in strict reverse recording order, so the
    /// result is bit-reproducible. A leaf used several times (a recurrent
    /// kernel across time steps) receives the sum of its per-use adjoints.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let shape = self.shape(loss);
        if shape != Shape4::new(1, 1, 1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar loss node, got {shape}"
            )));
        }
        let mut grads: Vec<Option<Tensor4<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor4::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(&node.op, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(
        &self,
        op: &Op<T>,
        g: &Tensor4<T>,
        grads: &mut [Option<Tensor4<T>>],
    ) -> Result<()> {
        let mut acc = |id: NodeId, t: Tensor4<T>| -> Result<()> {
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => {
                    *slot = Some(t);
                    Ok(())
                }
            }
        };
        match op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                padding,
            } => {
                let cg = conv2d_backward(
                    self.value(*input),
                    self.value(*kernel),
                    g,
                    *padding,
                    self.wants(*input),
                    self.wants(*kernel),
                    bias.is_some_and(|b| self.wants(b)),
                )?;
                if let Some(dx) = cg.input {
                    acc(*input, dx)?;
                }
                if let Some(dk) = cg.kernel {
                    acc(*kernel, dk)?;
                }
                if let (Some(b), Some(db)) = (bias, cg.bias) {
                    acc(*b, Tensor4::from_vec(self.shape(*b), db)?)?;
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = g.zip_map(x, |gv, xv| if xv > T::zero() { gv } else { T::zero() })?;
                acc(*a, d)?;
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.clone())?;
                }
                if self.wants(*b) {
                    acc(*b, g.clone())?;
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.clone())?;
                }
                if self.wants(*b) {
                    acc(*b, g.map(|v| -v))?;
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y)?)?;
                }
                if self.wants(*b) {
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y)?)?;
                }
            }
            Op::Scale(a, f) => acc(*a, g.map(|v| v * *f))?,
            Op::Wta { input, mask, rule } => {
                let d = match rule {
                    WtaRule::Mask => wta::wta_backward(mask, g)?,
                    WtaRule::Literal => wta::wta_backward_literal(g),
                };
                acc(*input, d)?;
            }
            Op::SumAll(a) => {
                let s = self.shape(*a);
                acc(*a, Tensor4::full(s, g.data()[0]))?;
            }
            Op::MeanAll(a) => {
                let s = self.shape(*a);
                let n = T::from_usize(s.numel().max(1)).unwrap();
                acc(*a, Tensor4::full(s, g.data()[0] / n))?;
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let n = T::from_usize(va.len().max(1)).unwrap();
                let k = g.data()[0] * T::lit(2.0) / n;
                let d = va.zip_map(vb, |x, y| k * (x - y))?;
                if self.wants(*b) {
                    acc(*b, d.map(|v| -v))?;
                }
                if self.wants(*a) {
                    acc(*a, d)?;
                }
            }
            Op::SpatialMean(a) => {
                let s = self.shape(*a);
                let plane = s.plane();
                let denom = T::from_usize(plane.max(1)).unwrap();
                let mut d = Tensor4::zeros(s);
                for (chunk, &gv) in d.data_mut().chunks_mut(plane.max(1)).zip(g.data()) {
                    chunk.fill(gv / denom);
                }
                acc(*a, d)?;
            }
            Op::SoftmaxXent {
                scores,
                probs,
                labels,
            } => {
                let k = probs.shape().c();
                let n = T::from_usize(labels.len().max(1)).unwrap();
                let scale = g.data()[0] / n;
                let mut d = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    d.data_mut()[i * k + l] -= T::one();
                }
                d.scale_in_place(scale);
                acc(*scores, d)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(vals: &[f64], shape: [usize; 4]) -> Tensor4<f64> {
        Tensor4::from_f64(Shape4(shape), vals).unwrap()
    }

    #[test]
    fn relu_forward() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[-1., 2., 0., -3.], [1, 1, 2, 2]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0., 2., 0., 0.]);
    }

    #[test]
    fn add_zeros_is_identity() {
        let mut tape = Tape::new();
        let xv = t(&[0.5, -2., 3., 7.], [1, 1, 2, 2]);
        let x = tape.constant(xv.clone());
        let z = tape.constant(Tensor4::zeros(xv.shape()));
        let y = tape.add(x, z).unwrap();
        assert_eq!(tape.value(y), &xv);
    }

    #[test]
    fn sum_of_scaled_has_constant_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1., -2., 3., 4., 5., 6.], [1, 2, 3, 1]));
        let y = tape.scale(x, 3.0);
        let l = tape.sum_all(y);
        let g = tape.backward(l).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn reused_leaf_accumulates() {
        let mut tape = Tape::new();
        let w = tape.param(t(&[2.0], [1, 1, 1, 1]));
        let a = tape.scale(w, 1.5);
        let b = tape.scale(w, 1.5);
        let s = tape.add(a, b).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[3.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[0.0, 1.0], [1, 1, 1, 2]));
        let y = tape.relu(x);
        let l = tape.sum_all(y);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor4::<f64>::zeros(Shape4::new(1, 1, 2, 2)));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_mismatch_in_binary_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor4::<f64>::zeros(Shape4::new(1, 1, 2, 2)));
        let b = tape.constant(Tensor4::<f64>::zeros(Shape4::new(1, 1, 2, 3)));
        assert!(matches!(tape.add(a, b), Err(Error::Shape(_))));
        assert!(matches!(
            tape.elementwise(ElementwiseKind::Mul, &[a, b], None),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn xent_gradient_at_uniform_scores() {
        let mut tape = Tape::new();
        let s = tape.param(Tensor4::<f64>::zeros(Shape4::new(2, 4, 1, 1)));
        let l = tape.softmax_xent(s, &[1, 3]).unwrap();
        assert!((tape.value(l).data()[0] - 4f64.ln()).abs() < 1e-12);
        let g = tape.backward(l).unwrap();
        let d = g.get(s).unwrap();
        for i in 0..2 {
            for j in 0..4 {
                let onehot = if [1, 3][i] == j { 1.0 } else { 0.0 };
                let expect = (0.25 - onehot) / 2.0;
                assert!((d.get([i, j, 0, 0]) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn xent_rejects_out_of_range_label() {
        let mut tape = Tape::new();
        let s = tape.param(Tensor4::<f64>::zeros(Shape4::new(1, 3, 1, 1)));
        assert!(matches!(tape.softmax_xent(s, &[3]), Err(Error::Data(_))));
    }

    #[test]
    fn topological_order_holds() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor4::<f64>::zeros(Shape4::new(1, 1, 3, 3)));
        let k = tape.param(Tensor4::zeros(Shape4::new(1, 1, 3, 3)));
        let y = tape.conv2d(x, k, None, Padding::Same).unwrap();
        let r = tape.relu(y);
        let _ = tape.mean_all(r);
        for i in 0..tape.len() {
            let id = NodeId(i);
            assert!(tape.inputs(id).iter().all(|p| p.index() < i));
        }
    }
}
