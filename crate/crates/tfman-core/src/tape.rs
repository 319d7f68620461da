//! Taped reverse-mode differentiation.
//!
//! Operations are recorded on a [`Tape`] as they execute; [`Tape::backward`]
//! replays them in reverse and accumulates gradients into per-node buffers.
//! The tape is single-writer: one training step owns it exclusively and
//! clears it afterwards. Inference uses [`Tape::mark`]/[`Tape::truncate`] to
//! drop intermediate values between recurrences.

use crate::error::{Error, Result};
use crate::ops;
use crate::ops::Rect;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    },
    Softmax {
        input: NodeId,
        axis: usize,
    },
    Prelu {
        input: NodeId,
        slope: NodeId,
        channel_axis: usize,
    },
    BilinearResize {
        input: NodeId,
    },
    GlobalAvgPool {
        input: NodeId,
    },
    Matmul {
        a: NodeId,
        b: NodeId,
    },
    Transpose2 {
        input: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        input: NodeId,
        factor: T,
    },
    Reshape {
        input: NodeId,
    },
    ConcatChannels {
        inputs: Vec<NodeId>,
    },
    Crop3 {
        input: NodeId,
        rect: Rect,
    },
    PasteSeq {
        inputs: Vec<NodeId>,
        rects: Vec<Rect>,
    },
    AddChannelBias {
        input: NodeId,
        bias: NodeId,
        channel_axis: usize,
    },
    MulChannels {
        input: NodeId,
        factors: NodeId,
    },
    DivConstMap {
        input: NodeId,
        map: Tensor<T>,
    },
    SumAll {
        input: NodeId,
    },
    WeightedSum {
        input: NodeId,
        weights: Tensor<T>,
    },
    L1Loss {
        pred: NodeId,
        target: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Position marker for [`Tape::truncate`].
    pub fn mark(&self) -> usize {
        self.nodes.len()
    }

    /// Drop every node recorded after `mark`. Only valid when no gradient
    /// will be requested through the dropped region (inference scoping).
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
        self.grads.truncate(mark);
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let value = ops::conv2d(self.value(input), self.value(kernel), stride, padding)?;
        let needs = self.needs(input) || self.needs(kernel);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            },
            needs,
        ))
    }

    pub fn conv_transpose2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let value = ops::conv_transpose2d(self.value(input), self.value(kernel), stride, padding)?;
        let needs = self.needs(input) || self.needs(kernel);
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                input,
                kernel,
                stride,
                padding,
            },
            needs,
        ))
    }

    pub fn softmax(&mut self, input: NodeId, axis: usize) -> Result<NodeId> {
        let value = ops::softmax(self.value(input), axis)?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::Softmax { input, axis }, needs))
    }

    pub fn prelu(&mut self, input: NodeId, slope: NodeId, channel_axis: usize) -> Result<NodeId> {
        let value = ops::prelu(self.value(input), self.value(slope), channel_axis)?;
        let needs = self.needs(input) || self.needs(slope);
        Ok(self.push(
            value,
            Op::Prelu {
                input,
                slope,
                channel_axis,
            },
            needs,
        ))
    }

    pub fn bilinear_resize(&mut self, input: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        let value = ops::bilinear_resize(self.value(input), out_h, out_w)?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::BilinearResize { input }, needs))
    }

    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let value = ops::global_avg_pool(self.value(input))?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::GlobalAvgPool { input }, needs))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = ops::matmul(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Matmul { a, b }, needs))
    }

    pub fn transpose2(&mut self, input: NodeId) -> Result<NodeId> {
        let value = ops::transpose2(self.value(input))?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::Transpose2 { input }, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = ops::zip_elementwise(self.value(a), self.value(b), |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = ops::zip_elementwise(self.value(a), self.value(b), |x, y| x - y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub { a, b }, needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = ops::zip_elementwise(self.value(a), self.value(b), |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul { a, b }, needs))
    }

    pub fn scale(&mut self, input: NodeId, factor: T) -> NodeId {
        let value = self.value(input).map(|x| x * factor);
        let needs = self.needs(input);
        self.push(value, Op::Scale { input, factor }, needs)
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(input).reshape(shape)?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::Reshape { input }, needs))
    }

    pub fn concat_channels(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor<T>> = inputs.iter().map(|&id| self.value(id)).collect();
        let value = ops::concat_channels(&tensors)?;
        let needs = inputs.iter().any(|&id| self.needs(id));
        Ok(self.push(
            value,
            Op::ConcatChannels {
                inputs: inputs.to_vec(),
            },
            needs,
        ))
    }

    pub fn crop3(&mut self, input: NodeId, rect: Rect) -> Result<NodeId> {
        let value = ops::crop3(self.value(input), rect)?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::Crop3 { input, rect }, needs))
    }

    pub fn paste_seq(
        &mut self,
        inputs: &[NodeId],
        rects: &[Rect],
        h: usize,
        w: usize,
    ) -> Result<NodeId> {
        let tensors: Vec<&Tensor<T>> = inputs.iter().map(|&id| self.value(id)).collect();
        let value = ops::paste_seq(&tensors, rects, h, w)?;
        let needs = inputs.iter().any(|&id| self.needs(id));
        Ok(self.push(
            value,
            Op::PasteSeq {
                inputs: inputs.to_vec(),
                rects: rects.to_vec(),
            },
            needs,
        ))
    }

    pub fn add_channel_bias(
        &mut self,
        input: NodeId,
        bias: NodeId,
        channel_axis: usize,
    ) -> Result<NodeId> {
        let value = ops::add_channel_bias(self.value(input), self.value(bias), channel_axis)?;
        let needs = self.needs(input) || self.needs(bias);
        Ok(self.push(
            value,
            Op::AddChannelBias {
                input,
                bias,
                channel_axis,
            },
            needs,
        ))
    }

    pub fn mul_channels(&mut self, input: NodeId, factors: NodeId) -> Result<NodeId> {
        let value = ops::mul_channels(self.value(input), self.value(factors))?;
        let needs = self.needs(input) || self.needs(factors);
        Ok(self.push(value, Op::MulChannels { input, factors }, needs))
    }

    pub fn div_const_map(&mut self, input: NodeId, map: Tensor<T>) -> Result<NodeId> {
        let value = ops::div_const_map(self.value(input), &map)?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::DivConstMap { input, map }, needs))
    }

    pub fn sum_all(&mut self, input: NodeId) -> NodeId {
        let value = ops::sum_all(self.value(input));
        let needs = self.needs(input);
        self.push(value, Op::SumAll { input }, needs)
    }

    pub fn weighted_sum(&mut self, input: NodeId, weights: Tensor<T>) -> Result<NodeId> {
        let value = ops::weighted_sum(self.value(input), &weights)?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::WeightedSum { input, weights }, needs))
    }

    pub fn l1_loss(&mut self, pred: NodeId, target: Tensor<T>) -> Result<NodeId> {
        let value = ops::l1_loss(self.value(pred), &target)?;
        let needs = self.needs(pred);
        Ok(self.push(value, Op::L1Loss { pred, target }, needs))
    }

    fn accumulate(grads: &mut [Option<Tensor<T>>], id: NodeId, delta: Tensor<T>) {
        match &mut grads[id.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += *b;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    /// Reverse pass from a scalar node. Gradients of every reachable node
    /// with `needs_grad` become available through [`Tape::grad`].
    pub fn backward(&mut self, output: NodeId) -> Result<()> {
        if self.value(output).numel() != 1 {
            return Err(Error::usage(format!(
                "backward requires a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        let mut grads = std::mem::take(&mut self.grads);
        grads[output.0] = Some(Tensor::filled(self.value(output).shape(), T::ONE));

        for i in (0..=output.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(grad_out) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(grad_out);
                    continue;
                }
                Op::Conv2d {
                    input,
                    kernel,
                    stride,
                    padding,
                } => {
                    if self.needs(*input) {
                        let d = ops::conv2d_grad_input(
                            &grad_out,
                            self.value(*kernel),
                            self.value(*input).shape(),
                            *stride,
                            *padding,
                        );
                        Self::accumulate(&mut grads, *input, d);
                    }
                    if self.needs(*kernel) {
                        let d = ops::conv2d_grad_kernel(
                            &grad_out,
                            self.value(*input),
                            self.value(*kernel).shape(),
                            *stride,
                            *padding,
                        );
                        Self::accumulate(&mut grads, *kernel, d);
                    }
                }
                Op::ConvTranspose2d {
                    input,
                    kernel,
                    stride,
                    padding,
                } => {
                    if self.needs(*input) {
                        let d = ops::conv_transpose2d_grad_input(
                            &grad_out,
                            self.value(*kernel),
                            self.value(*input).shape(),
                            *stride,
                            *padding,
                        );
                        Self::accumulate(&mut grads, *input, d);
                    }
                    if self.needs(*kernel) {
                        let d = ops::conv_transpose2d_grad_kernel(
                            &grad_out,
                            self.value(*input),
                            self.value(*kernel).shape(),
                            *stride,
                            *padding,
                        );
                        Self::accumulate(&mut grads, *kernel, d);
                    }
                }
                Op::Softmax { input, axis } => {
                    let d = ops::softmax_grad(&grad_out, &node.value, *axis);
                    Self::accumulate(&mut grads, *input, d);
                }
                Op::Prelu {
                    input,
                    slope,
                    channel_axis,
                } => {
                    if self.needs(*input) {
                        let d = ops::prelu_grad_input(
                            &grad_out,
                            self.value(*input),
                            self.value(*slope),
                            *channel_axis,
                        );
                        Self::accumulate(&mut grads, *input, d);
                    }
                    if self.needs(*slope) {
                        let d = ops::prelu_grad_slope(
                            &grad_out,
                            self.value(*input),
                            self.value(*slope).numel(),
                            *channel_axis,
                        );
                        Self::accumulate(&mut grads, *slope, d);
                    }
                }
                Op::BilinearResize { input } => {
                    let d = ops::bilinear_resize_grad(&grad_out, self.value(*input).shape());
                    Self::accumulate(&mut grads, *input, d);
                }
                Op::GlobalAvgPool { input } => {
                    let d = ops::global_avg_pool_grad(&grad_out, self.value(*input).shape());
                    Self::accumulate(&mut grads, *input, d);
                }
                Op::Matmul { a, b } => {
                    if self.needs(*a) {
                        let d = ops::matmul_grad_a(&grad_out, self.value(*b));
                        Self::accumulate(&mut grads, *a, d);
                    }
                    if self.needs(*b) {
                        let d = ops::matmul_grad_b(&grad_out, self.value(*a));
                        Self::accumulate(&mut grads, *b, d);
                    }
                }
                Op::Transpose2 { input } => {
                    let d = ops::transpose2(&grad_out).expect("grad of transpose2 is rank 2");
                    Self::accumulate(&mut grads, *input, d);
                }
                Op::Add { a, b } => {
                    if self.needs(*a) {
                        Self::accumulate(&mut grads, *a, grad_out.clone());
                    }
                    if self.needs(*b) {
                        Self::accumulate(&mut grads, *b, grad_out.clone());
                    }
                }
                Op::Sub { a, b } => {
                    if self.needs(*a) {
                        Self::accumulate(&mut grads, *a, grad_out.clone());
                    }
                    if self.needs(*b) {
                        Self::accumulate(&mut grads, *b, grad_out.map(|x| -x));
                    }
                }
                Op::Mul { a, b } => {
                    if self.needs(*a) {
                        let d = ops::zip_elementwise(&grad_out, self.value(*b), |g, y| g * y)
                            .expect("mul grad shapes agree");
                        Self::accumulate(&mut grads, *a, d);
                    }
                    if self.needs(*b) {
                        let d = ops::zip_elementwise(&grad_out, self.value(*a), |g, x| g * x)
                            .expect("mul grad shapes agree");
                        Self::accumulate(&mut grads, *b, d);
                    }
                }
                Op::Scale { input, factor } => {
                    let f = *factor;
                    Self::accumulate(&mut grads, *input, grad_out.map(|g| g * f));
                }
                Op::Reshape { input } => {
                    let d = grad_out
                        .reshape(self.value(*input).shape())
                        .expect("reshape grad matches element count");
                    Self::accumulate(&mut grads, *input, d);
                }
                Op::ConcatChannels { inputs } => {
                    let (h, w) = (node.value.dim(1), node.value.dim(2));
                    let mut offset = 0;
                    for &src in inputs {
                        let c = self.value(src).dim(0);
                        if self.needs(src) {
                            let piece = Tensor::from_vec(
                                &[c, h, w],
                                grad_out.data()[offset * h * w..(offset + c) * h * w].to_vec(),
                            )
                            .expect("concat grad slice");
                            Self::accumulate(&mut grads, src, piece);
                        }
                        offset += c;
                    }
                }
                Op::Crop3 { input, rect } => {
                    let d = ops::crop3_grad(&grad_out, self.value(*input).shape(), *rect);
                    Self::accumulate(&mut grads, *input, d);
                }
                Op::PasteSeq { inputs, rects } => {
                    let winners =
                        ops::cover_winners(rects, node.value.dim(1), node.value.dim(2));
                    for (idx, &src) in inputs.iter().enumerate() {
                        if self.needs(src) {
                            let d = ops::paste_seq_grad_block(&grad_out, rects, &winners, idx);
                            Self::accumulate(&mut grads, src, d);
                        }
                    }
                }
                Op::AddChannelBias {
                    input,
                    bias,
                    channel_axis,
                } => {
                    if self.needs(*input) {
                        Self::accumulate(&mut grads, *input, grad_out.clone());
                    }
                    if self.needs(*bias) {
                        let d = ops::channel_bias_grad(
                            &grad_out,
                            self.value(*bias).numel(),
                            *channel_axis,
                        );
                        Self::accumulate(&mut grads, *bias, d);
                    }
                }
                Op::MulChannels { input, factors } => {
                    if self.needs(*input) {
                        let d = ops::mul_channels_grad_input(&grad_out, self.value(*factors));
                        Self::accumulate(&mut grads, *input, d);
                    }
                    if self.needs(*factors) {
                        let d = ops::mul_channels_grad_factors(&grad_out, self.value(*input));
                        Self::accumulate(&mut grads, *factors, d);
                    }
                }
                Op::DivConstMap { input, map } => {
                    let d = ops::div_const_map_grad(&grad_out, map);
                    Self::accumulate(&mut grads, *input, d);
                }
                Op::SumAll { input } => {
                    let g = grad_out.data()[0];
                    let d = Tensor::filled(self.value(*input).shape(), g);
                    Self::accumulate(&mut grads, *input, d);
                }
                Op::WeightedSum { input, weights } => {
                    let g = grad_out.data()[0];
                    let d = weights.map(|w| w * g);
                    Self::accumulate(&mut grads, *input, d);
                }
                Op::L1Loss { pred, target } => {
                    let g = grad_out.data()[0];
                    let d = ops::l1_loss_grad(g, self.value(*pred), target);
                    Self::accumulate(&mut grads, *pred, d);
                }
            }
        }
        self.grads = grads;
        Ok(())
    }
}
