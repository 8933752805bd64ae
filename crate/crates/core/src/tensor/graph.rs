//! The operation tape: forward ops append nodes, `backward` replays the tape
//! in exact reverse order to accumulate gradients.
//!
//! Summation order is fixed everywhere (row-major, ascending index) so that
//! repeated runs and independent naive-loop oracles can match bit for bit.

use super::{check_finite, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf {
        trainable: bool,
    },
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: (usize, usize),
    },
    Relu {
        input: NodeId,
    },
    Softmax {
        input: NodeId,
    },
    LogSoftmax {
        input: NodeId,
    },
    Exp {
        input: NodeId,
    },
    Reshape {
        input: NodeId,
    },
    Concat {
        inputs: Vec<NodeId>,
    },
    Add {
        left: NodeId,
        right: NodeId,
    },
    Sub {
        left: NodeId,
        right: NodeId,
    },
    Mul {
        left: NodeId,
        right: NodeId,
    },
    ScalarMul {
        input: NodeId,
        factor: f64,
    },
    ScaleByScalar {
        input: NodeId,
        scale: NodeId,
    },
    Sum {
        input: NodeId,
    },
    PickColumn {
        input: NodeId,
        indices: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A single-use computation tape. Nodes are appended in topological order;
/// the backward pass walks them in exact reverse order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Inserts a leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf { trainable: false }, false)
    }

    /// Inserts a leaf that participates in the gradient map.
    pub fn parameter(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf { trainable: true }, true)
    }

    /// Requests the gradient with respect to `id` even when no trainable
    /// leaf feeds it. Must be called before `id` is used as an input, so
    /// that downstream nodes know to propagate.
    pub fn watch(&mut self, id: NodeId) {
        self.nodes[id.0].needs_grad = true;
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn record(&mut self, op: &'static str, value: Tensor, node_op: Op, inputs: &[NodeId]) -> Result<NodeId, TensorError> {
        check_finite(op, value.data())?;
        let needs_grad = inputs.iter().any(|&i| self.needs(i));
        Ok(self.push(value, node_op, needs_grad))
    }

    // ── Forward ops ─────────────────────────────────────────────────────

    /// Affine layer: `out[b,o] = Σ_i weight[o,i]·input[b,i] + bias[o]`.
    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        if x.shape().len() != 2 || w.shape().len() != 2 {
            return Err(TensorError::BadShape {
                op: "dense",
                expected: "2-d input and weight",
                got: if x.shape().len() != 2 { x.shape().to_vec() } else { w.shape().to_vec() },
            });
        }
        let (batch, n_in) = (x.shape()[0], x.shape()[1]);
        let (n_out, w_in) = (w.shape()[0], w.shape()[1]);
        if n_in != w_in {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                left: x.shape().to_vec(),
                right: w.shape().to_vec(),
            });
        }
        if b.shape() != [n_out] {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                left: w.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }

        let mut out = vec![0.0; batch * n_out];
        let xd = x.data();
        let wd = w.data();
        let bd = b.data();
        for bi in 0..batch {
            let row = &xd[bi * n_in..(bi + 1) * n_in];
            let out_row = &mut out[bi * n_out..(bi + 1) * n_out];
            for o in 0..n_out {
                let wr = &wd[o * n_in..(o + 1) * n_in];
                let mut acc = 0.0;
                for i in 0..n_in {
                    acc += wr[i] * row[i];
                }
                out_row[o] = acc + bd[o];
            }
        }
        let value = Tensor::from_vec(vec![batch, n_out], out)?;
        self.record("dense", value, Op::Dense { input, weight, bias }, &[input, weight, bias])
    }

    /// Valid-padding cross-correlation with stride `(sh, sw)`.
    ///
    /// `input` is `[batch, c_in, h, w]`, `kernel` is `[c_out, c_in, kh, kw]`,
    /// optional `bias` is `[c_out]`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        stride: (usize, usize),
    ) -> Result<NodeId, TensorError> {
        let x = self.value(input);
        let k = self.value(kernel);
        if x.shape().len() != 4 || k.shape().len() != 4 {
            return Err(TensorError::BadShape {
                op: "conv2d",
                expected: "4-d input and kernel",
                got: if x.shape().len() != 4 { x.shape().to_vec() } else { k.shape().to_vec() },
            });
        }
        let (batch, c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (c_out, kc, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
        if kc != c_in {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                left: x.shape().to_vec(),
                right: k.shape().to_vec(),
            });
        }
        if kh > h || kw > w {
            return Err(TensorError::KernelTooLarge {
                op: "conv2d",
                kernel: k.shape().to_vec(),
                input: x.shape().to_vec(),
            });
        }
        let (sh, sw) = stride;
        assert!(sh > 0 && sw > 0, "conv2d stride must be positive");
        let oh = (h - kh) / sh + 1;
        let ow = (w - kw) / sw + 1;
        if let Some(bn) = bias {
            let b = self.value(bn);
            if b.shape() != [c_out] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    left: k.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
        }

        let xd = self.value(input).data().to_vec();
        let kd = self.value(kernel).data();
        let mut out = vec![0.0; batch * c_out * oh * ow];
        // Accumulation per output element runs ascending over (ci, ky, kx),
        // the same order as the naive quintuple loop.
        for bi in 0..batch {
            for co in 0..c_out {
                let out_base = (bi * c_out + co) * oh * ow;
                for ci in 0..c_in {
                    let in_base = (bi * c_in + ci) * h * w;
                    let k_base = (co * c_in + ci) * kh * kw;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let kv = kd[k_base + ky * kw + kx];
                            for oy in 0..oh {
                                let in_row = in_base + (oy * sh + ky) * w + kx;
                                let out_row = out_base + oy * ow;
                                for ox in 0..ow {
                                    out[out_row + ox] += kv * xd[in_row + ox * sw];
                                }
                            }
                        }
                    }
                }
            }
        }
        if let Some(bn) = bias {
            let bd = self.value(bn).data().to_vec();
            for bi in 0..batch {
                for co in 0..c_out {
                    let base = (bi * c_out + co) * oh * ow;
                    for p in 0..oh * ow {
                        out[base + p] += bd[co];
                    }
                }
            }
        }
        let value = Tensor::from_vec(vec![batch, c_out, oh, ow], out)?;
        let mut deps = vec![input, kernel];
        if let Some(bn) = bias {
            deps.push(bn);
        }
        self.record("conv2d", value, Op::Conv2d { input, kernel, bias, stride }, &deps)
    }

    /// Elementwise `max(0, x)`. The subgradient at zero is taken as zero.
    pub fn relu(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        let value = self.value(input).map(|v| v.max(0.0));
        self.record("relu", value, Op::Relu { input }, &[input])
    }

    /// Row-wise softmax over the last axis of a `[batch, n]` tensor,
    /// computed with max-subtraction.
    pub fn softmax(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        let value = softmax_rows(self.value(input), false)?;
        self.record("softmax", value, Op::Softmax { input }, &[input])
    }

    /// Row-wise log-softmax, computed with max-subtraction.
    pub fn log_softmax(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        let value = softmax_rows(self.value(input), true)?;
        self.record("log_softmax", value, Op::LogSoftmax { input }, &[input])
    }

    pub fn exp(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        let value = self.value(input).map(f64::exp);
        self.record("exp", value, Op::Exp { input }, &[input])
    }

    pub fn reshape(&mut self, input: NodeId, shape: Vec<usize>) -> Result<NodeId, TensorError> {
        let value = self.value(input).reshaped(shape)?;
        self.record("reshape", value, Op::Reshape { input }, &[input])
    }

    /// Flattens all axes after the batch axis.
    pub fn flatten(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        let shape = self.value(input).shape();
        if shape.is_empty() {
            return Err(TensorError::BadShape {
                op: "flatten",
                expected: "at least 1-d",
                got: shape.to_vec(),
            });
        }
        let batch = shape[0];
        let rest: usize = shape[1..].iter().product();
        self.reshape(input, vec![batch, rest])
    }

    /// Concatenates along axis 1 (features or channels); all other axes must
    /// agree.
    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId, TensorError> {
        assert!(!inputs.is_empty(), "concat of zero tensors");
        if inputs.len() == 1 {
            // Still record a pass-through so backward splits uniformly.
            let value = self.value(inputs[0]).clone();
            return self.record("concat", value, Op::Concat { inputs: inputs.to_vec() }, inputs);
        }
        let first = self.value(inputs[0]).shape().to_vec();
        let mut axis1 = 0usize;
        for &id in inputs {
            let s = self.value(id).shape();
            if s.len() != first.len()
                || s[0] != first[0]
                || s[2..] != first[2..]
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: first.clone(),
                    right: s.to_vec(),
                });
            }
            axis1 += s[1];
        }
        let batch = first[0];
        let inner: usize = first[2..].iter().product();
        let mut shape = first.clone();
        shape[1] = axis1;
        let mut out = vec![0.0; batch * axis1 * inner];
        for bi in 0..batch {
            let mut offset = 0;
            for &id in inputs {
                let t = self.value(id);
                let c = t.shape()[1];
                let src = &t.data()[bi * c * inner..(bi + 1) * c * inner];
                let dst_base = bi * axis1 * inner + offset * inner;
                out[dst_base..dst_base + c * inner].copy_from_slice(src);
                offset += c;
            }
        }
        let value = Tensor::from_vec(shape, out)?;
        self.record("concat", value, Op::Concat { inputs: inputs.to_vec() }, inputs)
    }

    pub fn add(&mut self, left: NodeId, right: NodeId) -> Result<NodeId, TensorError> {
        let value = self.zip("add", left, right, |a, b| a + b)?;
        self.record("add", value, Op::Add { left, right }, &[left, right])
    }

    pub fn sub(&mut self, left: NodeId, right: NodeId) -> Result<NodeId, TensorError> {
        let value = self.zip("sub", left, right, |a, b| a - b)?;
        self.record("sub", value, Op::Sub { left, right }, &[left, right])
    }

    pub fn mul(&mut self, left: NodeId, right: NodeId) -> Result<NodeId, TensorError> {
        let value = self.zip("mul", left, right, |a, b| a * b)?;
        self.record("mul", value, Op::Mul { left, right }, &[left, right])
    }

    pub fn scalar_mul(&mut self, input: NodeId, factor: f64) -> Result<NodeId, TensorError> {
        let value = self.value(input).map(|v| v * factor);
        self.record("scalar_mul", value, Op::ScalarMul { input, factor }, &[input])
    }

    /// Multiplies a tensor by a one-element tensor node (a learned gate).
    pub fn scale_by_scalar(&mut self, input: NodeId, scale: NodeId) -> Result<NodeId, TensorError> {
        let s = self.value(scale);
        if s.numel() != 1 {
            return Err(TensorError::BadShape {
                op: "scale_by_scalar",
                expected: "one-element scale",
                got: s.shape().to_vec(),
            });
        }
        let sv = s.item();
        let value = self.value(input).map(|v| v * sv);
        self.record(
            "scale_by_scalar",
            value,
            Op::ScaleByScalar { input, scale },
            &[input, scale],
        )
    }

    /// Sums all elements into a `[1]` tensor.
    pub fn sum(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        let mut acc = 0.0;
        for v in self.value(input).data() {
            acc += v;
        }
        let value = Tensor::scalar(acc);
        self.record("sum", value, Op::Sum { input }, &[input])
    }

    /// Picks `input[b, indices[b]]` from a `[batch, n]` tensor, yielding `[batch]`.
    pub fn pick_column(&mut self, input: NodeId, indices: Vec<usize>) -> Result<NodeId, TensorError> {
        let x = self.value(input);
        if x.shape().len() != 2 || x.shape()[0] != indices.len() {
            return Err(TensorError::BadShape {
                op: "pick_column",
                expected: "2-d input with one index per row",
                got: x.shape().to_vec(),
            });
        }
        let n = x.shape()[1];
        let mut out = Vec::with_capacity(indices.len());
        for (b, &idx) in indices.iter().enumerate() {
            if idx >= n {
                return Err(TensorError::IndexOutOfRange { index: idx, n_actions: n });
            }
            out.push(x.data()[b * n + idx]);
        }
        let value = Tensor::from_vec(vec![indices.len()], out)?;
        self.record("pick_column", value, Op::PickColumn { input, indices }, &[input])
    }

    fn zip(
        &self,
        op: &'static str,
        left: NodeId,
        right: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        let a = self.value(left);
        let b = self.value(right);
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(a.shape().to_vec(), data)
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Replays the tape in reverse from `loss`, returning gradients for every
    /// trainable leaf and every watched node. Trainable leaves with no path
    /// to the loss receive exact-zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TensorError> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: loss_node.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(loss_node.value.shape().to_vec(), 1.0));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(delta) = grads[id].take() else { continue };
            check_finite("backward", delta.data())?;
            self.propagate(id, &delta, &mut grads);
            grads[id] = Some(delta);
        }

        // Disconnected trainable leaves and watched nodes still get tensors,
        // exactly zero.
        for (id, node) in self.nodes.iter().enumerate() {
            let wants = matches!(node.op, Op::Leaf { trainable: true }) || node.needs_grad;
            if wants && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: NodeId, update: impl FnOnce(&mut [f64])) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        let slot = &mut grads[target.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.nodes[target.0].value.shape().to_vec()));
        }
        update(slot.as_mut().unwrap().data_mut());
    }

    fn propagate(&self, id: usize, delta: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let d = delta.data();
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Dense { input, weight, bias } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (batch, n_in) = (x.shape()[0], x.shape()[1]);
                let n_out = w.shape()[0];
                self.accumulate(grads, *input, |gx| {
                    let wd = w.data();
                    for b in 0..batch {
                        for o in 0..n_out {
                            let dv = d[b * n_out + o];
                            let wr = &wd[o * n_in..(o + 1) * n_in];
                            let gr = &mut gx[b * n_in..(b + 1) * n_in];
                            for i in 0..n_in {
                                gr[i] += dv * wr[i];
                            }
                        }
                    }
                });
                self.accumulate(grads, *weight, |gw| {
                    let xd = x.data();
                    for b in 0..batch {
                        let xr = &xd[b * n_in..(b + 1) * n_in];
                        for o in 0..n_out {
                            let dv = d[b * n_out + o];
                            let gr = &mut gw[o * n_in..(o + 1) * n_in];
                            for i in 0..n_in {
                                gr[i] += dv * xr[i];
                            }
                        }
                    }
                });
                self.accumulate(grads, *bias, |gb| {
                    for b in 0..batch {
                        for o in 0..n_out {
                            gb[o] += d[b * n_out + o];
                        }
                    }
                });
            }
            Op::Conv2d { input, kernel, bias, stride } => {
                let x = self.value(*input);
                let k = self.value(*kernel);
                let (batch, c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
                let (c_out, _, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
                let (sh, sw) = *stride;
                let oh = (h - kh) / sh + 1;
                let ow = (w - kw) / sw + 1;
                self.accumulate(grads, *input, |gx| {
                    let kd = k.data();
                    for bi in 0..batch {
                        for co in 0..c_out {
                            let d_base = (bi * c_out + co) * oh * ow;
                            for ci in 0..c_in {
                                let g_base = (bi * c_in + ci) * h * w;
                                let k_base = (co * c_in + ci) * kh * kw;
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let kv = kd[k_base + ky * kw + kx];
                                        for oy in 0..oh {
                                            let g_row = g_base + (oy * sh + ky) * w + kx;
                                            let d_row = d_base + oy * ow;
                                            for ox in 0..ow {
                                                gx[g_row + ox * sw] += kv * d[d_row + ox];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
                self.accumulate(grads, *kernel, |gk| {
                    let xd = x.data();
                    for bi in 0..batch {
                        for co in 0..c_out {
                            let d_base = (bi * c_out + co) * oh * ow;
                            for ci in 0..c_in {
                                let x_base = (bi * c_in + ci) * h * w;
                                let k_base = (co * c_in + ci) * kh * kw;
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let mut acc = 0.0;
                                        for oy in 0..oh {
                                            let x_row = x_base + (oy * sh + ky) * w + kx;
                                            let d_row = d_base + oy * ow;
                                            for ox in 0..ow {
                                                acc += d[d_row + ox] * xd[x_row + ox * sw];
                                            }
                                        }
                                        gk[k_base + ky * kw + kx] += acc;
                                    }
                                }
                            }
                        }
                    }
                });
                if let Some(bn) = bias {
                    self.accumulate(grads, *bn, |gb| {
                        for bi in 0..batch {
                            for co in 0..c_out {
                                let base = (bi * c_out + co) * oh * ow;
                                for p in 0..oh * ow {
                                    gb[co] += d[base + p];
                                }
                            }
                        }
                    });
                }
            }
            Op::Relu { input } => {
                let x = self.value(*input);
                self.accumulate(grads, *input, |g| {
                    for (i, &xv) in x.data().iter().enumerate() {
                        if xv > 0.0 {
                            g[i] += d[i];
                        }
                    }
                });
            }
            Op::Softmax { input } => {
                let y = &node.value;
                let (batch, n) = (y.shape()[0], y.shape()[1]);
                self.accumulate(grads, *input, |g| {
                    let yd = y.data();
                    for b in 0..batch {
                        let yr = &yd[b * n..(b + 1) * n];
                        let dr = &d[b * n..(b + 1) * n];
                        let mut dot = 0.0;
                        for i in 0..n {
                            dot += dr[i] * yr[i];
                        }
                        let gr = &mut g[b * n..(b + 1) * n];
                        for i in 0..n {
                            gr[i] += yr[i] * (dr[i] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax { input } => {
                let y = &node.value;
                let (batch, n) = (y.shape()[0], y.shape()[1]);
                self.accumulate(grads, *input, |g| {
                    let yd = y.data();
                    for b in 0..batch {
                        let dr = &d[b * n..(b + 1) * n];
                        let mut sum = 0.0;
                        for i in 0..n {
                            sum += dr[i];
                        }
                        let yr = &yd[b * n..(b + 1) * n];
                        let gr = &mut g[b * n..(b + 1) * n];
                        for i in 0..n {
                            gr[i] += dr[i] - yr[i].exp() * sum;
                        }
                    }
                });
            }
            Op::Exp { input } => {
                let y = &node.value;
                self.accumulate(grads, *input, |g| {
                    for (i, &yv) in y.data().iter().enumerate() {
                        g[i] += d[i] * yv;
                    }
                });
            }
            Op::Reshape { input } => {
                self.accumulate(grads, *input, |g| {
                    for i in 0..d.len() {
                        g[i] += d[i];
                    }
                });
            }
            Op::Concat { inputs } => {
                let out_c = node.value.shape()[1];
                let batch = node.value.shape()[0];
                let inner: usize = node.value.shape()[2..].iter().product();
                let mut offset = 0;
                for &src in inputs {
                    let c = self.value(src).shape()[1];
                    let off = offset;
                    self.accumulate(grads, src, |g| {
                        for bi in 0..batch {
                            let d_base = bi * out_c * inner + off * inner;
                            let g_base = bi * c * inner;
                            for i in 0..c * inner {
                                g[g_base + i] += d[d_base + i];
                            }
                        }
                    });
                    offset += c;
                }
            }
            Op::Add { left, right } => {
                self.accumulate(grads, *left, |g| {
                    for i in 0..d.len() {
                        g[i] += d[i];
                    }
                });
                self.accumulate(grads, *right, |g| {
                    for i in 0..d.len() {
                        g[i] += d[i];
                    }
                });
            }
            Op::Sub { left, right } => {
                self.accumulate(grads, *left, |g| {
                    for i in 0..d.len() {
                        g[i] += d[i];
                    }
                });
                self.accumulate(grads, *right, |g| {
                    for i in 0..d.len() {
                        g[i] -= d[i];
                    }
                });
            }
            Op::Mul { left, right } => {
                let a = self.value(*left);
                let b = self.value(*right);
                self.accumulate(grads, *left, |g| {
                    for i in 0..d.len() {
                        g[i] += d[i] * b.data()[i];
                    }
                });
                self.accumulate(grads, *right, |g| {
                    for i in 0..d.len() {
                        g[i] += d[i] * a.data()[i];
                    }
                });
            }
            Op::ScalarMul { input, factor } => {
                let f = *factor;
                self.accumulate(grads, *input, |g| {
                    for i in 0..d.len() {
                        g[i] += d[i] * f;
                    }
                });
            }
            Op::ScaleByScalar { input, scale } => {
                let s = self.value(*scale).item();
                let x = self.value(*input);
                self.accumulate(grads, *input, |g| {
                    for i in 0..d.len() {
                        g[i] += d[i] * s;
                    }
                });
                self.accumulate(grads, *scale, |g| {
                    let mut acc = 0.0;
                    for i in 0..d.len() {
                        acc += d[i] * x.data()[i];
                    }
                    g[0] += acc;
                });
            }
            Op::Sum { input } => {
                let dv = d[0];
                self.accumulate(grads, *input, |g| {
                    for gi in g.iter_mut() {
                        *gi += dv;
                    }
                });
            }
            Op::PickColumn { input, indices } => {
                let n = self.value(*input).shape()[1];
                self.accumulate(grads, *input, |g| {
                    for (b, &idx) in indices.iter().enumerate() {
                        g[b * n + idx] += d[b];
                    }
                });
            }
        }
    }
}

fn softmax_rows(x: &Tensor, log: bool) -> Result<Tensor, TensorError> {
    if x.shape().len() != 2 {
        return Err(TensorError::BadShape {
            op: if log { "log_softmax" } else { "softmax" },
            expected: "2-d logits",
            got: x.shape().to_vec(),
        });
    }
    let (batch, n) = (x.shape()[0], x.shape()[1]);
    let mut out = vec![0.0; batch * n];
    for b in 0..batch {
        let row = &x.data()[b * n..(b + 1) * n];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut total = 0.0;
        for &v in row {
            total += (v - max).exp();
        }
        let o = &mut out[b * n..(b + 1) * n];
        if log {
            let log_total = total.ln();
            for i in 0..n {
                o[i] = row[i] - max - log_total;
            }
        } else {
            for i in 0..n {
                o[i] = (row[i] - max).exp() / total;
            }
        }
    }
    Tensor::from_vec(x.shape().to_vec(), out)
}

/// Gradient map produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to the node, if it was tracked.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}
