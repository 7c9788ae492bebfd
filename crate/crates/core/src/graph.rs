//! Reverse-mode differentiation over a tape of tensor operations.
//!
//! A [`Graph`] records every op in the order it is applied; [`Graph::backward`]
//! walks the records in exact reverse. Nodes whose inputs never require a
//! gradient are skipped entirely, so frozen prefixes of a network cost nothing
//! on the way back.

use std::sync::Arc;

use rand::Rng;

use crate::da::mmd;
use crate::error::{Error, Result};
use crate::tensor::kernels::{self, Conv2dParams, IndexMap};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, params: Conv2dParams },
    ConvTranspose { input: Var, weight: Var, stride: usize, groups: usize },
    MaxPool { input: Var, map: Arc<IndexMap> },
    Unpool { input: Var, map: Arc<IndexMap>, winners: Vec<bool> },
    AvgPool { input: Var, k: usize, stride: usize },
    Linear { input: Var, weight: Var },
    Relu { input: Var },
    Dropout { input: Var, mask: Vec<T> },
    Concat { inputs: Vec<Var> },
    Reshape { input: Var },
    Rows { input: Var, start: usize },
    Combine { terms: Vec<(Var, T)> },
    Sum { input: Var },
    SoftmaxCrossEntropy { logits: Var, probs: Vec<T>, labels: Vec<usize> },
    Mse { a: Var, b: Var },
    Mmd { source: Var, target: Var, sigma: T },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
    op: Op<T>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    checked: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    /// A graph in checked mode: every op fails on non-finite output.
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), checked: true }
    }

    pub fn unchecked() -> Self {
        Graph { nodes: Vec::new(), checked: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad, grad: None, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// A constant input (no gradient).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, name: &str, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Result<Var> {
        if self.checked && !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, requires_grad, grad: None, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, params: Conv2dParams) -> Result<Var> {
        let [n, cin, h, w] = self.value(input).dims4("conv2d input")?;
        let [cout, cig, k, k2] = self.value(weight).dims4("conv2d weight")?;
        let g = params.groups;
        if k != k2 {
            return Err(Error::shape(format!("conv2d kernel must be square, got {k}×{k2}")));
        }
        if g == 0 || cin % g != 0 || cout % g != 0 {
            return Err(Error::Groups(format!("cin={cin}, cout={cout} not divisible by groups={g}")));
        }
        if cig != cin / g {
            return Err(Error::shape(format!("weight expects {cig} channels per group, input gives {}", cin / g)));
        }
        if params.dilation == 0 || params.stride == 0 {
            return Err(Error::invalid("stride and dilation must be ≥ 1"));
        }
        if kernels::conv_out_extent(h, k, &params).is_none() || kernels::conv_out_extent(w, k, &params).is_none() {
            return Err(Error::shape(format!("dilated kernel {k} (d={}) exceeds padded input {h}×{w}", params.dilation)));
        }
        let (out, shape) =
            kernels::conv2d_forward(self.value(input).data(), [n, cin, h, w], self.value(weight).data(), cout, k, &params);
        let value = Tensor::from_vec(&shape, out)?;
        self.push("conv2d", value, &[input, weight], Op::Conv2d { input, weight, params })
    }

    /// Transposed convolution center-cropped back to the input's spatial size.
    /// `weight` is `[cin, cout/groups, k, k]`.
    pub fn conv_transpose_cropped(&mut self, input: Var, weight: Var, stride: usize, groups: usize) -> Result<Var> {
        let [n, cin, h, w] = self.value(input).dims4("deconv input")?;
        let [wcin, cog, k, k2] = self.value(weight).dims4("deconv weight")?;
        if k != k2 || k == 0 {
            return Err(Error::shape(format!("deconv kernel must be square, got {k}×{k2}")));
        }
        if stride == 0 {
            return Err(Error::invalid("deconv stride must be ≥ 1"));
        }
        if groups == 0 || cin % groups != 0 {
            return Err(Error::Groups(format!("cin={cin} not divisible by groups={groups}")));
        }
        if wcin != cin {
            return Err(Error::shape(format!("deconv weight has {wcin} input channels, input has {cin}")));
        }
        assert!((h - 1) * stride + k >= h && (w - 1) * stride + k >= w, "raw deconv output smaller than input");
        let cout = cog * groups;
        let out =
            kernels::conv_transpose_forward(self.value(input).data(), [n, cin, h, w], self.value(weight).data(), cout, k, stride, groups);
        let value = Tensor::from_vec(&[n, cout, h, w], out)?;
        self.push("conv_transpose_cropped", value, &[input, weight], Op::ConvTranspose { input, weight, stride, groups })
    }

    pub fn maxpool2d(&mut self, input: Var, k: usize, stride: usize) -> Result<(Var, Arc<IndexMap>)> {
        let dims = self.value(input).dims4("maxpool input")?;
        if kernels::pool_out_extent(dims[2], k, stride).is_none() || kernels::pool_out_extent(dims[3], k, stride).is_none() {
            return Err(Error::shape(format!("pool window {k}/{stride} degenerate for {}×{}", dims[2], dims[3])));
        }
        let (out, map) = kernels::maxpool_forward(self.value(input).data(), dims, k, stride);
        let map = Arc::new(map);
        let value = Tensor::from_vec(&map.output_shape, out)?;
        let v = self.push("maxpool2d", value, &[input], Op::MaxPool { input, map: Arc::clone(&map) })?;
        Ok((v, map))
    }

    /// Places each input value at its recorded argmax inside a zero tensor of
    /// `target_shape`.
    pub fn unpool2d(&mut self, input: Var, map: &Arc<IndexMap>, target_shape: [usize; 4]) -> Result<Var> {
        let dims = self.value(input).dims4("unpool input")?;
        if dims != map.output_shape {
            return Err(Error::shape(format!("unpool input {dims:?} does not match pooled shape {:?}", map.output_shape)));
        }
        if target_shape != map.input_shape {
            return Err(Error::shape(format!("unpool target {target_shape:?} differs from pooled source {:?}", map.input_shape)));
        }
        let plane = target_shape[2] * target_shape[3];
        if map.indices.iter().any(|&i| i >= plane) {
            return Err(Error::invalid("unpool index outside target plane"));
        }
        let out = kernels::unpool_forward(self.value(input).data(), map);
        let winners = kernels::unpool_winners(map);
        let value = Tensor::from_vec(&target_shape, out)?;
        self.push("unpool2d", value, &[input], Op::Unpool { input, map: Arc::clone(map), winners })
    }

    pub fn avgpool2d(&mut self, input: Var, k: usize, stride: usize) -> Result<Var> {
        let dims = self.value(input).dims4("avgpool input")?;
        if kernels::pool_out_extent(dims[2], k, stride).is_none() || kernels::pool_out_extent(dims[3], k, stride).is_none() {
            return Err(Error::shape(format!("pool window {k}/{stride} degenerate for {}×{}", dims[2], dims[3])));
        }
        let (out, shape) = kernels::avgpool_forward(self.value(input).data(), dims, k, stride);
        let value = Tensor::from_vec(&shape, out)?;
        self.push("avgpool2d", value, &[input], Op::AvgPool { input, k, stride })
    }

    /// Bias-free `x · wᵀ` with `x: [n, din]`, `w: [dout, din]`.
    pub fn linear(&mut self, input: Var, weight: Var) -> Result<Var> {
        let [n, din] = self.value(input).dims2("linear input")?;
        let [dout, wdin] = self.value(weight).dims2("linear weight")?;
        if din != wdin {
            return Err(Error::shape(format!("linear weight expects {wdin} features, input has {din}")));
        }
        let out = kernels::linear_forward(self.value(input).data(), n, din, self.value(weight).data(), dout);
        let value = Tensor::from_vec(&[n, dout], out)?;
        self.push("linear", value, &[input, weight], Op::Linear { input, weight })
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let value = self.value(input).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", value, &[input], Op::Relu { input })
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `ratio` and survivors are scaled by `1/(1−ratio)`.
    /// Evaluation mode returns `input` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, ratio: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::invalid(format!("dropout ratio {ratio} outside [0, 1)")));
        }
        if !training || ratio == 0.0 {
            return Ok(input);
        }
        let keep = T::from_f64(1.0 / (1.0 - ratio));
        let x = self.value(input);
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.random::<f64>() < ratio { T::zero() } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::from_vec(x.shape(), data)?;
        self.push("dropout", value, &[input], Op::Dropout { input, mask })
    }

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = self.value(*inputs.first().ok_or_else(|| Error::shape("concat of nothing"))?).dims4("concat")?;
        let mut channels = 0;
        for &v in inputs {
            let d = self.value(v).dims4("concat")?;
            if d[0] != first[0] || d[2] != first[2] || d[3] != first[3] {
                return Err(Error::shape(format!("concat mismatch: {d:?} vs {first:?}")));
            }
            channels += d[1];
        }
        let [n, _, h, w] = first;
        let plane = h * w;
        let mut data = Vec::with_capacity(n * channels * plane);
        for ni in 0..n {
            for &v in inputs {
                let t = self.value(v);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[ni * c * plane..(ni + 1) * c * plane]);
            }
        }
        let value = Tensor::from_vec(&[n, channels, h, w], data)?;
        self.push("concat", value, inputs, Op::Concat { inputs: inputs.to_vec() })
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        self.push("reshape", value, &[input], Op::Reshape { input })
    }

    /// Collapses every axis after the first: `[n, ...] → [n, rest]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        let n = t.shape()[0];
        let rest = t.len() / n;
        self.reshape(input, &[n, rest])
    }

    /// Rows `start..end` along the leading (batch) axis.
    pub fn rows(&mut self, input: Var, start: usize, end: usize) -> Result<Var> {
        let value = self.value(input).slice_outer(start, end)?;
        self.push("rows", value, &[input], Op::Rows { input, start })
    }

    /// `Σ coefᵢ·xᵢ` over same-shaped nodes.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let (first, _) = *terms.first().ok_or_else(|| Error::shape("empty combination"))?;
        let shape = self.value(first).shape().to_vec();
        let mut acc = Tensor::zeros(&shape);
        let terms: Vec<(Var, T)> = terms.iter().map(|&(v, c)| (v, T::from_f64(c))).collect();
        for &(v, c) in &terms {
            let t = self.value(v);
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(format!("combine mismatch {:?} vs {shape:?}", t.shape())));
            }
            for (a, &x) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += c * x;
            }
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.push("combine", acc, &inputs, Op::Combine { terms })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.combine(&[(a, 1.0), (b, 1.0)])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.combine(&[(x, factor)])
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(input).sum());
        self.push("sum", value, &[input], Op::Sum { input })
    }

    /// Mean over the batch of `−log softmax(logits)[label]`, stabilized by
    /// subtracting each row's maximum.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let [n, k] = self.value(logits).dims2("cross-entropy logits")?;
        if labels.is_empty() {
            return Err(Error::invalid("cross-entropy over an empty batch"));
        }
        if labels.len() != n {
            return Err(Error::shape(format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!("label {bad} outside [0, {k})")));
        }
        let z = self.value(logits).data();
        let mut probs = vec![T::zero(); n * k];
        let mut total = T::zero();
        for (i, &label) in labels.iter().enumerate() {
            let row = &z[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let denom: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + denom.ln();
            total += lse - row[label];
            for (p, &v) in probs[i * k..(i + 1) * k].iter_mut().zip(row) {
                *p = (v - max).exp() / denom;
            }
        }
        let value = Tensor::scalar(total / T::from_f64(n as f64));
        self.push("softmax_cross_entropy", value, &[logits], Op::SoftmaxCrossEntropy { logits, probs, labels: labels.to_vec() })
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!("mse of {:?} and {:?}", ta.shape(), tb.shape())));
        }
        let sq: T = ta.data().iter().zip(tb.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let value = Tensor::scalar(sq / T::from_f64(ta.len() as f64));
        self.push("mse", value, &[a, b], Op::Mse { a, b })
    }

    /// Biased Gaussian-kernel MMD² between the rows of `source` and `target`
    /// (`[ns, d]` and `[nt, d]`). `sigma` is treated as a constant.
    pub fn mmd(&mut self, source: Var, target: Var, sigma: f64) -> Result<Var> {
        let [ns, d] = self.value(source).dims2("mmd source")?;
        let [nt, dt] = self.value(target).dims2("mmd target")?;
        if d != dt {
            return Err(Error::shape(format!("mmd feature dims differ: {d} vs {dt}")));
        }
        if !(sigma > 0.0) {
            return Err(Error::invalid(format!("mmd bandwidth {sigma} must be positive")));
        }
        let sigma = T::from_f64(sigma);
        let v = mmd::mmd_biased(self.value(source).data(), ns, self.value(target).data(), nt, d, sigma);
        self.push("mmd", Tensor::scalar(v), &[source, target], Op::Mmd { source, target, sigma })
    }

    /// Populates gradients of every reachable node that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape(format!("backward needs a scalar loss, got {:?}", self.nodes[loss.0].value.shape())));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let shape = self.nodes[loss.0].value.shape().to_vec();
        self.nodes[loss.0].grad = Some(Tensor::full(&shape, T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[i].grad.take() else { continue };
            if self.checked && !grad.all_finite() {
                return Err(Error::NonFinite(format!("gradient of node {i}")));
            }
            let contributions = self.local_grads(i, &grad)?;
            self.nodes[i].grad = Some(grad);
            for (v, g) in contributions {
                let node = &mut self.nodes[v.0];
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let mut out = Vec::new();
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, params } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let dims = x.dims4("conv2d")?;
                let [cout, _, k, _] = w.dims4("conv2d")?;
                let odims = g.dims4("conv2d grad")?;
                if self.wants(*input) {
                    let gx = kernels::conv2d_backward_input(gd, dims, w.data(), cout, k, params, odims);
                    out.push((*input, Tensor::from_vec(x.shape(), gx)?));
                }
                if self.wants(*weight) {
                    let gw = kernels::conv2d_backward_weight(gd, x.data(), dims, cout, k, params, odims);
                    out.push((*weight, Tensor::from_vec(w.shape(), gw)?));
                }
            }
            Op::ConvTranspose { input, weight, stride, groups } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let dims = x.dims4("deconv")?;
                let [_, cog, k, _] = w.dims4("deconv")?;
                let cout = cog * groups;
                if self.wants(*input) {
                    let gx = kernels::conv_transpose_backward_input(gd, dims, w.data(), cout, k, *stride, *groups);
                    out.push((*input, Tensor::from_vec(x.shape(), gx)?));
                }
                if self.wants(*weight) {
                    let gw = kernels::conv_transpose_backward_weight(gd, x.data(), dims, cout, k, *stride, *groups);
                    out.push((*weight, Tensor::from_vec(w.shape(), gw)?));
                }
            }
            Op::MaxPool { input, map } => {
                let gx = kernels::maxpool_backward(gd, map);
                out.push((*input, Tensor::from_vec(&map.input_shape, gx)?));
            }
            Op::Unpool { input, map, winners } => {
                let gx = kernels::unpool_backward(gd, map, winners);
                out.push((*input, Tensor::from_vec(&map.output_shape, gx)?));
            }
            Op::AvgPool { input, k, stride } => {
                let dims = self.value(*input).dims4("avgpool")?;
                let gx = kernels::avgpool_backward(gd, dims, g.dims4("avgpool grad")?, *k, *stride);
                out.push((*input, Tensor::from_vec(&dims, gx)?));
            }
            Op::Linear { input, weight } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let [n, din] = x.dims2("linear")?;
                let [dout, _] = w.dims2("linear")?;
                if self.wants(*input) {
                    let gx = kernels::linear_backward_input(gd, n, dout, w.data(), din);
                    out.push((*input, Tensor::from_vec(x.shape(), gx)?));
                }
                if self.wants(*weight) {
                    let gw = kernels::linear_backward_weight(gd, n, dout, x.data(), din);
                    out.push((*weight, Tensor::from_vec(w.shape(), gw)?));
                }
            }
            Op::Relu { input } => {
                let y = &self.nodes[i].value;
                let data = y.data().iter().zip(gd).map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() }).collect();
                out.push((*input, Tensor::from_vec(y.shape(), data)?));
            }
            Op::Dropout { input, mask } => {
                let data = gd.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                out.push((*input, Tensor::from_vec(g.shape(), data)?));
            }
            Op::Concat { inputs } => {
                let [n, channels, h, w] = g.dims4("concat grad")?;
                let plane = h * w;
                let mut offset = 0;
                for &v in inputs {
                    let shape = self.value(v).shape().to_vec();
                    let c = shape[1];
                    if self.wants(v) {
                        let mut data = Vec::with_capacity(n * c * plane);
                        for ni in 0..n {
                            let base = (ni * channels + offset) * plane;
                            data.extend_from_slice(&gd[base..base + c * plane]);
                        }
                        out.push((v, Tensor::from_vec(&shape, data)?));
                    }
                    offset += c;
                }
            }
            Op::Reshape { input } => {
                out.push((*input, g.clone().reshape(self.value(*input).shape())?));
            }
            Op::Rows { input, start } => {
                let x = self.value(*input);
                let inner = x.len() / x.shape()[0];
                let mut full = Tensor::zeros(x.shape());
                full.data_mut()[start * inner..start * inner + gd.len()].copy_from_slice(gd);
                out.push((*input, full));
            }
            Op::Combine { terms } => {
                for &(v, c) in terms {
                    if self.wants(v) {
                        out.push((v, g.map(|x| x * c)));
                    }
                }
            }
            Op::Sum { input } => {
                out.push((*input, Tensor::full(self.value(*input).shape(), gd[0])));
            }
            Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                let [n, k] = self.value(*logits).dims2("cross-entropy")?;
                let scale = gd[0] / T::from_f64(n as f64);
                let mut data = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    data[i * k + l] -= T::one();
                }
                data.iter_mut().for_each(|v| *v *= scale);
                out.push((*logits, Tensor::from_vec(&[n, k], data)?));
            }
            Op::Mse { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let scale = T::from_f64(2.0) * gd[0] / T::from_f64(ta.len() as f64);
                let diff: Vec<T> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| (x - y) * scale).collect();
                if self.wants(*b) {
                    out.push((*b, Tensor::from_vec(tb.shape(), diff.iter().map(|&v| -v).collect())?));
                }
                if self.wants(*a) {
                    out.push((*a, Tensor::from_vec(ta.shape(), diff)?));
                }
            }
            Op::Mmd { source, target, sigma } => {
                let (ts, tt) = (self.value(*source), self.value(*target));
                let [ns, d] = ts.dims2("mmd")?;
                let nt = tt.shape()[0];
                let (gs, gt) = mmd::mmd_biased_grad(ts.data(), ns, tt.data(), nt, d, *sigma, gd[0]);
                if self.wants(*source) {
                    out.push((*source, Tensor::from_vec(ts.shape(), gs)?));
                }
                if self.wants(*target) {
                    out.push((*target, Tensor::from_vec(tt.shape(), gt)?));
                }
            }
        }
        Ok(out)
    }
}
