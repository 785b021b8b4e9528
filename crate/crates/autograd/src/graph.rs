//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and returns the
//! gradient of every node that depends on a trainable leaf.

use std::cell::RefCell;
use std::rc::Rc;

use crate::conv::{self, ConvDims, ConvGeom};
use crate::float::Float;
use crate::norm::{self, BatchStats, ChannelLayout};
use crate::pool;
use crate::resize;
use crate::tensor::Tensor;
use crate::TensorError;

type Result<T> = std::result::Result<T, TensorError>;

enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Relu(usize),
    Sigmoid(usize),
    Sum(usize),
    Mean(usize),
    Conv { x: usize, w: usize, b: Option<usize>, dims: ConvDims },
    Norm { x: usize, gamma: usize, beta: usize, mean: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    MaxPool2 { x: usize, arg: Vec<usize> },
    TimeMean(usize),
    TimeMax { x: usize, arg: Vec<usize> },
    Concat { inputs: Vec<usize>, widths: Vec<usize> },
    Bilinear(usize),
    MulBroadcast { x: usize, m: usize },
    Bce { p: usize, target: Rc<Tensor<T>>, w_pos: T, w_neg: T, eps: T },
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Operation tape. Nodes are append-only; a graph is used for one forward
/// and (optionally) one backward pass.
pub struct Graph<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Float> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Float> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{}, {:?})", self.id, self.shape())
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, needs_grad });
        Var { graph: self, id: nodes.len() - 1 }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    /// Concatenate along axis 1. All inputs must agree on every other axis.
    pub fn concat<'g>(&'g self, inputs: &[Var<'g, T>]) -> Result<Var<'g, T>> {
        let first = inputs.first().ok_or_else(|| TensorError::Shape("concat of nothing".into()))?;
        let fs = first.shape();
        if fs.len() < 2 {
            return Err(TensorError::Shape(format!("concat needs >= 2 axes, got {:?}", fs)));
        }
        let values: Vec<Rc<Tensor<T>>> = inputs.iter().map(|v| v.value()).collect();
        let mut widths = Vec::with_capacity(inputs.len());
        for v in &values {
            let s = v.shape();
            if s.len() != fs.len() || s[0] != fs[0] || s[2..] != fs[2..] {
                return Err(TensorError::Shape(format!("concat: {:?} incompatible with {:?}", s, fs)));
            }
            widths.push(s[1]);
        }
        let batch = fs[0];
        let inner: usize = fs[2..].iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(batch * total * inner);
        for b in 0..batch {
            for (v, &c) in values.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[b * c * inner..(b + 1) * c * inner]);
            }
        }
        let mut shape = fs.clone();
        shape[1] = total;
        let needs = inputs.iter().any(|v| self.needs(v.id));
        let ids = inputs.iter().map(|v| v.id).collect();
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat { inputs: ids, widths }, needs))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(TensorError::Shape(format!(
                "backward needs a scalar, got {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape(), T::one()));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            // Only leaf gradients are kept; interior ones are freed as we go.
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            if !node.needs_grad {
                continue;
            }
            for (input, delta) in backprop(&nodes, node, &g)? {
                accumulate(&mut grads[input], delta);
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Float>(slot: &mut Option<Tensor<T>>, delta: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                *a += *d;
            }
        }
        None => *slot = Some(delta),
    }
}

fn like<T: Float>(t: &Tensor<T>, data: Vec<T>) -> Tensor<T> {
    Tensor::new(t.shape().to_vec(), data).expect("gradient shape mirrors value shape")
}

fn backprop<T: Float>(nodes: &[Node<T>], node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(usize, Tensor<T>)>> {
    let val = |i: usize| -> &Tensor<T> { &nodes[i].value };
    let needs = |i: usize| nodes[i].needs_grad;
    let mut out = Vec::new();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if needs(*a) {
                out.push((*a, g.clone()));
            }
            if needs(*b) {
                out.push((*b, g.clone()));
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                out.push((*a, g.clone()));
            }
            if needs(*b) {
                out.push((*b, g.map(|v| -v)));
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                out.push((*a, g.zip_map(val(*b), |gv, bv| gv * bv)?));
            }
            if needs(*b) {
                out.push((*b, g.zip_map(val(*a), |gv, av| gv * av)?));
            }
        }
        Op::Scale(a, c) => {
            let c = *c;
            out.push((*a, g.map(|v| v * c)));
        }
        Op::Relu(a) => {
            out.push((*a, g.zip_map(val(*a), |gv, x| if x > T::zero() { gv } else { T::zero() })?));
        }
        Op::Sigmoid(a) => {
            out.push((*a, g.zip_map(&node.value, |gv, y| gv * y * (T::one() - y))?));
        }
        Op::Sum(a) => {
            let gv = g.item();
            out.push((*a, Tensor::full(val(*a).shape(), gv)));
        }
        Op::Mean(a) => {
            let x = val(*a);
            let gv = g.item() / T::from_f64(x.numel() as f64);
            out.push((*a, Tensor::full(x.shape(), gv)));
        }
        Op::Conv { x, w, b, dims } => {
            let xv = val(*x);
            let wv = val(*w);
            let need_b = b.map(needs).unwrap_or(false);
            let cg = conv::backward(xv.data(), wv.data(), g.data(), dims, (needs(*x), needs(*w), need_b));
            if let Some(dx) = cg.dx {
                out.push((*x, like(xv, dx)));
            }
            if let Some(dw) = cg.dw {
                out.push((*w, like(wv, dw)));
            }
            if let (Some(b), Some(db)) = (b, cg.db) {
                out.push((*b, like(val(*b), db)));
            }
        }
        Op::Norm { x, gamma, beta, mean, inv_std, batch_stats } => {
            let xv = val(*x);
            let gm = val(*gamma);
            let l = ChannelLayout::of(xv.shape());
            let ng = if *batch_stats {
                norm::backward_train(xv.data(), g.data(), l, mean, inv_std, gm.data())
            } else {
                norm::backward_fixed(xv.data(), g.data(), l, mean, inv_std, gm.data())
            };
            if needs(*x) {
                out.push((*x, like(xv, ng.dx)));
            }
            if needs(*gamma) {
                out.push((*gamma, like(gm, ng.dgamma)));
            }
            if needs(*beta) {
                out.push((*beta, like(val(*beta), ng.dbeta)));
            }
        }
        Op::MaxPool2 { x, arg } | Op::TimeMax { x, arg } => {
            let xv = val(*x);
            out.push((*x, like(xv, pool::scatter_argmax(g.data(), arg, xv.numel()))));
        }
        Op::TimeMean(x) => {
            let xv = val(*x);
            out.push((*x, like(xv, pool::time_mean_backward(g.data(), xv.shape()))));
        }
        Op::Concat { inputs, widths } => {
            let gs = g.shape();
            let batch = gs[0];
            let inner: usize = gs[2..].iter().product();
            let total = gs[1];
            let mut start = 0;
            for (&input, &c) in inputs.iter().zip(widths) {
                if needs(input) {
                    let mut d = Vec::with_capacity(batch * c * inner);
                    for b in 0..batch {
                        let off = (b * total + start) * inner;
                        d.extend_from_slice(&g.data()[off..off + c * inner]);
                    }
                    out.push((input, like(val(input), d)));
                }
                start += c;
            }
        }
        Op::Bilinear(x) => {
            let xv = val(*x);
            let gs = g.shape();
            out.push((*x, like(xv, resize::bilinear_backward(g.data(), xv.shape(), gs[2], gs[3]))));
        }
        Op::MulBroadcast { x, m } => {
            let xv = val(*x);
            let mv = val(*m);
            let s = xv.shape();
            let (batch, ch, inner) = (s[0], s[1], s[2..].iter().product::<usize>());
            if needs(*x) {
                let mut d = vec![T::zero(); xv.numel()];
                for b in 0..batch {
                    for c in 0..ch {
                        for i in 0..inner {
                            let k = (b * ch + c) * inner + i;
                            d[k] = g.data()[k] * mv.data()[b * inner + i];
                        }
                    }
                }
                out.push((*x, like(xv, d)));
            }
            if needs(*m) {
                let mut d = vec![T::zero(); mv.numel()];
                for b in 0..batch {
                    for c in 0..ch {
                        for i in 0..inner {
                            let k = (b * ch + c) * inner + i;
                            d[b * inner + i] += g.data()[k] * xv.data()[k];
                        }
                    }
                }
                out.push((*m, like(mv, d)));
            }
        }
        Op::Bce { p, target, w_pos, w_neg, eps } => {
            let pv = val(*p);
            let n = T::from_f64(pv.numel() as f64);
            let scale = g.item() / n;
            let hi = T::one() - *eps;
            let d = pv
                .data()
                .iter()
                .zip(target.data())
                .map(|(&pi, &y)| {
                    if pi < *eps || pi > hi {
                        T::zero()
                    } else {
                        scale * (-*w_pos * y / pi + *w_neg * (T::one() - y) / (T::one() - pi))
                    }
                })
                .collect();
            out.push((*p, like(pv, d)));
        }
    }
    Ok(out)
}

impl<'g, T: Float> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.needs(self.id)
    }

    /// Constant copy of this node's value, cut off from the tape.
    pub fn detach(&self) -> Var<'g, T> {
        let v = (*self.value()).clone();
        self.graph.constant(v)
    }

    fn unary(&self, value: Tensor<T>, op: Op<T>) -> Var<'g, T> {
        self.graph.push(value, op, self.requires_grad())
    }

    fn binary(&self, other: &Var<'g, T>, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var<'g, T>> {
        let v = self.value().zip_map(&other.value(), f)?;
        let needs = self.requires_grad() || other.requires_grad();
        Ok(self.graph.push(v, op, needs))
    }

    pub fn add(&self, other: &Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn scale(&self, c: T) -> Var<'g, T> {
        self.unary(self.value().map(|v| v * c), Op::Scale(self.id, c))
    }

    pub fn relu(&self) -> Var<'g, T> {
        self.unary(self.value().map(|v| if v > T::zero() { v } else { T::zero() }), Op::Relu(self.id))
    }

    pub fn sigmoid(&self) -> Var<'g, T> {
        let y = self.value().map(|v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        });
        self.unary(y, Op::Sigmoid(self.id))
    }

    pub fn sum(&self) -> Var<'g, T> {
        self.unary(Tensor::scalar(self.value().sum()), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'g, T> {
        let v = self.value();
        let m = v.sum() / T::from_f64(v.numel() as f64);
        self.unary(Tensor::scalar(m), Op::Mean(self.id))
    }

    /// Convolution of a (B,C,H,W) or (B,C,D,H,W) input with zero padding.
    pub fn conv(&self, weight: &Var<'g, T>, bias: Option<&Var<'g, T>>, geom: ConvGeom) -> Result<Var<'g, T>> {
        let x = self.value();
        let w = weight.value();
        let dims = ConvDims::new(x.shape(), w.shape(), geom)?;
        let bv = bias.map(|b| b.value());
        if let Some(b) = &bv {
            b.expect_shape(&[dims.out_ch])?;
        }
        let data = conv::forward(x.data(), w.data(), bv.as_ref().map(|b| b.data()), &dims);
        let out = Tensor::new(dims.output_shape(x.ndim() == 4), data)?;
        let needs = self.requires_grad() || weight.requires_grad() || bias.map(|b| b.requires_grad()).unwrap_or(false);
        Ok(self.graph.push(out, Op::Conv { x: self.id, w: weight.id, b: bias.map(|b| b.id), dims }, needs))
    }

    fn check_norm_params(&self, gamma: &Var<'g, T>, beta: &Var<'g, T>) -> Result<usize> {
        let s = self.shape();
        if s.len() < 2 {
            return Err(TensorError::Shape(format!("batch norm needs >= 2 axes, got {:?}", s)));
        }
        gamma.value().expect_shape(&[s[1]])?;
        beta.value().expect_shape(&[s[1]])?;
        Ok(s[1])
    }

    /// Normalise with the statistics of this batch. Returns the batch
    /// statistics so callers can maintain running estimates.
    pub fn batch_norm(&self, gamma: &Var<'g, T>, beta: &Var<'g, T>, eps: T) -> Result<(Var<'g, T>, BatchStats<T>)> {
        self.check_norm_params(gamma, beta)?;
        let x = self.value();
        let l = ChannelLayout::of(x.shape());
        let stats = norm::batch_stats(x.data(), l);
        let inv_std: Vec<T> = stats.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let y = norm::affine(x.data(), l, &stats.mean, &inv_std, gamma.value().data(), beta.value().data());
        let needs = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        let op = Op::Norm {
            x: self.id,
            gamma: gamma.id,
            beta: beta.id,
            mean: stats.mean.clone(),
            inv_std,
            batch_stats: true,
        };
        Ok((self.graph.push(like(&x, y), op, needs), stats))
    }

    /// Normalise with fixed (running) statistics.
    pub fn batch_norm_fixed(
        &self,
        gamma: &Var<'g, T>,
        beta: &Var<'g, T>,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var<'g, T>> {
        let c = self.check_norm_params(gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(TensorError::Shape(format!("running statistics need {} channels", c)));
        }
        let x = self.value();
        let l = ChannelLayout::of(x.shape());
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let y = norm::affine(x.data(), l, mean, &inv_std, gamma.value().data(), beta.value().data());
        let needs = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        let op =
            Op::Norm { x: self.id, gamma: gamma.id, beta: beta.id, mean: mean.to_vec(), inv_std, batch_stats: false };
        Ok(self.graph.push(like(&x, y), op, needs))
    }

    /// 2x2 max pooling with stride 2 on (B,C,H,W); H and W must be even.
    pub fn max_pool2(&self) -> Result<Var<'g, T>> {
        let x = self.value();
        let s = x.shape();
        if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
            return Err(TensorError::Shape(format!("max_pool2 needs (B,C,even H,even W), got {:?}", s)));
        }
        let (y, arg) = pool::max_pool2(x.data(), s);
        let out = Tensor::new(vec![s[0], s[1], s[2] / 2, s[3] / 2], y)?;
        Ok(self.unary(out, Op::MaxPool2 { x: self.id, arg }))
    }

    fn check_5d(&self, what: &str) -> Result<Vec<usize>> {
        let s = self.shape();
        if s.len() != 5 || s[2] == 0 {
            return Err(TensorError::Shape(format!("{} needs (B,C,T>=1,H,W), got {:?}", what, s)));
        }
        Ok(s)
    }

    /// Mean over the time axis of (B,C,T,H,W), bitwise invariant to frame order.
    pub fn time_mean(&self) -> Result<Var<'g, T>> {
        let s = self.check_5d("time_mean")?;
        let y = pool::time_mean(self.value().data(), &s);
        Ok(self.unary(Tensor::new(vec![s[0], s[1], s[3], s[4]], y)?, Op::TimeMean(self.id)))
    }

    /// Max over the time axis of (B,C,T,H,W).
    pub fn time_max(&self) -> Result<Var<'g, T>> {
        let s = self.check_5d("time_max")?;
        let (y, arg) = pool::time_max(self.value().data(), &s);
        Ok(self.unary(Tensor::new(vec![s[0], s[1], s[3], s[4]], y)?, Op::TimeMax { x: self.id, arg }))
    }

    /// Bilinear resampling of (B,C,H,W) to (B,C,oh,ow), half-pixel centres.
    pub fn resize_bilinear(&self, oh: usize, ow: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let s = x.shape();
        if s.len() != 4 || oh == 0 || ow == 0 || s[2] == 0 || s[3] == 0 {
            return Err(TensorError::Shape(format!("resize of {:?} to {}x{}", s, oh, ow)));
        }
        let y = resize::bilinear(x.data(), s, oh, ow);
        Ok(self.unary(Tensor::new(vec![s[0], s[1], oh, ow], y)?, Op::Bilinear(self.id)))
    }

    /// Multiply (B,C,...) by a (B,1,...) map broadcast over channels.
    pub fn mul_broadcast(&self, m: &Var<'g, T>) -> Result<Var<'g, T>> {
        let x = self.value();
        let mv = m.value();
        let s = x.shape();
        let ms = mv.shape();
        if s.len() < 2 || ms.len() != s.len() || ms[0] != s[0] || ms[1] != 1 || ms[2..] != s[2..] {
            return Err(TensorError::Shape(format!("cannot broadcast {:?} over {:?}", ms, s)));
        }
        let (batch, ch, inner) = (s[0], s[1], s[2..].iter().product::<usize>());
        let mut y = vec![T::zero(); x.numel()];
        for b in 0..batch {
            for c in 0..ch {
                for i in 0..inner {
                    let k = (b * ch + c) * inner + i;
                    y[k] = x.data()[k] * mv.data()[b * inner + i];
                }
            }
        }
        let needs = self.requires_grad() || m.requires_grad();
        Ok(self.graph.push(like(&x, y), Op::MulBroadcast { x: self.id, m: m.id }, needs))
    }

    /// Mean class-weighted binary cross-entropy of probabilities against a
    /// {0,1} target. Probabilities are clamped to `[eps, 1 - eps]` and the
    /// clamped region passes no gradient.
    pub fn bce(&self, target: &Tensor<T>, w_pos: T, w_neg: T, eps: T) -> Result<Var<'g, T>> {
        let p = self.value();
        target.expect_shape(p.shape())?;
        let hi = T::one() - eps;
        let mut total = T::zero();
        for (&pi, &y) in p.data().iter().zip(target.data()) {
            // Comparison clamp so a NaN probability yields a NaN loss.
            let pc = if pi < eps { eps } else if pi > hi { hi } else { pi };
            total += -(w_pos * y * pc.ln() + w_neg * (T::one() - y) * (T::one() - pc).ln());
        }
        let loss = total / T::from_f64(p.numel().max(1) as f64);
        let op = Op::Bce { p: self.id, target: Rc::new(target.clone()), w_pos, w_neg, eps };
        Ok(self.unary(Tensor::scalar(loss), op))
    }
}
