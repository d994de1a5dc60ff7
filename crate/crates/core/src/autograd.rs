//! Reverse-mode differentiation on a tape.
//!
//! A [`Graph`] records every operation in creation order. Because an op can
//! only consume nodes that already exist, creation order is a topological
//! order and backward is a single reverse sweep. Intermediate values are
//! released as soon as the sweep has passed them.
//!
//! Spatial ops accept `[C, H, W]` (planar) or `[C, D, H, W]` (volumetric)
//! tensors.

use crate::error::{Error, Result};
use crate::kernels::conv::{self, Geometry};
use crate::kernels::resample;
use crate::tensor::{Scalar, Tensor};

/// Probability clamp used by the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T: Scalar> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        g: Geometry,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Upsample {
        x: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Add(Var, Var),
    Concat(Vec<Var>),
    Sum(Var),
    Dot {
        x: Var,
        weights: Vec<T>,
    },
    Bce {
        pred: Var,
        target: Vec<T>,
    },
    BceLogits {
        logits: Var,
        target: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        target: Vec<u32>,
        probs: Vec<T>,
    },
}

struct Node<T: Scalar> {
    op: Op<T>,
    value: Option<Tensor<T>>,
    grad: Option<Vec<T>>,
    needs_grad: bool,
}

/// A recorded computation.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    swept: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `[D, H, W]` extent and resampled axes of a `[C, ...]` activation.
fn layout(shape: &[usize]) -> Result<([usize; 3], [bool; 3])> {
    match *shape {
        [_, h, w] => Ok(([1, h, w], [false, true, true])),
        [_, d, h, w] => Ok(([d, h, w], [true, true, true])),
        _ => Err(Error::shape(format!(
            "expected a [C, H, W] or [C, D, H, W] activation, got {shape:?}"
        ))),
    }
}

fn add_into<T: Scalar>(acc: &mut Option<Vec<T>>, g: Vec<T>) {
    match acc {
        Some(a) => a.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
        None => *acc = Some(g),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            swept: false,
        }
    }

    /// Forgets every node, making the graph reusable.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.swept = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            grad: None,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is collected by [`Graph::backward`].
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// A constant leaf.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.nodes[v.0].value.as_ref().expect("value was released by backward")
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Gradient of the loss with respect to `v`, available after backward for
    /// leaves created with [`Graph::param`].
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        let shape = node.value.as_ref()?.shape();
        match &node.grad {
            Some(g) => Some(Tensor::from_parts(shape.to_vec(), g.clone())),
            None if node.needs_grad && self.swept => Some(Tensor::from_parts(
                shape.to_vec(),
                vec![T::zero(); shape.iter().product()],
            )),
            None => None,
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn unary(&mut self, op: Op<T>, x: Var, value: Tensor<T>) -> Var {
        let ng = self.needs(x);
        self.push(op, value, ng)
    }

    /// Same-padded stride-1 convolution. `w` is `[Cout, Cin, kh, kw]` for planar
    /// input and `[Cout, Cin, kd, kh, kw]` for volumetric input, odd extents.
    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (spatial, _) = layout(&xs)?;
        let kernel = match (xs.len(), ws.len()) {
            (3, 4) => [1, ws[2], ws[3]],
            (4, 5) => [ws[2], ws[3], ws[4]],
            _ => {
                return Err(Error::shape(format!(
                    "convolution weight {ws:?} does not fit input {xs:?}"
                )))
            }
        };
        if ws[1] != xs[0] {
            return Err(Error::shape(format!(
                "convolution weight {ws:?} expects {} input channels, input is {xs:?}",
                ws[1]
            )));
        }
        if kernel.iter().any(|k| k % 2 == 0) {
            return Err(Error::shape(format!("kernel extents must be odd, got {ws:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(Error::shape(format!(
                    "bias {:?} does not match weight {ws:?}",
                    self.shape(b)
                )));
            }
        }
        let g = Geometry {
            cin: xs[0],
            cout: ws[0],
            spatial,
            kernel,
        };
        let mut out = vec![T::zero(); g.cout * g.voxels()];
        conv::forward(
            g,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &mut out,
        );
        let mut shape = xs;
        shape[0] = g.cout;
        let ng = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(Op::Conv { x, w, b, g }, Tensor::from_parts(shape, out), ng))
    }

    /// Planar convolution; `x` is `[Cin, H, W]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        if self.value(x).rank() != 3 {
            return Err(Error::shape(format!(
                "conv2d expects [C, H, W], got {:?}",
                self.shape(x)
            )));
        }
        self.conv(x, w, b)
    }

    /// Volumetric convolution; `x` is `[Cin, D, H, W]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        if self.value(x).rank() != 4 {
            return Err(Error::shape(format!(
                "conv3d expects [C, D, H, W], got {:?}",
                self.shape(x)
            )));
        }
        self.conv(x, w, b)
    }

    /// Non-overlapping 2× max-pooling over every spatial axis.
    pub fn maxpool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (spatial, axes) = layout(&xs)?;
        if xs[1..].iter().any(|d| d % 2 != 0) {
            return Err(Error::shape(format!(
                "max-pooling needs even spatial extents, got {xs:?}; pad the input"
            )));
        }
        let (out, argmax) = resample::maxpool_forward(self.value(x).data(), xs[0], spatial, axes);
        let shape: Vec<usize> = std::iter::once(xs[0]).chain(xs[1..].iter().map(|d| d / 2)).collect();
        Ok(self.unary(Op::MaxPool { x, argmax }, x, Tensor::from_parts(shape, out)))
    }

    /// 2× linear upsampling (bilinear or trilinear by rank), align-corners off.
    pub fn upsample(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (spatial, axes) = layout(&xs)?;
        let out = resample::upsample_forward(self.value(x).data(), xs[0], spatial, axes);
        let shape: Vec<usize> = std::iter::once(xs[0]).chain(xs[1..].iter().map(|d| d * 2)).collect();
        Ok(self.unary(Op::Upsample { x }, x, Tensor::from_parts(shape, out)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(T::zero()));
        self.unary(Op::Relu(x), x, y)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.unary(Op::Sigmoid(x), x, y)
    }

    /// Softmax across the channel axis at every spatial location.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() < 2 {
            return Err(Error::shape(format!(
                "softmax needs a channel axis, got {:?}",
                t.shape()
            )));
        }
        let y = softmax_channels(t);
        Ok(self.unary(Op::Softmax(x), x, y))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "cannot add {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&p, &q)| p + q).collect();
        let y = Tensor::from_parts(ta.shape().to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), y, ng))
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let rest = self.shape(*first)[1..].to_vec();
        let mut channels = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.rank() < 2 || t.shape()[1..] != rest[..] {
                return Err(Error::shape(format!(
                    "cannot concatenate {:?} with {:?}",
                    self.shape(*first),
                    t.shape()
                )));
            }
            channels += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let shape: Vec<usize> = std::iter::once(channels).chain(rest).collect();
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::from_parts(shape, data), ng))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.unary(Op::Sum(x), x, Tensor::scalar(s))
    }

    /// `Σ x·weights`, a fixed linear functional used to reduce outputs to scalars.
    pub fn dot(&mut self, x: Var, weights: &Tensor<T>) -> Result<Var> {
        let t = self.value(x);
        if t.shape() != weights.shape() {
            return Err(Error::shape(format!(
                "cannot project {:?} onto {:?}",
                t.shape(),
                weights.shape()
            )));
        }
        let s = t.data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        Ok(self.unary(
            Op::Dot {
                x,
                weights: weights.data().to_vec(),
            },
            x,
            Tensor::scalar(s),
        ))
    }

    /// Mean binary cross-entropy of probabilities `pred` against a {0, 1} target
    /// of the same shape. Probabilities are clamped to `[ε, 1 − ε]`.
    pub fn bce_loss(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::shape(format!(
                "prediction {:?} and target {:?} differ",
                p.shape(),
                target.shape()
            )));
        }
        if let Some(bad) = target.data().iter().find(|&&t| t != T::zero() && t != T::one()) {
            return Err(Error::validation(format!("binary target contains {bad}")));
        }
        let eps = T::of(BCE_EPS);
        let mut acc = 0.0f64;
        for (&pv, &tv) in p.data().iter().zip(target.data()) {
            let pc = pv.max(eps).min(T::one() - eps).as_f64();
            acc += if tv == T::one() { pc.ln() } else { (1.0 - pc).ln() };
        }
        let loss = T::of(-acc / p.numel() as f64);
        Ok(self.unary(
            Op::Bce {
                pred,
                target: target.data().to_vec(),
            },
            pred,
            Tensor::scalar(loss),
        ))
    }

    /// `bce_loss(sigmoid(logits), target)` evaluated in one stable step and
    /// without the probability clamp, so saturated logits keep a gradient.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor<T>) -> Result<Var> {
        let z = self.value(logits);
        if z.shape() != target.shape() {
            return Err(Error::shape(format!(
                "logits {:?} and target {:?} differ",
                z.shape(),
                target.shape()
            )));
        }
        if let Some(bad) = target.data().iter().find(|&&t| t != T::zero() && t != T::one()) {
            return Err(Error::validation(format!("binary target contains {bad}")));
        }
        let mut acc = 0.0f64;
        for (&zv, &tv) in z.data().iter().zip(target.data()) {
            let z = zv.as_f64();
            // softplus(z) - t·z
            acc += z.max(0.0) + (-z.abs()).exp().ln_1p() - tv.as_f64() * z;
        }
        let loss = T::of(acc / z.numel() as f64);
        Ok(self.unary(
            Op::BceLogits {
                logits,
                target: target.data().to_vec(),
            },
            logits,
            Tensor::scalar(loss),
        ))
    }

    /// Mean voxel-wise cross-entropy of channel-softmaxed `logits` (`[C, ...]`)
    /// against integer class ids (`[...]`).
    pub fn ce_loss_multiclass(&mut self, logits: Var, target: &Tensor<T>) -> Result<Var> {
        let l = self.value(logits);
        let c = l.shape()[0];
        if l.rank() < 2 || l.shape()[1..] != *target.shape() {
            return Err(Error::shape(format!(
                "logits {:?} do not match target {:?}",
                l.shape(),
                target.shape()
            )));
        }
        let mut ids = Vec::with_capacity(target.numel());
        for (i, &t) in target.data().iter().enumerate() {
            let v = t.as_f64();
            if v.fract() != 0.0 || v < 0.0 || v >= c as f64 {
                let coords = unravel(i, target.shape());
                return Err(Error::validation(format!(
                    "class id {v} at voxel {coords:?} is outside [0, {c})"
                )));
            }
            ids.push(v as u32);
        }
        let probs = softmax_channels(l);
        let n = ids.len();
        let mut acc = 0.0f64;
        for (s, &id) in ids.iter().enumerate() {
            // log-softmax directly from the logits for accuracy at saturation
            let mut m = f64::NEG_INFINITY;
            for ch in 0..c {
                m = m.max(l.data()[ch * n + s].as_f64());
            }
            let mut z = 0.0;
            for ch in 0..c {
                z += (l.data()[ch * n + s].as_f64() - m).exp();
            }
            acc += l.data()[id as usize * n + s].as_f64() - m - z.ln();
        }
        let loss = T::of(-acc / n as f64);
        Ok(self.unary(
            Op::CrossEntropy {
                logits,
                target: ids,
                probs: probs.into_data(),
            },
            logits,
            Tensor::scalar(loss),
        ))
    }

    /// Back-propagates from the scalar `loss`. Gradients of parameter leaves
    /// are then available through [`Graph::grad`]; intermediate values are
    /// released. A second call without [`Graph::reset`] is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.swept {
            return Err(Error::State(
                "backward already ran on this graph; reset it first".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        self.swept = true;
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            if let Some(gy) = self.nodes[i].grad.take() {
                self.backward_op(i, &op, gy);
            }
            self.nodes[i].value = None;
        }
        Ok(())
    }

    fn send(&mut self, v: Var, g: Vec<T>) {
        if self.nodes[v.0].needs_grad {
            add_into(&mut self.nodes[v.0].grad, g);
        }
    }

    fn backward_op(&mut self, i: usize, op: &Op<T>, gy: Vec<T>) {
        match op {
            Op::Leaf => unreachable!(),
            Op::Conv { x, w, b, g } => {
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); g.cin * g.voxels()];
                    conv::backward_input(*g, &gy, self.value(*w).data(), &mut dx);
                    self.send(*x, dx);
                }
                if self.needs(*w) {
                    let mut dw = vec![T::zero(); g.cout * g.patch_len()];
                    conv::backward_weight(*g, self.value(*x).data(), &gy, &mut dw);
                    self.send(*w, dw);
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let mut db = vec![T::zero(); g.cout];
                        conv::backward_bias(*g, &gy, &mut db);
                        self.send(*b, db);
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![T::zero(); self.value(*x).numel()];
                resample::maxpool_backward(&gy, argmax, &mut dx);
                self.send(*x, dx);
            }
            Op::Upsample { x } => {
                let xs = self.shape(*x).to_vec();
                let (spatial, axes) = layout(&xs).expect("validated in forward");
                let dx = resample::upsample_backward(&gy, xs[0], spatial, axes);
                self.send(*x, dx);
            }
            Op::Relu(x) => {
                let y = self.nodes[i].value.as_ref().unwrap().data();
                let dx = gy
                    .iter()
                    .zip(y)
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                self.send(*x, dx);
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[i].value.as_ref().unwrap().data();
                let dx = gy.iter().zip(y).map(|(&g, &s)| g * s * (T::one() - s)).collect();
                self.send(*x, dx);
            }
            Op::Softmax(x) => {
                let y = self.nodes[i].value.as_ref().unwrap();
                let c = y.shape()[0];
                let n = y.numel() / c;
                let yd = y.data();
                let mut dx = vec![T::zero(); yd.len()];
                for s in 0..n {
                    let mut dot = T::zero();
                    for ch in 0..c {
                        dot = dot + gy[ch * n + s] * yd[ch * n + s];
                    }
                    for ch in 0..c {
                        dx[ch * n + s] = yd[ch * n + s] * (gy[ch * n + s] - dot);
                    }
                }
                self.send(*x, dx);
            }
            Op::Add(a, b) => {
                if self.needs(*a) && self.needs(*b) {
                    self.send(*a, gy.clone());
                }
                if self.needs(*b) {
                    self.send(*b, gy);
                } else {
                    self.send(*a, gy);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if self.needs(p) {
                        self.send(p, gy[off..off + len].to_vec());
                    }
                    off += len;
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.send(*x, vec![gy[0]; n]);
            }
            Op::Dot { x, weights } => {
                let dx = weights.iter().map(|&w| w * gy[0]).collect();
                self.send(*x, dx);
            }
            Op::Bce { pred, target } => {
                let eps = T::of(BCE_EPS);
                let p = self.value(*pred).data();
                let scale = gy[0] / T::of(p.len() as f64);
                // Gradient of the clamped formula evaluated at the clamped
                // probability, so saturated outputs still receive a signal.
                let dx = p
                    .iter()
                    .zip(target)
                    .map(|(&pv, &t)| {
                        let pc = pv.max(eps).min(T::one() - eps);
                        scale * ((pc - t) / (pc * (T::one() - pc)))
                    })
                    .collect();
                self.send(*pred, dx);
            }
            Op::BceLogits { logits, target } => {
                let z = self.value(*logits).data();
                let scale = gy[0] / T::of(z.len() as f64);
                let dx = z
                    .iter()
                    .zip(target)
                    .map(|(&v, &t)| scale * (T::one() / (T::one() + (-v).exp()) - t))
                    .collect();
                self.send(*logits, dx);
            }
            Op::CrossEntropy { logits, target, probs } => {
                let n = target.len();
                let scale = gy[0] / T::of(n as f64);
                let mut dx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (s, &id) in target.iter().enumerate() {
                    let k = id as usize * n + s;
                    dx[k] = dx[k] - scale;
                }
                self.send(*logits, dx);
            }
        }
    }
}

fn softmax_channels<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let c = t.shape()[0];
    let n = t.numel() / c;
    let x = t.data();
    let mut y = vec![T::zero(); x.len()];
    for s in 0..n {
        let mut m = T::neg_infinity();
        for ch in 0..c {
            m = m.max(x[ch * n + s]);
        }
        let mut z = T::zero();
        for ch in 0..c {
            let e = (x[ch * n + s] - m).exp();
            y[ch * n + s] = e;
            z = z + e;
        }
        for ch in 0..c {
            y[ch * n + s] = y[ch * n + s] / z;
        }
    }
    Tensor::from_parts(t.shape().to_vec(), y)
}

fn unravel(mut i: usize, shape: &[usize]) -> Vec<usize> {
    let mut out = vec![0; shape.len()];
    for (o, &d) in out.iter_mut().zip(shape).rev() {
        *o = i % d;
        i /= d;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::gradcheck_suite;
    use crate::rng::Rng;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn delta_kernel_is_identity_and_routes_ones_back() {
        let mut rng = Rng::new(1);
        let x = t(&[1, 4, 4], (0..16).map(|_| rng.next_f64()).collect());
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let mut g = Graph::new();
        let xv = g.param(x.clone());
        let wv = g.input(t(&[1, 1, 3, 3], w));
        let y = g.conv2d(xv, wv, None).unwrap();
        assert_eq!(g.value(y), &x);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(xv).unwrap().data(), &[1.0; 16]);
    }

    #[test]
    fn volumetric_delta_kernel() {
        let x = t(&[1, 4, 4, 4], (0..64).map(|v| v as f64).collect());
        let mut w = vec![0.0; 27];
        w[13] = 1.0;
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let wv = g.input(t(&[1, 1, 3, 3, 3], w));
        let y = g.conv3d(xv, wv, None).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[2, 4, 4]).unwrap());
        let w = g.input(Tensor::zeros(&[3, 1, 3, 3]).unwrap());
        let msg = g.conv2d(x, w, None).unwrap_err().to_string();
        assert!(msg.contains("[3, 1, 3, 3]") && msg.contains("[2, 4, 4]"), "{msg}");
    }

    #[test]
    fn pooling_picks_max_and_rejects_odd() {
        let mut g = Graph::new();
        let x = g.param(t(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let y = g.maxpool(x).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 0.0, 1.0]);
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[1, 3, 4]).unwrap());
        assert!(matches!(g.maxpool(x), Err(Error::Shape(m)) if m.contains("pad")));
    }

    #[test]
    fn constant_pool_routes_to_one_element_per_window() {
        let mut g = Graph::new();
        let x = g.param(Tensor::full(&[1, 4, 4], 2.0).unwrap());
        let y = g.maxpool(x).unwrap();
        assert_eq!(g.value(y).data(), &[2.0; 4]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        let gx = g.grad(x).unwrap();
        assert_eq!(gx.sum(), 4.0);
        assert_eq!(gx.get(&[0, 0, 0]), 1.0);
        assert_eq!(gx.get(&[0, 2, 2]), 1.0);
    }

    #[test]
    fn upsample_preserves_constants_and_scales_mass() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full(&[2, 3, 5], 1.5).unwrap());
        let y = g.upsample(x).unwrap();
        assert_eq!(g.shape(y), &[2, 6, 10]);
        assert!(g.value(y).data().iter().all(|&v| v == 1.5));
        assert_eq!(g.value(y).sum(), 4.0 * g.value(x).sum());
        let x3 = g.input(Tensor::full(&[1, 2, 2, 2], 0.5).unwrap());
        let y3 = g.upsample(x3).unwrap();
        assert_eq!(g.shape(y3), &[1, 4, 4, 4]);
        assert!(g.value(y3).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn pointwise_values() {
        let mut g = Graph::new();
        let x = g.input(t(&[3], vec![-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = g.input(t(&[1], vec![0.0]));
        let s = g.sigmoid(z);
        assert_eq!(g.value(s).data(), &[0.5]);
        let c = g.input(Tensor::zeros(&[4, 2, 2]).unwrap());
        let p = g.softmax(c).unwrap();
        assert!(g.value(p).data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn combine_shapes_and_gradients() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::ones(&[2, 4, 4]).unwrap());
        let b = g.param(Tensor::zeros(&[3, 4, 4]).unwrap());
        let c = g.concat(&[a, b]).unwrap();
        assert_eq!(g.shape(c), &[5, 4, 4]);
        let z = g.input(Tensor::zeros(&[2, 4, 4]).unwrap());
        let s = g.add(a, z).unwrap();
        assert_eq!(g.value(s), g.value(a));
        assert!(g.add(a, b).is_err());
        let a2 = g.param(Tensor::ones(&[2, 4, 4]).unwrap());
        let sum = g.add(a, a2).unwrap();
        let l = g.sum(sum);
        g.backward(l).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[1.0; 32]);
        assert_eq!(g.grad(a2).unwrap().data(), &[1.0; 32]);
    }

    #[test]
    fn bce_reference_values() {
        let mut g = Graph::<f64>::new();
        let p = g.input(Tensor::ones(&[1, 2, 2]).unwrap());
        let l = g.bce_loss(p, &Tensor::ones(&[1, 2, 2]).unwrap()).unwrap();
        assert!((g.value(l).data()[0] - (-(1.0 - BCE_EPS).ln())).abs() < 1e-15);
        let half = g.input(Tensor::full(&[1, 2, 2], 0.5).unwrap());
        let target = t(&[1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]);
        let l = g.bce_loss(half, &target).unwrap();
        assert!((g.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(g.bce_loss(half, &t(&[1, 2, 2], vec![0.0, 0.5, 1.0, 0.0])).is_err());

        let mut rng = Rng::new(4);
        let pv: Vec<f64> = (0..16).map(|_| rng.uniform(0.01, 0.99)).collect();
        let tv: Vec<f64> = (0..16).map(|_| rng.below(2) as f64).collect();
        let want = -pv
            .iter()
            .zip(&tv)
            .map(|(p, t)| t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            .sum::<f64>()
            / 16.0;
        let pn = g.input(t(&[1, 4, 4], pv));
        let l = g.bce_loss(pn, &t(&[1, 4, 4], tv)).unwrap();
        assert!((g.value(l).data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_reference_values() {
        let mut g = Graph::<f64>::new();
        let z = g.input(Tensor::zeros(&[2, 2, 2, 2]).unwrap());
        let l = g.ce_loss_multiclass(z, &Tensor::ones(&[2, 2, 2]).unwrap()).unwrap();
        assert!((g.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);

        let mut logits = vec![0.0; 3 * 8];
        let ids: Vec<f64> = (0..8).map(|i| (i % 3) as f64).collect();
        for (s, &id) in ids.iter().enumerate() {
            logits[id as usize * 8 + s] = 20.0;
        }
        let lv = g.input(t(&[3, 2, 2, 2], logits));
        let l = g.ce_loss_multiclass(lv, &t(&[2, 2, 2], ids)).unwrap();
        assert!(g.value(l).data()[0] < 1e-6);

        let mut rng = Rng::new(9);
        let lg: Vec<f64> = (0..4 * 48).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let id: Vec<f64> = (0..48).map(|_| rng.below(4) as f64).collect();
        let mut want = 0.0;
        for s in 0..48 {
            let z: f64 = (0..4).map(|c| lg[c * 48 + s].exp()).sum();
            want -= (lg[id[s] as usize * 48 + s].exp() / z).ln();
        }
        want /= 48.0;
        let lv = g.input(t(&[4, 3, 4, 4], lg));
        let l = g.ce_loss_multiclass(lv, &t(&[3, 4, 4], id)).unwrap();
        assert!((g.value(l).data()[0] - want).abs() < 1e-12);

        let bad = t(&[1, 1, 2], vec![0.0, 5.0]);
        let lv = g.input(Tensor::zeros(&[2, 1, 1, 2]).unwrap());
        let msg = g.ce_loss_multiclass(lv, &bad).unwrap_err().to_string();
        assert!(msg.contains("[0, 0, 1]"), "{msg}");
    }

    #[test]
    fn fused_logit_loss_matches_composition() {
        let mut rng = Rng::new(21);
        let z = t(&[1, 3, 3], (0..9).map(|_| rng.uniform(-4.0, 4.0)).collect());
        let target = t(&[1, 3, 3], (0..9).map(|_| rng.below(2) as f64).collect());
        let mut g = Graph::<f64>::new();
        let zv = g.input(z.clone());
        let p = g.sigmoid(zv);
        let a = g.bce_loss(p, &target).unwrap();
        let b = g.bce_with_logits(zv, &target).unwrap();
        assert!((g.value(a).data()[0] - g.value(b).data()[0]).abs() < 1e-12);

        // saturated logit still pulls toward the target
        let mut g = Graph::<f32>::new();
        let zv = g.param(Tensor::full(&[1, 1, 1], 60.0).unwrap());
        let l = g.bce_with_logits(zv, &Tensor::zeros(&[1, 1, 1]).unwrap()).unwrap();
        assert!((g.value(l).data()[0] - 60.0).abs() < 1e-4);
        g.backward(l).unwrap();
        assert!((g.grad(zv).unwrap().data()[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::ones(&[3]).unwrap());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 3]);
        assert!(matches!(g.backward(s), Err(Error::State(_))));
        g.reset();
        let x = g.param(Tensor::ones(&[3]).unwrap());
        let s = g.sum(x);
        assert!(g.backward(s).is_ok());
    }

    #[test]
    fn gradient_suite_passes() {
        for seed in [7, 11, 42] {
            for r in gradcheck_suite(seed).unwrap() {
                assert!(r.pass, "seed {seed}: {r:?}");
            }
        }
    }
}
