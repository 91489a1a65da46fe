//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every op applied to its nodes in creation order, so
//! walking the tape backwards is a valid topological order for the adjoint
//! pass. Graphs are cheap and meant to be rebuilt for every forward pass;
//! parameters live outside and enter as leaves.

use rand::Rng;

use super::kernels::{self, ConvGeom};
use super::{Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Stride and zero-padding of a 2-D convolution, as `(rows, cols)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride: (stride, stride),
            padding: (padding, padding),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize> },
    Linear { x: Var, w: Var },
    AddBias { x: Var, b: Var },
    ScaleChannels { x: Var, gate: Var },
    GlobalAvgPool(Var),
    Reshape(Var),
    Upsample { x: Var, factor: usize },
    Dropout { x: Var, mask: Vec<f64> },
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    ConvTranspose2d { x: Var, w: Var, geom: ConvGeom },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Takes ownership of a gradient, or a zero tensor of `shape` if the
    /// node did not influence the loss.
    pub fn take_or_zeros(&mut self, v: Var, shape: &[usize]) -> Tensor {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn mismatch(op: &'static str, expected: &[usize], got: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::InvalidArgument { op, msg: msg.into() }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Row-wise numerically stable softmax of a `rows × k` buffer.
fn softmax_rows(data: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (row, dst) in data.chunks(k).zip(out.chunks_mut(k)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A differentiable input (parameter or probe point).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.binary("sub", a, b, |x, y| x - y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("same node always matches its own shape")
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(out, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let ng = self.needs(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        let k = *t.shape().last().ok_or_else(|| invalid("softmax", "scalar input"))?;
        let out = Tensor::new(t.shape(), softmax_rows(t.data(), k))?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::Softmax(a), ng))
    }

    /// Mean softmax cross-entropy of `N×K` logits against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(logits);
        let &[n, k] = t.shape() else {
            return Err(invalid(
                "softmax_cross_entropy",
                format!("expected N×K logits, got {:?}", t.shape()),
            ));
        };
        if targets.len() != n {
            return Err(mismatch("softmax_cross_entropy", &[n], &[targets.len()]));
        }
        let mut loss = 0.0;
        for (row, &y) in t.data().chunks(k).zip(targets) {
            if y >= k {
                return Err(invalid(
                    "softmax_cross_entropy",
                    format!("target {y} out of range for {k} classes"),
                ));
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            ng,
        ))
    }

    /// `x · wᵀ` for `x: N×in`, `w: out×in`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var, TensorError> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (&[n, fin], &[fout, win]) = (tx.shape(), tw.shape()) else {
            return Err(invalid(
                "linear",
                format!("expected matrices, got {:?} and {:?}", tx.shape(), tw.shape()),
            ));
        };
        if fin != win {
            return Err(mismatch("linear", &[fout, fin], tw.shape()));
        }
        let mut out = vec![0.0; n * fout];
        kernels::gemm_nt(n, fin, fout, tx.data(), tw.data(), &mut out);
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(Tensor::new(&[n, fout], out)?, Op::Linear { x, w }, ng))
    }

    /// Adds a per-channel bias `b: C` to `x: N×C×…`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (self.value(x), self.value(b));
        if tx.shape().len() < 2 || tb.shape() != [tx.shape()[1]] {
            return Err(mismatch(
                "add_bias",
                &tx.shape()[1..2.min(tx.shape().len())],
                tb.shape(),
            ));
        }
        let c = tx.shape()[1];
        let inner: usize = tx.shape()[2..].iter().product();
        let mut out = tx.data().to_vec();
        for (i, chunk) in out.chunks_mut(inner).enumerate() {
            let bias = tb.data()[i % c];
            for v in chunk {
                *v += bias;
            }
        }
        let ng = self.needs(x) || self.needs(b);
        Ok(self.push(Tensor::new(tx.shape(), out)?, Op::AddBias { x, b }, ng))
    }

    /// Multiplies every channel of `x: N×C×…` by `gate: N×C`.
    pub fn scale_channels(&mut self, x: Var, gate: Var) -> Result<Var, TensorError> {
        let (tx, tg) = (self.value(x), self.value(gate));
        if tx.shape().len() < 2 || tg.shape() != &tx.shape()[..2] {
            return Err(mismatch(
                "scale_channels",
                &tx.shape()[..2.min(tx.shape().len())],
                tg.shape(),
            ));
        }
        let inner: usize = tx.shape()[2..].iter().product();
        let mut out = tx.data().to_vec();
        for (chunk, &gv) in out.chunks_mut(inner).zip(tg.data()) {
            for v in chunk {
                *v *= gv;
            }
        }
        let ng = self.needs(x) || self.needs(gate);
        Ok(self.push(Tensor::new(tx.shape(), out)?, Op::ScaleChannels { x, gate }, ng))
    }

    /// Averages `x: N×C×…` over every trailing axis, giving `N×C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, TensorError> {
        let tx = self.value(x);
        if tx.shape().len() < 3 {
            return Err(invalid(
                "global_avg_pool",
                format!("expected N×C×…, got {:?}", tx.shape()),
            ));
        }
        let (n, c) = (tx.shape()[0], tx.shape()[1]);
        let inner: usize = tx.shape()[2..].iter().product();
        let out = tx
            .data()
            .chunks(inner)
            .map(|ch| ch.iter().sum::<f64>() / inner as f64)
            .collect();
        let ng = self.needs(x);
        Ok(self.push(Tensor::new(&[n, c], out)?, Op::GlobalAvgPool(x), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(x).clone().reshape(shape)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    /// Nearest-neighbour upsampling of the two trailing axes of `N×C×H×W`.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let &[n, c, h, w] = tx.shape() else {
            return Err(invalid(
                "upsample_nearest",
                format!("expected N×C×H×W, got {:?}", tx.shape()),
            ));
        };
        if factor == 0 {
            return Err(invalid("upsample_nearest", "factor must be ≥ 1"));
        }
        let (oh, ow) = (h * factor, w * factor);
        let mut out = vec![0.0; n * c * oh * ow];
        for (src, dst) in tx.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
            for y in 0..oh {
                for xx in 0..ow {
                    dst[y * ow + xx] = src[(y / factor) * w + xx / factor];
                }
            }
        }
        let ng = self.needs(x);
        Ok(self.push(Tensor::new(&[n, c, oh, ow], out)?, Op::Upsample { x, factor }, ng))
    }

    /// Inverted dropout. Identity when `rate == 0`; the keep mask is drawn
    /// from `rng` and scaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(invalid("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.dropout_with_mask(x, mask)
    }

    /// Dropout with an explicit multiplicative mask.
    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var, TensorError> {
        let tx = self.value(x);
        if mask.len() != tx.len() {
            return Err(mismatch("dropout", &[tx.len()], &[mask.len()]));
        }
        let out = tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(tx.shape(), out)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::Dropout { x, mask }, ng))
    }

    fn conv_geom(
        op: &'static str,
        xs: &[usize],
        ws: &[usize],
        spec: Conv2dSpec,
        transpose: bool,
    ) -> Result<ConvGeom, TensorError> {
        let (&[_, c, h, w], &[wo, wi, kh, kw]) = (xs, ws) else {
            return Err(invalid(
                op,
                format!("expected 4-D input and kernel, got {xs:?} and {ws:?}"),
            ));
        };
        if spec.stride.0 == 0 || spec.stride.1 == 0 {
            return Err(invalid(op, "stride must be ≥ 1"));
        }
        if !transpose {
            if c != wi {
                return Err(mismatch(op, &[wo, c, kh, kw], ws));
            }
            if kh > h + 2 * spec.padding.0 || kw > w + 2 * spec.padding.1 {
                return Err(invalid(
                    op,
                    format!("kernel {kh}×{kw} larger than padded input {h}×{w}"),
                ));
            }
            Ok(ConvGeom {
                channels: c,
                height: h,
                width: w,
                kh,
                kw,
                stride: spec.stride,
                padding: spec.padding,
            })
        } else {
            if c != wo {
                return Err(mismatch(op, &[c, wi, kh, kw], ws));
            }
            let oh = ((h - 1) * spec.stride.0 + kh).checked_sub(2 * spec.padding.0);
            let ow = ((w - 1) * spec.stride.1 + kw).checked_sub(2 * spec.padding.1);
            match (oh, ow) {
                (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok(ConvGeom {
                    channels: wi,
                    height: oh,
                    width: ow,
                    kh,
                    kw,
                    stride: spec.stride,
                    padding: spec.padding,
                }),
                _ => Err(invalid(op, "padding leaves an empty output")),
            }
        }
    }

    /// Cross-correlation of `x: N×C×H×W` with `w: O×C×kh×kw` (no bias).
    pub fn conv2d(&mut self, x: Var, w: Var, spec: Conv2dSpec) -> Result<Var, TensorError> {
        let (tx, tw) = (self.value(x), self.value(w));
        let geom = Self::conv_geom("conv2d", tx.shape(), tw.shape(), spec, false)?;
        let (n, o) = (tx.shape()[0], tw.shape()[0]);
        let out = kernels::conv2d_forward(tx.data(), n, tw.data(), o, &geom);
        let out = Tensor::new(&[n, o, geom.out_height(), geom.out_width()], out)?;
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(out, Op::Conv2d { x, w, geom }, ng))
    }

    /// Transposed convolution (adjoint of [`Graph::conv2d`]) of
    /// `x: N×C×H×W` with `w: C×O×kh×kw`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, spec: Conv2dSpec) -> Result<Var, TensorError> {
        let (tx, tw) = (self.value(x), self.value(w));
        let geom = Self::conv_geom("conv_transpose2d", tx.shape(), tw.shape(), spec, true)?;
        let (n, c) = (tx.shape()[0], tx.shape()[1]);
        let (out, _) = kernels::conv2d_backward(&[], n, tw.data(), c, &geom, tx.data(), true, false);
        let out = Tensor::new(&[n, geom.channels, geom.height, geom.width], out.expect("requested"))?;
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(out, Op::ConvTranspose2d { x, w, geom }, ng))
    }

    /// 1-D cross-correlation of `x: N×C′×L′` with `w: C×C′×k`, no bias.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var, TensorError> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (&[n, c, l], &[o, wc, k]) = (xs.as_slice(), ws.as_slice()) else {
            return Err(invalid(
                "conv1d",
                format!("expected N×C×L input and C×C′×k kernel, got {xs:?} and {ws:?}"),
            ));
        };
        if wc != c {
            return Err(mismatch("conv1d", &[o, c, k], &ws));
        }
        let x4 = self.reshape(x, &[n, c, 1, l])?;
        let w4 = self.reshape(w, &[o, c, 1, k])?;
        let spec = Conv2dSpec {
            stride: (1, stride),
            padding: (0, padding),
        };
        let y = self.conv2d(x4, w4, spec)?;
        let ol = self.shape(y)[3];
        self.reshape(y, &[n, o, ol])
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        let g = gout.data();
        let with_data = |shape: &[usize], data: Vec<f64>| Tensor::new(shape, data).expect("gradient shape");
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, gout.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, gout.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = g.iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, with_data(ta.shape(), d));
                }
                if self.needs(*b) {
                    let d = g.iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, with_data(tb.shape(), d));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, gout.map(|v| v * s)),
            Op::Sum(a) => {
                let ta = self.value(*a);
                self.accumulate(grads, *a, Tensor::full(ta.shape(), g[0]));
            }
            Op::Relu(a) => {
                let ta = self.value(*a);
                let d = g
                    .iter()
                    .zip(ta.data())
                    .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, with_data(ta.shape(), d));
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let d = g.iter().zip(y).map(|(gv, s)| gv * s * (1.0 - s)).collect();
                self.accumulate(grads, *a, with_data(node.value.shape(), d));
            }
            Op::Softmax(a) => {
                let k = *node.value.shape().last().expect("softmax is at least 1-D");
                let mut d = vec![0.0; g.len()];
                for ((grow, yrow), drow) in g.chunks(k).zip(node.value.data().chunks(k)).zip(d.chunks_mut(k)) {
                    let inner: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((dv, gv), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *dv = yv * (gv - inner);
                    }
                }
                self.accumulate(grads, *a, with_data(node.value.shape(), d));
            }
            Op::SoftmaxCrossEntropy { logits, targets } => {
                let tl = self.value(*logits);
                let k = tl.shape()[1];
                let n = targets.len() as f64;
                let mut d = softmax_rows(tl.data(), k);
                for (row, &y) in d.chunks_mut(k).zip(targets) {
                    row[y] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= g[0] / n;
                    }
                }
                self.accumulate(grads, *logits, with_data(tl.shape(), d));
            }
            Op::Linear { x, w } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (n, fin, fout) = (tx.shape()[0], tx.shape()[1], tw.shape()[0]);
                if self.needs(*x) {
                    let mut d = vec![0.0; n * fin];
                    kernels::gemm_nn(n, fout, fin, g, tw.data(), &mut d);
                    self.accumulate(grads, *x, with_data(tx.shape(), d));
                }
                if self.needs(*w) {
                    let mut d = vec![0.0; fout * fin];
                    kernels::gemm_tn(fout, n, fin, g, tx.data(), &mut d);
                    self.accumulate(grads, *w, with_data(tw.shape(), d));
                }
            }
            Op::AddBias { x, b } => {
                self.accumulate(grads, *x, gout.clone());
                if self.needs(*b) {
                    let c = self.value(*b).len();
                    let inner: usize = gout.shape()[2..].iter().product();
                    let mut d = vec![0.0; c];
                    for (i, chunk) in g.chunks(inner).enumerate() {
                        d[i % c] += chunk.iter().sum::<f64>();
                    }
                    self.accumulate(grads, *b, with_data(&[c], d));
                }
            }
            Op::ScaleChannels { x, gate } => {
                let (tx, tg) = (self.value(*x), self.value(*gate));
                let inner: usize = tx.shape()[2..].iter().product();
                if self.needs(*x) {
                    let mut d = g.to_vec();
                    for (chunk, &gv) in d.chunks_mut(inner).zip(tg.data()) {
                        for v in chunk {
                            *v *= gv;
                        }
                    }
                    self.accumulate(grads, *x, with_data(tx.shape(), d));
                }
                if self.needs(*gate) {
                    let d = g
                        .chunks(inner)
                        .zip(tx.data().chunks(inner))
                        .map(|(gc, xc)| kernels::dot(gc, xc))
                        .collect();
                    self.accumulate(grads, *gate, with_data(tg.shape(), d));
                }
            }
            Op::GlobalAvgPool(x) => {
                let tx = self.value(*x);
                let inner: usize = tx.shape()[2..].iter().product();
                let mut d = vec![0.0; tx.len()];
                for (chunk, &gv) in d.chunks_mut(inner).zip(g) {
                    chunk.fill(gv / inner as f64);
                }
                self.accumulate(grads, *x, with_data(tx.shape(), d));
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                self.accumulate(grads, *x, gout.clone().reshape(&shape).expect("same element count"));
            }
            Op::Upsample { x, factor } => {
                let tx = self.value(*x);
                let (h, w) = (tx.shape()[2], tx.shape()[3]);
                let (oh, ow) = (h * factor, w * factor);
                let mut d = vec![0.0; tx.len()];
                for (src, dst) in g.chunks(oh * ow).zip(d.chunks_mut(h * w)) {
                    for y in 0..oh {
                        for xx in 0..ow {
                            dst[(y / factor) * w + xx / factor] += src[y * ow + xx];
                        }
                    }
                }
                self.accumulate(grads, *x, with_data(tx.shape(), d));
            }
            Op::Dropout { x, mask } => {
                let d = g.iter().zip(mask).map(|(a, b)| a * b).collect();
                self.accumulate(grads, *x, with_data(node.value.shape(), d));
            }
            Op::Conv2d { x, w, geom } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (gi, gw) = kernels::conv2d_backward(
                    tx.data(),
                    tx.shape()[0],
                    tw.data(),
                    tw.shape()[0],
                    geom,
                    g,
                    self.needs(*x),
                    self.needs(*w),
                );
                if let Some(gi) = gi {
                    self.accumulate(grads, *x, with_data(tx.shape(), gi));
                }
                if let Some(gw) = gw {
                    self.accumulate(grads, *w, with_data(tw.shape(), gw));
                }
            }
            Op::ConvTranspose2d { x, w, geom } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (n, c) = (tx.shape()[0], tx.shape()[1]);
                if self.needs(*x) {
                    let d = kernels::conv2d_forward(g, n, tw.data(), c, geom);
                    self.accumulate(grads, *x, with_data(tx.shape(), d));
                }
                if self.needs(*w) {
                    let (_, gw) = kernels::conv2d_backward(g, n, tw.data(), c, geom, tx.data(), false, true);
                    self.accumulate(grads, *w, with_data(tw.shape(), gw.expect("requested")));
                }
            }
        }
    }
}
