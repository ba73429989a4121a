//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] is a Wengert list: every op appends a node whose inputs
//! already exist, so insertion order is a topological order and the
//! backward pass simply walks the list in reverse. Node values are never
//! mutated after creation.

mod conv;
pub mod gradcheck;

pub use conv::ConvGeom;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise single-input operations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp<T> {
    Neg,
    /// Natural log; inputs must be strictly positive.
    Log,
    Exp,
    PowConst(T),
    Clamp { lo: T, hi: T },
    Relu,
    LeakyRelu(T),
    /// `ln(1 + e^x)`, evaluated stably.
    Softplus,
    Scale(T),
    Offset(T),
}

/// Pointwise two-input operations. Operands must have equal shapes, or one
/// of them must hold a single element.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Unary(UnaryOp<T>, Var),
    Binary(BinaryOp, Var, Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Conv { input: Var, kernel: Var, geom: ConvGeom },
    ChannelBias { input: Var, bias: Var },
    GlobalAvgPool(Var),
    BroadcastSpatial { input: Var, plane: usize },
    SoftmaxChannels(Var),
    Upsample2x(Var),
    Gram(Var),
    MeanBatch(Var),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Append-only computation record.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf node that receives a gradient.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf node excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Copy of `v` cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of `v`; zeros when nothing flowed into it.
    pub fn grad(&self, v: Var) -> Tensor<T> {
        let node = &self.nodes[v.0];
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(node.value.shape().to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    // ---- pointwise -------------------------------------------------------

    pub fn unary(&mut self, op: UnaryOp<T>, a: Var) -> Result<Var> {
        let x = self.value(a);
        if let UnaryOp::Log = op {
            if let Some(bad) = x.data().iter().find(|v| !(**v > T::zero())) {
                return Err(Error::DomainError {
                    op: "log",
                    detail: format!("nonpositive input {bad}; clamp probabilities first"),
                });
            }
        }
        let value = x.map(|v| unary_forward(op, v));
        Ok(self.push(value, Op::Unary(op, a), &[a]))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (xa, xb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(xa.shape(), xb.shape()).ok_or_else(|| {
            Error::shape("elementwise", format!("{:?} vs {:?}", xa.shape(), xb.shape()))
        })?;
        let n: usize = shape.iter().product();
        let (da, db) = (xa.data(), xb.data());
        let data = (0..n)
            .map(|i| {
                let (u, v) = (bget(da, i), bget(db, i));
                match op {
                    BinaryOp::Add => u + v,
                    BinaryOp::Sub => u - v,
                    BinaryOp::Mul => u * v,
                    BinaryOp::Div => u / v,
                }
            })
            .collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Binary(op, a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn pow_const(&mut self, a: Var, p: T) -> Result<Var> {
        self.unary(UnaryOp::PowConst(p), a)
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Result<Var> {
        self.unary(UnaryOp::Clamp { lo, hi }, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        self.unary(UnaryOp::LeakyRelu(slope), a)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Softplus, a)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        self.unary(UnaryOp::Scale(s), a)
    }

    pub fn offset(&mut self, a: Var, s: T) -> Result<Var> {
        self.unary(UnaryOp::Offset(s), a)
    }

    // ---- reductions and reshapes ----------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().fold(T::zero(), |acc, &v| acc + v);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), &[a]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let s = x.data().iter().fold(T::zero(), |acc, &v| acc + v);
        let m = s / T::from_usize(x.numel()).unwrap();
        Ok(self.push(Tensor::scalar(m), Op::Mean(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Mean over the leading (batch) axis: `[N, ...] -> [...]`.
    pub fn mean_batch(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let shape = x.shape();
        let n = shape[0];
        let rest: Vec<usize> = if shape.len() == 1 { vec![1] } else { shape[1..].to_vec() };
        let inner: usize = rest.iter().product();
        let inv = T::one() / T::from_usize(n).unwrap();
        let mut out = vec![T::zero(); inner];
        for b in 0..n {
            for (o, &v) in out.iter_mut().zip(&x.data()[b * inner..(b + 1) * inner]) {
                *o = *o + v;
            }
        }
        out.iter_mut().for_each(|o| *o = *o * inv);
        let value = Tensor::new(rest, out)?;
        Ok(self.push(value, Op::MeanBatch(a), &[a]))
    }

    // ---- layers ----------------------------------------------------------

    /// Cross-correlation of `[N, Cin, H, W]` with `[Cout, Cin, k, k]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(input), self.shape(kernel));
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::shape("conv2d", format!("input {xs:?}, kernel {ks:?}")));
        }
        let geom = make_geom("conv2d", [xs[0], xs[1], xs[2], xs[3]], [ks[0], ks[1], ks[2], ks[3]], stride, pad, pad)?;
        let out = conv::forward(&geom, self.value(input).data(), self.value(kernel).data());
        let value = Tensor::new(vec![geom.n, geom.cout, geom.ho, geom.wo], out)?;
        Ok(self.push(value, Op::Conv { input, kernel, geom }, &[input, kernel]))
    }

    /// Unpadded cross-correlation of `[N, Cin, L]` with `[Cout, Cin, k]`.
    pub fn conv1d(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(input), self.shape(kernel));
        if xs.len() != 3 || ks.len() != 3 {
            return Err(Error::shape("conv1d", format!("input {xs:?}, kernel {ks:?}")));
        }
        let geom = make_geom("conv1d", [xs[0], xs[1], 1, xs[2]], [ks[0], ks[1], 1, ks[2]], stride, 0, 0)?;
        let out = conv::forward(&geom, self.value(input).data(), self.value(kernel).data());
        let value = Tensor::new(vec![geom.n, geom.cout, geom.wo], out)?;
        Ok(self.push(value, Op::Conv { input, kernel, geom }, &[input, kernel]))
    }

    /// Adds `bias[c]` to every element of channel `c` (axis 1).
    pub fn channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(input), self.value(bias));
        let s = x.shape();
        if s.len() < 2 || b.numel() != s[1] {
            return Err(Error::shape("channel_bias", format!("input {s:?}, bias {:?}", b.shape())));
        }
        let (c, inner) = (s[1], s[2..].iter().product::<usize>());
        let mut data = x.data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v = *v + b.data()[(i / inner) % c];
        }
        let value = Tensor::new(s.to_vec(), data)?;
        Ok(self.push(value, Op::ChannelBias { input, bias }, &[input, bias]))
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_average_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::shape("global_average_pool", format!("{s:?}")));
        }
        let plane = s[2] * s[3];
        let inv = T::one() / T::from_usize(plane).unwrap();
        let data = x
            .data()
            .chunks(plane)
            .map(|p| p.iter().fold(T::zero(), |a, &v| a + v) * inv)
            .collect();
        let value = Tensor::new(vec![s[0], s[1]], data)?;
        Ok(self.push(value, Op::GlobalAvgPool(input), &[input]))
    }

    /// `[N, C] -> [N, C, H, W]` by repeating each entry over the plane.
    pub fn broadcast_spatial(&mut self, input: Var, h: usize, w: usize) -> Result<Var> {
        let x = self.value(input);
        let s = x.shape();
        if s.len() != 2 {
            return Err(Error::shape("broadcast_spatial", format!("{s:?}")));
        }
        let plane = h * w;
        let data = x.data().iter().flat_map(|&v| std::iter::repeat_n(v, plane)).collect();
        let value = Tensor::new(vec![s[0], s[1], h, w], data)?;
        Ok(self.push(value, Op::BroadcastSpatial { input, plane }, &[input]))
    }

    /// Per-pixel softmax over axis 1 of `[N, C, H, W]`.
    pub fn softmax_channels(&mut self, logits: Var) -> Result<Var> {
        let x = self.value(logits);
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::shape("softmax_channels", format!("{s:?}")));
        }
        let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
        let src = x.data();
        let mut out = vec![T::zero(); src.len()];
        for b in 0..n {
            let base = b * c * plane;
            for p in 0..plane {
                let mut m = T::neg_infinity();
                for k in 0..c {
                    m = m.max(src[base + k * plane + p]);
                }
                let mut z = T::zero();
                for k in 0..c {
                    let e = (src[base + k * plane + p] - m).exp();
                    out[base + k * plane + p] = e;
                    z = z + e;
                }
                for k in 0..c {
                    let o = &mut out[base + k * plane + p];
                    *o = *o / z;
                }
            }
        }
        let value = Tensor::new(s.to_vec(), out)?;
        Ok(self.push(value, Op::SoftmaxChannels(logits), &[logits]))
    }

    /// Nearest-neighbour 2x upsampling of `[N, C, H, W]`.
    pub fn upsample2x(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::shape("upsample2x", format!("{s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        let mut out = Vec::with_capacity(x.numel() * 4);
        for plane in x.data().chunks(h * w) {
            for y in 0..2 * h {
                let row = &plane[(y / 2) * w..(y / 2 + 1) * w];
                for xx in 0..2 * w {
                    out.push(row[xx / 2]);
                }
            }
        }
        let value = Tensor::new(vec![s[0], s[1], 2 * h, 2 * w], out)?;
        Ok(self.push(value, Op::Upsample2x(input), &[input]))
    }

    /// `[N, C, H, W] -> [N, C, C]` channel Gram matrices normalized by `H*W`.
    pub fn gram(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::shape("gram", format!("{s:?}")));
        }
        let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
        let inv = T::one() / T::from_usize(plane).unwrap();
        let mut out = vec![T::zero(); n * c * c];
        for b in 0..n {
            let f = &x.data()[b * c * plane..(b + 1) * c * plane];
            T::gemm(
                c,
                plane,
                c,
                inv,
                crate::scalar::MatRef::row_major(f, plane),
                crate::scalar::MatRef::transposed(f, plane),
                T::zero(),
                &mut out[b * c * c..(b + 1) * c * c],
            );
        }
        let value = Tensor::new(vec![n, c, c], out)?;
        Ok(self.push(value, Op::Gram(input), &[input]))
    }

    // ---- backward --------------------------------------------------------

    /// Accumulates `d root / d node` into every node that requires a gradient.
    ///
    /// Gradients add onto whatever is already stored; call
    /// [`Graph::zero_grad`] between independent passes.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::shape("backward", format!("root must be scalar, got {:?}", self.shape(root))));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        // Fresh per-pass buffers, so repeated calls accumulate exactly the
        // sum of the individual passes.
        let mut pending: Vec<Option<Vec<T>>> = vec![None; root.0 + 1];
        pending[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(gout) = pending[i].take() else { continue };
            for (v, g) in self.node_backward(i, &gout) {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match pending[v.0].as_mut() {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b),
                    None => pending[v.0] = Some(g),
                }
            }
            let node = &mut self.nodes[i];
            match node.grad.as_mut() {
                Some(acc) => acc.iter_mut().zip(gout).for_each(|(a, b)| *a = *a + b),
                None => node.grad = Some(gout),
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn node_backward(&self, i: usize, gout: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        match node.op {
            Op::Leaf => Vec::new(),
            Op::Unary(op, a) => {
                let x = self.value(a).data();
                let y = node.value.data();
                let g = (0..x.len()).map(|k| gout[k] * unary_derivative(op, x[k], y[k])).collect();
                vec![(a, g)]
            }
            Op::Binary(op, a, b) => {
                let (xa, xb) = (self.value(a).data(), self.value(b).data());
                let n = gout.len();
                let mut out = Vec::new();
                if self.wants(a) {
                    let mut ga = vec![T::zero(); xa.len()];
                    for k in 0..n {
                        let d = match op {
                            BinaryOp::Add | BinaryOp::Sub => gout[k],
                            BinaryOp::Mul => gout[k] * bget(xb, k),
                            BinaryOp::Div => gout[k] / bget(xb, k),
                        };
                        let slot = if xa.len() == 1 { 0 } else { k };
                        ga[slot] = ga[slot] + d;
                    }
                    out.push((a, ga));
                }
                if self.wants(b) {
                    let mut gb = vec![T::zero(); xb.len()];
                    for k in 0..n {
                        let d = match op {
                            BinaryOp::Add => gout[k],
                            BinaryOp::Sub => -gout[k],
                            BinaryOp::Mul => gout[k] * bget(xa, k),
                            BinaryOp::Div => {
                                let v = bget(xb, k);
                                -gout[k] * bget(xa, k) / (v * v)
                            }
                        };
                        let slot = if xb.len() == 1 { 0 } else { k };
                        gb[slot] = gb[slot] + d;
                    }
                    out.push((b, gb));
                }
                out
            }
            Op::Sum(a) => vec![(a, vec![gout[0]; self.value(a).numel()])],
            Op::Mean(a) => {
                let n = self.value(a).numel();
                vec![(a, vec![gout[0] / T::from_usize(n).unwrap(); n])]
            }
            Op::Reshape(a) => vec![(a, gout.to_vec())],
            Op::MeanBatch(a) => {
                let x = self.value(a);
                let n = x.shape()[0];
                let inv = T::one() / T::from_usize(n).unwrap();
                let g = (0..x.numel()).map(|k| gout[k % gout.len()] * inv).collect();
                vec![(a, g)]
            }
            Op::Conv { input, kernel, ref geom } => {
                let (want_x, want_k) = (self.wants(input), self.wants(kernel));
                let (dx, dk) = conv::backward(
                    geom,
                    self.value(input).data(),
                    self.value(kernel).data(),
                    gout,
                    want_x,
                    want_k,
                );
                let mut out = Vec::new();
                if let Some(dx) = dx {
                    out.push((input, dx));
                }
                if let Some(dk) = dk {
                    out.push((kernel, dk));
                }
                out
            }
            Op::ChannelBias { input, bias } => {
                let s = self.shape(input);
                let (c, inner) = (s[1], s[2..].iter().product::<usize>());
                let mut out = Vec::new();
                if self.wants(input) {
                    out.push((input, gout.to_vec()));
                }
                if self.wants(bias) {
                    let mut gb = vec![T::zero(); c];
                    for (k, &g) in gout.iter().enumerate() {
                        let ch = (k / inner) % c;
                        gb[ch] = gb[ch] + g;
                    }
                    out.push((bias, gb));
                }
                out
            }
            Op::GlobalAvgPool(a) => {
                let s = self.shape(a);
                let plane = s[2] * s[3];
                let inv = T::one() / T::from_usize(plane).unwrap();
                let g = (0..self.value(a).numel()).map(|k| gout[k / plane] * inv).collect();
                vec![(a, g)]
            }
            Op::BroadcastSpatial { input, plane } => {
                let g = gout.chunks(plane).map(|p| p.iter().fold(T::zero(), |a, &v| a + v)).collect();
                vec![(input, g)]
            }
            Op::SoftmaxChannels(a) => {
                let s = node.value.shape();
                let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
                let y = node.value.data();
                let mut g = vec![T::zero(); y.len()];
                for b in 0..n {
                    let base = b * c * plane;
                    for p in 0..plane {
                        let mut dot = T::zero();
                        for k in 0..c {
                            let idx = base + k * plane + p;
                            dot = dot + y[idx] * gout[idx];
                        }
                        for k in 0..c {
                            let idx = base + k * plane + p;
                            g[idx] = y[idx] * (gout[idx] - dot);
                        }
                    }
                }
                vec![(a, g)]
            }
            Op::Upsample2x(a) => {
                let s = self.shape(a);
                let (h, w) = (s[2], s[3]);
                let mut g = vec![T::zero(); self.value(a).numel()];
                for (pi, plane) in gout.chunks(4 * h * w).enumerate() {
                    let dst = &mut g[pi * h * w..(pi + 1) * h * w];
                    for y in 0..2 * h {
                        for x in 0..2 * w {
                            let d = &mut dst[(y / 2) * w + x / 2];
                            *d = *d + plane[y * 2 * w + x];
                        }
                    }
                }
                vec![(a, g)]
            }
            Op::Gram(a) => {
                let s = self.shape(a);
                let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
                let x = self.value(a).data();
                let inv = T::one() / T::from_usize(plane).unwrap();
                let mut g = vec![T::zero(); x.len()];
                for b in 0..n {
                    let go = &gout[b * c * c..(b + 1) * c * c];
                    let sym: Vec<T> = (0..c * c).map(|k| go[k] + go[(k % c) * c + k / c]).collect();
                    T::gemm(
                        c,
                        c,
                        plane,
                        inv,
                        crate::scalar::MatRef::row_major(&sym, c),
                        crate::scalar::MatRef::row_major(&x[b * c * plane..(b + 1) * c * plane], plane),
                        T::zero(),
                        &mut g[b * c * plane..(b + 1) * c * plane],
                    );
                }
                vec![(a, g)]
            }
        }
    }
}

fn make_geom(
    op: &'static str,
    x: [usize; 4],
    k: [usize; 4],
    stride: usize,
    pad_h: usize,
    pad_w: usize,
) -> Result<ConvGeom> {
    let [n, cin, h, w] = x;
    let [cout, kcin, kh, kw] = k;
    if kcin != cin {
        return Err(Error::shape(op, format!("input has {cin} channels, kernel expects {kcin}")));
    }
    if stride == 0 {
        return Err(Error::shape(op, "stride must be at least 1"));
    }
    if kh > h + 2 * pad_h || kw > w + 2 * pad_w {
        return Err(Error::shape(op, format!("kernel {kh}x{kw} larger than padded input {h}x{w}")));
    }
    Ok(ConvGeom {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        stride,
        pad_h,
        pad_w,
        ho: (h + 2 * pad_h - kh) / stride + 1,
        wo: (w + 2 * pad_w - kw) / stride + 1,
    })
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let (na, nb) = (a.iter().product::<usize>(), b.iter().product::<usize>());
    if a == b || nb == 1 {
        Some(a.to_vec())
    } else if na == 1 {
        Some(b.to_vec())
    } else {
        None
    }
}

#[inline]
fn bget<T: Copy>(v: &[T], i: usize) -> T {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

fn unary_forward<T: Scalar>(op: UnaryOp<T>, x: T) -> T {
    match op {
        UnaryOp::Neg => -x,
        UnaryOp::Log => x.ln(),
        UnaryOp::Exp => x.exp(),
        UnaryOp::PowConst(p) => x.powf(p),
        UnaryOp::Clamp { lo, hi } => x.max(lo).min(hi),
        UnaryOp::Relu => x.max(T::zero()),
        UnaryOp::LeakyRelu(s) => {
            if x > T::zero() {
                x
            } else {
                x * s
            }
        }
        UnaryOp::Softplus => x.max(T::zero()) + (-x.abs()).exp().ln_1p(),
        UnaryOp::Scale(s) => x * s,
        UnaryOp::Offset(s) => x + s,
    }
}

fn unary_derivative<T: Scalar>(op: UnaryOp<T>, x: T, y: T) -> T {
    match op {
        UnaryOp::Neg => -T::one(),
        UnaryOp::Log => T::one() / x,
        UnaryOp::Exp => y,
        UnaryOp::PowConst(p) => p * x.powf(p - T::one()),
        UnaryOp::Clamp { lo, hi } => {
            if x >= lo && x <= hi {
                T::one()
            } else {
                T::zero()
            }
        }
        UnaryOp::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        UnaryOp::LeakyRelu(s) => {
            if x > T::zero() {
                T::one()
            } else {
                s
            }
        }
        UnaryOp::Softplus => sigmoid(x),
        UnaryOp::Scale(s) => s,
        UnaryOp::Offset(_) => T::one(),
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
