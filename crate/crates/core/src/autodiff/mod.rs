//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only tape: every operation pushes a node that
//! stores its forward value and the handles of its inputs, so records are
//! always in topological order. [`Graph::backward`] walks the tape in
//! reverse and accumulates adjoints. A graph is built per forward pass and
//! dropped afterwards.
//!
//! ```
//! use pipnet_core::autodiff::Graph;
//! use pipnet_core::tensor::Tensor;
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).data()[0], 6.0);
//! ```

pub mod gradcheck;
pub mod kernels;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_mismatch, Error, Result};
use crate::tensor::{strides, Real, Tensor};
use kernels::{ConvGeom, PoolGeom};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    /// Softmax over the last axis.
    Softmax,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, T),
    Act(Var, Activation),
    Concat(Vec<Var>, usize),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Narrow { x: Var, axis: usize, start: usize },
    Conv3d(Var, Var, ConvGeom),
    ChannelBias(Var, Var),
    RowBias(Var, Var),
    MaxPool(Var, Vec<usize>),
    AvgPool(Var, PoolGeom),
    MulConst(Var, Vec<T>),
    SumAll(Var),
    Bce { p: Var, target: T },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// The tape.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    dims: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to `v`; zeros when `v` did not influence the output.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => Tensor::new(&self.dims[v.0], g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&self.dims[v.0]),
        }
    }

    pub fn is_connected(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

/// Lower clamp applied to probabilities inside the cross-entropy node.
pub const PROB_EPS: f64 = 1e-7;

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ad, bd) = (self.dims(a), self.dims(b));
        if ad.len() != 2 || bd.len() != 2 || ad[1] != bd[0] {
            return Err(dim_mismatch("matmul", ad, bd));
        }
        let (r, k, c) = (ad[0], ad[1], bd[1]);
        let mut out = vec![T::zero(); r * c];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, r, k, c);
        let t = Tensor::new(&[r, c], out)?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    fn same_dims(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(dim_mismatch(op, self.dims(a), self.dims(b)));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.dims(), data).expect("same dims")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("add", a, b)?;
        let t = self.zip_with(a, b, |p, q| p + q);
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("sub", a, b)?;
        let t = self.zip_with(a, b, |p, q| p - q);
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("mul", a, b)?;
        let t = self.zip_with(a, b, |p, q| p * q);
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    /// `scale * x + shift`
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let t = self.value(x).map(|v| scale * v + shift);
        self.push(t, Op::Affine(x, scale), &[x])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.affine(x, s, T::zero())
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -T::one(), T::one())
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let v = self.value(x);
        let t = match kind {
            Activation::Sigmoid => v.map(sigmoid),
            Activation::Tanh => v.map(|a| a.tanh()),
            Activation::Softmax => {
                let last = *v.dims().last().unwrap();
                let mut data = v.data().to_vec();
                for row in data.chunks_mut(last) {
                    softmax_in_place(row);
                }
                Tensor::new(v.dims(), data).expect("same dims")
            }
        };
        self.push(t, Op::Act(x, kind), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Softmax)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| dim_mismatch("concat", &[], &[]))?;
        let base = self.dims(*first).to_vec();
        if axis >= base.len() {
            return Err(dim_mismatch("concat", &base, &[axis]));
        }
        let mut total = 0;
        for &x in xs {
            let d = self.dims(x);
            let compatible =
                d.len() == base.len() && d.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(dim_mismatch("concat", &base, d));
            }
            total += d[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let n = self.dims(x)[axis] * inner;
                data.extend_from_slice(&self.value(x).data()[o * n..(o + 1) * n]);
            }
        }
        let mut dims = base;
        dims[axis] = total;
        let t = Tensor::new(&dims, data)?;
        Ok(self.push(t, Op::Concat(xs.to_vec(), axis), xs))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(dims)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let d = self.dims(x).to_vec();
        let mut seen = vec![false; d.len()];
        if perm.len() != d.len()
            || perm
                .iter()
                .any(|&p| p >= d.len() || core::mem::replace(&mut seen[p], true))
        {
            return Err(dim_mismatch("permute", &d, perm));
        }
        let t = permute_tensor(self.value(x), perm);
        Ok(self.push(t, Op::Permute(x, perm.to_vec()), &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.dims(x).len() != 2 {
            return Err(dim_mismatch("transpose", self.dims(x), &[2]));
        }
        self.permute(x, &[1, 0])
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let d = self.dims(x).to_vec();
        if axis >= d.len() || len == 0 || start + len > d[axis] {
            return Err(dim_mismatch("narrow", &d, &[axis, start, len]));
        }
        let outer: usize = d[..axis].iter().product();
        let inner: usize = d[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * d[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut dims = d;
        dims[axis] = len;
        let t = Tensor::new(&dims, data)?;
        Ok(self.push(t, Op::Narrow { x, axis, start }, &[x]))
    }

    /// Row `i` of a 2-D tensor as a `[1, n]` row vector.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        self.narrow(x, 0, i, 1)
    }

    /// Cross-correlation of `x: [C_in, D, H, W]` with `kernel: [C_out, C_in, kd, kh, kw]`.
    pub fn conv3d(&mut self, x: Var, kernel: Var, stride: [usize; 3], pad: [usize; 3]) -> Result<Var> {
        let (xd, kd) = (self.dims(x), self.dims(kernel));
        if xd.len() != 4 || kd.len() != 5 || xd[0] != kd[1] {
            return Err(dim_mismatch("conv3d", xd, kd));
        }
        let geom = ConvGeom::new(kd[1], kd[0], [xd[1], xd[2], xd[3]], [kd[2], kd[3], kd[4]], stride, pad)
            .ok_or_else(|| dim_mismatch("conv3d", xd, kd))?;
        let out = kernels::conv3d_forward(&geom, self.value(x).data(), self.value(kernel).data());
        let [a, b, c] = geom.output;
        let t = Tensor::new(&[geom.c_out, a, b, c], out)?;
        Ok(self.push(t, Op::Conv3d(x, kernel, geom), &[x, kernel]))
    }

    /// Adds `bias[c]` to every element of channel `c` of `x: [C, ...]`.
    pub fn channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xd, bd) = (self.dims(x).to_vec(), self.dims(bias).to_vec());
        if bd.iter().product::<usize>() != xd[0] {
            return Err(dim_mismatch("channel_bias", &xd, &bd));
        }
        let inner = self.value(x).len() / xd[0];
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for (c, chunk) in data.chunks_mut(inner).enumerate() {
            for v in chunk {
                *v += b[c];
            }
        }
        let t = Tensor::new(&xd, data)?;
        Ok(self.push(t, Op::ChannelBias(x, bias), &[x, bias]))
    }

    /// Adds `bias: [C]` (or `[1, C]`) to every row of `x: [..., C]`.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xd, bd) = (self.dims(x).to_vec(), self.dims(bias).to_vec());
        let c = *xd.last().unwrap();
        if bd.iter().product::<usize>() != c {
            return Err(dim_mismatch("bias_add", &xd, &bd));
        }
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(c) {
            add_into(row, &b);
        }
        let t = Tensor::new(&xd, data)?;
        Ok(self.push(t, Op::RowBias(x, bias), &[x, bias]))
    }

    fn pool_geom(&self, op: &'static str, x: Var, window: [usize; 3], stride: [usize; 3]) -> Result<PoolGeom> {
        let d = self.dims(x);
        let (c, vol) = match d.len() {
            3 => (1, [d[0], d[1], d[2]]),
            4 => (d[0], [d[1], d[2], d[3]]),
            _ => return Err(dim_mismatch(op, d, &window)),
        };
        PoolGeom::new(c, vol, window, stride).ok_or_else(|| dim_mismatch(op, d, &window))
    }

    fn pooled_dims(&self, x: Var, g: &PoolGeom) -> Vec<usize> {
        let [a, b, c] = g.output;
        if self.dims(x).len() == 3 {
            vec![a, b, c]
        } else {
            vec![g.channels, a, b, c]
        }
    }

    /// Max pooling over `[C, D, H, W]` (or `[D, H, W]`); gradient routes to the first maximum.
    pub fn maxpool3d(&mut self, x: Var, window: [usize; 3], stride: [usize; 3]) -> Result<Var> {
        let g = self.pool_geom("maxpool3d", x, window, stride)?;
        let (out, arg) = kernels::maxpool3d_forward(&g, self.value(x).data());
        let t = Tensor::new(&self.pooled_dims(x, &g), out)?;
        Ok(self.push(t, Op::MaxPool(x, arg), &[x]))
    }

    pub fn avgpool3d(&mut self, x: Var, window: [usize; 3], stride: [usize; 3]) -> Result<Var> {
        let g = self.pool_geom("avgpool3d", x, window, stride)?;
        let out = kernels::avgpool3d_forward(&g, self.value(x).data());
        let t = Tensor::new(&self.pooled_dims(x, &g), out)?;
        Ok(self.push(t, Op::AvgPool(x, g), &[x]))
    }

    /// Per-pixel channel mixing: `x: [C, ...]`, `weights: [C_out, C]` → `[C_out, ...]`.
    pub fn pointwise_conv(&mut self, x: Var, weights: Var) -> Result<Var> {
        let xd = self.dims(x).to_vec();
        let wd = self.dims(weights).to_vec();
        if wd.len() != 2 || xd.len() < 2 || wd[1] != xd[0] {
            return Err(dim_mismatch("pointwise_conv", &xd, &wd));
        }
        let n: usize = xd[1..].iter().product();
        let flat = self.reshape(x, &[xd[0], n])?;
        let mixed = self.matmul(weights, flat)?;
        let mut out = xd;
        out[0] = wd[0];
        self.reshape(mixed, &out)
    }

    /// Elementwise product with a fixed tensor (dropout masks).
    pub fn mul_const(&mut self, x: Var, c: Tensor<T>) -> Result<Var> {
        if c.dims() != self.dims(x) {
            return Err(dim_mismatch("mul_const", self.dims(x), c.dims()));
        }
        let t = self.zip_const(x, c.data());
        Ok(self.push(t, Op::MulConst(x, c.into_data()), &[x]))
    }

    fn zip_const(&self, x: Var, c: &[T]) -> Tensor<T> {
        let v = self.value(x);
        let data = v.data().iter().zip(c).map(|(&a, &b)| a * b).collect();
        Tensor::new(v.dims(), data).expect("same dims")
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = T::from_usize(self.value(x).len());
        let s = self.sum_all(x);
        self.scale(s, T::one() / n)
    }

    /// Sum of squares of every element.
    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let sq = self.mul(x, x)?;
        Ok(self.sum_all(sq))
    }

    /// Binary cross-entropy of a scalar probability against a 0/1 target,
    /// with `p` clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, p: Var, target: T) -> Result<Var> {
        if self.value(p).len() != 1 {
            return Err(Error::NotScalar(self.dims(p).to_vec()));
        }
        let pc = clamp_prob(self.value(p).data()[0]);
        let loss = -(target * pc.ln() + (T::one() - target) * (T::one() - pc).ln());
        Ok(self.push(Tensor::scalar(loss), Op::Bce { p, target }, &[p]))
    }

    /// Reverse accumulation from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out = &self.nodes[output.0];
        if out.value.len() != 1 {
            return Err(Error::NotScalar(out.value.dims().to_vec()));
        }
        if !out.requires_grad {
            return Err(Error::DisconnectedGraph);
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[output.0] = Some(vec![T::one()]);

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            self.propagate(node, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        Ok(Gradients {
            grads,
            dims: self.nodes.iter().map(|n| n.value.dims().to_vec()).collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
        if !self.wants(v) {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn propagate(&self, node: &Node<T>, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ad, bd) = (self.dims(*a), self.dims(*b));
                let (r, k, c) = (ad[0], ad[1], bd[1]);
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.accumulate(grads, *a) {
                    kernels::matmul_bt_acc(gout, bv, ga, r, c, k);
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    kernels::matmul_at_acc(av, gout, gb, r, k, c);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                if let Some(ga) = self.accumulate(grads, *a) {
                    add_into(ga, gout);
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    for (g, &v) in gb.iter_mut().zip(gout) {
                        *g += sign * v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.accumulate(grads, *a) {
                    for ((g, &d), &o) in ga.iter_mut().zip(gout).zip(bv) {
                        *g += d * o;
                    }
                }
                if let Some(gb) = self.accumulate(grads, *b) {
                    for ((g, &d), &o) in gb.iter_mut().zip(gout).zip(av) {
                        *g += d * o;
                    }
                }
            }
            Op::Affine(x, s) => {
                if let Some(gx) = self.accumulate(grads, *x) {
                    for (g, &d) in gx.iter_mut().zip(gout) {
                        *g += *s * d;
                    }
                }
            }
            Op::Act(x, kind) => {
                let last = *node.value.dims().last().unwrap();
                if let Some(gx) = self.accumulate(grads, *x) {
                    match kind {
                        Activation::Sigmoid => {
                            for ((g, &d), &v) in gx.iter_mut().zip(gout).zip(y) {
                                *g += d * v * (T::one() - v);
                            }
                        }
                        Activation::Tanh => {
                            for ((g, &d), &v) in gx.iter_mut().zip(gout).zip(y) {
                                *g += d * (T::one() - v * v);
                            }
                        }
                        Activation::Softmax => {
                            for ((gr, dr), yr) in gx.chunks_mut(last).zip(gout.chunks(last)).zip(y.chunks(last)) {
                                let dot: T = dr.iter().zip(yr).map(|(&d, &v)| d * v).sum();
                                for ((g, &d), &v) in gr.iter_mut().zip(dr).zip(yr) {
                                    *g += v * (d - dot);
                                }
                            }
                        }
                    }
                }
            }
            Op::Concat(xs, axis) => {
                let dims = node.value.dims();
                let outer: usize = dims[..*axis].iter().product();
                let inner: usize = dims[axis + 1..].iter().product();
                let total = dims[*axis] * inner;
                let mut off = 0;
                for &x in xs {
                    let n = self.dims(x)[*axis] * inner;
                    if let Some(gx) = self.accumulate(grads, x) {
                        for o in 0..outer {
                            add_into(&mut gx[o * n..(o + 1) * n], &gout[o * total + off..o * total + off + n]);
                        }
                    }
                    off += n;
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.accumulate(grads, *x) {
                    add_into(gx, gout);
                }
            }
            Op::Permute(x, perm) => {
                if let Some(gx) = self.accumulate(grads, *x) {
                    let mut inv = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inv[p] = i;
                    }
                    let g = Tensor::new(node.value.dims(), gout.to_vec()).expect("grad dims");
                    add_into(gx, permute_tensor(&g, &inv).data());
                }
            }
            Op::Narrow { x, axis, start } => {
                let xd = self.dims(*x);
                let len = node.value.dims()[*axis];
                let outer: usize = xd[..*axis].iter().product();
                let inner: usize = xd[axis + 1..].iter().product();
                let xa = xd[*axis];
                if let Some(gx) = self.accumulate(grads, *x) {
                    for o in 0..outer {
                        let base = (o * xa + start) * inner;
                        add_into(
                            &mut gx[base..base + len * inner],
                            &gout[o * len * inner..(o + 1) * len * inner],
                        );
                    }
                }
            }
            Op::Conv3d(x, k, geom) => {
                let (xv, kv) = (self.value(*x).data(), self.value(*k).data());
                // Two disjoint mutable borrows of `grads`.
                let mut gx = if self.wants(*x) {
                    Some(take_or_zeros(grads, *x, xv.len()))
                } else {
                    None
                };
                let mut gk = if self.wants(*k) {
                    Some(take_or_zeros(grads, *k, kv.len()))
                } else {
                    None
                };
                kernels::conv3d_backward(geom, xv, kv, gout, gx.as_deref_mut(), gk.as_deref_mut());
                if let Some(g) = gx {
                    grads[x.0] = Some(g);
                }
                if let Some(g) = gk {
                    grads[k.0] = Some(g);
                }
            }
            Op::ChannelBias(x, b) => {
                if let Some(gx) = self.accumulate(grads, *x) {
                    add_into(gx, gout);
                }
                let c = self.value(*b).len();
                if let Some(gb) = self.accumulate(grads, *b) {
                    let inner = gout.len() / c;
                    for (ci, chunk) in gout.chunks(inner).enumerate() {
                        gb[ci] += chunk.iter().copied().sum();
                    }
                }
            }
            Op::RowBias(x, b) => {
                if let Some(gx) = self.accumulate(grads, *x) {
                    add_into(gx, gout);
                }
                let c = self.value(*b).len();
                if let Some(gb) = self.accumulate(grads, *b) {
                    for row in gout.chunks(c) {
                        add_into(gb, row);
                    }
                }
            }
            Op::MaxPool(x, arg) => {
                if let Some(gx) = self.accumulate(grads, *x) {
                    for (&i, &d) in arg.iter().zip(gout) {
                        gx[i] += d;
                    }
                }
            }
            Op::AvgPool(x, geom) => {
                if let Some(gx) = self.accumulate(grads, *x) {
                    kernels::avgpool3d_backward(geom, gout, gx);
                }
            }
            Op::MulConst(x, c) => {
                if let Some(gx) = self.accumulate(grads, *x) {
                    for ((g, &d), &m) in gx.iter_mut().zip(gout).zip(c) {
                        *g += d * m;
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(gx) = self.accumulate(grads, *x) {
                    for g in gx.iter_mut() {
                        *g += gout[0];
                    }
                }
            }
            Op::Bce { p, target } => {
                let pc = clamp_prob(self.value(*p).data()[0]);
                let t = *target;
                if let Some(gp) = self.accumulate(grads, *p) {
                    gp[0] += gout[0] * (-t / pc + (T::one() - t) / (T::one() - pc));
                }
            }
        }
    }
}

fn take_or_zeros<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> Vec<T> {
    grads[v.0].take().unwrap_or_else(|| vec![T::zero(); len])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn clamp_prob<T: Real>(p: T) -> T {
    let eps = T::from_f64(PROB_EPS);
    p.max(eps).min(T::one() - eps)
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v = *v / s;
    }
}

fn permute_tensor<T: Real>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let d = x.dims();
    let out_dims: Vec<usize> = perm.iter().map(|&p| d[p]).collect();
    let in_strides = strides(d);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = x.len();
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; d.len()];
    let src = x.data();
    for _ in 0..n {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        data.push(src[off]);
        for a in (0..idx.len()).rev() {
            idx[a] += 1;
            if idx[a] < out_dims[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Tensor::new(&out_dims, data).expect("permuted dims")
}
