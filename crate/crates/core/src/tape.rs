//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive in evaluation order. Each node holds its
//! forward value and enough information to push an incoming gradient back to
//! its parents. [`Tape::backward`] replays the record in reverse.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{axis_split, matmul_into, transpose_data, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Clamp(Var, f64, f64),
    Powf(Var, f64),
    Softmax(Var, usize),
    Concat(Vec<Var>, usize),
    SumAll(Var),
    SumAxis(Var, usize, f64),
    RowNorm(Var),
    MaxAxis(Var, Vec<usize>),
    BroadcastRows(Var),
    BroadcastCols(Var),
    PairwiseMul(Var, Var),
    SliceCols(Var, usize),
    Im2col(Var, ConvGeometry),
}

/// Patch-extraction geometry for a square-kernel convolution over an
/// `height × width × channels` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    /// Calls `f(out_row, col, input_flat_index)` for every non-padding tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (ho, wo) = (self.out_height(), self.out_width());
        for oy in 0..ho {
            for ox in 0..wo {
                let row = oy * wo + ox;
                for ky in 0..self.kernel {
                    let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                    if iy < 0 || iy >= self.height as isize {
                        continue;
                    }
                    for kx in 0..self.kernel {
                        let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                        if ix < 0 || ix >= self.width as isize {
                            continue;
                        }
                        let base = (iy as usize * self.width + ix as usize) * self.channels;
                        let col = (ky * self.kernel + kx) * self.channels;
                        for ch in 0..self.channels {
                            f(row, col + ch, base + ch);
                        }
                    }
                }
            }
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records differentiable computations.
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zero-filled when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, a: Var, value: Tensor, op: Op) -> Var {
        let rg = self.nodes[a.0].requires_grad;
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor, op: Op) -> Var {
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.binary(a, b, v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.binary(a, b, v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.binary(a, b, v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.unary(a, v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.unary(a, v, Op::AddScalar(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.binary(a, b, v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        Ok(self.unary(a, v, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.unary(a, v, Op::Reshape(a)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(libm::tanh);
        self.unary(a, v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.unary(a, v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(libm::exp);
        self.unary(a, v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(libm::log);
        self.unary(a, v, Op::Log(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.unary(a, v, Op::Relu(a))
    }

    /// Clamps into `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.unary(a, v, Op::Clamp(a, lo, hi))
    }

    /// `x^e` for non-negative `x`. `e == 0` yields the constant one.
    pub fn powf(&mut self, a: Var, e: f64) -> Var {
        let v = self.value(a).map(|x| if e == 0.0 { 1.0 } else { libm::pow(x, e) });
        self.unary(a, v, Op::Powf(a, e))
    }

    /// Softmax along `axis`, with the slice maximum subtracted first.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let (outer, n, inner) = axis_split(x.shape(), axis)?;
        let src = x.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * n * inner + k * inner + i;
                let mut m = f64::NEG_INFINITY;
                for k in 0..n {
                    m = m.max(src[at(k)]);
                }
                let mut z = 0.0;
                for k in 0..n {
                    let e = libm::exp(src[at(k)] - m);
                    out[at(k)] = e;
                    z += e;
                }
                for k in 0..n {
                    out[at(k)] /= z;
                }
            }
        }
        let v = Tensor::new(x.shape(), out)?;
        Ok(self.unary(a, v, Op::Softmax(a, axis)))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !ok {
                return Err(Error::Shape(format!("concat: {s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let n = self.shape(p)[axis];
                let d = self.value(p).data();
                out.extend_from_slice(&d[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let v = Tensor::new(&shape, out)?;
        let rg = parts.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(v, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.unary(a, v, Op::SumAll(a))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean along `axis`; the axis is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = self.shape(a).get(axis).copied().unwrap_or(1);
        self.reduce_axis(a, axis, 1.0 / n as f64)
    }

    /// Sum along `axis`; the axis is removed from the shape.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, 1.0)
    }

    fn reduce_axis(&mut self, a: Var, axis: usize, factor: f64) -> Result<Var> {
        let x = self.value(a);
        let (outer, n, inner) = axis_split(x.shape(), axis)?;
        let src = x.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += src[o * n * inner + k * inner + i];
                }
            }
        }
        if factor != 1.0 {
            out.iter_mut().for_each(|v| *v *= factor);
        }
        let v = Tensor::new(&reduced_shape(x.shape(), axis), out)?;
        Ok(self.unary(a, v, Op::SumAxis(a, axis, factor)))
    }

    /// Euclidean norm of every row of a matrix. A zero row gets zero gradient.
    pub fn row_norm(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (r, _) = x.dims2()?;
        let out = (0..r)
            .map(|i| libm::sqrt(x.row(i).iter().map(|v| v * v).sum::<f64>()))
            .collect();
        let v = Tensor::vector(out);
        Ok(self.unary(a, v, Op::RowNorm(a)))
    }

    /// Maximum along `axis`; ties resolve to the lowest index, which is also
    /// the only entry that receives gradient.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let (outer, n, inner) = axis_split(x.shape(), axis)?;
        let src = x.data();
        let mut out = vec![0.0; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * n * inner + i;
                for k in 1..n {
                    let at = o * n * inner + k * inner + i;
                    if src[at] > src[best] {
                        best = at;
                    }
                }
                out[o * inner + i] = src[best];
                arg[o * inner + i] = best;
            }
        }
        let v = Tensor::new(&reduced_shape(x.shape(), axis), out)?;
        Ok(self.unary(a, v, Op::MaxAxis(a, arg)))
    }

    /// Repeats a length-`d` vector as every row of an `n × d` matrix.
    pub fn broadcast_rows(&mut self, v: Var, n: usize) -> Result<Var> {
        let x = self.value(v);
        if x.rank() != 1 {
            return Err(Error::Shape(format!("broadcast_rows wants a vector, got {:?}", x.shape())));
        }
        let d = x.len();
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            out.extend_from_slice(x.data());
        }
        let t = Tensor::new(&[n, d], out)?;
        Ok(self.unary(v, t, Op::BroadcastRows(v)))
    }

    /// Repeats a length-`r` vector as every column of an `r × n` matrix.
    pub fn broadcast_cols(&mut self, v: Var, n: usize) -> Result<Var> {
        let x = self.value(v);
        if x.rank() != 1 {
            return Err(Error::Shape(format!("broadcast_cols wants a vector, got {:?}", x.shape())));
        }
        let r = x.len();
        let mut out = Vec::with_capacity(r * n);
        for &val in x.data() {
            out.extend(core::iter::repeat_n(val, n));
        }
        let t = Tensor::new(&[r, n], out)?;
        Ok(self.unary(v, t, Op::BroadcastCols(v)))
    }

    /// Pairwise Hadamard product: for `a: P × d` and `b: C × d`, row
    /// `p * C + c` of the `(P·C) × d` result is `a[p] ⊙ b[c]`.
    pub fn pairwise_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, d) = self.value(a).dims2()?;
        let (c, d2) = self.value(b).dims2()?;
        if d != d2 {
            return Err(Error::Shape(format!("pairwise_mul {p}x{d} with {c}x{d2}")));
        }
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(p * c * d);
        for i in 0..p {
            let ra = &xa[i * d..(i + 1) * d];
            for j in 0..c {
                let rb = &xb[j * d..(j + 1) * d];
                out.extend(ra.iter().zip(rb).map(|(x, y)| x * y));
            }
        }
        let v = Tensor::new(&[p * c, d], out)?;
        Ok(self.binary(a, b, v, Op::PairwiseMul(a, b)))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        if start >= end || end > c {
            return Err(Error::Shape(format!("slice_cols {start}..{end} of {c} columns")));
        }
        let x = self.value(a).data();
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&x[i * c + start..i * c + end]);
        }
        let v = Tensor::new(&[r, w], out)?;
        Ok(self.unary(a, v, Op::SliceCols(a, start)))
    }

    /// Unfolds an `H × W × channels` input into one row per output position,
    /// each holding the `kernel × kernel × channels` patch (zero padded).
    pub fn im2col(&mut self, a: Var, geom: ConvGeometry) -> Result<Var> {
        let x = self.value(a);
        if x.shape() != [geom.height, geom.width, geom.channels] {
            return Err(Error::Shape(format!(
                "im2col expects {}x{}x{}, got {:?}",
                geom.height,
                geom.width,
                geom.channels,
                x.shape()
            )));
        }
        if geom.kernel == 0 || geom.stride == 0 || geom.height + 2 * geom.padding < geom.kernel
            || geom.width + 2 * geom.padding < geom.kernel
        {
            return Err(Error::Shape(format!("invalid conv geometry {geom:?}")));
        }
        let rows = geom.out_height() * geom.out_width();
        let cols = geom.patch_len();
        let mut out = vec![0.0; rows * cols];
        let src = x.data();
        geom.for_each_tap(|r, c, i| out[r * cols + c] = src[i]);
        let v = Tensor::new(&[rows, cols], out)?;
        Ok(self.unary(a, v, Op::Im2col(a, geom)))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|d| Tensor::new(n.value.shape(), d)).transpose())
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |d| add_to(d, g));
                self.acc(grads, *b, |d| add_to(d, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |d| add_to(d, g));
                self.acc(grads, *b, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * xb[i];
                    }
                });
                self.acc(grads, *b, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * xa[i];
                    }
                });
            }
            Op::Scale(a, s) => self.acc(grads, *a, |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += s * g)
            }),
            Op::AddScalar(a) | Op::Reshape(a) => self.acc(grads, *a, |d| add_to(d, g)),
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let n = self.value(*b).dims2()?.1;
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    // dA = G · Bᵀ
                    let bt = transpose_data(xb, k, n);
                    let mut tmp = vec![0.0; m * k];
                    matmul_into(g, &bt, &mut tmp, m, n, k);
                    self.acc(grads, *a, |d| add_to(d, &tmp));
                }
                if self.needs(*b) {
                    // dB = Aᵀ · G
                    let at = transpose_data(xa, m, k);
                    let mut tmp = vec![0.0; k * n];
                    matmul_into(&at, g, &mut tmp, k, m, n);
                    self.acc(grads, *b, |d| add_to(d, &tmp));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = node.value.dims2()?;
                let gt = transpose_data(g, r, c);
                self.acc(grads, *a, |d| add_to(d, &gt));
            }
            Op::Tanh(a) => self.acc(grads, *a, |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            }),
            Op::Sigmoid(a) => self.acc(grads, *a, |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }),
            Op::Exp(a) => self.acc(grads, *a, |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * y[i];
                }
            }),
            Op::Log(a) => {
                let x = self.value(*a).data();
                self.acc(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] / x[i];
                    }
                })
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.acc(grads, *a, |d| {
                    for i in 0..d.len() {
                        if x[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                })
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a).data();
                self.acc(grads, *a, |d| {
                    for i in 0..d.len() {
                        if x[i] > *lo && x[i] < *hi {
                            d[i] += g[i];
                        }
                    }
                })
            }
            Op::Powf(a, e) => {
                if *e != 0.0 {
                    let x = self.value(*a).data();
                    self.acc(grads, *a, |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * e * libm::pow(x[i], e - 1.0);
                        }
                    })
                }
            }
            Op::Softmax(a, axis) => {
                let (outer, n, inner) = axis_split(node.value.shape(), *axis)?;
                self.acc(grads, *a, |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| o * n * inner + k * inner + i;
                            let dot: f64 = (0..n).map(|k| g[at(k)] * y[at(k)]).sum();
                            for k in 0..n {
                                d[at(k)] += y[at(k)] * (g[at(k)] - dot);
                            }
                        }
                    }
                })
            }
            Op::Concat(parts, axis) => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis];
                let mut offset = 0;
                for &p in parts {
                    let n = self.shape(p)[*axis];
                    self.acc(grads, p, |d| {
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            add_to(&mut d[o * n * inner..(o + 1) * n * inner], &g[src..src + n * inner]);
                        }
                    });
                    offset += n;
                }
            }
            Op::SumAll(a) => self.acc(grads, *a, |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::SumAxis(a, axis, factor) => {
                let (outer, n, inner) = axis_split(self.shape(*a), *axis)?;
                self.acc(grads, *a, |d| {
                    for o in 0..outer {
                        for k in 0..n {
                            for i in 0..inner {
                                d[o * n * inner + k * inner + i] += g[o * inner + i] * factor;
                            }
                        }
                    }
                })
            }
            Op::RowNorm(a) => {
                let x = self.value(*a);
                let c = x.dims2()?.1;
                let x = x.data();
                self.acc(grads, *a, |d| {
                    for (i, (&gi, &norm)) in g.iter().zip(y).enumerate() {
                        if norm > 0.0 {
                            for k in 0..c {
                                d[i * c + k] += gi * x[i * c + k] / norm;
                            }
                        }
                    }
                })
            }
            Op::MaxAxis(a, arg) => self.acc(grads, *a, |d| {
                for (gi, &src) in g.iter().zip(arg) {
                    d[src] += gi;
                }
            }),
            Op::BroadcastRows(v) => {
                let dlen = self.value(*v).len();
                self.acc(grads, *v, |d| {
                    for row in g.chunks(dlen) {
                        add_to(d, row);
                    }
                })
            }
            Op::BroadcastCols(v) => {
                let (_, n) = node.value.dims2()?;
                self.acc(grads, *v, |d| {
                    for (di, row) in d.iter_mut().zip(g.chunks(n)) {
                        *di += row.iter().sum::<f64>();
                    }
                })
            }
            Op::PairwiseMul(a, b) => {
                let (p, dim) = self.value(*a).dims2()?;
                let c = self.value(*b).dims2()?.0;
                let (xa, xb) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |d| {
                    for i in 0..p {
                        for j in 0..c {
                            let gr = &g[(i * c + j) * dim..(i * c + j + 1) * dim];
                            for k in 0..dim {
                                d[i * dim + k] += gr[k] * xb[j * dim + k];
                            }
                        }
                    }
                });
                self.acc(grads, *b, |d| {
                    for i in 0..p {
                        for j in 0..c {
                            let gr = &g[(i * c + j) * dim..(i * c + j + 1) * dim];
                            for k in 0..dim {
                                d[j * dim + k] += gr[k] * xa[i * dim + k];
                            }
                        }
                    }
                });
            }
            Op::SliceCols(a, start) => {
                let (r, w) = node.value.dims2()?;
                let c = self.value(*a).dims2()?.1;
                self.acc(grads, *a, |d| {
                    for i in 0..r {
                        add_to(&mut d[i * c + start..i * c + start + w], &g[i * w..(i + 1) * w]);
                    }
                })
            }
            Op::Im2col(a, geom) => {
                let cols = geom.patch_len();
                self.acc(grads, *a, |d| geom.for_each_tap(|r, c, i| d[i] += g[r * cols + c]))
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.needs(v) {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(buf);
    }
}

fn add_to(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}
