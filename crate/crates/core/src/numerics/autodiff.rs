//! Reverse-mode differentiation over an append-only expression graph.
//!
//! Every operation evaluates eagerly and records its parents. Parents always
//! have smaller indices than their children, so the node list is already in
//! topological order and `backward` is a single reverse sweep.

use super::tensor::{as_matrix, kernels};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in an [`ExprGraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Probabilities fed to BCE are clamped into `[BCE_CLAMP, 1 - BCE_CLAMP]`.
pub const BCE_CLAMP: f64 = 1e-12;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    Exp(Var),
    Relu(Var),
    Sigmoid(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Mean(Var),
    Sum(Var),
    Mse(Var, Var),
    Bce {
        p: Var,
        targets: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    needs_grad: bool,
}

/// Append-only computation graph with cached forward values.
#[derive(Debug, Default)]
pub struct ExprGraph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`ExprGraph::backward`], indexed by leaf.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a leaf; unreachable leaves get zeros.
    pub fn get_or_zeros(&self, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }
}

/// How a right-hand operand lines up with the left-hand one.
/// The right operand is repeated with period `rn` over the left's data.
fn broadcast_period(op: &'static str, a: &[usize], b: &[usize]) -> Result<usize> {
    let bn: usize = b.iter().product();
    if a == b || bn == 1 {
        return Ok(bn);
    }
    let first = b.iter().position(|&d| d != 1).unwrap_or(b.len());
    let core = &b[first..];
    if core.len() <= a.len() && &a[a.len() - core.len()..] == core {
        Ok(bn)
    } else {
        Err(Error::shape(op, format!("cannot broadcast {:?} onto {:?}", b, a)))
    }
}

/// (outer, axis length, inner) decomposition of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// The gradient buffer of a slot, zero-filled on first use.
fn slot_data<'a, T: Scalar>(slot: &'a mut Option<Tensor<T>>, shape: &[usize]) -> &'a mut [T] {
    slot.get_or_insert_with(|| Tensor::zeros(shape.to_vec())).data_mut()
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, shape: &[usize], delta: Vec<T>) {
    match slot {
        Some(g) => {
            for (a, d) in g.data_mut().iter_mut().zip(delta) {
                *a += d;
            }
        }
        None => *slot = Some(Tensor::new(shape.to_vec(), delta).expect("gradient shape")),
    }
}

impl<T: Scalar> ExprGraph<T> {
    pub fn new() -> Self {
        ExprGraph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Cuts gradient flow: a constant holding `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push(&mut self, op_name: &'static str, op: Op<T>, value: Tensor<T>, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        make: impl FnOnce(Var, Var) -> Op<T>,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let period = broadcast_period(name, av.shape(), bv.shape())?;
        let bd = bv.data();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % period]))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push(name, make(a, b), value, &[a, b])
    }

    /// Elementwise `a + b`; `b` may broadcast over leading dimensions of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let value = self.value(x).map(|v| v * c);
        self.push("scale", Op::Scale(x, c), value, &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(T::exp);
        self.push("exp", Op::Exp(x), value, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", Op::Relu(x), value, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(sigmoid);
        self.push("sigmoid", Op::Sigmoid(x), value, &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", Op::MatMul(a, b), value, &[a, b])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        self.push("transpose", Op::Transpose(x), value, &[x])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {} for rank {}", axis, base.len())));
        }
        let mut axis_total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", format!("{:?} vs {:?}", s, base)));
            }
            axis_total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = axis_total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let block = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let value = Tensor::new(shape, data)?;
        self.push("concat", Op::Concat { parts: parts.to_vec(), axis }, value, parts)
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("{}..{} on axis {} of {:?}", start, end, axis, shape),
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * len * inner;
            data.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        let value = Tensor::new(out_shape, data)?;
        self.push("slice", Op::Slice { x, axis, start }, value, &[x])
    }

    /// Selects rows of a `[rows × d]` table.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, d) = as_matrix("gather", self.value(table))?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::shape("gather", format!("row {} of {}", bad, rows)));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let value = Tensor::new([ids.len(), d], data)?;
        self.push(
            "gather",
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            value,
            &[table],
        )
    }

    /// Softmax along `axis`, max-subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", format!("axis {} for {:?}", axis, shape)));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let mut data = self.value(x).data().to_vec();
        if inner == 1 {
            kernels::softmax_rows(&mut data, len);
        } else {
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| o * len * inner + k * inner + i;
                    let max = (0..len).map(|k| data[idx(k)]).fold(T::neg_infinity(), T::max);
                    let mut total = T::zero();
                    for k in 0..len {
                        let e = (data[idx(k)] - max).exp();
                        data[idx(k)] = e;
                        total += e;
                    }
                    for k in 0..len {
                        data[idx(k)] /= total;
                    }
                }
            }
        }
        let value = Tensor::new(shape, data)?;
        self.push("softmax", Op::Softmax { x, axis }, value, &[x])
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        for p in [gain, bias] {
            if self.value(p).numel() != d {
                return Err(Error::shape(
                    "layer_norm",
                    format!("affine {:?} for width {}", self.shape(p), d),
                ));
            }
        }
        let rows = xv.numel() / d.max(1);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.numel());
        let dn = T::lit(d as f64);
        for row in xv.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(
            "layer_norm",
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            value,
            &[x, gain, bias],
        )
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let value = Tensor::scalar(v.sum() / T::lit(v.numel() as f64));
        self.push("mean", Op::Mean(x), value, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push("sum", Op::Sum(x), value, &[x])
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("mse", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let n = T::lit(av.numel() as f64);
        let total: T = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let value = Tensor::scalar(total / n);
        self.push("mse", Op::Mse(a, b), value, &[a, b])
    }

    /// Mean binary cross-entropy of probabilities `p` against fixed targets.
    pub fn bce(&mut self, p: Var, targets: &[T]) -> Result<Var> {
        let pv = self.value(p);
        if pv.numel() != targets.len() {
            return Err(Error::shape(
                "bce",
                format!("{} probabilities, {} targets", pv.numel(), targets.len()),
            ));
        }
        let (lo, hi) = (T::lit(BCE_CLAMP), T::one() - T::lit(BCE_CLAMP));
        let total: T = pv
            .data()
            .iter()
            .zip(targets)
            .map(|(&q, &t)| {
                let q = q.max(lo).min(hi);
                -(t * q.ln() + (T::one() - t) * (T::one() - q).ln())
            })
            .sum();
        let value = Tensor::scalar(total / T::lit(targets.len() as f64));
        self.push(
            "bce",
            Op::Bce {
                p,
                targets: targets.to_vec(),
            },
            value,
            &[p],
        )
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Only leaves keep their gradient in the result; interior gradients are
    /// released as soon as they have been propagated.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn send(&self, grads: &mut [Option<Tensor<T>>], to: Var, delta: Vec<T>) {
        let node = &self.nodes[to.0];
        if node.needs_grad {
            accumulate(&mut grads[to.0], node.value.shape(), delta);
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Gradient of a broadcast right operand: fold `per_elem` back to its shape.
    fn fold_rhs(&self, b: Var, per_elem: impl Iterator<Item = T>) -> Vec<T> {
        let bn = self.value(b).numel();
        let mut out = vec![T::zero(); bn];
        for (i, v) in per_elem.enumerate() {
            out[i % bn] += v;
        }
        out
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.wants(*a) {
                    self.send(grads, *a, gd.to_vec());
                }
                if self.wants(*b) {
                    let db = self.fold_rhs(*b, gd.iter().copied());
                    self.send(grads, *b, db);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    self.send(grads, *a, gd.to_vec());
                }
                if self.wants(*b) {
                    let db = self.fold_rhs(*b, gd.iter().map(|&v| -v));
                    self.send(grads, *b, db);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let bn = bv.len();
                if self.wants(*a) {
                    let da = gd.iter().enumerate().map(|(i, &v)| v * bv[i % bn]).collect();
                    self.send(grads, *a, da);
                }
                if self.wants(*b) {
                    let db = self.fold_rhs(*b, gd.iter().zip(av).map(|(&v, &x)| v * x));
                    self.send(grads, *b, db);
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b).data();
                let bn = bv.len();
                if self.wants(*a) {
                    let da = gd.iter().enumerate().map(|(i, &v)| v / bv[i % bn]).collect();
                    self.send(grads, *a, da);
                }
                if self.wants(*b) {
                    // d(a/b)/db = -(a/b)/b
                    let db = self.fold_rhs(
                        *b,
                        gd.iter()
                            .enumerate()
                            .map(|(i, &v)| -v * out[i] / bv[i % bn]),
                    );
                    self.send(grads, *b, db);
                }
            }
            Op::Scale(x, c) => {
                self.send(grads, *x, gd.iter().map(|&v| v * *c).collect());
            }
            Op::Exp(x) => {
                self.send(grads, *x, gd.iter().zip(out).map(|(&v, &y)| v * y).collect());
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let dx = gd
                    .iter()
                    .zip(xv)
                    .map(|(&v, &x)| if x > T::zero() { v } else { T::zero() })
                    .collect();
                self.send(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let dx = gd
                    .iter()
                    .zip(out)
                    .map(|(&v, &y)| v * y * (T::one() - y))
                    .collect();
                self.send(grads, *x, dx);
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    kernels::matmul_nt(gd, bv.data(), &mut da, m, n, k);
                    self.send(grads, *a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    kernels::matmul_tn(av.data(), gd, &mut db, k, m, n);
                    self.send(grads, *b, db);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                let mut dx = vec![T::zero(); r * c];
                kernels::transpose(gd, &mut dx, r, c);
                self.send(grads, *x, dx);
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = split_axis(node.value.shape(), *axis);
                let mut offsets = Vec::with_capacity(parts.len());
                let mut acc = 0;
                for p in parts {
                    offsets.push(acc);
                    acc += self.shape(*p)[*axis] * inner;
                }
                let row = acc;
                for (p, off) in parts.iter().zip(offsets) {
                    if !self.wants(*p) {
                        continue;
                    }
                    let block = self.shape(*p)[*axis] * inner;
                    let mut dp = Vec::with_capacity(outer * block);
                    for o in 0..outer {
                        dp.extend_from_slice(&gd[o * row + off..o * row + off + block]);
                    }
                    self.send(grads, *p, dp);
                }
            }
            // Slices and gathers touch a few rows of a large input, so they
            // add into its gradient in place rather than via a dense delta.
            Op::Slice { x, axis, start } => {
                if !self.wants(*x) {
                    return;
                }
                let shape = self.shape(*x);
                let (outer, len, inner) = split_axis(shape, *axis);
                let width = node.value.shape()[*axis] * inner;
                let dx = slot_data(&mut grads[x.0], shape);
                for o in 0..outer {
                    let base = o * len * inner + start * inner;
                    for (dst, &v) in dx[base..base + width].iter_mut().zip(&gd[o * width..(o + 1) * width]) {
                        *dst += v;
                    }
                }
            }
            Op::Gather { table, ids } => {
                if !self.wants(*table) {
                    return;
                }
                let shape = self.shape(*table);
                let d = shape[1];
                let dt = slot_data(&mut grads[table.0], shape);
                for (r, &id) in ids.iter().enumerate() {
                    for (dst, &v) in dt[id * d..(id + 1) * d].iter_mut().zip(&gd[r * d..(r + 1) * d]) {
                        *dst += v;
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                let mut dx = vec![T::zero(); out.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| o * len * inner + k * inner + i;
                        let dot: T = (0..len).map(|k| gd[idx(k)] * out[idx(k)]).sum();
                        for k in 0..len {
                            dx[idx(k)] = out[idx(k)] * (gd[idx(k)] - dot);
                        }
                    }
                }
                self.send(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = node.value.cols();
                let dn = T::lit(d as f64);
                let gv = self.value(*gain).data();
                if self.wants(*x) {
                    let mut dx = Vec::with_capacity(gd.len());
                    for (r, is) in inv_std.iter().enumerate() {
                        let gr = &gd[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let dh: Vec<T> = gr.iter().zip(gv).map(|(&v, &w)| v * w).collect();
                        let mean_dh = dh.iter().copied().sum::<T>() / dn;
                        let mean_dh_h = dh.iter().zip(hr).map(|(&a, &h)| a * h).sum::<T>() / dn;
                        dx.extend(
                            dh.iter()
                                .zip(hr)
                                .map(|(&a, &h)| *is * (a - mean_dh - h * mean_dh_h)),
                        );
                    }
                    self.send(grads, *x, dx);
                }
                if self.wants(*gain) {
                    let mut dg = vec![T::zero(); d];
                    for (i, (&v, &h)) in gd.iter().zip(xhat).enumerate() {
                        dg[i % d] += v * h;
                    }
                    self.send(grads, *gain, dg);
                }
                if self.wants(*bias) {
                    let mut db = vec![T::zero(); d];
                    for (i, &v) in gd.iter().enumerate() {
                        db[i % d] += v;
                    }
                    self.send(grads, *bias, db);
                }
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                let v = gd[0] / T::lit(n as f64);
                self.send(grads, *x, vec![v; n]);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.send(grads, *x, vec![gd[0]; n]);
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let c = gd[0] * T::lit(2.0 / av.len() as f64);
                if self.wants(*a) {
                    self.send(grads, *a, av.iter().zip(bv).map(|(&x, &y)| c * (x - y)).collect());
                }
                if self.wants(*b) {
                    self.send(grads, *b, av.iter().zip(bv).map(|(&x, &y)| c * (y - x)).collect());
                }
            }
            Op::Bce { p, targets } => {
                let pv = self.value(*p).data();
                let (lo, hi) = (T::lit(BCE_CLAMP), T::one() - T::lit(BCE_CLAMP));
                let scale = gd[0] / T::lit(targets.len() as f64);
                let dp = pv
                    .iter()
                    .zip(targets)
                    .map(|(&q, &t)| {
                        if q <= lo || q >= hi {
                            T::zero()
                        } else {
                            scale * (q - t) / (q * (T::one() - q))
                        }
                    })
                    .collect();
                self.send(grads, *p, dp);
            }
        }
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut g = ExprGraph::<f64>::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        let mut g = ExprGraph::<f64>::new();
        let x = g.param(Tensor::from_rows(&[&[0.3, -1.2, 2.0]]).unwrap());
        let s = g.softmax(x, 1).unwrap();
        let l = g.sum(s).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = ExprGraph::<f64>::new();
        let x = g.param(Tensor::zeros([2]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn unreachable_leaf_gets_zeros() {
        let mut g = ExprGraph::<f64>::new();
        let x = g.param(Tensor::scalar(2.0));
        let unused = g.param(Tensor::zeros([3]));
        let l = g.exp(x).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.get_or_zeros(unused), Tensor::zeros([3]));
    }

    #[test]
    fn constants_do_not_receive_gradients() {
        let mut g = ExprGraph::<f64>::new();
        let c = g.constant(Tensor::scalar(2.0));
        let x = g.param(Tensor::scalar(5.0));
        let y = g.mul(c, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().item(), 2.0);
    }

    #[test]
    fn layer_norm_closed_forms() {
        let mut g = ExprGraph::<f64>::new();
        let x = g.constant(Tensor::from_rows(&[&[5.0, 5.0, 5.0]]).unwrap());
        let gain = g.constant(Tensor::full([3], 1.0));
        let bias = g.constant(Tensor::zeros([3]));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);

        let x = g.constant(Tensor::from_rows(&[&[1.0, 3.0]]).unwrap());
        let gain = g.constant(Tensor::full([2], 1.0));
        let bias = g.constant(Tensor::zeros([2]));
        let y = g.layer_norm(x, gain, bias, 1e-300).unwrap();
        assert!((g.value(y).data()[0] + 1.0).abs() < 1e-12);
        assert!((g.value(y).data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = ExprGraph::<f64>::new();
        let x = g.constant(Tensor::scalar(1000.0));
        assert!(matches!(g.exp(x), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn bce_clamps_saturated_probabilities() {
        let mut g = ExprGraph::<f64>::new();
        let p = g.param(Tensor::from_f64([2], &[0.0, 1.0]).unwrap());
        let l = g.bce(p, &[1.0, 0.0]).unwrap();
        // 1 - clamp is not exact in binary, so the two terms differ slightly
        let expected = -(BCE_CLAMP.ln() + (1.0 - (1.0 - BCE_CLAMP)).ln()) / 2.0;
        assert!((g.value(l).item() - expected).abs() < 1e-9);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn broadcast_rejects_incompatible_shapes() {
        let mut g = ExprGraph::<f64>::new();
        let a = g.constant(Tensor::zeros([2, 3]));
        let b = g.constant(Tensor::zeros([2]));
        assert!(g.add(a, b).is_err());
        let row = g.constant(Tensor::zeros([1, 3]));
        let sum = g.add(a, row).unwrap();
        assert_eq!(g.shape(sum), &[2, 3]);
    }
}
