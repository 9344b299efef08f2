use std::borrow::Cow;

use super::gemm::gemm;
use super::params::{Gradients, ParamId, ParamStore};
use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

type DerivFn<T> = Box<dyn Fn(T, T) -> T>;

enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Bmm(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    SoftmaxRows(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Sum(Var),
    LogClamped { x: Var, floor: T },
    Gather { table: Var, ids: Vec<usize> },
    Bilinear { s1: Var, t: Var, s2: Var, proj: Vec<T> },
    Custom { x: Var, deriv: DerivFn<T> },
}

struct Node<'a, T: Float> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records one forward computation in topological order.
///
/// Parameters are borrowed from a [`ParamStore`] for the lifetime of the tape;
/// [`Tape::backward`] returns their gradients, which the caller adds into the
/// store with [`ParamStore::accumulate`].
pub struct Tape<'a, T: Float> {
    nodes: Vec<Node<'a, T>>,
    check_finite: bool,
}

impl<T: Float> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `(outer, extent, inner)` around `axis`.
fn around_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'a, T: Float> Tape<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: true,
        }
    }

    /// Disables the per-op finiteness check (on by default).
    pub fn without_finite_check(mut self) -> Self {
        self.check_finite = false;
        self
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::Numerical(format!(
                "non-finite value produced by {name} (output shape {:?})",
                value.shape()
            )));
        }
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Borrowed constant input; avoids copying large inputs.
    pub fn constant_ref(&mut self, value: &'a Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, store: &'a ParamStore<T>, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(store.value(id)),
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm(false, false, m, n, k, self.value(a).data(), self.value(b).data(), out.data_mut(), false);
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul", out, Op::MatMul(a, b), rg)
    }

    /// Batched product `[B,m,k] · [B,k,n] -> [B,m,n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::dim("bmm", sa, sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = Tensor::zeros(&[bs, m, n]);
        {
            let (ad, bd) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
            let od = out.data_mut();
            for i in 0..bs {
                gemm(
                    false,
                    false,
                    m,
                    n,
                    k,
                    &ad[i * m * k..],
                    &bd[i * k * n..],
                    &mut od[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push("bmm", out, Op::Bmm(a, b), rg)
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push("add", out, Op::Add(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push("mul", out, Op::Mul(a, b), rg)
    }

    fn row_broadcast(&mut self, name: &'static str, x: Var, row: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (tx, tr) = (self.value(x), self.value(row));
        let n = tr.numel();
        if tr.rank() != 1 || tx.rank() == 0 || *tx.shape().last().unwrap() != n {
            return Err(Error::dim(name, tx.shape(), tr.shape()));
        }
        let rd = tr.data();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, rd[i % n]))
            .collect();
        Tensor::new(tx.shape(), data)
    }

    /// `x + b` with `b` added to every row (last axis) of `x`.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let out = self.row_broadcast("add_row_bias", x, b, |v, r| v + r)?;
        let rg = self.rg(x) || self.rg(b);
        self.push("add_row_bias", out, Op::AddRowBias(x, b), rg)
    }

    /// `x ⊙ w` with `w` multiplied into every row (last axis) of `x`.
    pub fn mul_row(&mut self, x: Var, w: Var) -> Result<Var> {
        let out = self.row_broadcast("mul_row", x, w, |v, r| v * r)?;
        let rg = self.rg(x) || self.rg(w);
        self.push("mul_row", out, Op::MulRow(x, w), rg)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.map(x, |v| v * c);
        let rg = self.rg(x);
        self.push("scale", out, Op::Scale(x, c), rg)
    }

    fn map(&self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let t = self.value(x);
        Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect()).expect("same shape")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, |v| v.tanh());
        let rg = self.rg(x);
        self.push("tanh", out, Op::Tanh(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, sigmoid);
        let rg = self.rg(x);
        self.push("sigmoid", out, Op::Sigmoid(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.map(x, |v| v.max(T::zero()));
        let rg = self.rg(x);
        self.push("relu", out, Op::Relu(x), rg)
    }

    /// Softmax over the last axis, with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() == 0 {
            return Err(Error::dim("softmax_rows", t.shape(), &[]));
        }
        let n = *t.shape().last().unwrap();
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(n) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        let rg = self.rg(x);
        self.push("softmax_rows", out, Op::SoftmaxRows(x), rg)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", &base, &[axis]));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = around_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let out = Tensor::new(&shape, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            "concat",
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        )
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::dim("slice", &s, &[axis, start, len]));
        }
        let (outer, extent, inner) = around_axis(&s, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let out = Tensor::new(&shape, data)?;
        let rg = self.rg(x);
        self.push("slice", out, Op::Slice { x, axis, start }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        self.push("reshape", out, Op::Reshape(x), rg)
    }

    /// Rank-1 view in row-major order.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        self.reshape(x, &[n])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push("sum", Tensor::scalar(total), Op::Sum(x), rg)
    }

    /// `ln(max(x, floor))` elementwise.
    pub fn log_clamped(&mut self, x: Var, floor: T) -> Result<Var> {
        let out = self.map(x, |v| v.max(floor).ln());
        let rg = self.rg(x);
        self.push("log_clamped", out, Op::LogClamped { x, floor }, rg)
    }

    /// Rows of a `[V×D]` table selected by `ids`, giving `[ids.len()×D]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 || ids.is_empty() {
            return Err(Error::dim("gather_rows", &s, &[ids.len()]));
        }
        let (v, d) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Usage(format!("gather_rows: id {bad} out of range for table of {v} rows")));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let out = Tensor::new(&[ids.len(), d], data)?;
        let rg = self.rg(table);
        self.push(
            "gather_rows",
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Batched bilinear forms: `out[b,k] = s1[b]ᵀ · t[k] · s2[b]`,
    /// with `s1: [B×D1]`, `t: [K×D1×D2]`, `s2: [B×D2]`.
    pub fn bilinear(&mut self, s1: Var, t: Var, s2: Var) -> Result<Var> {
        let (a, tt, c) = (self.shape(s1), self.shape(t), self.shape(s2));
        if a.len() != 2 || tt.len() != 3 || c.len() != 2 || a[0] != c[0] || a[1] != tt[1] || c[1] != tt[2] {
            return Err(Error::dim("bilinear", a, tt));
        }
        let (bs, d1, k, d2) = (a[0], a[1], tt[0], tt[2]);
        // proj[b, k*D1 + i] = Σ_j t[k,i,j] s2[b,j]
        let mut proj = vec![T::zero(); bs * k * d1];
        gemm(false, true, bs, k * d1, d2, self.value(s2).data(), self.value(t).data(), &mut proj, false);
        let s1d = self.value(s1).data();
        let mut out = Vec::with_capacity(bs * k);
        for b in 0..bs {
            let row = &s1d[b * d1..(b + 1) * d1];
            for kk in 0..k {
                let p = &proj[(b * k + kk) * d1..(b * k + kk + 1) * d1];
                out.push(row.iter().zip(p).map(|(&x, &y)| x * y).sum());
            }
        }
        let out = Tensor::new(&[bs, k], out)?;
        let rg = self.rg(s1) || self.rg(t) || self.rg(s2);
        self.push("bilinear", out, Op::Bilinear { s1, t, s2, proj }, rg)
    }

    /// Elementwise op with a caller-supplied derivative `deriv(x, y)`.
    pub fn custom_unary(
        &mut self,
        x: Var,
        name: &'static str,
        f: impl Fn(T) -> T,
        deriv: impl Fn(T, T) -> T + 'static,
    ) -> Result<Var> {
        let out = self.map(x, f);
        let rg = self.rg(x);
        self.push(
            name,
            out,
            Op::Custom {
                x,
                deriv: Box::new(deriv),
            },
            rg,
        )
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        let mut out = Gradients::new();
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> &'g mut Tensor<T> {
        grads[v.0].get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()))
    }

    fn add_into(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: &[T]) {
        if self.rg(v) {
            for (a, &b) in self.slot(grads, v).data_mut().iter_mut().zip(g) {
                *a += b;
            }
        }
    }

    fn propagate(&self, node: &Node<'a, T>, g: Tensor<T>, grads: &mut [Option<Tensor<T>>], out: &mut Gradients<T>) {
        let y = node.value.data();
        let gd = g.data();
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => out.add(*id, g),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.rg(*a) {
                    let bd = self.value(*b).data();
                    gemm(false, true, m, k, n, gd, bd, self.slot(grads, *a).data_mut(), true);
                }
                if self.rg(*b) {
                    let ad = self.value(*a).data();
                    gemm(true, false, k, n, m, ad, gd, self.slot(grads, *b).data_mut(), true);
                }
            }
            Op::Bmm(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                if self.rg(*a) {
                    let bd = self.value(*b).data();
                    let ga = self.slot(grads, *a).data_mut();
                    for i in 0..bs {
                        gemm(
                            false,
                            true,
                            m,
                            k,
                            n,
                            &gd[i * m * n..],
                            &bd[i * k * n..],
                            &mut ga[i * m * k..(i + 1) * m * k],
                            true,
                        );
                    }
                }
                if self.rg(*b) {
                    let ad = self.value(*a).data();
                    let gb = self.slot(grads, *b).data_mut();
                    for i in 0..bs {
                        gemm(
                            true,
                            false,
                            k,
                            n,
                            m,
                            &ad[i * m * k..],
                            &gd[i * m * n..],
                            &mut gb[i * k * n..(i + 1) * k * n],
                            true,
                        );
                    }
                }
            }
            Op::Add(a, b) => {
                self.add_into(grads, *a, gd);
                self.add_into(grads, *b, gd);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let bd = self.value(*b).data();
                    let prod: Vec<T> = gd.iter().zip(bd).map(|(&x, &y)| x * y).collect();
                    self.add_into(grads, *a, &prod);
                }
                if self.rg(*b) {
                    let ad = self.value(*a).data();
                    let prod: Vec<T> = gd.iter().zip(ad).map(|(&x, &y)| x * y).collect();
                    self.add_into(grads, *b, &prod);
                }
            }
            Op::AddRowBias(x, b) => {
                self.add_into(grads, *x, gd);
                if self.rg(*b) {
                    let gb = self.slot(grads, *b).data_mut();
                    let n = gb.len();
                    for row in gd.chunks(n) {
                        for (a, &v) in gb.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                }
            }
            Op::MulRow(x, w) => {
                let wd = self.value(*w).data();
                let n = wd.len();
                if self.rg(*x) {
                    let prod: Vec<T> = gd.iter().enumerate().map(|(i, &v)| v * wd[i % n]).collect();
                    self.add_into(grads, *x, &prod);
                }
                if self.rg(*w) {
                    let xd = self.value(*x).data();
                    let gw = self.slot(grads, *w).data_mut();
                    for (grow, xrow) in gd.chunks(n).zip(xd.chunks(n)) {
                        for j in 0..n {
                            gw[j] += grow[j] * xrow[j];
                        }
                    }
                }
            }
            Op::Scale(x, c) => {
                let scaled: Vec<T> = gd.iter().map(|&v| v * *c).collect();
                self.add_into(grads, *x, &scaled);
            }
            Op::Tanh(x) => {
                let d: Vec<T> = gd.iter().zip(y).map(|(&g, &y)| g * (T::one() - y * y)).collect();
                self.add_into(grads, *x, &d);
            }
            Op::Sigmoid(x) => {
                let d: Vec<T> = gd.iter().zip(y).map(|(&g, &y)| g * y * (T::one() - y)).collect();
                self.add_into(grads, *x, &d);
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                let d: Vec<T> = gd
                    .iter()
                    .zip(xd)
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                self.add_into(grads, *x, &d);
            }
            Op::SoftmaxRows(x) => {
                let n = *node.value.shape().last().unwrap();
                let mut d = Vec::with_capacity(gd.len());
                for (grow, yrow) in gd.chunks(n).zip(y.chunks(n)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    d.extend(grow.iter().zip(yrow).map(|(&g, &y)| y * (g - dot)));
                }
                self.add_into(grads, *x, &d);
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = around_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let extent = self.shape(p)[*axis];
                    if self.rg(p) {
                        let block = extent * inner;
                        let gp = self.slot(grads, p).data_mut();
                        for o in 0..outer {
                            let src = &gd[(o * total + offset) * inner..][..block];
                            for (a, &v) in gp[o * block..(o + 1) * block].iter_mut().zip(src) {
                                *a += v;
                            }
                        }
                    }
                    offset += extent;
                }
            }
            Op::Slice { x, axis, start } => {
                if self.rg(*x) {
                    let (outer, extent, inner) = around_axis(self.shape(*x), *axis);
                    let len = node.value.shape()[*axis];
                    let gx = self.slot(grads, *x).data_mut();
                    for o in 0..outer {
                        let dst = &mut gx[(o * extent + start) * inner..][..len * inner];
                        for (a, &v) in dst.iter_mut().zip(&gd[o * len * inner..(o + 1) * len * inner]) {
                            *a += v;
                        }
                    }
                }
            }
            Op::Reshape(x) => self.add_into(grads, *x, gd),
            Op::Sum(x) => {
                if self.rg(*x) {
                    let g0 = gd[0];
                    for a in self.slot(grads, *x).data_mut() {
                        *a += g0;
                    }
                }
            }
            Op::LogClamped { x, floor } => {
                let xd = self.value(*x).data();
                let d: Vec<T> = gd
                    .iter()
                    .zip(xd)
                    .map(|(&g, &v)| if v > *floor { g / v } else { T::zero() })
                    .collect();
                self.add_into(grads, *x, &d);
            }
            Op::Gather { table, ids } => {
                if self.rg(*table) {
                    let d = self.shape(*table)[1];
                    let gt = self.slot(grads, *table).data_mut();
                    for (r, &i) in ids.iter().enumerate() {
                        for (a, &v) in gt[i * d..(i + 1) * d].iter_mut().zip(&gd[r * d..(r + 1) * d]) {
                            *a += v;
                        }
                    }
                }
            }
            Op::Bilinear { s1, t, s2, proj } => {
                let (bs, d1) = (self.shape(*s1)[0], self.shape(*s1)[1]);
                let (k, d2) = (self.shape(*t)[0], self.shape(*t)[2]);
                let s1d = self.value(*s1).data();
                if self.rg(*s1) {
                    let mut d = vec![T::zero(); bs * d1];
                    for b in 0..bs {
                        for kk in 0..k {
                            let gk = gd[b * k + kk];
                            let p = &proj[(b * k + kk) * d1..(b * k + kk + 1) * d1];
                            for (a, &v) in d[b * d1..(b + 1) * d1].iter_mut().zip(p) {
                                *a += gk * v;
                            }
                        }
                    }
                    self.add_into(grads, *s1, &d);
                }
                if self.rg(*t) || self.rg(*s2) {
                    // z[b, k*D1 + i] = g[b,k] * s1[b,i]
                    let mut z = Vec::with_capacity(bs * k * d1);
                    for b in 0..bs {
                        for kk in 0..k {
                            let gk = gd[b * k + kk];
                            z.extend(s1d[b * d1..(b + 1) * d1].iter().map(|&v| gk * v));
                        }
                    }
                    if self.rg(*t) {
                        let s2d = self.value(*s2).data();
                        gemm(true, false, k * d1, d2, bs, &z, s2d, self.slot(grads, *t).data_mut(), true);
                    }
                    if self.rg(*s2) {
                        let td = self.value(*t).data();
                        gemm(false, false, bs, d2, k * d1, &z, td, self.slot(grads, *s2).data_mut(), true);
                    }
                }
            }
            Op::Custom { x, deriv } => {
                let xd = self.value(*x).data();
                let d: Vec<T> = gd
                    .iter()
                    .zip(xd.iter().zip(y))
                    .map(|(&g, (&xv, &yv))| g * deriv(xv, yv))
                    .collect();
                self.add_into(grads, *x, &d);
            }
        }
    }
}
