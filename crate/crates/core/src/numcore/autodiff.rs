//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! A [`Graph`] records every operation eagerly: values are computed on the spot and kept,
//! along with enough structure to run the chain rule backwards from a scalar loss.
//! Operations on nodes that do not depend on any gradient-tracked leaf skip backward work.

use alloc::vec::Vec;

use super::tensor::{matmul, matmul_at, matmul_bt};
use super::vecops::{sigmoid, softmax_in_place};
use super::{Real, Tensor};
use crate::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-6;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    LayerNorm(Var, Vec<T>),
    Silu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    Gather(Var, Vec<usize>),
    MeanRows(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients indexed by [`Var`]; untracked or unreached nodes have none.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

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

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.val(a), self.val(b));
        let t = self.tracked(&[a, b]);
        self.push(out, Op::MatMul(a, b), t)
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let out = matmul_bt(self.val(a), self.val(b));
        let t = self.tracked(&[a, b]);
        self.push(out, Op::MatMulBt(a, b), t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.val(a).add(self.val(b));
        let t = self.tracked(&[a, b]);
        self.push(out, Op::Add(a, b), t)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.val(a).sub(self.val(b));
        let t = self.tracked(&[a, b]);
        self.push(out, Op::Sub(a, b), t)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.val(a).zip_map(self.val(b), |x, y| x * y);
        let t = self.tracked(&[a, b]);
        self.push(out, Op::Mul(a, b), t)
    }

    /// Adds a `[1, m]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = broadcast_rows(self.val(a), self.val(row), |x, r| x + r);
        let t = self.tracked(&[a, row]);
        self.push(out, Op::AddRow(a, row), t)
    }

    /// Multiplies every row of `a` elementwise by a `[1, m]` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let out = broadcast_rows(self.val(a), self.val(row), |x, r| x * r);
        let t = self.tracked(&[a, row]);
        self.push(out, Op::MulRow(a, row), t)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.val(a).scale(s);
        let t = self.tracked(&[a]);
        self.push(out, Op::Scale(a, s), t)
    }

    pub fn add_const(&mut self, a: Var, c: T) -> Var {
        let out = self.val(a).map(|x| x + c);
        let t = self.tracked(&[a]);
        self.push(out, Op::AddConst(a), t)
    }

    /// Per-row normalization to zero mean and unit variance, without affine parameters.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.val(a);
        let (n, m) = (x.rows(), x.cols());
        let mut out = x.clone();
        let mut inv = Vec::with_capacity(n);
        let mf = T::lit(m as f64);
        for r in 0..n {
            let row = out.row_slice_mut(r);
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) / mf;
            let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / mf;
            let is = T::one() / (var + T::lit(LN_EPS)).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv.push(is);
        }
        let t = self.tracked(&[a]);
        self.push(out, Op::LayerNorm(a, inv), t)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.val(a).map(|x| x * sigmoid(x));
        let t = self.tracked(&[a]);
        self.push(out, Op::Silu(a), t)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.val(a).map(sigmoid);
        let t = self.tracked(&[a]);
        self.push(out, Op::Sigmoid(a), t)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.val(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_slice_mut(r));
        }
        let t = self.tracked(&[a]);
        self.push(out, Op::SoftmaxRows(a), t)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.val(a);
        let mut data = Vec::with_capacity(x.rows() * len);
        for r in 0..x.rows() {
            data.extend_from_slice(&x.row_slice(r)[start..start + len]);
        }
        let out = Tensor::new(&[x.rows(), len], data).expect("slice_cols shape");
        let t = self.tracked(&[a]);
        self.push(out, Op::SliceCols(a, start), t)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let n = self.val(parts[0]).rows();
        let m: usize = parts.iter().map(|&p| self.val(p).cols()).sum();
        let mut data = Vec::with_capacity(n * m);
        for r in 0..n {
            for &p in parts {
                data.extend_from_slice(self.val(p).row_slice(r));
            }
        }
        let out = Tensor::new(&[n, m], data).expect("concat_cols shape");
        let t = self.tracked(parts);
        self.push(out, Op::ConcatCols(parts.to_vec()), t)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.val(a);
        let m = x.cols();
        let out = Tensor::new(&[len, m], x.data()[start * m..(start + len) * m].to_vec())
            .expect("slice_rows shape");
        let t = self.tracked(&[a]);
        self.push(out, Op::SliceRows(a, start), t)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let m = self.val(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            debug_assert_eq!(self.val(p).cols(), m);
            data.extend_from_slice(self.val(p).data());
        }
        let n = data.len() / m;
        let out = Tensor::new(&[n, m], data).expect("concat_rows shape");
        let t = self.tracked(parts);
        self.push(out, Op::ConcatRows(parts.to_vec()), t)
    }

    /// Row lookup: output row `i` is row `ids[i]` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let x = self.val(table);
        let m = x.cols();
        let mut data = Vec::with_capacity(ids.len() * m);
        for &id in ids {
            data.extend_from_slice(x.row_slice(id));
        }
        let out = Tensor::new(&[ids.len(), m], data).expect("gather shape");
        let t = self.tracked(&[table]);
        self.push(out, Op::Gather(table, ids.to_vec()), t)
    }

    /// Mean over rows, as a `[1, m]` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.val(a);
        let inv = T::one() / T::lit(x.rows() as f64);
        let out = x.col_sums().scale(inv);
        let t = self.tracked(&[a]);
        self.push(out, Op::MeanRows(a), t)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.val(a).clone().reshape(shape)?;
        let t = self.tracked(&[a]);
        Ok(self.push(out, Op::Reshape(a), t))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.val(a).sum());
        let t = self.tracked(&[a]);
        self.push(out, Op::Sum(a), t)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.val(a);
        let out = Tensor::scalar(x.sum() / T::lit(x.len() as f64));
        let t = self.tracked(&[a]);
        self.push(out, Op::Mean(a), t)
    }

    /// Mean squared error between two equally shaped nodes.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean(sq)
    }

    /// Runs the chain rule from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.val(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss { shape: lv.shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, g: Tensor<T>| {
            if !self.nodes[v.0].tracked {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        let tracked = |v: Var| self.nodes[v.0].tracked;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if tracked(*a) {
                    acc(*a, matmul_bt(dy, self.val(*b)));
                }
                if tracked(*b) {
                    acc(*b, matmul_at(self.val(*a), dy));
                }
            }
            Op::MatMulBt(a, b) => {
                if tracked(*a) {
                    acc(*a, matmul(dy, self.val(*b)));
                }
                if tracked(*b) {
                    acc(*b, matmul_at(dy, self.val(*a)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.scale(-T::one()));
            }
            Op::Mul(a, b) => {
                if tracked(*a) {
                    acc(*a, dy.zip_map(self.val(*b), |g, y| g * y));
                }
                if tracked(*b) {
                    acc(*b, dy.zip_map(self.val(*a), |g, x| g * x));
                }
            }
            Op::AddRow(a, r) => {
                acc(*a, dy.clone());
                if tracked(*r) {
                    acc(*r, reshape_like(dy.col_sums(), self.val(*r)));
                }
            }
            Op::MulRow(a, r) => {
                if tracked(*a) {
                    acc(*a, broadcast_rows(dy, self.val(*r), |g, rv| g * rv));
                }
                if tracked(*r) {
                    let prod = dy.zip_map(self.val(*a), |g, x| g * x);
                    acc(*r, reshape_like(prod.col_sums(), self.val(*r)));
                }
            }
            Op::Scale(a, s) => acc(*a, dy.scale(*s)),
            Op::AddConst(a) => acc(*a, dy.clone()),
            Op::LayerNorm(a, inv) => {
                let y = &node.value;
                let m = y.cols();
                let mf = T::lit(m as f64);
                let mut dx = dy.clone();
                for r in 0..y.rows() {
                    let yr = y.row_slice(r);
                    let gr = dy.row_slice(r);
                    let mean_g = gr.iter().fold(T::zero(), |s, &g| s + g) / mf;
                    let mean_gy =
                        gr.iter().zip(yr).fold(T::zero(), |s, (&g, &yv)| s + g * yv) / mf;
                    for ((d, &g), &yv) in dx.row_slice_mut(r).iter_mut().zip(gr).zip(yr) {
                        *d = inv[r] * (g - mean_g - yv * mean_gy);
                    }
                }
                acc(*a, dx);
            }
            Op::Silu(a) => {
                let g = dy.zip_map(self.val(*a), |g, x| {
                    let s = sigmoid(x);
                    g * s * (T::one() + x * (T::one() - s))
                });
                acc(*a, g);
            }
            Op::Sigmoid(a) => acc(*a, dy.zip_map(&node.value, |g, s| g * s * (T::one() - s))),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut dx = dy.clone();
                for r in 0..y.rows() {
                    let yr = y.row_slice(r);
                    let gr = dy.row_slice(r);
                    let inner = gr.iter().zip(yr).fold(T::zero(), |s, (&g, &yv)| s + g * yv);
                    for ((d, &g), &yv) in dx.row_slice_mut(r).iter_mut().zip(gr).zip(yr) {
                        *d = yv * (g - inner);
                    }
                }
                acc(*a, dx);
            }
            Op::SliceCols(a, start) => {
                let src = self.val(*a);
                let mut g = Tensor::zeros(src.shape());
                let len = dy.cols();
                for r in 0..dy.rows() {
                    g.row_slice_mut(r)[*start..*start + len].copy_from_slice(dy.row_slice(r));
                }
                acc(*a, g);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.val(p);
                    let w = pv.cols();
                    if tracked(p) {
                        let mut g = Tensor::zeros(pv.shape());
                        for r in 0..dy.rows() {
                            g.row_slice_mut(r).copy_from_slice(&dy.row_slice(r)[offset..offset + w]);
                        }
                        acc(p, g);
                    }
                    offset += w;
                }
            }
            Op::SliceRows(a, start) => {
                let src = self.val(*a);
                let m = src.cols();
                let mut g = Tensor::zeros(src.shape());
                g.data_mut()[start * m..start * m + dy.len()].copy_from_slice(dy.data());
                acc(*a, g);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.val(p);
                    let n = pv.len();
                    if tracked(p) {
                        let g = Tensor::new(pv.shape(), dy.data()[offset..offset + n].to_vec())
                            .expect("concat_rows grad");
                        acc(p, g);
                    }
                    offset += n;
                }
            }
            Op::Gather(table, ids) => {
                let src = self.val(*table);
                let mut g = Tensor::zeros(src.shape());
                for (i, &id) in ids.iter().enumerate() {
                    for (d, &v) in g.row_slice_mut(id).iter_mut().zip(dy.row_slice(i)) {
                        *d += v;
                    }
                }
                acc(*table, g);
            }
            Op::MeanRows(a) => {
                let src = self.val(*a);
                let inv = T::one() / T::lit(src.rows() as f64);
                let row = dy.data();
                let g = Tensor::from_fn(src.shape(), |i| row[i % src.cols()] * inv);
                acc(*a, g);
            }
            Op::Reshape(a) => {
                let g = dy.clone().reshape(self.val(*a).shape()).expect("reshape grad");
                acc(*a, g);
            }
            Op::Sum(a) => acc(*a, Tensor::full(self.val(*a).shape(), dy.data()[0])),
            Op::Mean(a) => {
                let src = self.val(*a);
                let v = dy.data()[0] / T::lit(src.len() as f64);
                acc(*a, Tensor::full(src.shape(), v));
            }
        }
    }
}

fn broadcast_rows<T: Real>(a: &Tensor<T>, row: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let m = a.cols();
    assert_eq!(row.len(), m, "row broadcast width mismatch");
    let r = row.data();
    let mut out = a.clone();
    for i in 0..out.rows() {
        for (o, &rv) in out.row_slice_mut(i).iter_mut().zip(r) {
            *o = f(*o, rv);
        }
    }
    out
}

fn reshape_like<T: Real>(t: Tensor<T>, like: &Tensor<T>) -> Tensor<T> {
    t.reshape(like.shape()).expect("reshape_like")
}

/// Central finite-difference gradient of `f` at `x`, coordinate by coordinate.
pub fn finite_difference<F>(x: &Tensor<f64>, step: f64, coords: &[usize], mut f: F) -> Vec<f64>
where
    F: FnMut(&Tensor<f64>) -> f64,
{
    let mut probe = x.clone();
    coords
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + step;
            let up = f(&probe);
            probe.data_mut()[i] = orig - step;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}
