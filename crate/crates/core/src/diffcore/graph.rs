//! Recorded computation with reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Each operation appends a
//! node holding its output value and the information its backward rule needs;
//! [`Graph::backward`] walks the nodes in reverse and returns the gradient of a
//! scalar with respect to every node that depends on an input or parameter.
//!
//! Matrix-shaped operations view their operands through
//! [`Tensor::matrix_dims`]: a vector of length `n` is a `1 × n` row.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::{ParamId, ParamSet, Scalar, Tensor};

/// Norm below which [`Graph::l2_normalize_rows`] refuses to normalize.
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Input,
    Param,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Powf(Var, f64),
    Sum(Var),
    Mean(Var),
    SoftmaxMasked(Var),
    LogSoftmaxRows(Var),
    ConcatLast(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    PickCols(Var, Vec<usize>),
    L2NormalizeRows(Var),
    MeanPoolRows(Var, Vec<bool>),
    MaskRows(Var, Vec<bool>),
    EmbedMean {
        table: Var,
        tokens: Vec<u32>,
        width: usize,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op,
    tracked: bool,
}

/// Per-step record of a differentiable computation.
#[derive(Debug)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn binary_broadcast(a: &[usize], an: usize, b: &[usize], bn: usize) -> Option<Vec<usize>> {
    if a == b || bn == 1 {
        Some(a.to_vec())
    } else if an == 1 {
        Some(b.to_vec())
    } else {
        None
    }
}

fn matmul_kernel<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// `a · bᵀ` for `a: m × k`, `b: n × k`.
fn matmul_nt_kernel<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * n + j] = a_row
                .iter()
                .zip(b_row)
                .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
        }
    }
    out
}

/// `aᵀ · b` for `a: m × k`, `b: m × n`.
fn matmul_tn_kernel<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for p in 0..m {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..k {
            let av = a[p * k + i];
            if av == T::zero() {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to `var`, zero-filled when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var, numel: usize) -> Vec<T> {
        self.get(var)
            .map(<[T]>::to_vec)
            .unwrap_or_else(|| vec![T::zero(); numel])
    }

    /// Adds every parameter gradient into the matching slot of `params`.
    pub fn accumulate_into(&self, params: &mut ParamSet<T>) -> Result<()> {
        for &(id, var) in &self.params {
            if let Some(g) = self.get(var) {
                params.get_mut(id).accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
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

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.matrix_dims()
    }

    fn vals(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.values()
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<T>, op: Op, tracked: bool) -> Result<Var> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                format!("{op:?}")
                    .split('(')
                    .next()
                    .unwrap_or("op")
                    .to_string(),
            ));
        }
        let value = Tensor::new(shape, values)?;
        self.nodes.push(Node { value, op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_unary(&mut self, x: Var, shape: Vec<usize>, values: Vec<T>, op: Op) -> Result<Var> {
        let tracked = self.tracked(x);
        self.push(shape, values, op, tracked)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Constant,
            tracked: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf; its gradient is readable from [`Gradients::get`].
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Input,
            tracked: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a parameter leaf. Repeated calls for the same id share one node.
    pub fn param(&mut self, set: &ParamSet<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let mut value = set.get(id).clone();
        value.zero_grad();
        self.nodes.push(Node {
            value,
            op: Op::Param,
            tracked: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    fn require_matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        if self.shape(v).len() != 2 {
            return Err(Error::shape(op, self.shape(v), &[0, 0]));
        }
        Ok(self.dims(v))
    }

    /// `a · b` for `a: m × k`, `b: k × n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.require_matrix("matmul", a)?;
        let (k2, n) = self.require_matrix("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let out = matmul_kernel(self.vals(a), self.vals(b), m, k, n);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(vec![m, n], out, Op::MatMul(a, b), tracked)
    }

    /// `a · bᵀ` for `a: m × k`, `b: n × k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.require_matrix("matmul_nt", a)?;
        let (n, k2) = self.require_matrix("matmul_nt", b)?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", self.shape(a), self.shape(b)));
        }
        let out = matmul_nt_kernel(self.vals(a), self.vals(b), m, k, n);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(vec![m, n], out, Op::MatMulNt(a, b), tracked)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op,
    ) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let shape = binary_broadcast(va.shape(), va.numel(), vb.shape(), vb.numel())
            .ok_or_else(|| Error::shape(name, va.shape(), vb.shape()))?;
        let (xa, xb) = (va.values(), vb.values());
        let out: Vec<T> = if xa.len() == xb.len() {
            xa.iter().zip(xb).map(|(&x, &y)| f(x, y)).collect()
        } else if xb.len() == 1 {
            xa.iter().map(|&x| f(x, xb[0])).collect()
        } else {
            xb.iter().map(|&y| f(xa[0], y)).collect()
        };
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(shape, out, op, tracked)
    }

    /// Elementwise sum; either side may be a single-element tensor.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`n` bias to every row of an `m × n` operand.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.value(bias).numel() != n {
            return Err(Error::shape("add_row", self.shape(x), self.shape(bias)));
        }
        let xv = self.vals(x);
        let bv = self.vals(bias);
        let mut out = xv.to_vec();
        for r in 0..m {
            add_into(&mut out[r * n..(r + 1) * n], bv);
        }
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(x) || self.tracked(bias);
        self.push(shape, out, Op::AddRow(x, bias), tracked)
    }

    /// Scales row `i` of an `m × n` operand by `col[i]`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.value(col).numel() != m {
            return Err(Error::shape("mul_col", self.shape(x), self.shape(col)));
        }
        let xv = self.vals(x);
        let cv = self.vals(col);
        let out: Vec<T> = (0..m * n).map(|i| xv[i] * cv[i / n]).collect();
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(x) || self.tracked(col);
        self.push(shape, out, Op::MulCol(x, col), tracked)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let c = T::from_f64(s);
        let out = self.vals(x).iter().map(|&v| v * c).collect();
        self.push_unary(x, self.shape(x).to_vec(), out, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        let c = T::from_f64(s);
        let out = self.vals(x).iter().map(|&v| v + c).collect();
        self.push_unary(x, self.shape(x).to_vec(), out, Op::AddScalar(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.vals(x).iter().map(|v| v.tanh()).collect();
        self.push_unary(x, self.shape(x).to_vec(), out, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.vals(x).iter().map(|v| v.exp()).collect();
        self.push_unary(x, self.shape(x).to_vec(), out, Op::Exp(x))
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(&bad) = self.vals(x).iter().find(|&&v| v <= T::zero()) {
            return Err(Error::Domain {
                op: "log",
                value: bad.as_f64(),
            });
        }
        let out = self.vals(x).iter().map(|v| v.ln()).collect();
        self.push_unary(x, self.shape(x).to_vec(), out, Op::Log(x))
    }

    /// `x^p` for non-negative `x`.
    pub fn powf(&mut self, x: Var, p: f64) -> Result<Var> {
        if let Some(&bad) = self.vals(x).iter().find(|&&v| v < T::zero()) {
            return Err(Error::Domain {
                op: "powf",
                value: bad.as_f64(),
            });
        }
        let e = T::from_f64(p);
        let out = self.vals(x).iter().map(|v| v.powf(e)).collect();
        self.push_unary(x, self.shape(x).to_vec(), out, Op::Powf(x, p))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.vals(x).iter().copied().sum();
        self.push_unary(x, Vec::new(), vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let vals = self.vals(x);
        let s: T = vals.iter().copied().sum();
        let m = s / T::from_f64(vals.len() as f64);
        self.push_unary(x, Vec::new(), vec![m], Op::Mean(x))
    }

    /// Row-wise softmax over the last dimension restricted to `mask`.
    ///
    /// Masked entries come out as exactly zero.
    pub fn softmax_masked(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.dims(x);
        if mask.len() != n {
            return Err(Error::shape("softmax_masked", self.shape(x), &[mask.len()]));
        }
        if !mask.iter().any(|&b| b) {
            return Err(Error::DegenerateMask);
        }
        let xv = self.vals(x);
        let mut out = vec![T::zero(); m * n];
        for r in 0..m {
            let row = &xv[r * n..(r + 1) * n];
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, &keep)| keep)
                .map(|(&v, _)| v)
                .fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for j in 0..n {
                if mask[j] {
                    let e = (row[j] - max).exp();
                    out[r * n + j] = e;
                    total = total + e;
                }
            }
            for o in &mut out[r * n..(r + 1) * n] {
                *o = *o / total;
            }
        }
        self.push_unary(x, self.shape(x).to_vec(), out, Op::SoftmaxMasked(x))
    }

    /// Row-wise log-softmax over the last dimension, max-shifted.
    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        let xv = self.vals(x);
        let mut out = vec![T::zero(); m * n];
        for r in 0..m {
            let row = &xv[r * n..(r + 1) * n];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            for j in 0..n {
                out[r * n + j] = row[j] - lse;
            }
        }
        self.push_unary(x, self.shape(x).to_vec(), out, Op::LogSoftmaxRows(x))
    }

    /// Concatenation along the last dimension; leading dimensions must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat_last needs at least one part"))?;
        let lead = self.shape(first)[..self.shape(first).len().saturating_sub(1)].to_vec();
        let rows = self.dims(first).0;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat_last", self.shape(first), s));
            }
            total += self.dims(p).1;
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let (_, c) = self.dims(p);
                out.extend_from_slice(&self.vals(p)[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let tracked = parts.iter().any(|&p| self.tracked(p));
        self.push(shape, out, Op::ConcatLast(parts.to_vec()), tracked)
    }

    /// Stacks matrices (or row vectors) vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows needs at least one part"))?;
        let cols = self.dims(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                return Err(Error::shape(
                    "concat_rows",
                    self.shape(first),
                    self.shape(p),
                ));
            }
            rows += r;
            out.extend_from_slice(self.vals(p));
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        self.push(
            vec![rows, cols],
            out,
            Op::ConcatRows(parts.to_vec()),
            tracked,
        )
    }

    /// Columns `start..start + len` of an `m × n` operand.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if len == 0 || start + len > n {
            return Err(Error::shape("slice_cols", self.shape(x), &[start, len]));
        }
        let xv = self.vals(x);
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&xv[r * n + start..r * n + start + len]);
        }
        self.push_unary(x, vec![m, len], out, Op::SliceCols(x, start))
    }

    /// Rows of `x` selected by `idx` (repetition allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(x);
        if idx.is_empty() {
            return Err(Error::contract("gather_rows needs at least one index"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::shape("gather_rows", self.shape(x), &[bad]));
        }
        let xv = self.vals(x);
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&xv[i * n..(i + 1) * n]);
        }
        self.push_unary(x, vec![idx.len(), n], out, Op::GatherRows(x, idx.to_vec()))
    }

    /// Element `x[i, cols[i]]` of every row, as an `m × 1` column.
    pub fn pick_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(x);
        if cols.len() != m || cols.iter().any(|&c| c >= n) {
            return Err(Error::shape("pick_cols", self.shape(x), &[cols.len()]));
        }
        let xv = self.vals(x);
        let out = cols
            .iter()
            .enumerate()
            .map(|(r, &c)| xv[r * n + c])
            .collect();
        self.push_unary(x, vec![m, 1], out, Op::PickCols(x, cols.to_vec()))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x);
        let xv = self.vals(x);
        let mut out = vec![T::zero(); m * n];
        for r in 0..m {
            let row = &xv[r * n..(r + 1) * n];
            let norm = row
                .iter()
                .map(|&v| v.as_f64() * v.as_f64())
                .sum::<f64>()
                .sqrt();
            if norm <= NORM_EPS {
                return Err(Error::DegenerateVector { norm });
            }
            let inv = T::from_f64(1.0 / norm);
            for j in 0..n {
                out[r * n + j] = row[j] * inv;
            }
        }
        self.push_unary(x, self.shape(x).to_vec(), out, Op::L2NormalizeRows(x))
    }

    /// Mean of the rows kept by `mask` as a `1 × d` row; zero when none are kept.
    pub fn mean_pool_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.dims(x);
        if mask.len() != m {
            return Err(Error::shape("mean_pool_rows", self.shape(x), &[mask.len()]));
        }
        let kept = mask.iter().filter(|&&b| b).count();
        let mut out = vec![T::zero(); n];
        if kept > 0 {
            let xv = self.vals(x);
            for r in (0..m).filter(|&r| mask[r]) {
                add_into(&mut out, &xv[r * n..(r + 1) * n]);
            }
            let inv = T::from_f64(1.0 / kept as f64);
            out.iter_mut().for_each(|v| *v = *v * inv);
        }
        self.push_unary(x, vec![1, n], out, Op::MeanPoolRows(x, mask.to_vec()))
    }

    /// Zeroes the rows whose mask entry is false.
    pub fn mask_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.dims(x);
        if mask.len() != m {
            return Err(Error::shape("mask_rows", self.shape(x), &[mask.len()]));
        }
        let mut out = self.vals(x).to_vec();
        for r in (0..m).filter(|&r| !mask[r]) {
            out[r * n..(r + 1) * n]
                .iter_mut()
                .for_each(|v| *v = T::zero());
        }
        self.push_unary(
            x,
            self.shape(x).to_vec(),
            out,
            Op::MaskRows(x, mask.to_vec()),
        )
    }

    /// Embedding lookup followed by a mean over non-padding positions.
    ///
    /// `tokens` holds `rows × width` ids; id 0 is padding and never contributes.
    /// A row made only of padding yields a zero vector.
    pub fn embed_mean(&mut self, table: Var, tokens: &[u32], width: usize) -> Result<Var> {
        let (vocab, d) = self.require_matrix("embed_mean", table)?;
        if width == 0 || tokens.len() % width != 0 {
            return Err(Error::shape("embed_mean", &[tokens.len()], &[width]));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::contract(format!(
                "token id {bad} outside vocabulary of size {vocab}"
            )));
        }
        let rows = tokens.len() / width;
        let tv = self.vals(table);
        let mut out = vec![T::zero(); rows * d];
        for r in 0..rows {
            let ids = &tokens[r * width..(r + 1) * width];
            let count = ids.iter().filter(|&&t| t != 0).count();
            if count == 0 {
                continue;
            }
            let dst = &mut out[r * d..(r + 1) * d];
            for &t in ids.iter().filter(|&&t| t != 0) {
                add_into(dst, &tv[t as usize * d..(t as usize + 1) * d]);
            }
            let inv = T::from_f64(1.0 / count as f64);
            dst.iter_mut().for_each(|v| *v = *v * inv);
        }
        let tracked = self.tracked(table);
        self.push(
            vec![rows, d],
            out,
            Op::EmbedMean {
                table,
                tokens: tokens.to_vec(),
                width,
            },
            tracked,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::shape("reshape", self.shape(x), shape));
        }
        let out = self.vals(x).to_vec();
        self.push_unary(x, shape.to_vec(), out, Op::Reshape(x))
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            let y = node.value.values();
            self.backprop(&node.op, y, &dy, &mut grads);
            grads[i] = Some(dy);
        }

        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        params.sort();
        Ok(Gradients { grads, params })
    }

    /// Convenience for a training step: backward, then add parameter
    /// gradients into `params`.
    pub fn backward_into(&self, loss: Var, params: &mut ParamSet<T>) -> Result<Gradients<T>> {
        let grads = self.backward(loss)?;
        grads.accumulate_into(params)?;
        Ok(grads)
    }

    fn backprop(&self, op: &Op, y: &[T], dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let send = |grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>| {
            if !self.tracked(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => add_into(acc, &g),
                slot @ None => *slot = Some(g),
            }
        };

        match op {
            Op::Constant | Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let (_, n) = self.dims(*b);
                if self.tracked(*a) {
                    send(grads, *a, matmul_nt_kernel(dy, self.vals(*b), m, n, k));
                }
                if self.tracked(*b) {
                    send(grads, *b, matmul_tn_kernel(self.vals(*a), dy, m, k, n));
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.dims(*a);
                let (n, _) = self.dims(*b);
                if self.tracked(*a) {
                    send(grads, *a, matmul_kernel(dy, self.vals(*b), m, n, k));
                }
                if self.tracked(*b) {
                    send(grads, *b, matmul_tn_kernel(dy, self.vals(*a), m, n, k));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                let reduce = |target: usize, g: Vec<T>| {
                    if target == g.len() {
                        g
                    } else {
                        vec![g.iter().copied().sum()]
                    }
                };
                let na = self.value(*a).numel();
                let nb = self.value(*b).numel();
                send(grads, *a, reduce(na, dy.to_vec()));
                send(
                    grads,
                    *b,
                    reduce(nb, dy.iter().map(|&g| g * sign).collect()),
                );
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.vals(*a), self.vals(*b));
                let at = |x: &[T], i: usize| if x.len() == 1 { x[0] } else { x[i] };
                let ga: Vec<T> = (0..dy.len()).map(|i| dy[i] * at(xb, i)).collect();
                let gb: Vec<T> = (0..dy.len()).map(|i| dy[i] * at(xa, i)).collect();
                let fold = |g: Vec<T>, n: usize| {
                    if n == g.len() {
                        g
                    } else {
                        vec![g.into_iter().sum()]
                    }
                };
                send(grads, *a, fold(ga, xa.len()));
                send(grads, *b, fold(gb, xb.len()));
            }
            Op::AddRow(x, bias) => {
                let (m, n) = self.dims(*x);
                send(grads, *x, dy.to_vec());
                let mut gb = vec![T::zero(); n];
                for r in 0..m {
                    add_into(&mut gb, &dy[r * n..(r + 1) * n]);
                }
                send(grads, *bias, gb);
            }
            Op::MulCol(x, col) => {
                let (m, n) = self.dims(*x);
                let (xv, cv) = (self.vals(*x), self.vals(*col));
                let gx = (0..m * n).map(|i| dy[i] * cv[i / n]).collect();
                let gc = (0..m)
                    .map(|r| (0..n).map(|j| dy[r * n + j] * xv[r * n + j]).sum())
                    .collect();
                send(grads, *x, gx);
                send(grads, *col, gc);
            }
            Op::Scale(x, s) => {
                let c = T::from_f64(*s);
                send(grads, *x, dy.iter().map(|&g| g * c).collect());
            }
            Op::AddScalar(x) | Op::Reshape(x) => send(grads, *x, dy.to_vec()),
            Op::Tanh(x) => {
                let g = dy
                    .iter()
                    .zip(y)
                    .map(|(&g, &t)| g * (T::one() - t * t))
                    .collect();
                send(grads, *x, g);
            }
            Op::Exp(x) => {
                let g = dy.iter().zip(y).map(|(&g, &e)| g * e).collect();
                send(grads, *x, g);
            }
            Op::Log(x) => {
                let g = dy.iter().zip(self.vals(*x)).map(|(&g, &v)| g / v).collect();
                send(grads, *x, g);
            }
            Op::Powf(x, p) => {
                let e = T::from_f64(*p);
                let g = dy
                    .iter()
                    .zip(self.vals(*x))
                    .map(|(&g, &v)| {
                        if *p == 0.0 {
                            T::zero()
                        } else if v == T::zero() {
                            if *p == 1.0 {
                                g
                            } else if *p > 1.0 {
                                T::zero()
                            } else {
                                g * T::infinity()
                            }
                        } else {
                            g * e * v.powf(e - T::one())
                        }
                    })
                    .collect();
                send(grads, *x, g);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                send(grads, *x, vec![dy[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                send(grads, *x, vec![dy[0] / T::from_f64(n as f64); n]);
            }
            Op::SoftmaxMasked(x) => {
                let (m, n) = self.dims(*x);
                let mut g = vec![T::zero(); m * n];
                for r in 0..m {
                    let yr = &y[r * n..(r + 1) * n];
                    let dr = &dy[r * n..(r + 1) * n];
                    let dot: T = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        g[r * n + j] = yr[j] * (dr[j] - dot);
                    }
                }
                send(grads, *x, g);
            }
            Op::LogSoftmaxRows(x) => {
                let (m, n) = self.dims(*x);
                let mut g = vec![T::zero(); m * n];
                for r in 0..m {
                    let dr = &dy[r * n..(r + 1) * n];
                    let total: T = dr.iter().copied().sum();
                    for j in 0..n {
                        g[r * n + j] = dr[j] - y[r * n + j].exp() * total;
                    }
                }
                send(grads, *x, g);
            }
            Op::ConcatLast(parts) => {
                let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
                let rows = self.dims(parts[0]).0;
                let mut offset = 0;
                for &p in parts {
                    let (_, c) = self.dims(p);
                    let mut g = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        g.extend_from_slice(&dy[r * total + offset..r * total + offset + c]);
                    }
                    offset += c;
                    send(grads, p, g);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    send(grads, p, dy[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::SliceCols(x, start) => {
                let (m, n) = self.dims(*x);
                let len = dy.len() / m;
                let mut g = vec![T::zero(); m * n];
                for r in 0..m {
                    g[r * n + start..r * n + start + len]
                        .copy_from_slice(&dy[r * len..(r + 1) * len]);
                }
                send(grads, *x, g);
            }
            Op::GatherRows(x, idx) => {
                let (m, n) = self.dims(*x);
                let mut g = vec![T::zero(); m * n];
                for (k, &i) in idx.iter().enumerate() {
                    add_into(&mut g[i * n..(i + 1) * n], &dy[k * n..(k + 1) * n]);
                }
                send(grads, *x, g);
            }
            Op::PickCols(x, cols) => {
                let (m, n) = self.dims(*x);
                let mut g = vec![T::zero(); m * n];
                for (r, &c) in cols.iter().enumerate() {
                    g[r * n + c] = dy[r];
                }
                send(grads, *x, g);
            }
            Op::L2NormalizeRows(x) => {
                let (m, n) = self.dims(*x);
                let xv = self.vals(*x);
                let mut g = vec![T::zero(); m * n];
                for r in 0..m {
                    let xr = &xv[r * n..(r + 1) * n];
                    let norm = xr.iter().map(|&v| v * v).sum::<T>().sqrt();
                    let yr = &y[r * n..(r + 1) * n];
                    let dr = &dy[r * n..(r + 1) * n];
                    let dot: T = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        g[r * n + j] = (dr[j] - yr[j] * dot) / norm;
                    }
                }
                send(grads, *x, g);
            }
            Op::MeanPoolRows(x, mask) => {
                let (m, n) = self.dims(*x);
                let kept = mask.iter().filter(|&&b| b).count();
                let mut g = vec![T::zero(); m * n];
                if kept > 0 {
                    let inv = T::from_f64(1.0 / kept as f64);
                    for r in (0..m).filter(|&r| mask[r]) {
                        for j in 0..n {
                            g[r * n + j] = dy[j] * inv;
                        }
                    }
                }
                send(grads, *x, g);
            }
            Op::MaskRows(x, mask) => {
                let (_, n) = self.dims(*x);
                let mut g = dy.to_vec();
                for (r, _) in mask.iter().enumerate().filter(|(_, &keep)| !keep) {
                    g[r * n..(r + 1) * n]
                        .iter_mut()
                        .for_each(|v| *v = T::zero());
                }
                send(grads, *x, g);
            }
            Op::EmbedMean {
                table,
                tokens,
                width,
            } => {
                let (vocab, d) = self.dims(*table);
                let mut g = vec![T::zero(); vocab * d];
                for (r, ids) in tokens.chunks(*width).enumerate() {
                    let count = ids.iter().filter(|&&t| t != 0).count();
                    if count == 0 {
                        continue;
                    }
                    let inv = T::from_f64(1.0 / count as f64);
                    let dr = &dy[r * d..(r + 1) * d];
                    for &t in ids.iter().filter(|&&t| t != 0) {
                        let dst = &mut g[t as usize * d..(t as usize + 1) * d];
                        for (o, &v) in dst.iter_mut().zip(dr) {
                            *o = *o + v * inv;
                        }
                    }
                }
                send(grads, *table, g);
            }
        }
    }
}
