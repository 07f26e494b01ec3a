//! Reverse-mode autodiff over a dynamically recorded graph of 2-D values.
//!
//! A [`Graph`] borrows parameter values from a [`ParamSource`] without
//! copying them; forward ops append nodes, and [`Graph::backward`] replays
//! them in reverse, returning gradients keyed by [`ParamId`].

use super::kernels::{self, Mask};
use super::real::Real;
use super::tensor::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Read access to parameter values in some precision.
pub trait ParamSource<T: Real> {
    fn num_params(&self) -> usize;
    fn param_dims(&self, id: ParamId) -> (usize, usize);
    fn param_values(&self, id: ParamId) -> &[T];
}

impl ParamSource<f32> for ParamStore {
    fn num_params(&self) -> usize {
        self.len()
    }

    fn param_dims(&self, id: ParamId) -> (usize, usize) {
        let s = self.get(id).tensor.shape();
        (s[0], s[1])
    }

    fn param_values(&self, id: ParamId) -> &[f32] {
        self.get(id).tensor.data()
    }
}

/// Owned copy of a parameter set, converted to precision `T`.
#[derive(Clone, Debug)]
pub struct ParamValues<T> {
    names: Vec<String>,
    dims: Vec<(usize, usize)>,
    values: Vec<Vec<T>>,
}

impl<T: Real> ParamValues<T> {
    pub fn from_store(store: &ParamStore) -> Self {
        let mut out = Self {
            names: Vec::with_capacity(store.len()),
            dims: Vec::with_capacity(store.len()),
            values: Vec::with_capacity(store.len()),
        };
        for (_, p) in store.iter() {
            let s = p.tensor.shape();
            out.names.push(p.name.clone());
            out.dims.push((s[0], s[1]));
            out.values
                .push(p.tensor.data().iter().map(|&v| T::of_f32(v)).collect());
        }
        out
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.values[id.0]
    }
}

impl<T: Real> ParamSource<T> for ParamValues<T> {
    fn num_params(&self) -> usize {
        self.values.len()
    }

    fn param_dims(&self, id: ParamId) -> (usize, usize) {
        self.dims[id.0]
    }

    fn param_values(&self, id: ParamId) -> &[T] {
        &self.values[id.0]
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        stats: Vec<(T, T)>,
    },
    Embedding {
        table: Var,
        ids: Vec<u32>,
    },
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Option<Vec<T>>,
    },
    Dot(Var, Var),
    Sum(Var),
    SoftmaxXent {
        logits: Var,
        target: usize,
        probs: Vec<T>,
    },
}

struct Node<T> {
    rows: usize,
    cols: usize,
    /// `None` for parameter leaves, whose values live in the source.
    value: Option<Vec<T>>,
    op: Op<T>,
}

/// Per-parameter gradients produced by a backward pass.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn empty(num_params: usize) -> Self {
        Self {
            grads: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    fn accumulate(&mut self, id: ParamId, g: &[T]) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &x)| *a += x),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn merge(&mut self, other: &Gradients<T>) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_deref().map(|g| (ParamId(i), g)))
    }
}

impl Gradients<f32> {
    /// Adds these gradients into the parameters' accumulators.
    pub fn apply_to(&self, store: &mut ParamStore) {
        for (id, g) in self.iter() {
            store.get_mut(id).tensor.accumulate_grad(g);
        }
    }
}

pub struct Graph<'a, T: Real> {
    source: &'a dyn ParamSource<T>,
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    param_nodes: Vec<Option<Var>>,
}

fn dim_err(op: &'static str, l: (usize, usize), r: (usize, usize)) -> Error {
    Error::Dimension {
        op,
        left: vec![l.0, l.1],
        right: vec![r.0, r.1],
    }
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn new(source: &'a dyn ParamSource<T>) -> Self {
        Self {
            source,
            nodes: Vec::new(),
            grad_enabled: true,
            param_nodes: vec![None; source.num_params()],
        }
    }

    /// Inference graph: skips storing what only the backward pass needs.
    pub fn inference(source: &'a dyn ParamSource<T>) -> Self {
        let mut g = Self::new(source);
        g.grad_enabled = false;
        g
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[T] {
        let n = &self.nodes[v.0];
        match (&n.value, &n.op) {
            (Some(val), _) => val,
            (None, Op::Param(id)) => self.source.param_values(*id),
            _ => unreachable!("non-parameter node without value"),
        }
    }

    /// Copies a node's value out as an `f32` tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        let (r, c) = self.dims(v);
        let data = self.value(v).iter().map(|x| x.as_f32()).collect();
        Tensor::matrix(r, c, data).expect("node dims are consistent")
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn input(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var> {
        if rows * cols != data.len() || rows == 0 || cols == 0 {
            return Err(Error::Dimension {
                op: "input",
                left: vec![rows, cols],
                right: vec![data.len()],
            });
        }
        Ok(self.push(rows, cols, data, Op::Input))
    }

    pub fn input_tensor(&mut self, t: &Tensor) -> Result<Var> {
        let (r, c) = t.dims2()?;
        self.input(r, c, t.data().iter().map(|&x| T::of_f32(x)).collect())
    }

    /// Leaf for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let (rows, cols) = self.source.param_dims(id);
        self.nodes.push(Node {
            rows,
            cols,
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        if ac != br {
            return Err(dim_err("matmul", (ar, ac), (br, bc)));
        }
        let out = kernels::matmul_slices(self.value(a), ar, ac, self.value(b), bc);
        Ok(self.push(ar, bc, out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        if ac != bc {
            return Err(dim_err("matmul_t", (ar, ac), (br, bc)));
        }
        let out = kernels::matmul_t_slices(self.value(a), ar, ac, self.value(b), br);
        Ok(self.push(ar, br, out, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(dim_err("add", da, db));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        Ok(self.push(da.0, da.1, out, Op::Add(a, b)))
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let dr = self.dims(row);
        if dr != (1, c) {
            return Err(dim_err("add_row", (r, c), dr));
        }
        let bias = self.value(row);
        let mut out = self.value(a).to_vec();
        for chunk in out.chunks_mut(c) {
            chunk.iter_mut().zip(bias).for_each(|(o, &b)| *o += b);
        }
        Ok(self.push(r, c, out, Op::AddRow(a, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(dim_err("mul", da, db));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        Ok(self.push(da.0, da.1, out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::of_f64(s);
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&x| x * s).collect();
        self.push(r, c, out, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(r, c, out, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&x| kernels::gelu_scalar(x)).collect();
        self.push(r, c, out, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Mask>) -> Result<Var> {
        let (r, c) = self.dims(a);
        let out = kernels::softmax_rows_slice(self.value(a), r, c, mask)?;
        Ok(self.push(r, c, out, Op::Softmax(a)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.dims(gain) != (1, c) || self.dims(bias) != (1, c) {
            return Err(dim_err("layer_norm", (r, c), self.dims(gain)));
        }
        let (out, stats) =
            kernels::layer_norm_slice(self.value(x), r, c, self.value(gain), self.value(bias));
        Ok(self.push(r, c, out, Op::LayerNorm { x, gain, bias, stats }))
    }

    /// Gathers rows of `table` by token id.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let (rows, cols) = self.dims(table);
        if ids.is_empty() {
            return Err(dim_err("embedding", (0, cols), (rows, cols)));
        }
        let values = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            let id = id as usize;
            if id >= rows {
                return Err(dim_err("embedding", (id, cols), (rows, cols)));
            }
            out.extend_from_slice(&values[id * cols..(id + 1) * cols]);
        }
        Ok(self.push(
            ids.len(),
            cols,
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = match parts.first() {
            Some(&p) => self.dims(p).1,
            None => return Err(dim_err("concat_rows", (0, 0), (0, 0))),
        };
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let d = self.dims(p);
            if d.1 != cols {
                return Err(dim_err("concat_rows", (rows, cols), d));
            }
            rows += d.0;
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(rows, cols, out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if rows.is_empty() || rows.iter().any(|&i| i >= r) {
            return Err(dim_err("gather_rows", (r, c), (rows.len(), c)));
        }
        let values = self.value(a);
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(&values[i * c..(i + 1) * c]);
        }
        Ok(self.push(rows.len(), c, out, Op::GatherRows(a, rows.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let rows: Vec<usize> = (start..end).collect();
        self.gather_rows(a, &rows)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r * c != rows * cols {
            return Err(dim_err("reshape", (r, c), (rows, cols)));
        }
        let out = self.value(a).to_vec();
        Ok(self.push(rows, cols, out, Op::Reshape(a)))
    }

    /// Multi-head self-attention; `key_visible[j] == false` hides key `j`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        key_visible: Option<&[bool]>,
    ) -> Result<Var> {
        let (len, dim) = self.dims(q);
        if self.dims(k) != (len, dim) || self.dims(v) != (len, dim) || heads == 0 || dim % heads != 0 {
            return Err(dim_err("attention", (len, dim), self.dims(k)));
        }
        if key_visible.is_some_and(|m| m.len() != len) {
            return Err(dim_err("attention mask", (len, dim), (key_visible.unwrap().len(), 1)));
        }
        let (out, probs) = kernels::attention_forward(
            self.value(q),
            self.value(k),
            self.value(v),
            len,
            dim,
            heads,
            key_visible,
            self.grad_enabled,
        )?;
        Ok(self.push(len, dim, out, Op::Attention { q, k, v, heads, probs }))
    }

    /// Sum of the elementwise product, as a `1×1` node.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(dim_err("dot", da, db));
        }
        let s = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
        Ok(self.push(1, 1, vec![s], Op::Dot(a, b)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().fold(T::zero(), |acc, &x| acc + x);
        self.push(1, 1, vec![s], Op::Sum(a))
    }

    /// `-log softmax(logits)[target]` for a `1×c` row of logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let (r, c) = self.dims(logits);
        if r != 1 || target >= c {
            return Err(dim_err("softmax_cross_entropy", (r, c), (1, target)));
        }
        let x = self.value(logits);
        let max = x.iter().fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
        let sum = x.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
        let lse = max + sum.ln();
        let loss = lse - x[target];
        let probs = x.iter().map(|&v| (v - lse).exp()).collect();
        Ok(self.push(1, 1, vec![loss], Op::SoftmaxXent { logits, target, probs }))
    }

    /// Backpropagates from a `1×1` node and returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        assert!(self.grad_enabled, "backward on an inference graph");
        if self.dims(loss) != (1, 1) {
            return Err(dim_err("backward", self.dims(loss), (1, 1)));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::empty(self.source.num_params());

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let (rows, cols) = (node.rows, node.cols);
            let mut send = |v: Var, delta: Vec<T>| {
                debug_assert!(v.0 < idx);
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, &d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let (ar, ac) = self.dims(*a);
                    let da = kernels::matmul_t_slices(&g, rows, cols, self.value(*b), ac);
                    let at = kernels::transpose_slice(self.value(*a), ar, ac);
                    let db = kernels::matmul_slices(&at, ac, ar, &g, cols);
                    send(*a, da);
                    send(*b, db);
                }
                Op::MatMulT(a, b) => {
                    let (ar, ac) = self.dims(*a);
                    let (br, _) = self.dims(*b);
                    let da = kernels::matmul_slices(&g, rows, cols, self.value(*b), ac);
                    let gt = kernels::transpose_slice(&g, rows, cols);
                    let db = kernels::matmul_slices(&gt, br, ar, self.value(*a), ac);
                    send(*a, da);
                    send(*b, db);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::AddRow(a, row) => {
                    let mut db = vec![T::zero(); cols];
                    for chunk in g.chunks(cols) {
                        db.iter_mut().zip(chunk).for_each(|(d, &x)| *d += x);
                    }
                    send(*a, g);
                    send(*row, db);
                }
                Op::Mul(a, b) => {
                    let da = g.iter().zip(self.value(*b)).map(|(&x, &y)| x * y).collect();
                    let db = g.iter().zip(self.value(*a)).map(|(&x, &y)| x * y).collect();
                    send(*a, da);
                    send(*b, db);
                }
                Op::Scale(a, s) => send(*a, g.iter().map(|&x| x * *s).collect()),
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    send(*a, g.iter().zip(y).map(|(&d, &y)| d * (T::one() - y * y)).collect());
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    send(*a, g.iter().zip(x).map(|(&d, &x)| d * kernels::gelu_grad_scalar(x)).collect());
                }
                Op::Softmax(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut dx = vec![T::zero(); rows * cols];
                    for i in 0..rows {
                        let yr = &y[i * cols..(i + 1) * cols];
                        let gr = &g[i * cols..(i + 1) * cols];
                        let inner = yr.iter().zip(gr).fold(T::zero(), |acc, (&y, &d)| acc + y * d);
                        for j in 0..cols {
                            dx[i * cols + j] = yr[j] * (gr[j] - inner);
                        }
                    }
                    send(*a, dx);
                }
                Op::LayerNorm { x, gain, bias, stats } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gain);
                    let n = T::of_f64(cols as f64);
                    let mut dx = vec![T::zero(); rows * cols];
                    let mut dg = vec![T::zero(); cols];
                    let mut db = vec![T::zero(); cols];
                    let mut xhat = vec![T::zero(); cols];
                    let mut dxhat = vec![T::zero(); cols];
                    for i in 0..rows {
                        let (mean, rstd) = stats[i];
                        let gr = &g[i * cols..(i + 1) * cols];
                        for j in 0..cols {
                            xhat[j] = (xv[i * cols + j] - mean) * rstd;
                            dg[j] += gr[j] * xhat[j];
                            db[j] += gr[j];
                            dxhat[j] = gr[j] * gv[j];
                        }
                        let mean_d = dxhat.iter().copied().sum::<T>() / n;
                        let mean_dx = dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<T>() / n;
                        for j in 0..cols {
                            dx[i * cols + j] = rstd * (dxhat[j] - mean_d - xhat[j] * mean_dx);
                        }
                    }
                    send(*x, dx);
                    send(*gain, dg);
                    send(*bias, db);
                }
                Op::Embedding { table, ids } => {
                    let (tr, tc) = self.dims(*table);
                    let mut dt = vec![T::zero(); tr * tc];
                    for (i, &id) in ids.iter().enumerate() {
                        let dst = &mut dt[id as usize * tc..(id as usize + 1) * tc];
                        dst.iter_mut().zip(&g[i * tc..(i + 1) * tc]).for_each(|(d, &x)| *d += x);
                    }
                    send(*table, dt);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (pr, pc) = self.dims(p);
                        send(p, g[offset..offset + pr * pc].to_vec());
                        offset += pr * pc;
                    }
                }
                Op::GatherRows(a, idxs) => {
                    let (ar, ac) = self.dims(*a);
                    let mut da = vec![T::zero(); ar * ac];
                    for (i, &src) in idxs.iter().enumerate() {
                        let dst = &mut da[src * ac..(src + 1) * ac];
                        dst.iter_mut().zip(&g[i * ac..(i + 1) * ac]).for_each(|(d, &x)| *d += x);
                    }
                    send(*a, da);
                }
                Op::Reshape(a) => send(*a, g),
                Op::Attention { q, k, v, heads, probs } => {
                    let probs = probs.as_ref().expect("attention probabilities kept in grad mode");
                    let (dq, dk, dv) = attention_backward(
                        &g,
                        probs,
                        self.value(*q),
                        self.value(*k),
                        self.value(*v),
                        rows,
                        cols,
                        *heads,
                    );
                    send(*q, dq);
                    send(*k, dk);
                    send(*v, dv);
                }
                Op::Dot(a, b) => {
                    let s = g[0];
                    send(*a, self.value(*b).iter().map(|&y| y * s).collect());
                    send(*b, self.value(*a).iter().map(|&x| x * s).collect());
                }
                Op::Sum(a) => {
                    let (ar, ac) = self.dims(*a);
                    send(*a, vec![g[0]; ar * ac]);
                }
                Op::SoftmaxXent { logits, target, probs } => {
                    let s = g[0];
                    let mut dl: Vec<T> = probs.iter().map(|&p| p * s).collect();
                    dl[*target] -= s;
                    send(*logits, dl);
                }
            }
        }
        Ok(out)
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<T: Real>(
    g: &[T],
    probs: &[T],
    q: &[T],
    k: &[T],
    v: &[T],
    len: usize,
    dim: usize,
    heads: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dh = dim / heads;
    let scale = T::of_f64(1.0 / (dh as f64).sqrt());
    let mut dq = vec![T::zero(); len * dim];
    let mut dk = vec![T::zero(); len * dim];
    let mut dv = vec![T::zero(); len * dim];
    let mut ds = vec![T::zero(); len];
    for h in 0..heads {
        let qh = kernels::head_slice(q, len, dim, h, dh);
        let kh = kernels::head_slice(k, len, dim, h, dh);
        let vh = kernels::head_slice(v, len, dim, h, dh);
        let gh = kernels::head_slice(g, len, dim, h, dh);
        let p = &probs[h * len * len..(h + 1) * len * len];
        for i in 0..len {
            let pr = &p[i * len..(i + 1) * len];
            let gr = &gh[i * dh..(i + 1) * dh];
            // dP_ij = g_i · v_j, then softmax backward
            let mut inner = T::zero();
            for j in 0..len {
                if pr[j] == T::zero() {
                    ds[j] = T::zero();
                    continue;
                }
                let vr = &vh[j * dh..(j + 1) * dh];
                let dp = gr.iter().zip(vr).fold(T::zero(), |a, (&x, &y)| a + x * y);
                ds[j] = dp;
                inner += pr[j] * dp;
            }
            for j in 0..len {
                if pr[j] == T::zero() {
                    continue;
                }
                let dsj = pr[j] * (ds[j] - inner) * scale;
                let dvr = &mut dv[j * dim + h * dh..j * dim + (h + 1) * dh];
                dvr.iter_mut().zip(gr).for_each(|(d, &x)| *d += pr[j] * x);
                let kr = &kh[j * dh..(j + 1) * dh];
                let dqr = &mut dq[i * dim + h * dh..i * dim + (h + 1) * dh];
                dqr.iter_mut().zip(kr).for_each(|(d, &x)| *d += dsj * x);
                let qr = &qh[i * dh..(i + 1) * dh];
                let dkr = &mut dk[j * dim + h * dh..j * dim + (h + 1) * dh];
                dkr.iter_mut().zip(qr).for_each(|(d, &x)| *d += dsj * x);
            }
        }
    }
    (dq, dk, dv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::LrGroup;

    fn store_with(name: &str, rows: usize, cols: usize, data: Vec<f32>) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add(name, Tensor::matrix(rows, cols, data).unwrap(), LrGroup::NewLayer);
        (s, id)
    }

    #[test]
    fn sum_of_param_has_unit_gradient() {
        let (store, id) = store_with("w", 2, 3, vec![0.5, -1.0, 2.0, 3.0, 0.0, 1.0]);
        let mut g = Graph::new(&store);
        let w = g.param(id);
        let s = g.sum(w);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(id).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn param_leaf_is_shared() {
        let (store, id) = store_with("w", 1, 2, vec![1.0, 2.0]);
        let mut g = Graph::new(&store);
        let a = g.param(id);
        let b = g.param(id);
        assert_eq!(a, b);
        let d = g.dot(a, b).unwrap();
        let grads = g.backward(d).unwrap();
        assert_eq!(grads.get(id).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn graph_matches_tensor_kernels_bitwise() {
        let (store, id) = store_with("w", 2, 2, vec![0.3, -0.2, 0.9, 0.1]);
        let x = Tensor::matrix(3, 2, vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0]).unwrap();
        let mut g = Graph::inference(&store);
        let xv = g.input_tensor(&x).unwrap();
        let w = g.param(id);
        let y = g.matmul(xv, w).unwrap();
        let y = g.tanh(y);
        let y = g.softmax_rows(y, None).unwrap();
        let direct = kernels::softmax_rows(
            &kernels::tanh_map(&kernels::matmul(&x, &store.get(id).tensor).unwrap()),
            None,
        )
        .unwrap();
        assert_eq!(g.tensor(y).data(), direct.data());
    }

    #[test]
    fn inference_attention_matches_training_attention() {
        let (store, _) = store_with("unused", 1, 1, vec![0.0]);
        let data: Vec<f64> = (0..24).map(|i| ((i * 7 % 11) as f64 - 5.0) / 4.0).collect();
        let values = ParamValues::<f64>::from_store(&store);
        let run = |grad: bool| {
            let mut g = if grad { Graph::new(&values) } else { Graph::inference(&values) };
            let x = g.input(6, 4, data.clone()).unwrap();
            let y = g.attention(x, x, x, 2, Some(&[true, true, false, true, true, true])).unwrap();
            g.value(y).to_vec()
        };
        assert_eq!(run(true), run(false));
    }
}
