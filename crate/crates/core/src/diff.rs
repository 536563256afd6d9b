//! Dense fp64 tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node. Calling
//! [`Graph::backward`] on a scalar node walks the nodes in reverse creation
//! order, which is a valid topological order because a node can only refer to
//! nodes created before it. Only the primitives the encoder and the losses
//! need are provided; there is no general broadcasting.
//!
//! Row-wise ops (softmax, log-softmax, normalisation, KL) treat a 1-D tensor
//! as a single row and a 2-D tensor as a batch of rows.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};

/// Norm floor used by normalisation.
pub const NORM_EPS: f64 = 1e-12;

/// Dense row-major array of `f64` with an optional gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    stop_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
            stop_grad: false,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(Vec::new(), vec![value]).expect("scalar shape")
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(vec![n], data).expect("vector shape")
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n]).expect("zeros shape")
    }

    /// Marks the tensor as a trainable leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn is_stop_grad(&self) -> bool {
        self.stop_grad
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` view used by row-wise ops.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => (self.shape[0], self.shape[1..].iter().product()),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let (_, c) = self.rows_cols();
        &self.data[r * c..(r + 1) * c]
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    StopGrad,
    MatMul(Var, Var),
    Transpose(Var),
    AddRowBias(Var, Var),
    Tanh(Var),
    /// `norms` holds the divisor used per row; `None` marks a row replaced
    /// by the fallback direction.
    L2Normalize { x: Var, norms: Vec<Option<f64>> },
    Softmax { x: Var, temperature: f64 },
    LogSoftmax { x: Var, temperature: f64 },
    KlDiv { p: Var, log_q: Var },
    Gather { x: Var, indices: Vec<usize> },
    ConcatRows(Var, Var),
    SparseMatMul { rows: Vec<Vec<(usize, f64)>>, w: Var },
    Contract { x: Var, terms: Vec<(usize, f64)> },
    WeightedSum(Vec<(Var, f64)>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Define-by-run computation graph.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(contract!("temperature must be positive, got {temperature}"))
    }
}

/// Stabilised softmax of one row scaled by `1 / temperature`.
pub fn softmax_row(x: &[f64], temperature: f64, out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = libm::exp((v - max) / temperature);
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Log-softmax of one row scaled by `1 / temperature`, via log-sum-exp.
pub fn log_softmax_row(x: &[f64], temperature: f64, out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for &v in x {
        total += libm::exp((v - max) / temperature);
    }
    let lse = libm::log(total);
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max) / temperature - lse;
    }
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

    fn push(&mut self, mut value: Tensor, op: Op, parents: &[Var]) -> Var {
        value.requires_grad = parents.iter().any(|p| self.nodes[p.0].value.requires_grad);
        value.grad = None;
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf. Its `requires_grad` flag is kept as given.
    pub fn leaf(&mut self, mut value: Tensor) -> Var {
        value.grad = None;
        value.stop_grad = false;
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, mut value: Tensor) -> Var {
        value.requires_grad = false;
        self.leaf(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Moves a node's tensor (value and gradient) out of the graph, leaving
    /// an empty placeholder behind. Meant for reclaiming parameters after
    /// [`Graph::backward`].
    pub fn take(&mut self, v: Var) -> Tensor {
        let shape = self.nodes[v.0].value.shape.clone();
        let placeholder = Tensor {
            shape,
            data: Vec::new(),
            grad: None,
            requires_grad: false,
            stop_grad: false,
        };
        core::mem::replace(&mut self.nodes[v.0].value, placeholder)
    }

    /// Identity in the forward pass; blocks all gradient flow backward.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let mut value = self.nodes[x.0].value.clone();
        value.grad = None;
        self.nodes.push(Node {
            value: Tensor {
                requires_grad: false,
                stop_grad: true,
                ..value
            },
            op: Op::StopGrad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape.len() != 2 || bv.shape.len() != 2 || av.shape[1] != bv.shape[0] {
            return Err(Error::Shape {
                op: "matmul",
                left: av.shape.clone(),
                right: bv.shape.clone(),
            });
        }
        let (m, k, p) = (av.shape[0], av.shape[1], bv.shape[1]);
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            let orow = &mut out[i * p..(i + 1) * p];
            for l in 0..k {
                let aval = av.data[i * k + l];
                if aval == 0.0 {
                    continue;
                }
                let brow = &bv.data[l * p..(l + 1) * p];
                for (o, &bval) in orow.iter_mut().zip(brow) {
                    *o += aval * bval;
                }
            }
        }
        let value = Tensor::matrix(m, p, out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.shape.len() != 2 {
            return Err(contract!("transpose expects a matrix, got shape {:?}", xv.shape));
        }
        let (r, c) = (xv.shape[0], xv.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv.data[i * c + j];
            }
        }
        let value = Tensor::matrix(c, r, out)?;
        Ok(self.push(value, Op::Transpose(x), &[x]))
    }

    /// Adds the vector `bias` (length `cols`) to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        let (_, c) = xv.rows_cols();
        if xv.shape.len() != 2 || bv.len() != c {
            return Err(Error::Shape {
                op: "add_row_bias",
                left: xv.shape.clone(),
                right: bv.shape.clone(),
            });
        }
        let data = xv
            .data
            .chunks(c)
            .flat_map(|row| row.iter().zip(&bv.data).map(|(a, b)| a + b))
            .collect();
        let value = Tensor::new(xv.shape.clone(), data)?;
        Ok(self.push(value, Op::AddRowBias(x, bias), &[x, bias]))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let data = xv.data.iter().map(|&v| libm::tanh(v)).collect();
        let value = Tensor::new(xv.shape.clone(), data).expect("same shape");
        self.push(value, Op::Tanh(x), &[x])
    }

    /// Row-wise projection onto the unit sphere. Rows with norm at or below
    /// [`NORM_EPS`] are an error.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        self.normalize_rows(x, false)
    }

    /// Row-wise projection onto the unit sphere that never fails: a row with
    /// norm at or below [`NORM_EPS`] maps to the constant direction
    /// `(1, ..., 1) / sqrt(cols)` and passes no gradient.
    pub fn l2_normalize_floored(&mut self, x: Var) -> Var {
        self.normalize_rows(x, true).expect("floored normalisation is total")
    }

    fn normalize_rows(&mut self, x: Var, floored: bool) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        check_finite("l2_normalize", &xv.data)?;
        let (r, c) = xv.rows_cols();
        let mut data = vec![0.0; r * c];
        let mut norms = Vec::with_capacity(r);
        for i in 0..r {
            let row = xv.row(i);
            let norm = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>());
            let out = &mut data[i * c..(i + 1) * c];
            if norm > NORM_EPS {
                for (o, &v) in out.iter_mut().zip(row) {
                    *o = v / norm;
                }
                norms.push(Some(norm));
            } else if floored {
                let fill = 1.0 / libm::sqrt(c as f64);
                out.iter_mut().for_each(|o| *o = fill);
                norms.push(None);
            } else {
                return Err(Error::Degenerate { eps: NORM_EPS });
            }
        }
        let value = Tensor::new(xv.shape.clone(), data)?;
        Ok(self.push(value, Op::L2Normalize { x, norms }, &[x]))
    }

    /// Row-wise `softmax(x / temperature)`.
    pub fn softmax(&mut self, x: Var, temperature: f64) -> Result<Var> {
        check_temperature(temperature)?;
        let xv = &self.nodes[x.0].value;
        check_finite("softmax", &xv.data)?;
        let (r, c) = xv.rows_cols();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            softmax_row(xv.row(i), temperature, &mut data[i * c..(i + 1) * c]);
        }
        let value = Tensor::new(xv.shape.clone(), data)?;
        Ok(self.push(value, Op::Softmax { x, temperature }, &[x]))
    }

    /// Row-wise `log_softmax(x / temperature)`.
    pub fn log_softmax(&mut self, x: Var, temperature: f64) -> Result<Var> {
        check_temperature(temperature)?;
        let xv = &self.nodes[x.0].value;
        check_finite("log_softmax", &xv.data)?;
        let (r, c) = xv.rows_cols();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            log_softmax_row(xv.row(i), temperature, &mut data[i * c..(i + 1) * c]);
        }
        let value = Tensor::new(xv.shape.clone(), data)?;
        Ok(self.push(value, Op::LogSoftmax { x, temperature }, &[x]))
    }

    /// `sum_rows sum_j p (log p - log q)` with `0 log 0 = 0`. Every row of
    /// `p` must be a probability vector.
    pub fn kl_div(&mut self, p: Var, log_q: Var) -> Result<Var> {
        let (pv, qv) = (&self.nodes[p.0].value, &self.nodes[log_q.0].value);
        if pv.shape != qv.shape {
            return Err(Error::Shape {
                op: "kl_div",
                left: pv.shape.clone(),
                right: qv.shape.clone(),
            });
        }
        check_finite("kl_div", &qv.data)?;
        let (r, _) = pv.rows_cols();
        for i in 0..r {
            let row = pv.row(i);
            let total: f64 = row.iter().sum();
            if row.iter().any(|&v| v.is_nan() || v < 0.0) || (total - 1.0).abs() > 1e-8 {
                return Err(contract!("kl_div: row {i} of p is not a distribution (sum {total})"));
            }
        }
        let mut total = 0.0;
        for (&pi, &lq) in pv.data.iter().zip(&qv.data) {
            if pi > 0.0 {
                total += pi * (libm::log(pi) - lq);
            }
        }
        Ok(self.push(Tensor::scalar(total), Op::KlDiv { p, log_q }, &[p, log_q]))
    }

    /// Picks elements by flat index into a tensor of the given shape.
    pub fn gather(&mut self, x: Var, indices: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if let Some(&bad) = indices.iter().find(|&&i| i >= xv.len()) {
            return Err(contract!("gather index {bad} out of range for {} elements", xv.len()));
        }
        let data = indices.iter().map(|&i| xv.data[i]).collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Gather { x, indices }, &[x]))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape.len() != 2 || bv.shape.len() != 2 || av.shape[1] != bv.shape[1] {
            return Err(Error::Shape {
                op: "concat_rows",
                left: av.shape.clone(),
                right: bv.shape.clone(),
            });
        }
        let mut data = av.data.clone();
        data.extend_from_slice(&bv.data);
        let value = Tensor::matrix(av.shape[0] + bv.shape[0], av.shape[1], data)?;
        Ok(self.push(value, Op::ConcatRows(a, b), &[a, b]))
    }

    /// Product of a constant sparse matrix (one `(column, value)` list per
    /// row) with the dense matrix `w`.
    pub fn sparse_matmul(&mut self, rows: Vec<Vec<(usize, f64)>>, w: Var) -> Result<Var> {
        let wv = &self.nodes[w.0].value;
        if wv.shape.len() != 2 {
            return Err(contract!("sparse_matmul expects a matrix, got {:?}", wv.shape));
        }
        let (k, p) = (wv.shape[0], wv.shape[1]);
        let mut out = vec![0.0; rows.len() * p];
        for (r, entries) in rows.iter().enumerate() {
            let orow = &mut out[r * p..(r + 1) * p];
            for &(col, val) in entries {
                if col >= k {
                    return Err(Error::Shape {
                        op: "sparse_matmul",
                        left: vec![rows.len(), col + 1],
                        right: wv.shape.clone(),
                    });
                }
                for (o, &wval) in orow.iter_mut().zip(&wv.data[col * p..(col + 1) * p]) {
                    *o += val * wval;
                }
            }
        }
        let value = Tensor::matrix(rows.len(), p, out)?;
        Ok(self.push(value, Op::SparseMatMul { rows, w }, &[w]))
    }

    /// Scalar `sum_k coeff_k * x[index_k]` over flat indices.
    pub fn contract(&mut self, x: Var, terms: Vec<(usize, f64)>) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let mut total = 0.0;
        for &(i, w) in &terms {
            let v = *xv
                .data
                .get(i)
                .ok_or_else(|| contract!("contract index {i} out of range"))?;
            total += w * v;
        }
        Ok(self.push(Tensor::scalar(total), Op::Contract { x, terms }, &[x]))
    }

    /// Sum of all elements.
    pub fn sum(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.len();
        self.contract(x, (0..n).map(|i| (i, 1.0)).collect())
            .expect("indices in range")
    }

    /// `sum_i w_i * x_i` over tensors of identical shape, accumulated left
    /// to right starting from the first term.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let Some(&(first, _)) = terms.first() else {
            return Err(contract!("weighted_sum of no terms"));
        };
        let shape = self.nodes[first.0].value.shape.clone();
        let mut data = vec![0.0; self.nodes[first.0].value.len()];
        for (k, &(v, w)) in terms.iter().enumerate() {
            let tv = &self.nodes[v.0].value;
            if tv.shape != shape {
                return Err(Error::Shape {
                    op: "weighted_sum",
                    left: shape,
                    right: tv.shape.clone(),
                });
            }
            for (d, &x) in data.iter_mut().zip(&tv.data) {
                if k == 0 {
                    *d = w * x;
                } else {
                    *d += w * x;
                }
            }
        }
        let parents: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::WeightedSum(terms.to_vec()), &parents))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.weighted_sum(&[(x, factor)]).expect("single term")
    }

    /// Propagates gradients from the scalar `root`. Every node that requires
    /// a gradient ends up with a populated gradient slot (zeros if no path
    /// reaches it).
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(contract!("backward needs a scalar root, got shape {:?}", root_value.shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if root_value.requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.value.grad = if node.value.requires_grad {
                Some(g.unwrap_or_else(|| vec![0.0; node.value.len()]))
            } else {
                None
            };
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].value.requires_grad;
        let acc = |grads: &mut [Option<Vec<f64>>], v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].value.requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::StopGrad => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, p) = (av.shape[0], av.shape[1], bv.shape[1]);
                if needs(*a) {
                    acc(grads, *a, &mut |ga| {
                        for i in 0..m {
                            for l in 0..k {
                                let mut s = 0.0;
                                for j in 0..p {
                                    s += g[i * p + j] * bv.data[l * p + j];
                                }
                                ga[i * k + l] += s;
                            }
                        }
                    });
                }
                if needs(*b) {
                    acc(grads, *b, &mut |gb| {
                        for i in 0..m {
                            for l in 0..k {
                                let aval = av.data[i * k + l];
                                if aval == 0.0 {
                                    continue;
                                }
                                for j in 0..p {
                                    gb[l * p + j] += aval * g[i * p + j];
                                }
                            }
                        }
                    });
                }
            }
            Op::Transpose(x) => {
                let (c, r) = (out.shape[0], out.shape[1]);
                acc(grads, *x, &mut |gx| {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::AddRowBias(x, b) => {
                let c = nodes[b.0].value.len();
                acc(grads, *x, &mut |gx| {
                    gx.iter_mut().zip(g).for_each(|(a, &v)| *a += v);
                });
                acc(grads, *b, &mut |gb| {
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                    }
                });
            }
            Op::Tanh(x) => {
                acc(grads, *x, &mut |gx| {
                    for ((a, &y), &v) in gx.iter_mut().zip(&out.data).zip(g) {
                        *a += v * (1.0 - y * y);
                    }
                });
            }
            Op::L2Normalize { x, norms } => {
                let (_, c) = out.rows_cols();
                acc(grads, *x, &mut |gx| {
                    for (i, norm) in norms.iter().enumerate() {
                        let Some(norm) = norm else { continue };
                        let y = &out.data[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[i * c + j] += (gr[j] - y[j] * dot) / norm;
                        }
                    }
                });
            }
            Op::Softmax { x, temperature } => {
                let (_, c) = out.rows_cols();
                acc(grads, *x, &mut |gx| {
                    for (i, (y, gr)) in out.data.chunks(c).zip(g.chunks(c)).enumerate() {
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[i * c + j] += y[j] * (gr[j] - dot) / temperature;
                        }
                    }
                });
            }
            Op::LogSoftmax { x, temperature } => {
                let (_, c) = out.rows_cols();
                acc(grads, *x, &mut |gx| {
                    for (i, (y, gr)) in out.data.chunks(c).zip(g.chunks(c)).enumerate() {
                        let total: f64 = gr.iter().sum();
                        for j in 0..c {
                            gx[i * c + j] += (gr[j] - libm::exp(y[j]) * total) / temperature;
                        }
                    }
                });
            }
            Op::KlDiv { p, log_q } => {
                let (pv, qv) = (&nodes[p.0].value, &nodes[log_q.0].value);
                let s = g[0];
                acc(grads, *p, &mut |gp| {
                    for ((a, &pi), &lq) in gp.iter_mut().zip(&pv.data).zip(&qv.data) {
                        if pi > 0.0 {
                            *a += s * (libm::log(pi) + 1.0 - lq);
                        }
                    }
                });
                acc(grads, *log_q, &mut |gq| {
                    for (a, &pi) in gq.iter_mut().zip(&pv.data) {
                        *a -= s * pi;
                    }
                });
            }
            Op::Gather { x, indices } => {
                acc(grads, *x, &mut |gx| {
                    for (&i, &v) in indices.iter().zip(g) {
                        gx[i] += v;
                    }
                });
            }
            Op::ConcatRows(a, b) => {
                let split = nodes[a.0].value.len();
                acc(grads, *a, &mut |ga| {
                    ga.iter_mut().zip(&g[..split]).for_each(|(x, &v)| *x += v);
                });
                acc(grads, *b, &mut |gb| {
                    gb.iter_mut().zip(&g[split..]).for_each(|(x, &v)| *x += v);
                });
            }
            Op::SparseMatMul { rows, w } => {
                let p = out.shape[1];
                acc(grads, *w, &mut |gw| {
                    for (r, entries) in rows.iter().enumerate() {
                        let gr = &g[r * p..(r + 1) * p];
                        for &(col, val) in entries {
                            for (a, &v) in gw[col * p..(col + 1) * p].iter_mut().zip(gr) {
                                *a += val * v;
                            }
                        }
                    }
                });
            }
            Op::Contract { x, terms } => {
                let s = g[0];
                acc(grads, *x, &mut |gx| {
                    for &(i, w) in terms {
                        gx[i] += w * s;
                    }
                });
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    acc(grads, v, &mut |gv| {
                        gv.iter_mut().zip(g).for_each(|(a, &x)| *a += w * x);
                    });
                }
            }
        }
    }
}
