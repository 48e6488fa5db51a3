//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value. [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients; parameter gradients
//! are then pulled out per [`ParamStore`] with [`Gradients::for_store`].

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{matmul_a_bt_into, matmul_at_b_into};
use super::{AutodiffError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors. Insertion order is preserved; names are unique.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    tag: String,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            ..Default::default()
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.tensors[i] = value;
            return ParamId(i);
        }
        let id = self.names.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Rebuilds the name index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
    }

    /// Concatenation of all values, in parameter order. Used for checksums
    /// and finite-difference checks.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.values().iter().copied()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

/// Per-parameter gradients aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradStore {
    pub grads: Vec<Tensor>,
}

impl GradStore {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            for v in g.values_mut() {
                *v *= factor;
            }
        }
    }

    /// Rescales so the global L2 norm is at most `max_norm`. Returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulConst(NodeId, Tensor),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Abs(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Clamp(NodeId, f64, f64),
    Concat(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    Sum(NodeId),
    Mean(NodeId),
    RowMean(NodeId),
    Transpose(NodeId),
    Dropout(NodeId, Tensor),
    Mmd(NodeId, Tensor, f64),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// A recording of one forward pass.
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<(String, ParamId), NodeId>,
    training: bool,
    rng: Option<ChaCha8Rng>,
}

impl Graph {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            training: false,
            rng: None,
        }
    }

    /// Training-mode graph; dropout masks are drawn from `rng`.
    pub fn training(rng: ChaCha8Rng) -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            training: true,
            rng: Some(rng),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Hands back the dropout RNG so a training loop can keep one stream.
    pub fn into_rng(self) -> Option<ChaCha8Rng> {
        self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant input. Receives no gradient that is reported anywhere.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Registers (once per graph) the parameter `id` from `store`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let key = (store.tag.clone(), id);
        if let Some(&node) = self.params.get(&key) {
            return node;
        }
        let node = self.push(store.get(id).clone(), Op::Param);
        self.params.insert(key, node);
        node
    }

    /// Looks a parameter up by name; panics if absent (model wiring bug).
    pub fn param_named(&mut self, store: &ParamStore, name: &str) -> NodeId {
        let id = store
            .id(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from store {}", store.tag));
        self.param(store, id)
    }

    /// Equal-valued copy that blocks gradient flow.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).clone();
        self.push(v, Op::Leaf)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(AutodiffError::Shape {
                op,
                detail: format!("{:?} vs {:?}", sa, sb),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// `a[m, n] + b[1, n]`, the bias broadcast.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(AutodiffError::Shape {
                op: "add_row",
                detail: format!("{:?} + {:?}", va.shape(), vb.shape()),
            });
        }
        let cols = va.cols();
        let mut v = va.clone();
        for (i, x) in v.values_mut().iter_mut().enumerate() {
            *x += vb.values()[i % cols];
        }
        Ok(self.push(v, Op::AddRow(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, a: NodeId, c: Tensor) -> Result<NodeId, AutodiffError> {
        if self.value(a).shape() != c.shape() {
            return Err(AutodiffError::Shape {
                op: "mul_const",
                detail: format!("{:?} vs {:?}", self.value(a).shape(), c.shape()),
            });
        }
        let v = self.value(a).zip_map(&c, |x, y| x * y);
        Ok(self.push(v, Op::MulConst(a, c)))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).map(|x| x + k);
        self.push(v, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// `|x|` with subgradient 0 at exactly zero.
    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        if let Some(&bad) = self.value(a).values().iter().find(|&&x| !(x > 0.0)) {
            return Err(AutodiffError::Domain {
                op: "log",
                value: bad,
            });
        }
        let v = self.value(a).map(f64::ln);
        Ok(self.push(v, Op::Log(a)))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Clamps to `[lo, hi]`; gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Concatenates along the last dimension.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, AutodiffError> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            let shapes: Vec<_> = parts.iter().map(|&p| self.value(p).shape().to_vec()).collect();
            return Err(AutodiffError::Shape {
                op: "concat",
                detail: format!("{:?}", shapes),
            });
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let v = Tensor::matrix(rows, total, out)?;
        Ok(self.push(v, Op::Concat(parts.to_vec())))
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, AutodiffError> {
        let va = self.value(a);
        if start >= end || end > va.cols() {
            return Err(AutodiffError::Shape {
                op: "slice",
                detail: format!("[{start}, {end}) of {:?}", va.shape()),
            });
        }
        let rows = va.rows();
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&va.row_slice(r)[start..end]);
        }
        let v = Tensor::matrix(rows, end - start, out)?;
        Ok(self.push(v, Op::SliceCols(a, start, end)))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let v = Tensor::scalar(va.sum() / va.len() as f64);
        self.push(v, Op::Mean(a))
    }

    /// Mean over the last dimension: `[m, n] -> [m, 1]`.
    pub fn row_mean(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let n = va.cols() as f64;
        let v = Tensor::column((0..va.rows()).map(|r| va.row_slice(r).iter().sum::<f64>() / n).collect());
        self.push(v, Op::RowMean(a))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Inverted dropout; identity outside training or when `rate == 0`.
    pub fn dropout(&mut self, a: NodeId, rate: f64) -> NodeId {
        if !self.training || rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let n = self.value(a).len();
        let rng = self.rng.as_mut().expect("training graph owns an rng");
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = Tensor::new(self.value(a).shape().to_vec(), mask).expect("mask shape");
        let v = self.value(a).zip_map(&mask, |x, m| x * m);
        self.push(v, Op::Dropout(a, mask))
    }

    /// `sum_ij w_ij * exp(-|x_i - x_j|^2 / (2 sigma^2))` over the rows of
    /// `x`, with a constant pair-weight matrix `w`. The bandwidth is a
    /// constant of the op. `w` is symmetrised first, which leaves the sum
    /// unchanged and keeps the backward pass valid for any `w`.
    pub fn weighted_rbf_sum(&mut self, x: NodeId, weights: Tensor, sigma: f64) -> Result<NodeId, AutodiffError> {
        let n = self.value(x).rows();
        if weights.shape() != [n, n] {
            return Err(AutodiffError::Shape {
                op: "mmd",
                detail: format!("weights {:?} for {} rows", weights.shape(), n),
            });
        }
        let weights = weights.zip_map(&weights.transpose(), |a, b| 0.5 * (a + b));
        let xv = self.value(x);
        let inv = 1.0 / (2.0 * sigma * sigma);
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let w = weights.get(i, j);
                if w == 0.0 {
                    continue;
                }
                let d2 = sq_dist(xv.row_slice(i), xv.row_slice(j));
                total += w * (-d2 * inv).exp();
            }
        }
        Ok(self.push(Tensor::scalar(total), Op::Mmd(x, weights, sigma)))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, AutodiffError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Param => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                    let mut ga = vec![0.0; m * k];
                    matmul_a_bt_into(g.values(), vb.values(), &mut ga, m, n, k);
                    let mut gb = vec![0.0; k * n];
                    matmul_at_b_into(va.values(), g.values(), &mut gb, k, m, n);
                    accumulate(&mut grads, *a, Tensor::new(va.shape().to_vec(), ga)?);
                    accumulate(&mut grads, *b, Tensor::new(vb.shape().to_vec(), gb)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let cols = g.cols();
                    let mut gb = vec![0.0; cols];
                    for (i, v) in g.values().iter().enumerate() {
                        gb[i % cols] += v;
                    }
                    accumulate(&mut grads, *b, Tensor::row(gb));
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|x| -x));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MulConst(a, c) | Op::Dropout(a, c) => {
                    accumulate(&mut grads, *a, g.zip_map(c, |x, y| x * y));
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    accumulate(&mut grads, *a, g.map(|x| x * k));
                }
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, |x, s| x * s * (1.0 - s));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |x, t| x * (1.0 - t * t));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), |x, v| if v > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Abs(a) => {
                    let ga = g.zip_map(self.value(*a), |x, v| {
                        if v > 0.0 {
                            x
                        } else if v < 0.0 {
                            -x
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.zip_map(&node.value, |x, e| x * e);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Log(a) => {
                    let ga = g.zip_map(self.value(*a), |x, v| x / v);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Square(a) => {
                    let ga = g.zip_map(self.value(*a), |x, v| 2.0 * x * v);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let ga = g.zip_map(self.value(*a), |x, v| if v >= lo && v <= hi { x } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        let mut gp = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            gp.extend_from_slice(&g.values()[r * total + offset..r * total + offset + c]);
                        }
                        accumulate(&mut grads, p, Tensor::new(self.value(p).shape().to_vec(), gp)?);
                        offset += c;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let va = self.value(*a);
                    let mut ga = Tensor::zeros(va.shape());
                    let w = end - start;
                    for r in 0..va.rows() {
                        for c in 0..w {
                            ga.set(r, start + c, g.get(r, c));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let s = g.item();
                    accumulate(&mut grads, *a, Tensor::filled(self.value(*a).shape(), s));
                }
                Op::Mean(a) => {
                    let va = self.value(*a);
                    let s = g.item() / va.len() as f64;
                    accumulate(&mut grads, *a, Tensor::filled(va.shape(), s));
                }
                Op::RowMean(a) => {
                    let va = self.value(*a);
                    let n = va.cols();
                    let mut ga = Tensor::zeros(va.shape());
                    for r in 0..va.rows() {
                        let gr = g.values()[r] / n as f64;
                        for c in 0..n {
                            ga.set(r, c, gr);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Mmd(x, weights, sigma) => {
                    let xv = self.value(*x);
                    let (n, k) = (xv.rows(), xv.cols());
                    let inv = 1.0 / (2.0 * sigma * sigma);
                    let scale = g.item();
                    let mut gx = Tensor::zeros(xv.shape());
                    for i in 0..n {
                        for j in 0..n {
                            let w = weights.get(i, j);
                            if w == 0.0 || i == j {
                                continue;
                            }
                            let (xi, xj) = (xv.row_slice(i), xv.row_slice(j));
                            let kij = (-sq_dist(xi, xj) * inv).exp();
                            // pair (i, j) and (j, i) both move x_i
                            let coef = -2.0 * w * kij * 2.0 * inv * scale;
                            for c in 0..k {
                                let d = xi[c] - xj[c];
                                let cur = gx.get(i, c);
                                gx.set(i, c, cur + coef * d);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<(String, ParamId), NodeId>,
}

impl Gradients {
    /// Gradient w.r.t. an arbitrary node, if it was reached.
    pub fn node(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradients for every parameter of `store`; zeros where unreachable.
    pub fn for_store(&self, store: &ParamStore) -> GradStore {
        let mut out = GradStore::zeros_like(store);
        for (id, _, _) in store.iter() {
            if let Some(&node) = self.params.get(&(store.tag.clone(), id)) {
                if let Some(g) = self.node(node) {
                    out.grads[id.0] = g.clone();
                }
            }
        }
        out
    }
}
