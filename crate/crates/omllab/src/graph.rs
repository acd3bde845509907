//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A `Graph` is an append-only tape of eagerly evaluated nodes. Backward
//! passes build their vector-Jacobian products out of the same primitive
//! ops, so gradients are themselves graph nodes and can be differentiated
//! again — this is what lets a meta-loss be differentiated through a chain
//! of unrolled SGD steps.
//!
//! A graph and its `Value`s are confined to one thread; independent graphs
//! (one per run) can live on different threads because there is no global
//! state.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::GraphError;
use crate::tensor::{numel, Tensor};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// Same shape, or matrix + row-vector bias broadcast.
    Add(usize, usize),
    /// Same shape, or scalar with tensor on either side.
    Mul(usize, usize),
    /// Same shape only.
    Div(usize, usize),
    Matmul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Scale(usize, f64),
    Reshape(usize),
    SumAll(usize),
    /// (m,n) -> (n)
    SumRows(usize),
    /// (m,n) -> (m)
    SumCols(usize),
    /// (n) -> (m,n)
    BroadcastRows(usize),
    /// (m) -> (m,n)
    BroadcastCols(usize),
    /// scalar -> arbitrary shape
    BroadcastScalar(usize),
    /// (m,n) with per-row column indices -> (m)
    GatherRows(usize, Rc<Vec<usize>>),
    /// (m) scattered into zeros of (m,n)
    ScatterRows(usize, Rc<Vec<usize>>),
}

impl Op {
    /// Input node ids this op reads, if any.
    fn operands(&self) -> (Option<usize>, Option<usize>) {
        match *self {
            Op::Leaf => (None, None),
            Op::Add(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Matmul(a, b) => (Some(a), Some(b)),
            Op::Transpose(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Scale(a, _)
            | Op::Reshape(a)
            | Op::SumAll(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::BroadcastRows(a)
            | Op::BroadcastCols(a)
            | Op::BroadcastScalar(a)
            | Op::GatherRows(a, _)
            | Op::ScatterRows(a, _) => (Some(a), None),
        }
    }
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

struct GraphInner {
    nodes: Vec<Node>,
}

/// An append-only computation tape. Cheap to clone (shared handle).
#[derive(Clone)]
pub struct Graph {
    inner: Rc<RefCell<GraphInner>>,
}

/// A handle to one node of a `Graph`.
#[derive(Clone)]
pub struct Value {
    graph: Graph,
    id: usize,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { inner: Rc::new(RefCell::new(GraphInner { nodes: Vec::new() })) }
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool) -> Value {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node { shape, data, op, requires_grad });
        Value { graph: self.clone(), id }
    }

    fn push_checked(
        &self,
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        requires_grad: bool,
    ) -> Result<Value, GraphError> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(GraphError::NonFinite { op: op_name });
        }
        Ok(self.push(shape, data, op, requires_grad))
    }

    /// A leaf that does not require gradients.
    pub fn constant(&self, t: Tensor) -> Value {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    /// A leaf that requires gradients.
    pub fn param(&self, t: Tensor) -> Value {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    pub fn scalar(&self, v: f64) -> Result<Value, GraphError> {
        Ok(self.constant(Tensor::scalar(v)?))
    }

    fn same_graph(&self, other: &Graph) -> Result<(), GraphError> {
        if Rc::ptr_eq(&self.inner, &other.inner) {
            Ok(())
        } else {
            Err(GraphError::CrossGraph)
        }
    }
}

fn matmul_data(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            if av != 0.0 {
                let b_row = &b[kk * n..(kk + 1) * n];
                for (o, &bv) in o_row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        }
    }
    out
}

impl Value {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.inner.borrow().nodes[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.graph.inner.borrow().nodes[self.id].data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.inner.borrow().nodes[self.id].requires_grad
    }

    /// True for nodes created as leaves (constants/params).
    pub fn is_leaf(&self) -> bool {
        matches!(self.graph.inner.borrow().nodes[self.id].op, Op::Leaf)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Snapshot of the node's forward value.
    pub fn tensor(&self) -> Tensor {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        Tensor::from_vec(node.shape.clone(), node.data.clone())
            .expect("graph nodes hold finite data")
    }

    /// Value of a scalar node.
    pub fn item(&self) -> f64 {
        let inner = self.graph.inner.borrow();
        debug_assert!(inner.nodes[self.id].shape.is_empty());
        inner.nodes[self.id].data[0]
    }

    /// A constant leaf with this node's current data (stop-gradient).
    pub fn detach(&self) -> Value {
        self.graph.constant(self.tensor())
    }

    fn with_node<R>(&self, f: impl FnOnce(&Node) -> R) -> R {
        let inner = self.graph.inner.borrow();
        f(&inner.nodes[self.id])
    }

    fn binary_meta(&self, other: &Value) -> Result<(Vec<usize>, Vec<usize>, bool), GraphError> {
        self.graph.same_graph(&other.graph)?;
        let inner = self.graph.inner.borrow();
        let a = &inner.nodes[self.id];
        let b = &inner.nodes[other.id];
        Ok((a.shape.clone(), b.shape.clone(), a.requires_grad || b.requires_grad))
    }

    pub fn add(&self, other: &Value) -> Result<Value, GraphError> {
        let (sa, sb, rg) = self.binary_meta(other)?;
        let inner = self.graph.inner.borrow();
        let a = &inner.nodes[self.id];
        let b = &inner.nodes[other.id];
        let (shape, data) = if sa == sb {
            (sa, a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect())
        } else if sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0] {
            // matrix + row-vector bias
            let (m, n) = (sa[0], sa[1]);
            let mut out = Vec::with_capacity(m * n);
            for i in 0..m {
                for j in 0..n {
                    out.push(a.data[i * n + j] + b.data[j]);
                }
            }
            (sa, out)
        } else {
            return Err(GraphError::ShapeMismatch {
                op: "add",
                detail: format!("{:?} vs {:?}", sa, sb),
            });
        };
        drop(inner);
        self.graph.push_checked("add", shape, data, Op::Add(self.id, other.id), rg)
    }

    pub fn sub(&self, other: &Value) -> Result<Value, GraphError> {
        self.add(&other.scale(-1.0)?)
    }

    pub fn mul(&self, other: &Value) -> Result<Value, GraphError> {
        let (sa, sb, rg) = self.binary_meta(other)?;
        let inner = self.graph.inner.borrow();
        let a = &inner.nodes[self.id];
        let b = &inner.nodes[other.id];
        let (shape, data): (Vec<usize>, Vec<f64>) = if sa == sb {
            (sa, a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect())
        } else if sa.is_empty() {
            let s = a.data[0];
            (sb, b.data.iter().map(|y| s * y).collect())
        } else if sb.is_empty() {
            let s = b.data[0];
            (sa, a.data.iter().map(|x| x * s).collect())
        } else {
            return Err(GraphError::ShapeMismatch {
                op: "mul",
                detail: format!("{:?} vs {:?}", sa, sb),
            });
        };
        drop(inner);
        self.graph.push_checked("mul", shape, data, Op::Mul(self.id, other.id), rg)
    }

    pub fn div(&self, other: &Value) -> Result<Value, GraphError> {
        let (sa, sb, rg) = self.binary_meta(other)?;
        if sa != sb {
            return Err(GraphError::ShapeMismatch {
                op: "div",
                detail: format!("{:?} vs {:?}", sa, sb),
            });
        }
        let inner = self.graph.inner.borrow();
        let a = &inner.nodes[self.id];
        let b = &inner.nodes[other.id];
        let data: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| x / y).collect();
        drop(inner);
        self.graph.push_checked("div", sa, data, Op::Div(self.id, other.id), rg)
    }

    pub fn matmul(&self, other: &Value) -> Result<Value, GraphError> {
        let (sa, sb, rg) = self.binary_meta(other)?;
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(GraphError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} vs {:?}", sa, sb),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let inner = self.graph.inner.borrow();
        let data = matmul_data(&inner.nodes[self.id].data, &inner.nodes[other.id].data, m, k, n);
        drop(inner);
        self.graph.push_checked("matmul", vec![m, n], data, Op::Matmul(self.id, other.id), rg)
    }

    pub fn transpose(&self) -> Result<Value, GraphError> {
        let (shape, rg) = self.with_node(|n| (n.shape.clone(), n.requires_grad));
        if shape.len() != 2 {
            return Err(GraphError::ShapeMismatch {
                op: "transpose",
                detail: format!("expected matrix, got {:?}", shape),
            });
        }
        let (m, n) = (shape[0], shape[1]);
        let data = self.with_node(|node| {
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = node.data[i * n + j];
                }
            }
            out
        });
        self.graph.push_checked("transpose", vec![n, m], data, Op::Transpose(self.id), rg)
    }

    /// Rectifier; the subgradient at exactly 0 is 0.
    pub fn relu(&self) -> Result<Value, GraphError> {
        let (shape, rg) = self.with_node(|n| (n.shape.clone(), n.requires_grad));
        let data = self.with_node(|n| n.data.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect());
        self.graph.push_checked("relu", shape, data, Op::Relu(self.id), rg)
    }

    pub fn exp(&self) -> Result<Value, GraphError> {
        let (shape, rg) = self.with_node(|n| (n.shape.clone(), n.requires_grad));
        let data = self.with_node(|n| n.data.iter().map(|x| x.exp()).collect());
        self.graph.push_checked("exp", shape, data, Op::Exp(self.id), rg)
    }

    pub fn log(&self) -> Result<Value, GraphError> {
        let (shape, rg) = self.with_node(|n| (n.shape.clone(), n.requires_grad));
        let data = self.with_node(|n| n.data.iter().map(|x| x.ln()).collect());
        self.graph.push_checked("log", shape, data, Op::Log(self.id), rg)
    }

    pub fn scale(&self, c: f64) -> Result<Value, GraphError> {
        if !c.is_finite() {
            return Err(GraphError::NonFinite { op: "scale" });
        }
        let (shape, rg) = self.with_node(|n| (n.shape.clone(), n.requires_grad));
        let data = self.with_node(|n| n.data.iter().map(|x| x * c).collect());
        self.graph.push_checked("scale", shape, data, Op::Scale(self.id, c), rg)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Value, GraphError> {
        let (old, rg) = self.with_node(|n| (n.shape.clone(), n.requires_grad));
        if numel(&old) != numel(shape) {
            return Err(GraphError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", old, shape),
            });
        }
        let data = self.with_node(|n| n.data.clone());
        self.graph.push_checked("reshape", shape.to_vec(), data, Op::Reshape(self.id), rg)
    }

    pub fn sum_all(&self) -> Result<Value, GraphError> {
        let rg = self.with_node(|n| n.requires_grad);
        let s = self.with_node(|n| n.data.iter().sum::<f64>());
        self.graph.push_checked("sum_all", vec![], vec![s], Op::SumAll(self.id), rg)
    }

    pub fn mean(&self) -> Result<Value, GraphError> {
        let n = self.numel().max(1);
        self.sum_all()?.scale(1.0 / n as f64)
    }

    pub fn sum_rows(&self) -> Result<Value, GraphError> {
        let (shape, rg) = self.with_node(|n| (n.shape.clone(), n.requires_grad));
        if shape.len() != 2 {
            return Err(GraphError::ShapeMismatch {
                op: "sum_rows",
                detail: format!("expected matrix, got {:?}", shape),
            });
        }
        let (m, n) = (shape[0], shape[1]);
        let data = self.with_node(|node| {
            let mut out = vec![0.0; n];
            for i in 0..m {
                for j in 0..n {
                    out[j] += node.data[i * n + j];
                }
            }
            out
        });
        self.graph.push_checked("sum_rows", vec![n], data, Op::SumRows(self.id), rg)
    }

    pub fn sum_cols(&self) -> Result<Value, GraphError> {
        let (shape, rg) = self.with_node(|n| (n.shape.clone(), n.requires_grad));
        if shape.len() != 2 {
            return Err(GraphError::ShapeMismatch {
                op: "sum_cols",
                detail: format!("expected matrix, got {:?}", shape),
            });
        }
        let (m, n) = (shape[0], shape[1]);
        let data = self.with_node(|node| {
            (0..m).map(|i| node.data[i * n..(i + 1) * n].iter().sum()).collect()
        });
        self.graph.push_checked("sum_cols", vec![m], data, Op::SumCols(self.id), rg)
    }

    pub fn broadcast_rows(&self, m: usize) -> Result<Value, GraphError> {
        let (shape, rg) = self.with_node(|n| (n.shape.clone(), n.requires_grad));
        if shape.len() != 1 {
            return Err(GraphError::ShapeMismatch {
                op: "broadcast_rows",
                detail: format!("expected vector, got {:?}", shape),
            });
        }
        let n = shape[0];
        let data = self.with_node(|node| {
            let mut out = Vec::with_capacity(m * n);
            for _ in 0..m {
                out.extend_from_slice(&node.data);
            }
            out
        });
        self.graph.push_checked("broadcast_rows", vec![m, n], data, Op::BroadcastRows(self.id), rg)
    }

    pub fn broadcast_cols(&self, n: usize) -> Result<Value, GraphError> {
        let (shape, rg) = self.with_node(|s| (s.shape.clone(), s.requires_grad));
        if shape.len() != 1 {
            return Err(GraphError::ShapeMismatch {
                op: "broadcast_cols",
                detail: format!("expected vector, got {:?}", shape),
            });
        }
        let m = shape[0];
        let data = self.with_node(|node| {
            let mut out = Vec::with_capacity(m * n);
            for i in 0..m {
                for _ in 0..n {
                    out.push(node.data[i]);
                }
            }
            out
        });
        self.graph.push_checked("broadcast_cols", vec![m, n], data, Op::BroadcastCols(self.id), rg)
    }

    pub fn broadcast_scalar(&self, shape: &[usize]) -> Result<Value, GraphError> {
        let (own, rg) = self.with_node(|n| (n.shape.clone(), n.requires_grad));
        if !own.is_empty() {
            return Err(GraphError::ShapeMismatch {
                op: "broadcast_scalar",
                detail: format!("expected scalar, got {:?}", own),
            });
        }
        let v = self.with_node(|n| n.data[0]);
        let data = vec![v; numel(shape)];
        self.graph
            .push_checked("broadcast_scalar", shape.to_vec(), data, Op::BroadcastScalar(self.id), rg)
    }

    pub fn gather_rows(&self, indices: &[usize]) -> Result<Value, GraphError> {
        let (shape, rg) = self.with_node(|n| (n.shape.clone(), n.requires_grad));
        if shape.len() != 2 || indices.len() != shape[0] {
            return Err(GraphError::ShapeMismatch {
                op: "gather_rows",
                detail: format!("matrix {:?} with {} indices", shape, indices.len()),
            });
        }
        let (m, n) = (shape[0], shape[1]);
        for &ix in indices {
            if ix >= n {
                return Err(GraphError::LabelOutOfRange { op: "gather_rows", label: ix, classes: n });
            }
        }
        let data = self.with_node(|node| {
            indices.iter().enumerate().map(|(i, &j)| node.data[i * n + j]).collect()
        });
        let idx = Rc::new(indices.to_vec());
        self.graph.push_checked("gather_rows", vec![m], data, Op::GatherRows(self.id, idx), rg)
    }

    pub fn scatter_rows(&self, indices: &[usize], n_cols: usize) -> Result<Value, GraphError> {
        let (shape, rg) = self.with_node(|n| (n.shape.clone(), n.requires_grad));
        if shape.len() != 1 || indices.len() != shape[0] {
            return Err(GraphError::ShapeMismatch {
                op: "scatter_rows",
                detail: format!("vector {:?} with {} indices", shape, indices.len()),
            });
        }
        let m = shape[0];
        for &ix in indices {
            if ix >= n_cols {
                return Err(GraphError::LabelOutOfRange { op: "scatter_rows", label: ix, classes: n_cols });
            }
        }
        let data = self.with_node(|node| {
            let mut out = vec![0.0; m * n_cols];
            for (i, &j) in indices.iter().enumerate() {
                out[i * n_cols + j] = node.data[i];
            }
            out
        });
        let idx = Rc::new(indices.to_vec());
        self.graph.push_checked("scatter_rows", vec![m, n_cols], data, Op::ScatterRows(self.id, idx), rg)
    }

    /// Sum of elementwise products.
    pub fn dot(&self, other: &Value) -> Result<Value, GraphError> {
        self.mul(other)?.sum_all()
    }
}

/// Mean squared error over all elements of `pred` and `target`.
pub fn mse(pred: &Value, target: &Value) -> Result<Value, GraphError> {
    let diff = pred.sub(target)?;
    diff.mul(&diff)?.mean()
}

/// Mean cross-entropy of row-wise softmax over `logits` (batch x classes)
/// against integer class labels. Stabilized with a detached row max, which
/// leaves all derivatives exact.
pub fn softmax_cross_entropy(logits: &Value, labels: &[usize]) -> Result<Value, GraphError> {
    let shape = logits.shape();
    if shape.len() != 2 || labels.len() != shape[0] {
        return Err(GraphError::ShapeMismatch {
            op: "softmax_cross_entropy",
            detail: format!("logits {:?} with {} labels", shape, labels.len()),
        });
    }
    let (m, n) = (shape[0], shape[1]);
    for &l in labels {
        if l >= n {
            return Err(GraphError::LabelOutOfRange { op: "softmax_cross_entropy", label: l, classes: n });
        }
    }
    let t = logits.tensor();
    let row_max: Vec<f64> = (0..m)
        .map(|i| t.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let max_const = logits.graph().constant(Tensor::vector(row_max)?);
    let shifted = logits.sub(&max_const.broadcast_cols(n)?)?;
    let lse = shifted.exp()?.sum_cols()?.log()?.add(&max_const)?;
    let picked = logits.gather_rows(labels)?;
    lse.sub(&picked)?.sum_all()?.scale(1.0 / m as f64)
}

/// Gradients of the leaves of one backward pass, keyed by node identity.
pub struct GradientMap {
    entries: Vec<(usize, Value)>,
}

impl GradientMap {
    pub fn get(&self, leaf: &Value) -> Option<&Value> {
        self.entries.iter().find(|(id, _)| *id == leaf.id()).map(|(_, v)| v)
    }

    /// Gradients in the order the leaves were requested.
    pub fn values(&self) -> impl Iterator<Item = &Value> {
        self.entries.iter().map(|(_, v)| v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Reverse-mode gradients of a scalar `output` with respect to `leaves`.
///
/// With `create_graph` the returned gradients stay differentiable; without
/// it they are detached (later backward passes treat them as constants).
/// A leaf unreachable from the output gets a zero gradient. Each node of
/// the tape is visited exactly once, in reverse creation order.
pub fn backward(output: &Value, leaves: &[Value], create_graph: bool) -> Result<GradientMap, GraphError> {
    let graph = output.graph().clone();
    if !output.shape().is_empty() {
        return Err(GraphError::NonScalarOutput { shape: output.shape() });
    }
    let mut seen = Vec::with_capacity(leaves.len());
    for leaf in leaves {
        graph.same_graph(leaf.graph())?;
        if !leaf.requires_grad() {
            return Err(GraphError::LeafWithoutGrad { index: leaf.id() });
        }
        if seen.contains(&leaf.id()) {
            return Err(GraphError::DuplicateLeaf { index: leaf.id() });
        }
        seen.push(leaf.id());
    }

    let tape_len = graph.len();
    let mut grads: Vec<Option<Value>> = (0..tape_len).map(|_| None).collect();
    grads[output.id()] = Some(graph.scalar(1.0)?);

    // Adjoints are materialized only inside the ancestor cone of the
    // requested leaves. Without this, differentiating through a long
    // update chain (each step's parameters built from the last) would
    // rebuild adjoints for the entire history at every step, turning a
    // k-step unroll quadratic in k.
    let mut needed = vec![false; output.id() + 1];
    for &id in &seen {
        if id <= output.id() {
            needed[id] = true;
        }
    }
    {
        let inner = graph.inner.borrow();
        for id in 0..=output.id() {
            if needed[id] {
                continue;
            }
            let (a, b) = inner.nodes[id].op.operands();
            needed[id] = a.is_some_and(|p| needed[p]) || b.is_some_and(|p| needed[p]);
        }
    }

    let value_of = |id: usize| Value { graph: graph.clone(), id };
    let requires = |id: usize| needed[id] && graph.inner.borrow().nodes[id].requires_grad;

    // Accumulation order is fixed by node creation order.
    for id in (0..=output.id()).rev() {
        let Some(g) = grads[id].clone() else { continue };
        let op = graph.inner.borrow().nodes[id].op.clone();
        let accumulate = |pid: usize, contrib: Value, grads: &mut Vec<Option<Value>>| -> Result<(), GraphError> {
            grads[pid] = Some(match grads[pid].take() {
                None => contrib,
                Some(old) => old.add(&contrib)?,
            });
            Ok(())
        };
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if requires(a) {
                    accumulate(a, g.clone(), &mut grads)?;
                }
                if requires(b) {
                    let (sa, sb) = (value_of(a).shape(), value_of(b).shape());
                    let gb = if sa == sb { g.clone() } else { g.sum_rows()? };
                    accumulate(b, gb, &mut grads)?;
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (value_of(a), value_of(b));
                let (sa, sb) = (va.shape(), vb.shape());
                if requires(a) {
                    let mut da = g.mul(&vb)?;
                    if sa.is_empty() && !sb.is_empty() {
                        da = da.sum_all()?;
                    }
                    accumulate(a, da, &mut grads)?;
                }
                if requires(b) {
                    let mut db = g.mul(&va)?;
                    if sb.is_empty() && !sa.is_empty() {
                        db = db.sum_all()?;
                    }
                    accumulate(b, db, &mut grads)?;
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (value_of(a), value_of(b));
                if requires(a) {
                    accumulate(a, g.div(&vb)?, &mut grads)?;
                }
                if requires(b) {
                    let db = g.mul(&va)?.div(&vb.mul(&vb)?)?.scale(-1.0)?;
                    accumulate(b, db, &mut grads)?;
                }
            }
            Op::Matmul(a, b) => {
                let (va, vb) = (value_of(a), value_of(b));
                if requires(a) {
                    accumulate(a, g.matmul(&vb.transpose()?)?, &mut grads)?;
                }
                if requires(b) {
                    accumulate(b, va.transpose()?.matmul(&g)?, &mut grads)?;
                }
            }
            Op::Transpose(a) => {
                if requires(a) {
                    accumulate(a, g.transpose()?, &mut grads)?;
                }
            }
            Op::Relu(a) => {
                if requires(a) {
                    let mask = {
                        let inner = graph.inner.borrow();
                        let node = &inner.nodes[a];
                        let data: Vec<f64> =
                            node.data.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect();
                        Tensor::from_vec(node.shape.clone(), data).expect("finite mask")
                    };
                    let mask = graph.constant(mask);
                    accumulate(a, g.mul(&mask)?, &mut grads)?;
                }
            }
            Op::Exp(a) => {
                if requires(a) {
                    accumulate(a, g.mul(&value_of(id))?, &mut grads)?;
                }
            }
            Op::Log(a) => {
                if requires(a) {
                    accumulate(a, g.div(&value_of(a))?, &mut grads)?;
                }
            }
            Op::Scale(a, c) => {
                if requires(a) {
                    accumulate(a, g.scale(c)?, &mut grads)?;
                }
            }
            Op::Reshape(a) => {
                if requires(a) {
                    let target = value_of(a).shape();
                    accumulate(a, g.reshape(&target)?, &mut grads)?;
                }
            }
            Op::SumAll(a) => {
                if requires(a) {
                    let target = value_of(a).shape();
                    accumulate(a, g.broadcast_scalar(&target)?, &mut grads)?;
                }
            }
            Op::SumRows(a) => {
                if requires(a) {
                    let m = value_of(a).shape()[0];
                    accumulate(a, g.broadcast_rows(m)?, &mut grads)?;
                }
            }
            Op::SumCols(a) => {
                if requires(a) {
                    let n = value_of(a).shape()[1];
                    accumulate(a, g.broadcast_cols(n)?, &mut grads)?;
                }
            }
            Op::BroadcastRows(a) => {
                if requires(a) {
                    accumulate(a, g.sum_rows()?, &mut grads)?;
                }
            }
            Op::BroadcastCols(a) => {
                if requires(a) {
                    accumulate(a, g.sum_cols()?, &mut grads)?;
                }
            }
            Op::BroadcastScalar(a) => {
                if requires(a) {
                    accumulate(a, g.sum_all()?, &mut grads)?;
                }
            }
            Op::GatherRows(a, idx) => {
                if requires(a) {
                    let n = value_of(a).shape()[1];
                    accumulate(a, g.scatter_rows(&idx, n)?, &mut grads)?;
                }
            }
            Op::ScatterRows(a, idx) => {
                if requires(a) {
                    accumulate(a, g.gather_rows(&idx)?, &mut grads)?;
                }
            }
        }
    }

    let mut entries = Vec::with_capacity(leaves.len());
    for leaf in leaves {
        let shape = leaf.shape();
        let g = match grads[leaf.id()].take() {
            Some(g) => g,
            None => graph.constant(Tensor::zeros(shape)),
        };
        if !create_graph {
            graph.inner.borrow_mut().nodes[g.id()].requires_grad = false;
        }
        entries.push((leaf.id(), g));
    }
    Ok(GradientMap { entries })
}

/// Central-difference gradient estimate of a scalar function, the
/// independent oracle for every analytic gradient in this crate.
pub fn finite_diff_gradient<F>(mut f: F, point: &[f64], epsilon: f64) -> Result<Vec<f64>, GraphError>
where
    F: FnMut(&[f64]) -> Result<f64, GraphError>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut grad = Vec::with_capacity(point.len());
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + epsilon;
        let hi = f(&probe)?;
        probe[i] = point[i] - epsilon;
        let lo = f(&probe)?;
        probe[i] = point[i];
        let d = (hi - lo) / (2.0 * epsilon);
        if !d.is_finite() {
            return Err(GraphError::NonFinite { op: "finite_diff_gradient" });
        }
        grad.push(d);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
    }

    /// Compare analytic gradients against central differences for a scalar
    /// function of several tensor parameters, rebuilt fresh per probe.
    fn check_grad(
        shapes: &[Vec<usize>],
        point: &[f64],
        tol: f64,
        build: impl Fn(&Graph, &[Value]) -> Result<Value, GraphError>,
    ) {
        let make = |x: &[f64]| -> (Graph, Vec<Value>) {
            let g = Graph::new();
            let mut params = Vec::new();
            let mut off = 0;
            for s in shapes {
                let n = numel(s);
                let t = Tensor::from_vec(s.clone(), x[off..off + n].to_vec()).unwrap();
                params.push(g.param(t));
                off += n;
            }
            (g, params)
        };
        let (g, params) = make(point);
        let out = build(&g, &params).unwrap();
        let grads = backward(&out, &params, false).unwrap();
        let analytic: Vec<f64> =
            grads.values().flat_map(|v| v.tensor().data().to_vec()).collect();
        let fd = finite_diff_gradient(
            |x| {
                let (g, params) = make(x);
                Ok(build(&g, &params)?.item())
            },
            point,
            1e-5,
        )
        .unwrap();
        let err: f64 = analytic
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = fd.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-8);
        assert!(
            err / scale < tol,
            "relative gradient error {} exceeds {}\nanalytic {:?}\nfd       {:?}",
            err / scale,
            tol,
            analytic,
            fd
        );
    }

    fn rand_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    /// Values bounded away from zero, for relu kinks and denominators.
    fn rand_point_away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let mag = rng.gen_range(0.2..2.0);
                if rng.gen_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect()
    }

    #[test]
    fn relu_forward_values() {
        let g = Graph::new();
        let x = g.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap());
        let y = x.relu().unwrap();
        assert_eq!(y.tensor().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_gradient_at_kink_is_zero() {
        let g = Graph::new();
        let x = g.param(Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap());
        let out = x.relu().unwrap().sum_all().unwrap();
        let grads = backward(&out, &[x.clone()], false).unwrap();
        assert_eq!(grads.get(&x).unwrap().tensor().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn mse_of_identical_inputs_is_zero() {
        let g = Graph::new();
        let y = g.constant(Tensor::vector(vec![0.3, -1.2, 4.5]).unwrap());
        let z = g.constant(Tensor::vector(vec![0.3, -1.2, 4.5]).unwrap());
        assert_eq!(mse(&y, &z).unwrap().item(), 0.0);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_class_count() {
        let g = Graph::new();
        let logits = g.constant(Tensor::matrix(1, 3, vec![0.0, 0.0, 0.0]).unwrap());
        let loss = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert_close(loss.item(), 3.0f64.ln(), 1e-12);
    }

    #[test]
    fn cross_entropy_survives_huge_logits() {
        let g = Graph::new();
        let logits = g.constant(Tensor::matrix(1, 2, vec![1000.0, 0.0]).unwrap());
        let hit = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(hit.item().is_finite());
        assert_close(hit.item(), 0.0, 1e-12);
        let miss = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert_close(miss.item(), 1000.0, 1e-9);
    }

    #[test]
    fn square_function_first_and_second_derivative() {
        let g = Graph::new();
        let x = g.param(Tensor::scalar(3.0).unwrap());
        let y = x.mul(&x).unwrap();
        let first = backward(&y, &[x.clone()], true).unwrap();
        let dx = first.get(&x).unwrap().clone();
        assert_close(dx.item(), 6.0, 1e-12);
        let second = backward(&dx, &[x.clone()], false).unwrap();
        assert_close(second.get(&x).unwrap().item(), 2.0, 1e-12);
    }

    #[test]
    fn one_sgd_step_meta_gradient_matches_hand_value() {
        // Model y = w*x on the point (x, y) = (1, 0) with squared loss:
        // one gradient step sends w to w*(1 - 2a), so the loss after the
        // step is w^2*(1 - 2a)^2 and its derivative at w = 1, a = 0.1 is
        // 2*(0.8)^2 = 1.28.
        let alpha = 0.1;
        let run = |w0: f64| -> (Graph, Value, Value) {
            let g = Graph::new();
            let w = g.param(Tensor::scalar(w0).unwrap());
            let x = g.scalar(1.0).unwrap();
            let pred = w.mul(&x).unwrap();
            let inner_loss = pred.mul(&pred).unwrap();
            let grads = backward(&inner_loss, &[w.clone()], true).unwrap();
            let step = grads.get(&w).unwrap().scale(alpha).unwrap();
            let w1 = w.sub(&step).unwrap();
            let meta_loss = w1.mul(&w1).unwrap();
            (g, w, meta_loss)
        };
        let (_g, w, meta_loss) = run(1.0);
        let meta = backward(&meta_loss, &[w.clone()], false).unwrap();
        assert_close(meta.get(&w).unwrap().item(), 1.28, 1e-12);

        let fd = finite_diff_gradient(
            |p| {
                let (_g, _w, loss) = run(p[0]);
                Ok(loss.item())
            },
            &[1.0],
            1e-6,
        )
        .unwrap();
        assert_close(fd[0], 1.28, 1e-6);
    }

    #[test]
    fn elementwise_op_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let p = rand_point(&mut rng, 12);
            check_grad(&[vec![6], vec![6]], &p, 1e-4, |_, v| {
                v[0].add(&v[1])?.sum_all()
            });
            check_grad(&[vec![6], vec![6]], &p, 1e-4, |_, v| {
                v[0].mul(&v[1])?.sum_all()
            });
            check_grad(&[vec![6], vec![6]], &p, 1e-4, |_, v| v[0].sub(&v[1])?.dot(&v[0]));
            let q = rand_point_away_from_zero(&mut rng, 12);
            check_grad(&[vec![6], vec![6]], &q, 1e-4, |_, v| {
                v[0].div(&v[1])?.sum_all()
            });
            check_grad(&[vec![6]], &q[..6], 1e-4, |_, v| v[0].relu()?.dot(&v[0]));
        }
    }

    #[test]
    fn scalar_broadcast_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let p = rand_point(&mut rng, 7);
            // scalar * tensor, both orders, and scalar expansion
            check_grad(&[vec![], vec![6]], &p, 1e-4, |_, v| v[0].mul(&v[1])?.sum_all());
            check_grad(&[vec![6], vec![]], &p[..7], 1e-4, |_, v| {
                v[0].mul(&v[1])?.sum_all()
            });
            check_grad(&[vec![]], &p[..1], 1e-4, |_, v| {
                v[0].broadcast_scalar(&[2, 3])?.dot(&v[0].broadcast_scalar(&[2, 3])?)
            });
        }
    }

    #[test]
    fn transcendental_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let p = rand_point(&mut rng, 6);
            check_grad(&[vec![6]], &p, 1e-4, |_, v| v[0].exp()?.sum_all());
            let pos: Vec<f64> = (0..6).map(|_| rng.gen_range(0.2..3.0)).collect();
            check_grad(&[vec![6]], &pos, 1e-4, |_, v| v[0].log()?.sum_all());
            check_grad(&[vec![6]], &p, 1e-4, |_, v| v[0].scale(-1.7)?.dot(&v[0]));
        }
    }

    #[test]
    fn matrix_op_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let p = rand_point(&mut rng, 12);
            check_grad(&[vec![2, 3], vec![3, 2]], &p, 1e-4, |_, v| {
                v[0].matmul(&v[1])?.sum_all()
            });
            check_grad(&[vec![2, 3]], &p[..6], 1e-4, |g, v| {
                let w = g.constant(Tensor::matrix(2, 3, p[6..12].to_vec()).unwrap());
                v[0].transpose()?.matmul(&w)?.sum_all()
            });
            check_grad(&[vec![2, 3], vec![3]], &p[..9], 1e-4, |_, v| {
                v[0].add(&v[1])?.sum_all()
            });
            check_grad(&[vec![2, 3]], &p[..6], 1e-4, |_, v| v[0].reshape(&[3, 2])?.sum_cols()?.dot(&v[0].reshape(&[3, 2])?.sum_cols()?));
            check_grad(&[vec![2, 3]], &p[..6], 1e-4, |_, v| {
                v[0].sum_rows()?.dot(&v[0].sum_rows()?)
            });
            check_grad(&[vec![3]], &p[..3], 1e-4, |_, v| {
                v[0].broadcast_rows(2)?.sum_all()?.mul(&v[0].sum_all()?)
            });
            check_grad(&[vec![2]], &p[..2], 1e-4, |_, v| {
                v[0].broadcast_cols(3)?.sum_all()?.mul(&v[0].sum_all()?)
            });
        }
    }

    #[test]
    fn gather_scatter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let p = rand_point(&mut rng, 8);
            let idx = vec![rng.gen_range(0..4), rng.gen_range(0..4)];
            let idx2 = idx.clone();
            check_grad(&[vec![2, 4]], &p, 1e-4, |_, v| {
                let picked = v[0].gather_rows(&idx)?;
                picked.dot(&picked)
            });
            check_grad(&[vec![2]], &p[..2], 1e-4, move |_, v| {
                let spread = v[0].scatter_rows(&idx2, 4)?;
                spread.dot(&spread)
            });
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let p = rand_point(&mut rng, 8);
            let target: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t2 = target.clone();
            check_grad(&[vec![4]], &p[..4], 1e-4, move |g, v| {
                let t = g.constant(Tensor::vector(t2.clone()).unwrap());
                mse(&v[0], &t)
            });
            let labels = vec![rng.gen_range(0..4usize), rng.gen_range(0..4)];
            check_grad(&[vec![2, 4]], &p, 1e-4, move |_, v| {
                softmax_cross_entropy(&v[0], &labels)
            });
        }
    }

    #[test]
    fn two_layer_network_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            // 3 -> 4 -> 2 with relu between; weights away from kinks via input
            let n = 3 * 4 + 4 + 4 * 2 + 2;
            let p = rand_point(&mut rng, n);
            let x = Tensor::matrix(2, 3, rand_point(&mut rng, 6)).unwrap();
            let y = Tensor::matrix(2, 2, rand_point(&mut rng, 4)).unwrap();
            check_grad(
                &[vec![3, 4], vec![4], vec![4, 2], vec![2]],
                &p,
                1e-3,
                move |g, v| {
                    let xin = g.constant(x.clone());
                    let t = g.constant(y.clone());
                    let h = xin.matmul(&v[0])?.add(&v[1])?.relu()?;
                    let out = h.matmul(&v[2])?.add(&v[3])?;
                    mse(&out, &t)
                },
            );
        }
    }

    #[test]
    fn second_order_gradient_matches_finite_differences_of_first_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..10 {
            let point = rand_point_away_from_zero(&mut rng, 5);
            let v: Vec<f64> = rand_point(&mut rng, 5);
            // f(p) = sum(exp(p) * p) + sum(p W p-ish mix through matmul)
            let build = |x: &[f64]| -> (Graph, Value, Value) {
                let g = Graph::new();
                let p = g.param(Tensor::vector(x.to_vec()).unwrap());
                let a = p.exp().unwrap().dot(&p).unwrap();
                let m = p.reshape(&[1, 5]).unwrap();
                let b = m.matmul(&m.transpose().unwrap()).unwrap().sum_all().unwrap();
                let f = a.add(&b.scale(0.5).unwrap()).unwrap();
                (g, p, f)
            };
            // analytic: d/dp (grad f . v)
            let (_g, p, f) = build(&point);
            let g1 = backward(&f, &[p.clone()], true).unwrap();
            let vc = p.graph().constant(Tensor::vector(v.clone()).unwrap());
            let r = g1.get(&p).unwrap().dot(&vc).unwrap();
            let g2 = backward(&r, &[p.clone()], false).unwrap();
            let analytic = g2.get(&p).unwrap().tensor().data().to_vec();
            // reference: finite differences of the directional first-order value
            let vv = v.clone();
            let fd = finite_diff_gradient(
                |x| {
                    let (_g, p, f) = build(x);
                    let g1 = backward(&f, &[p.clone()], false)?;
                    let gd = g1.get(&p).unwrap().tensor();
                    Ok(gd.data().iter().zip(&vv).map(|(a, b)| a * b).sum())
                },
                &point,
                1e-5,
            )
            .unwrap();
            let err: f64 = analytic
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let scale = fd.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-8);
            assert!(err / scale < 1e-3, "second-order rel err {}", err / scale);
        }
    }

    #[test]
    fn diamond_dependency_accumulates_once() {
        // z = (x + x)^2 has dz/dx = 8x; double counting a visit would
        // inflate it.
        let g = Graph::new();
        let x = g.param(Tensor::scalar(1.5).unwrap());
        let y = x.add(&x).unwrap();
        let z = y.mul(&y).unwrap();
        let grads = backward(&z, &[x.clone()], false).unwrap();
        assert_close(grads.get(&x).unwrap().item(), 12.0, 1e-12);
    }

    #[test]
    fn backward_tape_growth_is_linear() {
        let g = Graph::new();
        let x = g.param(Tensor::vector(vec![0.5; 16]).unwrap());
        let mut h = x.clone();
        for _ in 0..10 {
            h = h.exp().unwrap().log().unwrap();
        }
        let out = h.sum_all().unwrap();
        let before = g.len();
        backward(&out, &[x], false).unwrap();
        let added = g.len() - before;
        assert!(
            added <= 4 * before + 8,
            "backward added {} nodes onto a {}-node tape",
            added,
            before
        );
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let g = Graph::new();
        let x = g.param(Tensor::scalar(2.0).unwrap());
        let orphan = g.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let out = x.mul(&x).unwrap();
        let grads = backward(&out, &[x, orphan.clone()], false).unwrap();
        assert_eq!(grads.get(&orphan).unwrap().tensor().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_argument_validation() {
        let g = Graph::new();
        let x = g.param(Tensor::scalar(1.0).unwrap());
        let c = g.scalar(4.0).unwrap();
        let vec_out = g.param(Tensor::vector(vec![1.0, 2.0]).unwrap());

        let out = x.mul(&x).unwrap();
        assert!(matches!(
            backward(&out, &[x.clone(), x.clone()], false),
            Err(GraphError::DuplicateLeaf { .. })
        ));
        assert!(matches!(
            backward(&out, &[c], false),
            Err(GraphError::LeafWithoutGrad { .. })
        ));
        assert!(matches!(
            backward(&vec_out, &[x.clone()], false),
            Err(GraphError::NonScalarOutput { .. })
        ));
        let other = Graph::new();
        let y = other.param(Tensor::scalar(1.0).unwrap());
        assert!(matches!(
            backward(&out, &[y], false),
            Err(GraphError::CrossGraph)
        ));
    }

    #[test]
    fn detached_gradients_do_not_require_grad() {
        let g = Graph::new();
        let x = g.param(Tensor::scalar(2.0).unwrap());
        let out = x.mul(&x).unwrap();
        let plain = backward(&out, &[x.clone()], false).unwrap();
        assert!(!plain.get(&x).unwrap().requires_grad());
        let out2 = x.mul(&x).unwrap();
        let higher = backward(&out2, &[x.clone()], true).unwrap();
        assert!(higher.get(&x).unwrap().requires_grad());
    }

    #[test]
    fn gradient_with_respect_to_intermediate_node() {
        // Differentiating against a non-leaf lets an update rule target a
        // fast-weight tensor that is itself the output of a previous step.
        let g = Graph::new();
        let x = g.param(Tensor::scalar(2.0).unwrap());
        let mid = x.mul(&x).unwrap(); // mid = x^2 = 4
        let out = mid.mul(&mid).unwrap(); // out = mid^2
        let grads = backward(&out, &[mid.clone()], false).unwrap();
        assert_close(grads.get(&mid).unwrap().item(), 8.0, 1e-12);
    }

    #[test]
    fn non_finite_forward_is_reported() {
        let g = Graph::new();
        let x = g.constant(Tensor::vector(vec![-1.0, 3.0]).unwrap());
        assert!(matches!(x.log(), Err(GraphError::NonFinite { .. })));
        let big = g.constant(Tensor::scalar(1e300).unwrap());
        assert!(matches!(
            big.mul(&big),
            Err(GraphError::NonFinite { .. })
        ));
    }

    #[test]
    fn finite_diff_matches_known_polynomial() {
        let fd = finite_diff_gradient(
            |x| Ok(x[0] * x[0] * x[0] + 2.0 * x[1]),
            &[2.0, 5.0],
            1e-5,
        )
        .unwrap();
        assert_close(fd[0], 12.0, 1e-6);
        assert_close(fd[1], 2.0, 1e-9);
    }
}
