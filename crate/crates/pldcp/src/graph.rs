//! Reverse-mode autodiff over a flat tape of matrix ops.
//!
//! Nodes are appended in topological order (an op's inputs must already exist),
//! forward values are computed eagerly at construction, and `backward` walks the
//! tape once in reverse accumulating adjoints. The tape is rebuilt per training
//! step; nothing here persists across steps.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// Elementwise add; rhs may be 1 x c, broadcast over the lhs rows.
    Add(NodeId, NodeId),
    /// Elementwise subtract; rhs may be 1 x c, broadcast over the lhs rows.
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    LeakyRelu(NodeId, f64),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    /// Frobenius norm of the whole matrix (plain L2 for vectors), 1 x 1 output.
    L2Norm(NodeId),
    /// Cosine similarity of two equal-shape vectors, 1 x 1 output.
    Cosine(NodeId, NodeId),
    MeanRows(NodeId),
    MeanAll(NodeId),
    Transpose(NodeId),
    Ln(NodeId),
    Clip(NodeId, f64, f64),
    ConcatRows(Vec<NodeId>),
    Row(NodeId, usize),
    /// Assemble a matrix from 1 x 1 nodes, row-major.
    StackScalars(Vec<NodeId>),
    /// Every row rescaled to unit L2 norm.
    RowNormalize(NodeId),
    /// Gradient reversal: identity forward, adjoint scaled by -lambda backward.
    Grl(NodeId, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::L2Norm(..) => "l2_norm",
            Op::Cosine(..) => "cosine",
            Op::MeanRows(..) => "mean_rows",
            Op::MeanAll(..) => "mean_all",
            Op::Transpose(..) => "transpose",
            Op::Ln(..) => "ln",
            Op::Clip(..) => "clip",
            Op::ConcatRows(..) => "concat_rows",
            Op::Row(..) => "row",
            Op::StackScalars(_) => "stack_scalars",
            Op::RowNormalize(..) => "row_normalize",
            Op::Grl(..) => "grl",
        }
    }
}

struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Default)]
pub struct ValueGraph {
    nodes: Vec<Node>,
}

/// Adjoints for every node of a graph after `backward`.
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Adjoint of `id`, or None when no gradient flowed into it.
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.adjoints.get(id).and_then(|a| a.as_ref())
    }

    /// Adjoint of `id`, zeros in the given shape when nothing flowed.
    pub fn get_or_zeros(&self, id: NodeId, rows: usize, cols: usize) -> Matrix {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Matrix::zeros(rows, cols),
        }
    }
}

impl ValueGraph {
    pub fn new() -> Self {
        ValueGraph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id].value
    }

    /// Value of a 1 x 1 node as a plain f64.
    pub fn scalar_value(&self, id: NodeId) -> Result<f64> {
        let v = self.value(id);
        if v.dims() != (1, 1) {
            return Err(Error::shape("scalar_value", "1x1", v.shape_str()));
        }
        Ok(v.at(0, 0))
    }

    /// Node counts keyed by op name; lets tests pin how often an op ran.
    pub fn op_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut counts = BTreeMap::new();
        for node in &self.nodes {
            *counts.entry(node.op.name()).or_insert(0) += 1;
        }
        counts
    }

    fn push(&mut self, op: Op, value: Matrix) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value produced by {} node {}",
                op.name(),
                self.nodes.len()
            )));
        }
        self.nodes.push(Node { op, value });
        Ok(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Result<NodeId> {
        self.push(Op::Leaf, value)
    }

    /// Leaf holding a single scalar.
    pub fn scalar(&mut self, value: f64) -> Result<NodeId> {
        self.leaf(Matrix::row_vector(&[value]))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(Error::shape(
                "matmul",
                format!("{}x? @ ?x{}, inner dims equal", va.rows(), vb.cols()),
                format!("{} @ {}", va.shape_str(), vb.shape_str()),
            ));
        }
        let value = va.matmul(vb);
        self.push(Op::MatMul(a, b), value)
    }

    fn broadcast_pair_check(&self, op: &str, a: NodeId, b: NodeId) -> Result<bool> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dims() == vb.dims() {
            Ok(false)
        } else if vb.rows() == 1 && va.cols() == vb.cols() {
            Ok(true)
        } else {
            Err(Error::shape(
                op,
                format!("{} or 1x{}", va.shape_str(), va.cols()),
                vb.shape_str(),
            ))
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let broadcast = self.broadcast_pair_check("add", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let value = if broadcast {
            let mut out = va.clone();
            for i in 0..out.rows() {
                for (o, &x) in out.row_mut(i).iter_mut().zip(vb.row(0)) {
                    *o += x;
                }
            }
            out
        } else {
            va.add(vb)
        };
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let broadcast = self.broadcast_pair_check("sub", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let value = if broadcast {
            let mut out = va.clone();
            for i in 0..out.rows() {
                for (o, &x) in out.row_mut(i).iter_mut().zip(vb.row(0)) {
                    *o -= x;
                }
            }
            out
        } else {
            va.sub(vb)
        };
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dims() != vb.dims() {
            return Err(Error::shape("mul", va.shape_str(), vb.shape_str()));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Matrix::from_vec(va.rows(), va.cols(), data)?;
        self.push(Op::Mul(a, b), value)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let value = self.value(a).scale(c);
        self.push(Op::Scale(a, c), value)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let value = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a), value)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a), value)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let mut out = va.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        self.push(Op::SoftmaxRows(a), out)
    }

    pub fn l2_norm(&mut self, a: NodeId) -> Result<NodeId> {
        let value = Matrix::row_vector(&[self.value(a).frobenius_norm()]);
        self.push(Op::L2Norm(a), value)
    }

    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dims() != vb.dims() || va.rows().min(va.cols()) != 1 {
            return Err(Error::shape(
                "cosine",
                "two vectors of equal shape",
                format!("{} and {}", va.shape_str(), vb.shape_str()),
            ));
        }
        let c = crate::matrix::cosine(va.data(), vb.data())?;
        self.push(Op::Cosine(a, b), Matrix::row_vector(&[c]))
    }

    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.rows() == 0 {
            return Err(Error::shape("mean_rows", "at least 1 row", "0 rows"));
        }
        let value = va.mean_rows();
        self.push(Op::MeanRows(a), value)
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let n = (va.rows() * va.cols()) as f64;
        if n == 0.0 {
            return Err(Error::shape("mean_all", "non-empty matrix", "0 elements"));
        }
        let mean = va.data().iter().sum::<f64>() / n;
        self.push(Op::MeanAll(a), Matrix::row_vector(&[mean]))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).transpose();
        self.push(Op::Transpose(a), value)
    }

    /// Natural log; rejects non-positive inputs (clip first for loss terms).
    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.data().iter().any(|&x| x <= 0.0) {
            return Err(Error::Numeric(
                "ln of a non-positive value (clip the input first)".into(),
            ));
        }
        let value = va.map(f64::ln);
        self.push(Op::Ln(a), value)
    }

    /// Clamp into [lo, hi]; gradient passes only where lo < x < hi.
    pub fn clip(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if !(lo < hi) {
            return Err(Error::Config(format!("clip bounds inverted: [{lo}, {hi}]")));
        }
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(Op::Clip(a, lo, hi), value)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "at least one part", "0 parts"));
        }
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("{cols} columns"),
                    v.shape_str(),
                ));
            }
            rows += v.rows();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let value = Matrix::from_vec(rows, cols, data)?;
        self.push(Op::ConcatRows(parts.to_vec()), value)
    }

    /// Extract row `i` as a 1 x cols node.
    pub fn row(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        let va = self.value(a);
        if i >= va.rows() {
            return Err(Error::shape(
                "row",
                format!("row index < {}", va.rows()),
                format!("{i}"),
            ));
        }
        let value = Matrix::row_vector(va.row(i));
        self.push(Op::Row(a, i), value)
    }

    pub fn stack_scalars(&mut self, rows: usize, cols: usize, items: &[NodeId]) -> Result<NodeId> {
        if items.len() != rows * cols {
            return Err(Error::shape(
                "stack_scalars",
                format!("{} scalars", rows * cols),
                format!("{}", items.len()),
            ));
        }
        let mut data = Vec::with_capacity(items.len());
        for &id in items {
            let v = self.value(id);
            if v.dims() != (1, 1) {
                return Err(Error::shape("stack_scalars", "1x1 items", v.shape_str()));
            }
            data.push(v.at(0, 0));
        }
        let value = Matrix::from_vec(rows, cols, data)?;
        self.push(Op::StackScalars(items.to_vec()), value)
    }

    /// Rescale every row to unit L2 norm; zero-norm rows are rejected.
    pub fn row_normalize(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let mut out = va.clone();
        for i in 0..out.rows() {
            let norm = crate::matrix::l2_norm(out.row(i));
            if norm == 0.0 {
                return Err(Error::Numeric(format!("row_normalize: row {i} has zero norm")));
            }
            for x in out.row_mut(i) {
                *x /= norm;
            }
        }
        self.push(Op::RowNormalize(a), out)
    }

    /// Gradient reversal: forward identity, backward multiplies the adjoint by
    /// exactly -lambda.
    pub fn grl(&mut self, a: NodeId, lambda: f64) -> Result<NodeId> {
        let value = self.value(a).clone();
        self.push(Op::Grl(a, lambda), value)
    }

    /// Reverse pass from a scalar root. Returns per-node adjoints.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.dims() != (1, 1) {
            return Err(Error::shape("backward root", "1x1", root_value.shape_str()));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[root] = Some(Matrix::row_vector(&[1.0]));

        for id in (0..=root).rev() {
            let g = match adj[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_inputs(id, &g, &mut adj);
            adj[id] = Some(g);
        }

        for (id, a) in adj.iter().enumerate() {
            if let Some(m) = a {
                if !m.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite adjoint at {} node {id}",
                        self.nodes[id].op.name()
                    )));
                }
            }
        }
        Ok(Gradients { adjoints: adj })
    }

    fn accumulate(adj: &mut [Option<Matrix>], id: NodeId, delta: Matrix) {
        match &mut adj[id] {
            Some(existing) => {
                debug_assert_eq!(existing.dims(), delta.dims());
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate_inputs(&self, id: NodeId, g: &Matrix, adj: &mut Vec<Option<Matrix>>) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                Self::accumulate(adj, *a, g.matmul(&vb.transpose()));
                Self::accumulate(adj, *b, va.transpose().matmul(g));
            }
            Op::Add(a, b) => {
                Self::accumulate(adj, *a, g.clone());
                let vb = &self.nodes[*b].value;
                if vb.rows() == 1 && g.rows() > 1 {
                    let mut col_sum = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (s, &x) in col_sum.row_mut(0).iter_mut().zip(g.row(i)) {
                            *s += x;
                        }
                    }
                    Self::accumulate(adj, *b, col_sum);
                } else {
                    Self::accumulate(adj, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                Self::accumulate(adj, *a, g.clone());
                let vb = &self.nodes[*b].value;
                if vb.rows() == 1 && g.rows() > 1 {
                    let mut col_sum = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (s, &x) in col_sum.row_mut(0).iter_mut().zip(g.row(i)) {
                            *s -= x;
                        }
                    }
                    Self::accumulate(adj, *b, col_sum);
                } else {
                    Self::accumulate(adj, *b, g.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let ga = Matrix::from_vec(
                    g.rows(),
                    g.cols(),
                    g.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect(),
                )
                .expect("mul backward shape");
                let gb = Matrix::from_vec(
                    g.rows(),
                    g.cols(),
                    g.data().iter().zip(va.data()).map(|(&x, &y)| x * y).collect(),
                )
                .expect("mul backward shape");
                Self::accumulate(adj, *a, ga);
                Self::accumulate(adj, *b, gb);
            }
            Op::Scale(a, c) => Self::accumulate(adj, *a, g.scale(*c)),
            Op::AddScalar(a) => Self::accumulate(adj, *a, g.clone()),
            Op::LeakyRelu(a, slope) => {
                let va = &self.nodes[*a].value;
                let data = g
                    .data()
                    .iter()
                    .zip(va.data())
                    .map(|(&gx, &x)| if x > 0.0 { gx } else { slope * gx })
                    .collect();
                Self::accumulate(
                    adj,
                    *a,
                    Matrix::from_vec(g.rows(), g.cols(), data).expect("leaky_relu backward shape"),
                );
            }
            Op::Sigmoid(a) => {
                let out = &self.nodes[id].value;
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gx, &s)| gx * s * (1.0 - s))
                    .collect();
                Self::accumulate(
                    adj,
                    *a,
                    Matrix::from_vec(g.rows(), g.cols(), data).expect("sigmoid backward shape"),
                );
            }
            Op::SoftmaxRows(a) => {
                let out = &self.nodes[id].value;
                let mut ga = Matrix::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let s = out.row(i);
                    let gr = g.row(i);
                    let dot: f64 = gr.iter().zip(s).map(|(&x, &y)| x * y).sum();
                    for (o, (&gx, &sx)) in ga.row_mut(i).iter_mut().zip(gr.iter().zip(s)) {
                        *o = sx * (gx - dot);
                    }
                }
                Self::accumulate(adj, *a, ga);
            }
            Op::L2Norm(a) => {
                let va = &self.nodes[*a].value;
                let norm = self.nodes[id].value.at(0, 0);
                // Subgradient zero at the origin.
                let scale = if norm == 0.0 { 0.0 } else { g.at(0, 0) / norm };
                Self::accumulate(adj, *a, va.scale(scale));
            }
            Op::Cosine(a, b) => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (na, nb) = (
                    crate::matrix::l2_norm(va.data()),
                    crate::matrix::l2_norm(vb.data()),
                );
                let cos = self.nodes[id].value.at(0, 0);
                let gs = g.at(0, 0);
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                let mut gb = Matrix::zeros(vb.rows(), vb.cols());
                for k in 0..va.data().len() {
                    ga.data_mut()[k] = gs * (vb.data()[k] / (na * nb) - cos * va.data()[k] / (na * na));
                    gb.data_mut()[k] = gs * (va.data()[k] / (na * nb) - cos * vb.data()[k] / (nb * nb));
                }
                Self::accumulate(adj, *a, ga);
                Self::accumulate(adj, *b, gb);
            }
            Op::MeanRows(a) => {
                let va = &self.nodes[*a].value;
                let inv = 1.0 / va.rows() as f64;
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                for i in 0..va.rows() {
                    for (o, &gx) in ga.row_mut(i).iter_mut().zip(g.row(0)) {
                        *o = gx * inv;
                    }
                }
                Self::accumulate(adj, *a, ga);
            }
            Op::MeanAll(a) => {
                let va = &self.nodes[*a].value;
                let inv = g.at(0, 0) / (va.rows() * va.cols()) as f64;
                Self::accumulate(adj, *a, Matrix::filled(va.rows(), va.cols(), inv));
            }
            Op::Transpose(a) => Self::accumulate(adj, *a, g.transpose()),
            Op::Ln(a) => {
                let va = &self.nodes[*a].value;
                let data = g
                    .data()
                    .iter()
                    .zip(va.data())
                    .map(|(&gx, &x)| gx / x)
                    .collect();
                Self::accumulate(
                    adj,
                    *a,
                    Matrix::from_vec(g.rows(), g.cols(), data).expect("ln backward shape"),
                );
            }
            Op::Clip(a, lo, hi) => {
                let va = &self.nodes[*a].value;
                let data = g
                    .data()
                    .iter()
                    .zip(va.data())
                    .map(|(&gx, &x)| if x > *lo && x < *hi { gx } else { 0.0 })
                    .collect();
                Self::accumulate(
                    adj,
                    *a,
                    Matrix::from_vec(g.rows(), g.cols(), data).expect("clip backward shape"),
                );
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let vp = &self.nodes[p].value;
                    let mut gp = Matrix::zeros(vp.rows(), vp.cols());
                    for i in 0..vp.rows() {
                        gp.row_mut(i).copy_from_slice(g.row(offset + i));
                    }
                    Self::accumulate(adj, p, gp);
                    offset += vp.rows();
                }
            }
            Op::Row(a, i) => {
                let va = &self.nodes[*a].value;
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                ga.row_mut(*i).copy_from_slice(g.row(0));
                Self::accumulate(adj, *a, ga);
            }
            Op::StackScalars(items) => {
                for (&item, &gx) in items.iter().zip(g.data()) {
                    Self::accumulate(adj, item, Matrix::row_vector(&[gx]));
                }
            }
            Op::RowNormalize(a) => {
                let va = &self.nodes[*a].value;
                let out = &self.nodes[id].value;
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                for i in 0..va.rows() {
                    let norm = crate::matrix::l2_norm(va.row(i));
                    let n = out.row(i);
                    let gr = g.row(i);
                    let dot: f64 = gr.iter().zip(n).map(|(&x, &y)| x * y).sum();
                    for (o, (&gx, &nx)) in ga.row_mut(i).iter_mut().zip(gr.iter().zip(n)) {
                        *o = (gx - dot * nx) / norm;
                    }
                }
                Self::accumulate(adj, *a, ga);
            }
            Op::Grl(a, lambda) => Self::accumulate(adj, *a, g.scale(-*lambda)),
        }
    }
}

/// Result of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (parameter index, row, col) of the worst entry.
    pub worst: (usize, usize, usize),
    pub n_entries: usize,
}

/// Compare reverse-mode gradients of a scalar function against central finite
/// differences. `build` constructs the scalar objective from leaf nodes created
/// for each parameter; it is re-invoked for every perturbed evaluation, so it
/// must be a pure function of the parameter values.
///
/// Relative error per entry: |ad - fd| / max(1, |fd|).
pub fn grad_check<F>(params: &[Matrix], eps: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut ValueGraph, &[NodeId]) -> Result<NodeId>,
{
    if eps <= 0.0 {
        return Err(Error::Config(format!("grad_check eps must be > 0, got {eps}")));
    }

    let eval = |p: &[Matrix]| -> Result<f64> {
        let mut graph = ValueGraph::new();
        let mut ids = Vec::with_capacity(p.len());
        for m in p {
            ids.push(graph.leaf(m.clone())?);
        }
        let root = build(&mut graph, &ids)?;
        graph.scalar_value(root)
    };

    // Analytic gradients once.
    let mut graph = ValueGraph::new();
    let mut ids = Vec::with_capacity(params.len());
    for m in params {
        ids.push(graph.leaf(m.clone())?);
    }
    let root = build(&mut graph, &ids)?;
    let grads = graph.backward(root)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0, 0),
        n_entries: 0,
    };
    let mut work: Vec<Matrix> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        let analytic = grads.get_or_zeros(ids[pi], param.rows(), param.cols());
        for r in 0..param.rows() {
            for c in 0..param.cols() {
                let orig = work[pi].at(r, c);
                *work[pi].at_mut(r, c) = orig + eps;
                let f_plus = eval(&work).map_err(|e| {
                    Error::Numeric(format!("perturbing parameter {pi} entry ({r},{c}): {e}"))
                })?;
                *work[pi].at_mut(r, c) = orig - eps;
                let f_minus = eval(&work).map_err(|e| {
                    Error::Numeric(format!("perturbing parameter {pi} entry ({r},{c}): {e}"))
                })?;
                *work[pi].at_mut(r, c) = orig;

                let fd = (f_plus - f_minus) / (2.0 * eps);
                let ad = analytic.at(r, c);
                let rel = (ad - fd).abs() / f64::max(1.0, fd.abs());
                report.n_entries += 1;
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                    report.worst = (pi, r, c);
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(params: &[Matrix], build: impl Fn(&mut ValueGraph, &[NodeId]) -> Result<NodeId>) -> f64 {
        grad_check(params, 1e-5, build).unwrap().max_rel_err
    }

    #[test]
    fn grad_of_square_at_three_is_six() {
        let p = vec![Matrix::row_vector(&[3.0])];
        let mut graph = ValueGraph::new();
        let x = graph.leaf(p[0].clone()).unwrap();
        let y = graph.mul(x, x).unwrap();
        let grads = graph.backward(y).unwrap();
        assert!((grads.get(x).unwrap().at(0, 0) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn grl_backward_negates_and_scales_exactly() {
        let mut graph = ValueGraph::new();
        let x = graph.leaf(Matrix::row_vector(&[1.0, -2.0])).unwrap();
        let r = graph.grl(x, 1.0).unwrap();
        let s = graph.mean_all(r).unwrap();
        let sum = graph.scale(s, 2.0).unwrap(); // adjoint of r becomes exactly [1, 1]
        let grads = graph.backward(sum).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[-1.0, -1.0]);

        let mut graph = ValueGraph::new();
        let x = graph.leaf(Matrix::row_vector(&[7.0])).unwrap();
        let r = graph.grl(x, 0.5).unwrap();
        let quad = graph.scale(r, 4.0).unwrap(); // adjoint of r is exactly [4]
        let grads = graph.backward(quad).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[-2.0]);
    }

    #[test]
    fn grl_forward_is_identity() {
        let mut graph = ValueGraph::new();
        let x = graph.leaf(Matrix::row_vector(&[1.5, -0.25])).unwrap();
        let r = graph.grl(x, 3.0).unwrap();
        assert_eq!(graph.value(r), graph.value(x));
    }

    #[test]
    fn softmax_of_sum_has_zero_gradient() {
        // sum(softmax(x)) == 1 identically, so the gradient must vanish.
        let p = vec![Matrix::row_vector(&[0.3, -1.2, 2.0])];
        let mut graph = ValueGraph::new();
        let x = graph.leaf(p[0].clone()).unwrap();
        let s = graph.softmax_rows(x).unwrap();
        let m = graph.mean_all(s).unwrap();
        let grads = graph.backward(m).unwrap();
        for &g in grads.get(x).unwrap().data() {
            assert!(g.abs() < 1e-15, "gradient should vanish, got {g}");
        }
    }

    #[test]
    fn matmul_chain_matches_finite_differences() {
        let a = Matrix::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.25, -0.75]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, -0.5], vec![0.3, 0.8], vec![-1.2, 0.4]]).unwrap();
        let err = check(&[a, b], |g, ids| {
            let m = g.matmul(ids[0], ids[1])?;
            let t = g.transpose(m)?;
            let mm = g.matmul(m, t)?;
            g.mean_all(mm)
        });
        assert!(err < 1e-7, "max rel err {err}");
    }

    #[test]
    fn activations_match_finite_differences() {
        let x = Matrix::from_rows(&[vec![0.5, -1.3, 2.2], vec![0.9, -0.1, 0.4]]).unwrap();
        let err = check(&[x.clone()], |g, ids| {
            let a = g.leaky_relu(ids[0], 0.01)?;
            let s = g.sigmoid(a)?;
            g.mean_all(s)
        });
        assert!(err < 1e-7, "max rel err {err}");

        let err = check(&[x], |g, ids| {
            let s = g.softmax_rows(ids[0])?;
            let c = g.clip(s, 1e-7, 1.0 - 1e-7)?;
            let l = g.ln(c)?;
            let sq = g.mul(l, l)?;
            g.mean_all(sq)
        });
        assert!(err < 1e-7, "max rel err {err}");
    }

    #[test]
    fn norm_and_cosine_match_finite_differences() {
        let a = Matrix::row_vector(&[0.6, -0.8, 1.1]);
        let b = Matrix::row_vector(&[1.4, 0.2, -0.5]);
        let err = check(&[a.clone(), b], |g, ids| {
            let c = g.cosine(ids[0], ids[1])?;
            let n = g.l2_norm(ids[0])?;
            let s = g.mul(c, n)?;
            g.mean_all(s)
        });
        assert!(err < 1e-7, "max rel err {err}");

        let p = Matrix::from_rows(&[vec![1.0, 0.3], vec![0.7, -0.4]]).unwrap();
        let err = check(&[p], |g, ids| {
            let t = g.transpose(ids[0])?;
            let gram = g.matmul(t, ids[0])?;
            let eye = g.leaf(Matrix::eye(2))?;
            let diff = g.sub(gram, eye)?;
            g.l2_norm(diff)
        });
        assert!(err < 1e-7, "max rel err {err}");
    }

    #[test]
    fn row_ops_match_finite_differences() {
        let x = Matrix::from_rows(&[vec![0.2, 0.9, -0.3], vec![1.1, -0.6, 0.5]]).unwrap();
        let err = check(&[x], |g, ids| {
            let n = g.row_normalize(ids[0])?;
            let nt = g.transpose(n)?;
            let gram = g.matmul(n, nt)?;
            let c = g.clip(gram, -1.0 + 1e-9, 1.0 - 1e-9)?;
            g.mean_all(c)
        });
        assert!(err < 1e-6, "max rel err {err}");

        let x = Matrix::from_rows(&[vec![0.2, 0.9], vec![1.1, -0.6], vec![0.0, 0.7]]).unwrap();
        let err = check(&[x], |g, ids| {
            let r0 = g.row(ids[0], 0)?;
            let r2 = g.row(ids[0], 2)?;
            let c = g.cosine(r0, r2)?;
            let stacked = g.stack_scalars(1, 2, &[c, c])?;
            let cat = g.concat_rows(&[stacked.clone(), stacked])?;
            g.mean_all(cat)
        });
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn broadcast_add_matches_finite_differences() {
        let x = Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25], vec![-0.4, 1.3]]).unwrap();
        let bias = Matrix::row_vector(&[0.1, -0.2]);
        let err = check(&[x, bias], |g, ids| {
            let a = g.add(ids[0], ids[1])?;
            let s = g.sub(a, ids[1])?;
            let b = g.add(s, ids[1])?;
            let sq = g.mul(b, b)?;
            g.mean_all(sq)
        });
        assert!(err < 1e-7, "max rel err {err}");
    }

    #[test]
    fn mean_rows_matches_finite_differences() {
        let x = Matrix::from_rows(&[vec![0.5, -1.0, 0.1], vec![2.0, 0.25, -0.7]]).unwrap();
        let err = check(&[x], |g, ids| {
            let m = g.mean_rows(ids[0])?;
            let sq = g.mul(m, m)?;
            g.mean_all(sq)
        });
        assert!(err < 1e-7, "max rel err {err}");
    }

    #[test]
    fn shape_mismatch_is_reported_with_context() {
        let mut graph = ValueGraph::new();
        let a = graph.leaf(Matrix::zeros(2, 3)).unwrap();
        let b = graph.leaf(Matrix::zeros(2, 3)).unwrap();
        let err = graph.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
    }

    #[test]
    fn ln_rejects_non_positive_input() {
        let mut graph = ValueGraph::new();
        let a = graph.leaf(Matrix::row_vector(&[0.5, 0.0])).unwrap();
        assert!(graph.ln(a).is_err());
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut graph = ValueGraph::new();
        let a = graph.leaf(Matrix::zeros(2, 2)).unwrap();
        assert!(graph.backward(a).is_err());
    }

    #[test]
    fn op_counts_reflect_tape_contents() {
        let mut graph = ValueGraph::new();
        let a = graph.leaf(Matrix::eye(2)).unwrap();
        let b = graph.matmul(a, a).unwrap();
        let _ = graph.matmul(b, a).unwrap();
        let counts = graph.op_counts();
        assert_eq!(counts.get("matmul"), Some(&2));
        assert_eq!(counts.get("leaf"), Some(&1));
    }
}
