//! Minimal reverse-mode automatic differentiation over small dense tensors.
//!
//! The tape records an eager operation graph; [`Tape::backward`] walks the
//! nodes in reverse creation order (a reverse topological order, since every
//! input precedes its consumers) exactly once and accumulates exact gradients.

use crate::error::{Error, Result};

/// Row-major dense matrix of f64. Vectors are 1 x n or n x 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Graph(format!(
                "tensor data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Broadcast-add a 1 x n row vector to every row.
    AddRow(NodeId, NodeId),
    /// Broadcast-multiply by a 1 x n row vector.
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    ClampMin(NodeId, f64),
    /// Row-wise softmax; when `causal`, entries with column > row are masked out.
    SoftmaxRows { x: NodeId, causal: bool },
    /// Row-wise normalization to zero mean / unit variance.
    LayerNormRows { x: NodeId, eps: f64 },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows { x: NodeId, start: usize, len: usize },
    SliceCols { x: NodeId, start: usize, len: usize },
    /// Mean over rows of -ln(p[row, label]).
    CrossEntropyMean { probs: NodeId, labels: Vec<usize> },
    /// Mean over rows of 0.5 ln(2 pi var) + d^2 / (2 var), where d is the
    /// angle-wrapped difference between mu and the target (the regression
    /// target is a bearing).
    GaussianNllMean {
        mu: NodeId,
        var: NodeId,
        targets: Vec<f64>,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id].value.rows, self.nodes[id].value.cols)
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id >= self.nodes.len() {
            return Err(Error::Graph(format!("node {id} is not on this tape")));
        }
        Ok(())
    }

    /// Register a differentiable input (a weight tensor).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Register a non-differentiated input (observations, position codes, ...).
    /// Gradients still accumulate into it mechanically; callers just never
    /// read them.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::Graph(format!(
                "matmul shape mismatch: {ar}x{ac} * {br}x{bc}"
            )));
        }
        let mut out = Tensor::zeros(ar, bc);
        {
            let av = &self.nodes[a].value;
            let bv = &self.nodes[b].value;
            for i in 0..ar {
                for k in 0..ac {
                    let aik = av.at(i, k);
                    if aik == 0.0 {
                        continue;
                    }
                    let brow = &bv.data[k * bc..(k + 1) * bc];
                    let orow = &mut out.data[i * bc..(i + 1) * bc];
                    for (o, &bvk) in orow.iter_mut().zip(brow) {
                        *o += aik * bvk;
                    }
                }
            }
        }
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let (r, c) = self.shape(a);
        let mut out = Tensor::zeros(c, r);
        for i in 0..r {
            for j in 0..c {
                *out.at_mut(j, i) = self.nodes[a].value.at(i, j);
            }
        }
        Ok(self.push(Op::Transpose(a), out))
    }

    fn binary_same_shape(&mut self, a: NodeId, b: NodeId, mul: bool) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        if self.shape(a) != self.shape(b) {
            return Err(Error::Graph(format!(
                "elementwise shape mismatch: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let (r, c) = self.shape(a);
        let mut out = Tensor::zeros(r, c);
        for i in 0..out.len() {
            let x = self.nodes[a].value.data[i];
            let y = self.nodes[b].value.data[i];
            out.data[i] = if mul { x * y } else { x + y };
        }
        let op = if mul { Op::Mul(a, b) } else { Op::Add(a, b) };
        Ok(self.push(op, out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, false)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, true)
    }

    fn row_broadcast(&mut self, a: NodeId, row: NodeId, mul: bool) -> Result<NodeId> {
        self.check(a)?;
        self.check(row)?;
        let (r, c) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != c {
            return Err(Error::Graph(format!(
                "row broadcast expects 1x{c}, got {rr}x{rc}"
            )));
        }
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                let x = self.nodes[a].value.at(i, j);
                let y = self.nodes[row].value.at(0, j);
                *out.at_mut(i, j) = if mul { x * y } else { x + y };
            }
        }
        let op = if mul {
            Op::MulRow(a, row)
        } else {
            Op::AddRow(a, row)
        };
        Ok(self.push(op, out))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.row_broadcast(a, row, false)
    }

    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.row_broadcast(a, row, true)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.check(a)?;
        let mut out = self.nodes[a].value.clone();
        for v in &mut out.data {
            *v *= c;
        }
        Ok(self.push(Op::Scale(a, c), out))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> Result<NodeId> {
        self.check(a)?;
        let mut out = self.nodes[a].value.clone();
        for v in &mut out.data {
            *v = f(*v);
        }
        Ok(self.push(op, out))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |v| v.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn clamp_min(&mut self, a: NodeId, floor: f64) -> Result<NodeId> {
        self.unary(a, |v| v.max(floor), Op::ClampMin(a, floor))
    }

    pub fn softmax_rows(&mut self, a: NodeId, causal: bool) -> Result<NodeId> {
        self.check(a)?;
        let (r, c) = self.shape(a);
        if causal && r != c {
            return Err(Error::Graph(format!(
                "causal softmax expects a square matrix, got {r}x{c}"
            )));
        }
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            let limit = if causal { i + 1 } else { c };
            let row = &self.nodes[a].value.data[i * c..i * c + limit];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..limit {
                let e = (row[j] - m).exp();
                *out.at_mut(i, j) = e;
                sum += e;
            }
            for j in 0..limit {
                *out.at_mut(i, j) /= sum;
            }
        }
        Ok(self.push(Op::SoftmaxRows { x: a, causal }, out))
    }

    pub fn layer_norm_rows(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        self.check(a)?;
        let (r, c) = self.shape(a);
        if c < 2 {
            return Err(Error::Graph("layer norm needs >= 2 columns".into()));
        }
        let mut out = Tensor::zeros(r, c);
        for i in 0..r {
            let row = &self.nodes[a].value.data[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                *out.at_mut(i, j) = (row[j] - mean) * inv;
            }
        }
        Ok(self.push(Op::LayerNormRows { x: a, eps }, out))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Graph("concat of zero parts".into()));
        }
        for &p in parts {
            self.check(p)?;
        }
        let cols = self.shape(parts[0]).1;
        let mut rows = 0;
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(Error::Graph("concat_rows column mismatch".into()));
            }
            rows += self.shape(p).0;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(&self.nodes[p].value.data);
        }
        let out = Tensor { rows, cols, data };
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Graph("concat of zero parts".into()));
        }
        for &p in parts {
            self.check(p)?;
        }
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(Error::Graph("concat_cols row mismatch".into()));
            }
            cols += self.shape(p).1;
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            for i in 0..pr {
                for j in 0..pc {
                    *out.at_mut(i, offset + j) = self.nodes[p].value.at(i, j);
                }
            }
            offset += pc;
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.check(a)?;
        let (r, c) = self.shape(a);
        if start + len > r {
            return Err(Error::Graph(format!(
                "slice_rows {start}..{} out of {r} rows",
                start + len
            )));
        }
        let data = self.nodes[a].value.data[start * c..(start + len) * c].to_vec();
        let out = Tensor {
            rows: len,
            cols: c,
            data,
        };
        Ok(self.push(Op::SliceRows { x: a, start, len }, out))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.check(a)?;
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(Error::Graph(format!(
                "slice_cols {start}..{} out of {c} cols",
                start + len
            )));
        }
        let mut out = Tensor::zeros(r, len);
        for i in 0..r {
            for j in 0..len {
                *out.at_mut(i, j) = self.nodes[a].value.at(i, start + j);
            }
        }
        Ok(self.push(Op::SliceCols { x: a, start, len }, out))
    }

    pub fn cross_entropy_mean(&mut self, probs: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.check(probs)?;
        let (r, c) = self.shape(probs);
        if labels.len() != r {
            return Err(Error::Graph(format!(
                "{} labels for {r} prediction rows",
                labels.len()
            )));
        }
        let mut total = 0.0;
        for (i, &lab) in labels.iter().enumerate() {
            if lab >= c {
                return Err(Error::Graph(format!("label {lab} out of {c} classes")));
            }
            total -= self.nodes[probs].value.at(i, lab).ln();
        }
        let out = Tensor::scalar(total / r as f64);
        Ok(self.push(
            Op::CrossEntropyMean {
                probs,
                labels: labels.to_vec(),
            },
            out,
        ))
    }

    pub fn gaussian_nll_mean(&mut self, mu: NodeId, var: NodeId, targets: &[f64]) -> Result<NodeId> {
        self.check(mu)?;
        self.check(var)?;
        let (r, c) = self.shape(mu);
        if c != 1 || self.shape(var) != (r, 1) || targets.len() != r {
            return Err(Error::Graph(
                "gaussian nll expects matching n x 1 mu/var and n targets".into(),
            ));
        }
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut total = 0.0;
        for i in 0..r {
            let m = self.nodes[mu].value.at(i, 0);
            let v = self.nodes[var].value.at(i, 0);
            if v <= 0.0 {
                return Err(Error::Graph(format!("non-positive variance {v} at row {i}")));
            }
            let d = crate::vehicle::wrap_angle(m - targets[i]);
            total += 0.5 * (two_pi * v).ln() + d * d / (2.0 * v);
        }
        let out = Tensor::scalar(total / r as f64);
        Ok(self.push(
            Op::GaussianNllMean {
                mu,
                var,
                targets: targets.to_vec(),
            },
            out,
        ))
    }

    /// Reverse-mode gradients of a scalar `loss` node with respect to every
    /// node; callers usually read only the trainable leaves.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Tensor>> {
        self.check(loss)?;
        if self.shape(loss) != (1, 1) {
            return Err(Error::Graph("backward requires a scalar loss node".into()));
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.rows, n.value.cols))
            .collect();
        grads[loss].data[0] = 1.0;

        for id in (0..=loss).rev() {
            if grads[id].data.iter().all(|&g| g == 0.0) {
                continue;
            }
            // Split so we can borrow the node's gradient while writing inputs'.
            let (gin, gout) = grads.split_at_mut(id);
            let g = &gout[0];
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    // dA = G * B^T
                    for i in 0..av.rows {
                        for k in 0..av.cols {
                            let mut acc = 0.0;
                            for j in 0..bv.cols {
                                acc += g.at(i, j) * bv.at(k, j);
                            }
                            *gin[*a].at_mut(i, k) += acc;
                        }
                    }
                    // dB = A^T * G
                    for k in 0..bv.rows {
                        for j in 0..bv.cols {
                            let mut acc = 0.0;
                            for i in 0..av.rows {
                                acc += av.at(i, k) * g.at(i, j);
                            }
                            *gin[*b].at_mut(k, j) += acc;
                        }
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = (g.rows, g.cols);
                    for i in 0..r {
                        for j in 0..c {
                            *gin[*a].at_mut(j, i) += g.at(i, j);
                        }
                    }
                }
                Op::Add(a, b) => {
                    for i in 0..g.len() {
                        gin[*a].data[i] += g.data[i];
                        gin[*b].data[i] += g.data[i];
                    }
                }
                Op::Mul(a, b) => {
                    let av = self.nodes[*a].value.data.clone();
                    let bv = &self.nodes[*b].value.data;
                    for i in 0..g.len() {
                        gin[*a].data[i] += g.data[i] * bv[i];
                        gin[*b].data[i] += g.data[i] * av[i];
                    }
                }
                Op::AddRow(a, row) => {
                    let (r, c) = (g.rows, g.cols);
                    for i in 0..r {
                        for j in 0..c {
                            gin[*a].data[i * c + j] += g.at(i, j);
                            gin[*row].data[j] += g.at(i, j);
                        }
                    }
                }
                Op::MulRow(a, row) => {
                    let (r, c) = (g.rows, g.cols);
                    for i in 0..r {
                        for j in 0..c {
                            let x = self.nodes[*a].value.at(i, j);
                            let w = self.nodes[*row].value.at(0, j);
                            gin[*a].data[i * c + j] += g.at(i, j) * w;
                            gin[*row].data[j] += g.at(i, j) * x;
                        }
                    }
                }
                Op::Scale(a, s) => {
                    for i in 0..g.len() {
                        gin[*a].data[i] += g.data[i] * s;
                    }
                }
                Op::Tanh(a) => {
                    for i in 0..g.len() {
                        let y = node.value.data[i];
                        gin[*a].data[i] += g.data[i] * (1.0 - y * y);
                    }
                }
                Op::Relu(a) => {
                    for i in 0..g.len() {
                        if self.nodes[*a].value.data[i] > 0.0 {
                            gin[*a].data[i] += g.data[i];
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    for i in 0..g.len() {
                        let y = node.value.data[i];
                        gin[*a].data[i] += g.data[i] * y * (1.0 - y);
                    }
                }
                Op::Exp(a) => {
                    for i in 0..g.len() {
                        gin[*a].data[i] += g.data[i] * node.value.data[i];
                    }
                }
                Op::ClampMin(a, floor) => {
                    for i in 0..g.len() {
                        if self.nodes[*a].value.data[i] >= *floor {
                            gin[*a].data[i] += g.data[i];
                        }
                    }
                }
                Op::SoftmaxRows { x, causal } => {
                    let (r, c) = (node.value.rows, node.value.cols);
                    for i in 0..r {
                        let limit = if *causal { i + 1 } else { c };
                        let mut dot = 0.0;
                        for j in 0..limit {
                            dot += g.at(i, j) * node.value.at(i, j);
                        }
                        for j in 0..limit {
                            let y = node.value.at(i, j);
                            gin[*x].data[i * c + j] += y * (g.at(i, j) - dot);
                        }
                    }
                }
                Op::LayerNormRows { x, eps } => {
                    let (r, c) = (node.value.rows, node.value.cols);
                    let nf = c as f64;
                    for i in 0..r {
                        let xin = &self.nodes[*x].value.data[i * c..(i + 1) * c];
                        let mean = xin.iter().sum::<f64>() / nf;
                        let var = xin.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                        let inv = 1.0 / (var + eps).sqrt();
                        let mut gmean = 0.0;
                        let mut gdot = 0.0;
                        for j in 0..c {
                            gmean += g.at(i, j);
                            gdot += g.at(i, j) * node.value.at(i, j);
                        }
                        gmean /= nf;
                        gdot /= nf;
                        for j in 0..c {
                            let y = node.value.at(i, j);
                            gin[*x].data[i * c + j] += inv * (g.at(i, j) - gmean - y * gdot);
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for &p in parts {
                        let (pr, pc) = (self.nodes[p].value.rows, self.nodes[p].value.cols);
                        for i in 0..pr {
                            for j in 0..pc {
                                gin[p].data[i * pc + j] += g.at(row + i, j);
                            }
                        }
                        row += pr;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let (pr, pc) = (self.nodes[p].value.rows, self.nodes[p].value.cols);
                        for i in 0..pr {
                            for j in 0..pc {
                                gin[p].data[i * pc + j] += g.at(i, col + j);
                            }
                        }
                        col += pc;
                    }
                }
                Op::SliceRows { x, start, len } => {
                    let c = node.value.cols;
                    for i in 0..*len {
                        for j in 0..c {
                            gin[*x].data[(start + i) * c + j] += g.at(i, j);
                        }
                    }
                }
                Op::SliceCols { x, start, len } => {
                    let xc = self.nodes[*x].value.cols;
                    for i in 0..node.value.rows {
                        for j in 0..*len {
                            gin[*x].data[i * xc + start + j] += g.at(i, j);
                        }
                    }
                }
                Op::CrossEntropyMean { probs, labels } => {
                    let gs = g.data[0];
                    let r = labels.len() as f64;
                    let c = self.nodes[*probs].value.cols;
                    for (i, &lab) in labels.iter().enumerate() {
                        let p = self.nodes[*probs].value.at(i, lab);
                        gin[*probs].data[i * c + lab] += gs * (-1.0 / (r * p));
                    }
                }
                Op::GaussianNllMean { mu, var, targets } => {
                    let gs = g.data[0];
                    let r = targets.len() as f64;
                    for (i, &t) in targets.iter().enumerate() {
                        let m = self.nodes[*mu].value.at(i, 0);
                        let v = self.nodes[*var].value.at(i, 0);
                        let d = crate::vehicle::wrap_angle(m - t);
                        gin[*mu].data[i] += gs * d / (r * v);
                        gin[*var].data[i] += gs * (0.5 / v - d * d / (2.0 * v * v)) / r;
                    }
                }
            }
        }
        Ok(grads)
    }

    /// Scaled dot-product attention with a causal mask, composed from tape
    /// primitives. Returns the output and the post-softmax attention node so
    /// callers can inspect the attention rows.
    pub fn causal_attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let head_dim = self.shape(q).1;
        let kt = self.transpose(k)?;
        let scores = self.matmul(q, kt)?;
        let scaled = self.scale(scores, 1.0 / (head_dim as f64).sqrt())?;
        let probs = self.softmax_rows(scaled, true)?;
        let out = self.matmul(probs, v)?;
        Ok((out, probs))
    }

    /// One LSTM cell step composed from tape primitives. Gate layout along the
    /// 4W columns is [input, forget, cell, output].
    #[allow(clippy::too_many_arguments)]
    pub fn lstm_cell(
        &mut self,
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
        wx: NodeId,
        wh: NodeId,
        bias: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let width = self.shape(h_prev).1;
        let zx = self.matmul(x, wx)?;
        let zh = self.matmul(h_prev, wh)?;
        let zsum = self.add(zx, zh)?;
        let z = self.add_row(zsum, bias)?;
        let i_gate = {
            let s = self.slice_cols(z, 0, width)?;
            self.sigmoid(s)?
        };
        let f_gate = {
            let s = self.slice_cols(z, width, width)?;
            self.sigmoid(s)?
        };
        let g_cell = {
            let s = self.slice_cols(z, 2 * width, width)?;
            self.tanh(s)?
        };
        let o_gate = {
            let s = self.slice_cols(z, 3 * width, width)?;
            self.sigmoid(s)?
        };
        let fc = self.mul(f_gate, c_prev)?;
        let ig = self.mul(i_gate, g_cell)?;
        let c = self.add(fc, ig)?;
        let ct = self.tanh(c)?;
        let h = self.mul(o_gate, ct)?;
        Ok((h, c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Max symmetric relative error between analytic and central-difference
    /// gradients of a scalar-valued tape program over its first leaf.
    fn gradcheck(
        build: impl Fn(&mut Tape, &Tensor) -> NodeId,
        x0: &Tensor,
        step: f64,
    ) -> f64 {
        let mut tape = Tape::new();
        let loss = {
            let _leaf_placeholder = ();
            build(&mut tape, x0)
        };
        let grads = tape.backward(loss).unwrap();
        // Leaf 0 is the tested input by convention.
        let analytic = grads[0].clone();

        let eval = |x: &Tensor| {
            let mut t = Tape::new();
            let l = build(&mut t, x);
            t.value(l).data[0]
        };

        let mut max_rel: f64 = 0.0;
        for i in 0..x0.len() {
            let mut xp = x0.clone();
            xp.data[i] += step;
            let mut xm = x0.clone();
            xm.data[i] -= step;
            let num = (eval(&xp) - eval(&xm)) / (2.0 * step);
            let a = analytic.data[i];
            let rel = (a - num).abs() / (a.abs() + num.abs() + 1e-10);
            max_rel = max_rel.max(rel);
        }
        max_rel
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor {
            rows: r,
            cols: c,
            data: (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    fn sum_all(tape: &mut Tape, id: NodeId) -> NodeId {
        // Reduce any tensor to a scalar via two matmuls with ones vectors.
        let (r, c) = (tape.value(id).rows, tape.value(id).cols);
        let ones_r = tape.constant(Tensor::from_vec(1, r, vec![1.0; r]).unwrap());
        let ones_c = tape.constant(Tensor::from_vec(c, 1, vec![1.0; c]).unwrap());
        let left = tape.matmul(ones_r, id).unwrap();
        tape.matmul(left, ones_c).unwrap()
    }

    /// Weighted scalar readout so gradients differ per element.
    fn weighted_sum(tape: &mut Tape, id: NodeId, seed: u64) -> NodeId {
        let (r, c) = (tape.value(id).rows, tape.value(id).cols);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = rand_tensor(&mut rng, r, c);
        let wleaf = tape.constant(w);
        let prod = tape.mul(id, wleaf).unwrap();
        sum_all(tape, prod)
    }

    #[test]
    fn scalar_square_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(3.0));
        let sq = tape.mul(w, w).unwrap();
        let grads = tape.backward(sq).unwrap();
        assert_eq!(grads[w].data[0], 6.0);
    }

    #[test]
    fn constant_graph_gradients_are_zero() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(2.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let _unused = tape.mul(w, w).unwrap();
        let loss = tape.scale(c, 1.0).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads[w].data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar_and_missing_nodes() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::zeros(2, 2));
        assert!(tape.backward(w).is_err());
        assert!(tape.backward(99).is_err());
    }

    #[test]
    fn matmul_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = rand_tensor(&mut rng, 3, 4);
        let other = rand_tensor(&mut rng, 4, 2);
        let rel = gradcheck(
            |tape, x| {
                let a = tape.leaf(x.clone());
                let b = tape.constant(other.clone());
                let m = tape.matmul(a, b).unwrap();
                weighted_sum(tape, m, 7)
            },
            &x0,
            1e-6,
        );
        assert!(rel < 1e-4, "rel = {rel:e}");
    }

    #[test]
    fn affine_map_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = rand_tensor(&mut rng, 4, 3);
        let w = rand_tensor(&mut rng, 3, 5);
        let b = rand_tensor(&mut rng, 1, 5);
        let rel = gradcheck(
            |tape, x| {
                let xl = tape.leaf(x.clone());
                let wl = tape.constant(w.clone());
                let bl = tape.constant(b.clone());
                let m = tape.matmul(xl, wl).unwrap();
                let a = tape.add_row(m, bl).unwrap();
                weighted_sum(tape, a, 8)
            },
            &x0,
            1e-6,
        );
        assert!(rel < 1e-4, "rel = {rel:e}");
    }

    #[test]
    fn elementwise_ops_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = rand_tensor(&mut rng, 3, 3);
        for op in ["tanh", "sigmoid", "exp", "scale", "mulrow"] {
            let row = rand_tensor(&mut rng, 1, 3);
            let rel = gradcheck(
                |tape, x| {
                    let a = tape.leaf(x.clone());
                    let y = match op {
                        "tanh" => tape.tanh(a).unwrap(),
                        "sigmoid" => tape.sigmoid(a).unwrap(),
                        "exp" => tape.exp(a).unwrap(),
                        "scale" => tape.scale(a, -1.7).unwrap(),
                        _ => {
                            let r = tape.constant(row.clone());
                            tape.mul_row(a, r).unwrap()
                        }
                    };
                    weighted_sum(tape, y, 9)
                },
                &x0,
                1e-6,
            );
            assert!(rel < 1e-4, "{op}: rel = {rel:e}");
        }
    }

    #[test]
    fn relu_gradcheck_away_from_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x0 = rand_tensor(&mut rng, 3, 3);
        for v in &mut x0.data {
            if v.abs() < 0.05 {
                *v += 0.1; // keep the finite difference away from the kink
            }
        }
        let rel = gradcheck(
            |tape, x| {
                let a = tape.leaf(x.clone());
                let y = tape.relu(a).unwrap();
                weighted_sum(tape, y, 10)
            },
            &x0,
            1e-6,
        );
        assert!(rel < 1e-4, "rel = {rel:e}");
    }

    #[test]
    fn softmax_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0 = rand_tensor(&mut rng, 4, 4);
        for causal in [false, true] {
            let rel = gradcheck(
                |tape, x| {
                    let a = tape.leaf(x.clone());
                    let y = tape.softmax_rows(a, causal).unwrap();
                    weighted_sum(tape, y, 11)
                },
                &x0,
                1e-6,
            );
            assert!(rel < 1e-4, "causal={causal}: rel = {rel:e}");
        }
    }

    #[test]
    fn layer_norm_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x0 = rand_tensor(&mut rng, 3, 6);
        let rel = gradcheck(
            |tape, x| {
                let a = tape.leaf(x.clone());
                let y = tape.layer_norm_rows(a, 1e-5).unwrap();
                weighted_sum(tape, y, 12)
            },
            &x0,
            1e-6,
        );
        assert!(rel < 1e-4, "rel = {rel:e}");
    }

    #[test]
    fn attention_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x0 = rand_tensor(&mut rng, 4, 9); // columns split into q, k, v
        let rel = gradcheck(
            |tape, x| {
                let a = tape.leaf(x.clone());
                let q = tape.slice_cols(a, 0, 3).unwrap();
                let k = tape.slice_cols(a, 3, 3).unwrap();
                let v = tape.slice_cols(a, 6, 3).unwrap();
                let (out, _probs) = tape.causal_attention(q, k, v).unwrap();
                weighted_sum(tape, out, 13)
            },
            &x0,
            1e-6,
        );
        assert!(rel < 1e-4, "rel = {rel:e}");
    }

    #[test]
    fn attention_rows_sum_to_one_and_are_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut tape = Tape::new();
        let q = tape.constant(rand_tensor(&mut rng, 5, 4));
        let k = tape.constant(rand_tensor(&mut rng, 5, 4));
        let v = tape.constant(rand_tensor(&mut rng, 5, 4));
        let (_out, probs) = tape.causal_attention(q, k, v).unwrap();
        let p = tape.value(probs);
        for i in 0..5 {
            let sum: f64 = (0..5).map(|j| p.at(i, j)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for j in i + 1..5 {
                assert_eq!(p.at(i, j), 0.0, "above-diagonal entry must be masked");
            }
        }
    }

    #[test]
    fn lstm_cell_gradcheck() {
        let width = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x0 = rand_tensor(&mut rng, 1, width);
        let wx = rand_tensor(&mut rng, width, 4 * width);
        let wh = rand_tensor(&mut rng, width, 4 * width);
        let b = rand_tensor(&mut rng, 1, 4 * width);
        let h0 = rand_tensor(&mut rng, 1, width);
        let c0 = rand_tensor(&mut rng, 1, width);
        let rel = gradcheck(
            |tape, x| {
                let xl = tape.leaf(x.clone());
                let h = tape.constant(h0.clone());
                let c = tape.constant(c0.clone());
                let wxl = tape.constant(wx.clone());
                let whl = tape.constant(wh.clone());
                let bl = tape.constant(b.clone());
                let (hn, _cn) = tape.lstm_cell(xl, h, c, wxl, whl, bl).unwrap();
                weighted_sum(tape, hn, 14)
            },
            &x0,
            1e-6,
        );
        assert!(rel < 1e-4, "rel = {rel:e}");
    }

    #[test]
    fn loss_ops_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        // Cross entropy through a softmax.
        let x0 = rand_tensor(&mut rng, 4, 5);
        let labels = vec![0usize, 3, 2, 4];
        let rel = gradcheck(
            |tape, x| {
                let a = tape.leaf(x.clone());
                let p = tape.softmax_rows(a, false).unwrap();
                tape.cross_entropy_mean(p, &labels).unwrap()
            },
            &x0,
            1e-6,
        );
        assert!(rel < 1e-4, "ce rel = {rel:e}");

        // Gaussian NLL with mu and log-variance packed side by side.
        let x0 = rand_tensor(&mut rng, 4, 2);
        let targets = vec![0.3, -0.5, 1.2, 0.0];
        let rel = gradcheck(
            |tape, x| {
                let a = tape.leaf(x.clone());
                let mu = tape.slice_cols(a, 0, 1).unwrap();
                let logvar = tape.slice_cols(a, 1, 1).unwrap();
                let ev = tape.exp(logvar).unwrap();
                let var = tape.clamp_min(ev, 1e-6).unwrap();
                tape.gaussian_nll_mean(mu, var, &targets).unwrap()
            },
            &x0,
            1e-6,
        );
        assert!(rel < 1e-4, "nll rel = {rel:e}");
    }

    #[test]
    fn slice_and_concat_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = rand_tensor(&mut rng, 4, 6);
        let rel = gradcheck(
            |tape, x| {
                let a = tape.leaf(x.clone());
                let top = tape.slice_rows(a, 0, 2).unwrap();
                let bottom = tape.slice_rows(a, 2, 2).unwrap();
                let left = tape.slice_cols(a, 0, 3).unwrap();
                let right = tape.slice_cols(a, 3, 3).unwrap();
                let vcat = tape.concat_rows(&[bottom, top]).unwrap();
                let hcat = tape.concat_cols(&[right, left]).unwrap();
                let s1 = weighted_sum(tape, vcat, 15);
                let s2 = weighted_sum(tape, hcat, 16);
                tape.add(s1, s2).unwrap()
            },
            &x0,
            1e-6,
        );
        assert!(rel < 1e-4, "rel = {rel:e}");
    }

    #[test]
    fn shape_mismatches_are_graph_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        assert!(tape.matmul(a, b).is_err());
        let c = tape.constant(Tensor::zeros(2, 2));
        assert!(tape.add(a, c).is_err());
        assert!(tape.slice_rows(a, 1, 3).is_err());
        assert!(tape.softmax_rows(a, true).is_err(), "causal needs square");
    }
}
