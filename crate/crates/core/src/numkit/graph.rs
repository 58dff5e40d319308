use super::tensor::{matmul_at_into, matmul_bt_into};
use super::{Tensor, TensorError};

/// Index of a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Tensor axis used by `concat` and `mean_pool`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Axis(pub usize);

/// Operation that produced a node, with references to its inputs.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    Constant,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    MaskedSoftmax(NodeId, Vec<bool>),
    Concat(Vec<NodeId>, Axis),
    Reshape(NodeId),
    MeanPool(NodeId, Axis),
    Sum(NodeId),
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        class_weights: Vec<f64>,
    },
    GatherRows(NodeId, Vec<usize>),
    GatherEntries(NodeId, Vec<(usize, usize)>),
    MulRows(NodeId, NodeId),
    ScatterRows(Vec<(NodeId, Vec<usize>)>),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::MaskedSoftmax(..) => "masked_softmax",
            Op::Concat(..) => "concat",
            Op::Reshape(..) => "reshape",
            Op::MeanPool(..) => "mean_pool",
            Op::Sum(..) => "sum",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::GatherRows(..) => "gather_rows",
            Op::GatherEntries(..) => "gather_entries",
            Op::MulRows(..) => "mul_rows",
            Op::ScatterRows(..) => "scatter_rows",
        }
    }

    pub fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf | Op::Constant => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddBias(a, b) | Op::MulRows(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(x, _)
            | Op::Relu(x)
            | Op::MaskedSoftmax(x, _)
            | Op::Reshape(x)
            | Op::MeanPool(x, _)
            | Op::Sum(x)
            | Op::GatherRows(x, _)
            | Op::GatherEntries(x, _) => vec![*x],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Concat(xs, _) => xs.clone(),
            Op::ScatterRows(parts) => parts.iter().map(|(id, _)| *id).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    value: Tensor,
    grad: Tensor,
    op: Op,
    requires_grad: bool,
}

impl Node {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn op(&self) -> &Op {
        &self.op
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

/// Append-only computation tape.
///
/// A graph lives on one thread from the forward pass through `backward`.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradient buffer of `p`, or `None` when `p` needs no gradient.
fn slot<'a>(
    nodes: &[Node],
    local: &'a mut [Option<Vec<f64>>],
    p: NodeId,
) -> Option<&'a mut Vec<f64>> {
    let n = &nodes[p.0];
    if !n.requires_grad {
        return None;
    }
    Some(local[p.0].get_or_insert_with(|| vec![0.0; n.value.numel()]))
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    /// All nodes in creation order.
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].grad
    }

    /// Trainable input. Gradients accumulate here across `backward` calls.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_raw(value, Op::Constant, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        let grad = Tensor::zeros(value.shape());
        self.nodes.push(Node {
            value,
            grad,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::Shape {
                op: "add",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a rank-1 bias of length `K` to every row of an `M×K` matrix.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let (_, k) = vx.dims2("add_bias")?;
        if vb.rank() != 1 || vb.numel() != k {
            return Err(TensorError::Shape {
                op: "add_bias",
                lhs: vx.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let b = vb.data();
        let data = vx
            .data()
            .chunks_exact(k)
            .flat_map(|row| row.iter().zip(b).map(|(v, bb)| v + bb))
            .collect();
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| v * factor).collect();
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        self.push(out, Op::Scale(x, factor))
    }

    /// Elementwise `max(0, x)`. The derivative at exactly 0 is taken as 0.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let vx = self.value(x);
        let data = vx
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        let out = Tensor::from_parts(vx.shape().to_vec(), data);
        self.push(out, Op::Relu(x))
    }

    /// Row-wise softmax restricted to entries where `mask` is true. Other
    /// entries are exactly zero and pass no gradient.
    pub fn masked_softmax(
        &mut self,
        logits: NodeId,
        mask: Vec<bool>,
    ) -> Result<NodeId, TensorError> {
        let vz = self.value(logits);
        let (m, n) = vz.dims2("masked_softmax")?;
        if mask.len() != m * n {
            return Err(TensorError::Shape {
                op: "masked_softmax",
                lhs: vz.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &vz.data()[r * n..(r + 1) * n];
            let row_mask = &mask[r * n..(r + 1) * n];
            if !row_mask.contains(&true) {
                return Err(TensorError::DegenerateMask { row: r });
            }
            let max = row
                .iter()
                .zip(row_mask)
                .filter(|(_, &sel)| sel)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let out_row = &mut out[r * n..(r + 1) * n];
            let mut total = 0.0;
            for ((o, &v), &sel) in out_row.iter_mut().zip(row).zip(row_mask) {
                if sel {
                    *o = (v - max).exp();
                    total += *o;
                }
            }
            out_row.iter_mut().for_each(|o| *o /= total);
        }
        let out = Tensor::from_parts(vec![m, n], out);
        Ok(self.push(out, Op::MaskedSoftmax(logits, mask)))
    }

    /// Concatenates tensors of equal rank along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[NodeId], axis: Axis) -> Result<NodeId, TensorError> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::Contract("concat: no inputs".into()))?;
        let base = self.value(*first).shape().to_vec();
        if axis.0 >= base.len() {
            return Err(TensorError::Index {
                op: "concat",
                index: axis.0,
                bound: base.len(),
            });
        }
        let mut total = 0;
        for id in inputs {
            let s = self.value(*id).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis.0 || a == b);
            if !compatible {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis.0];
        }
        let mut shape = base.clone();
        shape[axis.0] = total;
        let (outer, _, inner) = outer_inner(&shape, axis.0);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for id in inputs {
                let v = self.value(*id);
                let chunk = v.shape()[axis.0] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let out = Tensor::from_parts(shape, data);
        Ok(self.push(out, Op::Concat(inputs.to_vec(), axis)))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, TensorError> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Mean over `axis`, which is removed from the output shape.
    pub fn mean_pool(&mut self, x: NodeId, axis: Axis) -> Result<NodeId, TensorError> {
        let vx = self.value(x);
        let shape = vx.shape();
        if axis.0 >= shape.len() || shape.len() < 2 {
            return Err(TensorError::Index {
                op: "mean_pool",
                index: axis.0,
                bound: shape.len(),
            });
        }
        let (outer, len, inner) = outer_inner(shape, axis.0);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut data[o * inner..(o + 1) * inner];
            for l in 0..len {
                let src = &vx.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
            dst.iter_mut().for_each(|d| *d /= len as f64);
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis.0);
        let out = Tensor::from_parts(out_shape, data);
        Ok(self.push(out, Op::MeanPool(x, axis)))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    /// Weighted mean cross-entropy over rows of `B×C` logits.
    ///
    /// Each row contributes `w[y]·(−log softmax(z)[y])`; the sum is divided
    /// by `Σ w[y]`.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
        class_weights: &[f64],
    ) -> Result<NodeId, TensorError> {
        let vz = self.value(logits);
        let (b, c) = vz.dims2("cross_entropy")?;
        if labels.len() != b || class_weights.len() != c {
            return Err(TensorError::Shape {
                op: "cross_entropy",
                lhs: vz.shape().to_vec(),
                rhs: vec![labels.len(), class_weights.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(TensorError::Index {
                op: "cross_entropy",
                index: bad,
                bound: c,
            });
        }
        let mut loss = 0.0;
        let mut norm = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = vz.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += class_weights[y] * (lse - row[y]);
            norm += class_weights[y];
        }
        if norm <= 0.0 {
            return Err(TensorError::Contract(
                "cross_entropy: class weights of present labels sum to zero".into(),
            ));
        }
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            class_weights: class_weights.to_vec(),
        };
        Ok(self.push(Tensor::scalar(loss / norm), op))
    }

    /// Selects rows of an `M×K` matrix, producing `R×K`.
    pub fn gather_rows(&mut self, x: NodeId, rows: &[usize]) -> Result<NodeId, TensorError> {
        let vx = self.value(x);
        let (m, k) = vx.dims2("gather_rows")?;
        if rows.is_empty() {
            return Err(TensorError::Contract("gather_rows: empty row set".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * k);
        for &r in rows {
            if r >= m {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: r,
                    bound: m,
                });
            }
            data.extend_from_slice(vx.row(r));
        }
        let out = Tensor::from_parts(vec![rows.len(), k], data);
        Ok(self.push(out, Op::GatherRows(x, rows.to_vec())))
    }

    /// Picks individual `(row, col)` entries of a matrix into an `R×1` column.
    pub fn gather_entries(
        &mut self,
        x: NodeId,
        entries: &[(usize, usize)],
    ) -> Result<NodeId, TensorError> {
        let vx = self.value(x);
        let (m, n) = vx.dims2("gather_entries")?;
        if entries.is_empty() {
            return Err(TensorError::Contract(
                "gather_entries: empty entry set".into(),
            ));
        }
        let mut data = Vec::with_capacity(entries.len());
        for &(r, c) in entries {
            if r >= m || c >= n {
                return Err(TensorError::Index {
                    op: "gather_entries",
                    index: r * n + c,
                    bound: m * n,
                });
            }
            data.push(vx.data()[r * n + c]);
        }
        let out = Tensor::from_parts(vec![entries.len(), 1], data);
        Ok(self.push(out, Op::GatherEntries(x, entries.to_vec())))
    }

    /// Scales row `r` of an `R×K` matrix by `w[r]`, with `w` shaped `R×1`.
    pub fn mul_rows(&mut self, x: NodeId, w: NodeId) -> Result<NodeId, TensorError> {
        let (vx, vw) = (self.value(x), self.value(w));
        let (r, k) = vx.dims2("mul_rows")?;
        if vw.shape() != [r, 1] {
            return Err(TensorError::Shape {
                op: "mul_rows",
                lhs: vx.shape().to_vec(),
                rhs: vw.shape().to_vec(),
            });
        }
        let data = vx
            .data()
            .chunks_exact(k)
            .zip(vw.data())
            .flat_map(|(row, &s)| row.iter().map(move |v| v * s))
            .collect();
        let out = Tensor::from_parts(vec![r, k], data);
        Ok(self.push(out, Op::MulRows(x, w)))
    }

    /// Sums row blocks into an `out_rows×K` matrix: row `i` of each part is
    /// added to output row `rows[i]`. Untouched output rows are zero.
    pub fn scatter_rows(
        &mut self,
        out_rows: usize,
        cols: usize,
        parts: Vec<(NodeId, Vec<usize>)>,
    ) -> Result<NodeId, TensorError> {
        if out_rows == 0 || cols == 0 {
            return Err(TensorError::InvalidShape {
                shape: vec![out_rows, cols],
            });
        }
        let mut data = vec![0.0; out_rows * cols];
        for (id, rows) in &parts {
            let v = self.value(*id);
            let (r, k) = v.dims2("scatter_rows")?;
            if k != cols || r != rows.len() {
                return Err(TensorError::Shape {
                    op: "scatter_rows",
                    lhs: vec![rows.len(), cols],
                    rhs: v.shape().to_vec(),
                });
            }
            for (i, &dst) in rows.iter().enumerate() {
                if dst >= out_rows {
                    return Err(TensorError::Index {
                        op: "scatter_rows",
                        index: dst,
                        bound: out_rows,
                    });
                }
                let out_row = &mut data[dst * cols..(dst + 1) * cols];
                out_row.iter_mut().zip(v.row(i)).for_each(|(o, s)| *o += s);
            }
        }
        let out = Tensor::from_parts(vec![out_rows, cols], data);
        Ok(self.push(out, Op::ScatterRows(parts)))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad.data_mut().fill(0.0);
        }
    }

    /// Propagates `∂root/∂node` to every node that requires a gradient and
    /// adds it to the node's stored gradient. Repeated calls accumulate.
    pub fn backward(&mut self, root: NodeId) -> Result<(), TensorError> {
        let root_shape = self.value(root).shape();
        if !self.value(root).is_scalar() {
            return Err(TensorError::NonScalarRoot {
                shape: root_shape.to_vec(),
            });
        }
        let mut local: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        local[root.0] = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            let Some(g) = local[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut local);
            self.nodes[id]
                .grad
                .data_mut()
                .iter_mut()
                .zip(&g)
                .for_each(|(a, b)| *a += b);
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], local: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[id].value;
        match &nodes[id].op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let p = vb.shape()[1];
                if let Some(ga) = slot(nodes, local, *a) {
                    matmul_bt_into(g, vb.data(), ga, m, p, k);
                }
                if let Some(gb) = slot(nodes, local, *b) {
                    matmul_at_into(va.data(), g, gb, m, k, p);
                }
            }
            Op::Add(a, b) => {
                for p in [a, b] {
                    if let Some(gp) = slot(nodes, local, *p) {
                        gp.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(gx) = slot(nodes, local, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
                let k = out.shape()[1];
                if let Some(gb) = slot(nodes, local, *bias) {
                    for row in g.chunks_exact(k) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Scale(x, factor) => {
                if let Some(gx) = slot(nodes, local, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += factor * b);
                }
            }
            Op::Relu(x) => {
                let vx = nodes[x.0].value.data();
                if let Some(gx) = slot(nodes, local, *x) {
                    for ((a, b), &v) in gx.iter_mut().zip(g).zip(vx) {
                        if v > 0.0 {
                            *a += b;
                        }
                    }
                }
            }
            Op::MaskedSoftmax(x, mask) => {
                let n = out.shape()[1];
                if let Some(gx) = slot(nodes, local, *x) {
                    for r in 0..out.shape()[0] {
                        let span = r * n..(r + 1) * n;
                        let p = &out.data()[span.clone()];
                        let gr = &g[span.clone()];
                        let m = &mask[span.clone()];
                        let dot: f64 = p
                            .iter()
                            .zip(gr)
                            .zip(m)
                            .filter(|(_, &s)| s)
                            .map(|((pp, gg), _)| pp * gg)
                            .sum();
                        for (j, a) in gx[span].iter_mut().enumerate() {
                            if m[j] {
                                *a += p[j] * (gr[j] - dot);
                            }
                        }
                    }
                }
            }
            Op::Concat(inputs, axis) => {
                let (outer, _, inner) = outer_inner(out.shape(), axis.0);
                let mut offset = 0;
                let widths: Vec<usize> = inputs
                    .iter()
                    .map(|i| nodes[i.0].value.shape()[axis.0] * inner)
                    .collect();
                let total: usize = widths.iter().sum();
                for (input, width) in inputs.iter().zip(&widths) {
                    if let Some(gi) = slot(nodes, local, *input) {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + width];
                            gi[o * width..(o + 1) * width]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                    offset += width;
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = slot(nodes, local, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::MeanPool(x, axis) => {
                let (outer, len, inner) = outer_inner(nodes[x.0].value.shape(), axis.0);
                if let Some(gx) = slot(nodes, local, *x) {
                    let inv = 1.0 / len as f64;
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            let dst = &mut gx[(o * len + l) * inner..(o * len + l + 1) * inner];
                            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b * inv);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = slot(nodes, local, *x) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                class_weights,
            } => {
                let vz = &nodes[logits.0].value;
                let c = vz.shape()[1];
                let norm: f64 = labels.iter().map(|&y| class_weights[y]).sum();
                if let Some(gz) = slot(nodes, local, *logits) {
                    for (r, &y) in labels.iter().enumerate() {
                        let row = vz.row(r);
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        let w = g[0] * class_weights[y] / norm;
                        for j in 0..c {
                            let p = (row[j] - max).exp() / total;
                            let target = if j == y { 1.0 } else { 0.0 };
                            gz[r * c + j] += w * (p - target);
                        }
                    }
                }
            }
            Op::GatherRows(x, rows) => {
                let k = out.shape()[1];
                if let Some(gx) = slot(nodes, local, *x) {
                    for (i, &r) in rows.iter().enumerate() {
                        gx[r * k..(r + 1) * k]
                            .iter_mut()
                            .zip(&g[i * k..(i + 1) * k])
                            .for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::GatherEntries(x, entries) => {
                let n = nodes[x.0].value.shape()[1];
                if let Some(gx) = slot(nodes, local, *x) {
                    for (i, &(r, c)) in entries.iter().enumerate() {
                        gx[r * n + c] += g[i];
                    }
                }
            }
            Op::MulRows(x, w) => {
                let k = out.shape()[1];
                let (vx, vw) = (nodes[x.0].value.data(), nodes[w.0].value.data());
                if let Some(gx) = slot(nodes, local, *x) {
                    for (r, &s) in vw.iter().enumerate() {
                        gx[r * k..(r + 1) * k]
                            .iter_mut()
                            .zip(&g[r * k..(r + 1) * k])
                            .for_each(|(a, b)| *a += b * s);
                    }
                }
                if let Some(gw) = slot(nodes, local, *w) {
                    for (r, a) in gw.iter_mut().enumerate() {
                        let span = r * k..(r + 1) * k;
                        *a += vx[span.clone()]
                            .iter()
                            .zip(&g[span])
                            .map(|(p, q)| p * q)
                            .sum::<f64>();
                    }
                }
            }
            Op::ScatterRows(parts) => {
                let k = out.shape()[1];
                for (id, rows) in parts {
                    if let Some(gp) = slot(nodes, local, *id) {
                        for (i, &dst) in rows.iter().enumerate() {
                            gp[i * k..(i + 1) * k]
                                .iter_mut()
                                .zip(&g[dst * k..(dst + 1) * k])
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_row_by_column() {
        let mut g = Graph::new();
        let a = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = g.constant(t(&[2, 1], &[3.0, 4.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn relu_values_and_zero_gradient_at_kink() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_all_negative_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2, 2], &[-1.0, -0.5, -3.0, -1e-9]));
        let y = g.relu(x);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_softmax_symmetric() {
        let mut g = Graph::new();
        let z = g.constant(t(&[1, 2], &[5.0, 5.0]));
        let p = g.masked_softmax(z, vec![true, true]).unwrap();
        assert_eq!(g.value(p).data(), &[0.5, 0.5]);
    }

    #[test]
    fn masked_softmax_excludes_masked_entry() {
        let mut g = Graph::new();
        let z = g.leaf(t(&[1, 3], &[10.0, 1e6, 3.0]));
        let p = g.masked_softmax(z, vec![true, false, true]).unwrap();
        let e7 = (-7.0f64).exp();
        let v = g.value(p).data().to_vec();
        assert!((v[0] - 1.0 / (1.0 + e7)).abs() < 1e-15);
        assert_eq!(v[1], 0.0);
        assert!((v[2] - e7 / (1.0 + e7)).abs() < 1e-15);

        let w = g.constant(t(&[3, 1], &[1.0, 2.0, 3.0]));
        let o = g.matmul(p, w).unwrap();
        let s = g.sum(o);
        g.backward(s).unwrap();
        assert_eq!(g.grad(z).data()[1], 0.0);
    }

    #[test]
    fn masked_softmax_rejects_empty_row() {
        let mut g = Graph::new();
        let z = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let err = g
            .masked_softmax(z, vec![true, false, false, false])
            .unwrap_err();
        assert_eq!(err, TensorError::DegenerateMask { row: 1 });
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[2, 3, 4], 0.3));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(g.grad(x).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1, 2], &[0.5, -0.25]));
        let w = g.leaf(t(&[2, 2], &[1.0, -2.0, 0.5, 0.75]));
        let y = g.matmul(x, w).unwrap();
        let r = g.relu(y);
        let s = g.sum(r);
        g.backward(s).unwrap();
        let once = g.grad(w).clone();
        g.backward(s).unwrap();
        let twice = g.grad(w);
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
        g.zero_grad();
        assert!(g.grad(w).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 2]));
        let err = g.backward(x).unwrap_err();
        assert!(matches!(err, TensorError::NonScalarRoot { .. }));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[1.0, 2.0]));
        let y = g.scale(x, 3.0);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(x).data().iter().all(|&v| v == 0.0));
        assert!(!g.node(s).requires_grad());
    }

    #[test]
    fn concat_along_last_axis() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 1], &[1.0, 2.0]));
        let b = g.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = g.concat(&[a, b], Axis(1)).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 3]);
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let c0 = g.concat(&[a, a], Axis(0)).unwrap();
        assert_eq!(g.value(c0).data(), &[1.0, 2.0, 1.0, 2.0]);
        assert!(g.concat(&[a, b], Axis(0)).is_err());
    }

    #[test]
    fn mean_pool_middle_axis() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 6.0]));
        let m = g.mean_pool(x, Axis(1)).unwrap();
        assert_eq!(g.value(m).shape(), &[1, 2]);
        assert_eq!(g.value(m).data(), &[2.0, 4.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln2() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::zeros(&[3, 2]));
        let l = g.cross_entropy(z, &[0, 1, 1], &[1.0, 1.0]).unwrap();
        assert!((g.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(g.cross_entropy(z, &[0, 2, 1], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn scatter_rows_leaves_other_rows_zero() {
        let mut g = Graph::new();
        let a = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = g.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let s = g
            .scatter_rows(3, 2, vec![(a, vec![2]), (b, vec![0, 2])])
            .unwrap();
        assert_eq!(g.value(s).data(), &[3.0, 4.0, 0.0, 0.0, 6.0, 8.0]);
    }

    #[test]
    fn op_tags_and_parents() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros(&[1, 1]));
        let b = g.relu(a);
        assert_eq!(g.node(b).op().name(), "relu");
        assert_eq!(g.node(b).op().parents(), vec![a]);
        assert!(g.node(b).op().parents().iter().all(|p| p < &b));
    }
}
