use std::cell::{Ref, RefCell};
use std::sync::Arc;

use super::tensor::{axis_split, broadcast_index_map, broadcast_shapes, Tensor};
use super::AutodiffError;
use crate::special::{digamma, ln_gamma, log_sigmoid, sigmoid};

/// Primitive kinds recorded on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    LogGamma,
    LogSigmoid,
    Affine,
    Broadcast,
    Reshape,
    Segment,
    Sum,
    SumAll,
    LogSumExp,
    Softmax,
    LogSoftmax,
    MatMul,
    Transpose,
    Gather,
    GatherSum,
    Concat,
    CumSum,
    LogMixture,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Constant => "constant",
            OpKind::Add => "add",
            OpKind::Sub => "subtract",
            OpKind::Mul => "multiply",
            OpKind::Div => "divide",
            OpKind::Neg => "negate",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::LogGamma => "log-gamma",
            OpKind::LogSigmoid => "log-sigmoid",
            OpKind::Affine => "affine",
            OpKind::Broadcast => "broadcast",
            OpKind::Reshape => "reshape",
            OpKind::Segment => "segment",
            OpKind::Sum => "sum",
            OpKind::SumAll => "sum-all",
            OpKind::LogSumExp => "log-sum-exp",
            OpKind::Softmax => "softmax",
            OpKind::LogSoftmax => "log-softmax",
            OpKind::MatMul => "matrix-multiply",
            OpKind::Transpose => "transpose",
            OpKind::Gather => "gather",
            OpKind::GatherSum => "gather-sum",
            OpKind::Concat => "concat",
            OpKind::CumSum => "cumulative-sum",
            OpKind::LogMixture => "log-mixture",
        }
    }
}

enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Exp(usize),
    Log(usize),
    LogGamma(usize),
    LogSigmoid(usize),
    Affine { x: usize, scale: f64 },
    Broadcast { x: usize, map: Vec<usize> },
    Reshape(usize),
    Segment { x: usize, start: usize },
    Sum { x: usize, axis: usize },
    SumAll(usize),
    LogSumExp { x: usize, axis: usize, weights: Vec<f64> },
    Softmax { x: usize, axis: usize },
    LogSoftmax { x: usize, axis: usize },
    MatMul(usize, usize),
    Transpose(usize),
    Gather { x: usize, axis: usize, indices: Arc<[usize]> },
    GatherSum { table: usize, indices: Arc<[usize]>, group: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    CumSum { x: usize, axis: usize, exclusive: bool },
    /// Weighted responsibilities `[rows, K]` saved by the forward pass.
    LogMixture { tables: Vec<(usize, Arc<[usize]>, usize)>, resp: Vec<f64> },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Constant => OpKind::Constant,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Div(..) => OpKind::Div,
            Op::Neg(_) => OpKind::Neg,
            Op::Exp(_) => OpKind::Exp,
            Op::Log(_) => OpKind::Log,
            Op::LogGamma(_) => OpKind::LogGamma,
            Op::LogSigmoid(_) => OpKind::LogSigmoid,
            Op::Affine { .. } => OpKind::Affine,
            Op::Broadcast { .. } => OpKind::Broadcast,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Segment { .. } => OpKind::Segment,
            Op::Sum { .. } => OpKind::Sum,
            Op::SumAll(_) => OpKind::SumAll,
            Op::LogSumExp { .. } => OpKind::LogSumExp,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LogSoftmax { .. } => OpKind::LogSoftmax,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Gather { .. } => OpKind::Gather,
            Op::GatherSum { .. } => OpKind::GatherSum,
            Op::Concat { .. } => OpKind::Concat,
            Op::CumSum { .. } => OpKind::CumSum,
            Op::LogMixture { .. } => OpKind::LogMixture,
        }
    }

    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Neg(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::LogGamma(x)
            | Op::LogSigmoid(x)
            | Op::Reshape(x)
            | Op::SumAll(x)
            | Op::Transpose(x) => vec![*x],
            Op::Affine { x, .. }
            | Op::Broadcast { x, .. }
            | Op::Segment { x, .. }
            | Op::Sum { x, .. }
            | Op::LogSumExp { x, .. }
            | Op::Softmax { x, .. }
            | Op::LogSoftmax { x, .. }
            | Op::Gather { x, .. }
            | Op::CumSum { x, .. } => vec![*x],
            Op::GatherSum { table, .. } => vec![*table],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::LogMixture { tables, .. } => tables.iter().map(|t| t.0).collect(),
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of primitive evaluations. One tape per thread of work.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

/// Adjoints produced by [`Tape::gradient`].
pub struct Gradients {
    adjoints: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// ∂root/∂var; zeros when `var` was never reached from the root.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        let shape = self.shapes[var.id].clone();
        match &self.adjoints[var.id] {
            Some(a) => Tensor::from_parts(shape, a.clone()),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn wrt_slice(&self, var: Var<'_>) -> Option<&[f64]> {
        self.adjoints[var.id].as_deref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops all recorded nodes so the tape can be reused.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    pub fn op_kind(&self, var: Var<'_>) -> OpKind {
        self.nodes.borrow()[var.id].op.kind()
    }

    pub fn parents(&self, var: Var<'_>) -> Vec<usize> {
        self.nodes.borrow()[var.id].op.parents()
    }

    fn push(&self, op: Op, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            other => other.parents().iter().any(|&p| nodes[p].requires_grad),
        };
        let id = nodes.len();
        nodes.push(Node { op, value, requires_grad });
        Var { tape: self, id }
    }

    /// Differentiable input.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value)
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Constant, value)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat<'t>(&'t self, inputs: &[Var<'t>], axis: usize) -> Result<Var<'t>, AutodiffError> {
        let nodes = self.nodes.borrow();
        let first = inputs.first().ok_or(AutodiffError::Contract {
            op: "concat",
            message: "no inputs".into(),
        })?;
        let base = nodes[first.id].value.shape().to_vec();
        let shapes: Vec<Vec<usize>> =
            inputs.iter().map(|v| nodes[v.id].value.shape().to_vec()).collect();
        if axis >= base.len() {
            return Err(AutodiffError::Shape { op: "concat", shapes });
        }
        for s in &shapes {
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(AutodiffError::Shape { op: "concat", shapes });
            }
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let total_axis: usize = shapes.iter().map(|s| s[axis]).sum();
        let mut out = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for (v, s) in inputs.iter().zip(&shapes) {
                let block = s[axis] * inner;
                out.extend_from_slice(&nodes[v.id].value.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total_axis;
        drop(nodes);
        let ids = inputs.iter().map(|v| v.id).collect();
        Ok(self.push(Op::Concat { inputs: ids, axis }, Tensor::from_parts(shape, out)))
    }

    /// Σ_r w_r · log Σ_k exp(Σ_i Σ_j T_i[idx_i[r·group_i + j], k]) for tables
    /// `T_i` of shape `[rows_i, K]`, each given with its index list and group size.
    /// A finite-mixture log likelihood without materializing the per-row terms.
    pub fn log_mixture<'t>(
        &'t self,
        tables: &[(Var<'t>, Arc<[usize]>, usize)],
        weights: &[f64],
    ) -> Result<Var<'t>, AutodiffError> {
        let nodes = self.nodes.borrow();
        let shapes: Vec<Vec<usize>> = tables.iter().map(|(v, ..)| nodes[v.id].value.shape().to_vec()).collect();
        let n = weights.len();
        let k = shapes.first().filter(|s| s.len() == 2).map(|s| s[1]).unwrap_or(0);
        let consistent = k > 0
            && shapes.iter().all(|s| s.len() == 2 && s[1] == k)
            && tables.iter().all(|(_, idx, group)| *group > 0 && idx.len() == n * group);
        if !consistent {
            return Err(AutodiffError::Shape { op: "log-mixture", shapes });
        }
        for ((_, idx, _), s) in tables.iter().zip(&shapes) {
            if let Some(&bad) = idx.iter().find(|&&i| i >= s[0]) {
                return Err(AutodiffError::Contract {
                    op: "log-mixture",
                    message: format!("index {bad} out of range for {} rows", s[0]),
                });
            }
        }
        let logs: Vec<&[f64]> = tables.iter().map(|(v, ..)| nodes[v.id].value.data()).collect();
        let groups: Vec<(&[usize], usize)> = tables.iter().map(|(_, idx, group)| (&idx[..], *group)).collect();
        let (total, resp) = match k {
            2 => mixture_rows::<2>(k, &logs, &groups, weights),
            3 => mixture_rows::<3>(k, &logs, &groups, weights),
            4 => mixture_rows::<4>(k, &logs, &groups, weights),
            5 => mixture_rows::<5>(k, &logs, &groups, weights),
            _ => mixture_rows::<0>(k, &logs, &groups, weights),
        };
        drop(nodes);
        let ids = tables.iter().map(|(v, idx, group)| (v.id, idx.clone(), *group)).collect();
        Ok(self.push(Op::LogMixture { tables: ids, resp }, Tensor::scalar(total)))
    }

    /// Reverse pass from a scalar root.
    pub fn gradient(&self, root: Var<'_>) -> Result<Gradients, AutodiffError> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if root_value.len() != 1 {
            return Err(AutodiffError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let root_primal = root_value.data()[0];
        if !root_primal.is_finite() {
            return Err(AutodiffError::NonFiniteRoot(root_primal));
        }
        let n = root.id + 1;
        let mut adj: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        adj[root.id] = Some(vec![1.0]);
        for id in (0..n).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                adj[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                if let Some(g) = &adj[id] {
                    if g.iter().any(|v| v.is_nan()) {
                        return Err(AutodiffError::NaN { node: id, op: "leaf" });
                    }
                }
                continue;
            }
            let Some(g) = adj[id].take() else { continue };
            if g.iter().any(|v| v.is_nan()) {
                return Err(AutodiffError::NaN { node: id, op: node.op.kind().name() });
            }
            backward(&nodes, id, &g, &mut adj);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { adjoints: adj, shapes })
    }
}

/// Forward pass of [`Tape::log_mixture`]: the weighted total and the weighted
/// responsibilities. `K` fixes the component count at compile time (0 = use `k`).
fn mixture_rows<const K: usize>(k: usize, logs: &[&[f64]], groups: &[(&[usize], usize)], weights: &[f64]) -> (f64, Vec<f64>) {
    let k = if K > 0 { K } else { k };
    let n = weights.len();
    let probs: Vec<Vec<f64>> = logs.iter().map(|t| t.iter().map(|x| x.exp()).collect()).collect();
    let mut resp = vec![0.0; n * k];
    let mut w = vec![0.0; k];
    let mut total = 0.0;
    for (r, out) in resp.chunks_exact_mut(k).enumerate() {
        let mut first = true;
        for ((idx, group), p) in groups.iter().zip(&probs) {
            for &src in &idx[r * group..(r + 1) * group] {
                let row = &p[src * k..src * k + k];
                if first {
                    w.copy_from_slice(row);
                    first = false;
                } else {
                    for c in 0..k {
                        w[c] *= row[c];
                    }
                }
            }
        }
        let mut sum = 0.0;
        for c in 0..k {
            sum += w[c];
        }
        let log_p = if sum.is_finite() && sum > 1e-280 {
            let scale = weights[r] / sum;
            for c in 0..k {
                out[c] = scale * w[c];
            }
            sum.ln()
        } else {
            // underflow or overflow in probability space: redo the row in log space
            w.iter_mut().for_each(|x| *x = 0.0);
            for ((idx, group), t) in groups.iter().zip(logs) {
                for &src in &idx[r * group..(r + 1) * group] {
                    let row = &t[src * k..src * k + k];
                    w.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
            }
            let m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                let lse = m + w.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
                out.iter_mut().zip(&w).for_each(|(o, x)| *o = weights[r] * (x - lse).exp());
                lse
            }
        };
        total += weights[r] * log_p;
    }
    (total, resp)
}

/// gt[idx[r·group + j]] += g0 · resp[r] for every row r and j < group.
fn scatter_rows<const K: usize>(k: usize, gt: &mut [f64], indices: &[usize], group: usize, resp: &[f64], g0: f64) {
    let k = if K > 0 { K } else { k };
    for (r, chunk) in resp.chunks_exact(k).zip(indices.chunks_exact(group)) {
        for &src in chunk {
            let dst = &mut gt[src * k..src * k + k];
            for c in 0..k {
                dst[c] += g0 * r[c];
            }
        }
    }
}

fn accumulate<'a>(
    nodes: &[Node],
    adj: &'a mut [Option<Vec<f64>>],
    id: usize,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let len = nodes[id].value.len();
    Some(adj[id].get_or_insert_with(|| vec![0.0; len]))
}

fn backward(nodes: &[Node], id: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf | Op::Constant => {}
        Op::Add(a, b) => {
            if let Some(ga) = accumulate(nodes, adj, *a) {
                ga.iter_mut().zip(g).for_each(|(x, gi)| *x += gi);
            }
            if let Some(gb) = accumulate(nodes, adj, *b) {
                gb.iter_mut().zip(g).for_each(|(x, gi)| *x += gi);
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = accumulate(nodes, adj, *a) {
                ga.iter_mut().zip(g).for_each(|(x, gi)| *x += gi);
            }
            if let Some(gb) = accumulate(nodes, adj, *b) {
                gb.iter_mut().zip(g).for_each(|(x, gi)| *x -= gi);
            }
        }
        Op::Mul(a, b) => {
            let av = nodes[*a].value.data();
            let bv = nodes[*b].value.data();
            if let Some(ga) = accumulate(nodes, adj, *a) {
                for i in 0..g.len() {
                    ga[i] += g[i] * bv[i];
                }
            }
            if let Some(gb) = accumulate(nodes, adj, *b) {
                for i in 0..g.len() {
                    gb[i] += g[i] * av[i];
                }
            }
        }
        Op::Div(a, b) => {
            let bv = nodes[*b].value.data();
            let ov = out.data();
            if let Some(ga) = accumulate(nodes, adj, *a) {
                for i in 0..g.len() {
                    ga[i] += g[i] / bv[i];
                }
            }
            if let Some(gb) = accumulate(nodes, adj, *b) {
                for i in 0..g.len() {
                    gb[i] -= g[i] * ov[i] / bv[i];
                }
            }
        }
        Op::Neg(x) => {
            if let Some(gx) = accumulate(nodes, adj, *x) {
                gx.iter_mut().zip(g).for_each(|(v, gi)| *v -= gi);
            }
        }
        Op::Exp(x) => {
            let ov = out.data();
            if let Some(gx) = accumulate(nodes, adj, *x) {
                for i in 0..g.len() {
                    gx[i] += g[i] * ov[i];
                }
            }
        }
        Op::Log(x) => {
            let xv = nodes[*x].value.data();
            if let Some(gx) = accumulate(nodes, adj, *x) {
                for i in 0..g.len() {
                    gx[i] += g[i] / xv[i];
                }
            }
        }
        Op::LogGamma(x) => {
            let xv = nodes[*x].value.data();
            if let Some(gx) = accumulate(nodes, adj, *x) {
                for i in 0..g.len() {
                    gx[i] += g[i] * digamma(xv[i]);
                }
            }
        }
        Op::LogSigmoid(x) => {
            let xv = nodes[*x].value.data();
            if let Some(gx) = accumulate(nodes, adj, *x) {
                for i in 0..g.len() {
                    gx[i] += g[i] * sigmoid(-xv[i]);
                }
            }
        }
        Op::Affine { x, scale } => {
            if let Some(gx) = accumulate(nodes, adj, *x) {
                gx.iter_mut().zip(g).for_each(|(v, gi)| *v += gi * scale);
            }
        }
        Op::Broadcast { x, map } => {
            if let Some(gx) = accumulate(nodes, adj, *x) {
                for (gi, &j) in g.iter().zip(map) {
                    gx[j] += gi;
                }
            }
        }
        Op::Reshape(x) => {
            if let Some(gx) = accumulate(nodes, adj, *x) {
                gx.iter_mut().zip(g).for_each(|(v, gi)| *v += gi);
            }
        }
        Op::Segment { x, start } => {
            if let Some(gx) = accumulate(nodes, adj, *x) {
                gx[*start..start + g.len()].iter_mut().zip(g).for_each(|(v, gi)| *v += gi);
            }
        }
        Op::Sum { x, axis } => {
            let (outer, n, inner) = axis_split(nodes[*x].value.shape(), *axis);
            if let Some(gx) = accumulate(nodes, adj, *x) {
                for o in 0..outer {
                    for k in 0..n {
                        for i in 0..inner {
                            gx[(o * n + k) * inner + i] += g[o * inner + i];
                        }
                    }
                }
            }
        }
        Op::SumAll(x) => {
            if let Some(gx) = accumulate(nodes, adj, *x) {
                gx.iter_mut().for_each(|v| *v += g[0]);
            }
        }
        Op::LogSumExp { x, axis, weights } => {
            let (outer, n, inner) = axis_split(nodes[*x].value.shape(), *axis);
            if let Some(gx) = accumulate(nodes, adj, *x) {
                for o in 0..outer {
                    for k in 0..n {
                        for i in 0..inner {
                            let idx = (o * n + k) * inner + i;
                            gx[idx] += g[o * inner + i] * weights[idx];
                        }
                    }
                }
            }
        }
        Op::Softmax { x, axis } => {
            let (outer, n, inner) = axis_split(out.shape(), *axis);
            let y = out.data();
            if let Some(gx) = accumulate(nodes, adj, *x) {
                for o in 0..outer {
                    for i in 0..inner {
                        let dot: f64 = (0..n)
                            .map(|k| {
                                let idx = (o * n + k) * inner + i;
                                g[idx] * y[idx]
                            })
                            .sum();
                        for k in 0..n {
                            let idx = (o * n + k) * inner + i;
                            gx[idx] += y[idx] * (g[idx] - dot);
                        }
                    }
                }
            }
        }
        Op::LogSoftmax { x, axis } => {
            let (outer, n, inner) = axis_split(out.shape(), *axis);
            let y = out.data();
            if let Some(gx) = accumulate(nodes, adj, *x) {
                for o in 0..outer {
                    for i in 0..inner {
                        let total: f64 = (0..n).map(|k| g[(o * n + k) * inner + i]).sum();
                        for k in 0..n {
                            let idx = (o * n + k) * inner + i;
                            gx[idx] += g[idx] - y[idx].exp() * total;
                        }
                    }
                }
            }
        }
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[*a].value.shape()[0], nodes[*a].value.shape()[1]);
            let n = nodes[*b].value.shape()[1];
            let av = nodes[*a].value.data();
            let bv = nodes[*b].value.data();
            if let Some(ga) = accumulate(nodes, adj, *a) {
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * bv[p * n + j];
                        }
                        ga[i * k + p] += s;
                    }
                }
            }
            if let Some(gb) = accumulate(nodes, adj, *b) {
                for i in 0..m {
                    for p in 0..k {
                        let aip = av[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            gb[p * n + j] += aip * g[i * n + j];
                        }
                    }
                }
            }
        }
        Op::Transpose(x) => {
            let (r, c) = (nodes[*x].value.shape()[0], nodes[*x].value.shape()[1]);
            if let Some(gx) = accumulate(nodes, adj, *x) {
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] += g[j * r + i];
                    }
                }
            }
        }
        Op::Gather { x, axis, indices } => {
            let (outer, n, inner) = axis_split(nodes[*x].value.shape(), *axis);
            let m = indices.len();
            if let Some(gx) = accumulate(nodes, adj, *x) {
                for o in 0..outer {
                    for (t, &src) in indices.iter().enumerate() {
                        let from = (o * m + t) * inner;
                        let to = (o * n + src) * inner;
                        for i in 0..inner {
                            gx[to + i] += g[from + i];
                        }
                    }
                }
            }
        }
        Op::LogMixture { tables, resp } => {
            let k = nodes[tables[0].0].value.shape()[1];
            for (table, indices, group) in tables {
                if let Some(gt) = accumulate(nodes, adj, *table) {
                    match k {
                        2 => scatter_rows::<2>(k, gt, indices, *group, resp, g[0]),
                        3 => scatter_rows::<3>(k, gt, indices, *group, resp, g[0]),
                        4 => scatter_rows::<4>(k, gt, indices, *group, resp, g[0]),
                        5 => scatter_rows::<5>(k, gt, indices, *group, resp, g[0]),
                        _ => scatter_rows::<0>(k, gt, indices, *group, resp, g[0]),
                    }
                }
            }
        }
        Op::GatherSum { table, indices, group } => {
            let cols = nodes[*table].value.shape()[1];
            if let Some(gt) = accumulate(nodes, adj, *table) {
                for (row, chunk) in indices.chunks(*group).enumerate() {
                    let grow = &g[row * cols..(row + 1) * cols];
                    for &src in chunk {
                        let dst = &mut gt[src * cols..(src + 1) * cols];
                        for c in 0..cols {
                            dst[c] += grow[c];
                        }
                    }
                }
            }
        }
        Op::Concat { inputs, axis } => {
            let (outer, total, inner) = axis_split(out.shape(), *axis);
            let mut offset = 0;
            for &p in inputs {
                let len = nodes[p].value.shape()[*axis];
                if let Some(gp) = accumulate(nodes, adj, p) {
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                        let dst = &mut gp[o * len * inner..(o + 1) * len * inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
                offset += len;
            }
        }
        Op::CumSum { x, axis, exclusive } => {
            let (outer, n, inner) = axis_split(out.shape(), *axis);
            if let Some(gx) = accumulate(nodes, adj, *x) {
                for o in 0..outer {
                    for i in 0..inner {
                        let mut acc = 0.0;
                        for k in (0..n).rev() {
                            let idx = (o * n + k) * inner + i;
                            if *exclusive {
                                gx[idx] += acc;
                                acc += g[idx];
                            } else {
                                acc += g[idx];
                                gx[idx] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Borrow of the primal value.
    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Primal of a single-element node.
    pub fn item(&self) -> f64 {
        let v = self.value();
        debug_assert_eq!(v.len(), 1);
        v.data()[0]
    }

    fn unary(&self, op: impl FnOnce(usize) -> Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = {
            let v = self.value();
            Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect())
        };
        self.tape.push(op(self.id), value)
    }

    fn binary(
        &self,
        other: Var<'t>,
        kind: OpKind,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>, AutodiffError> {
        let (sa, sb) = (self.shape(), other.shape());
        let (a, b) = if sa == sb {
            (*self, other)
        } else {
            let target = broadcast_shapes(&sa, &sb)
                .ok_or(AutodiffError::Shape { op: kind.name(), shapes: vec![sa.clone(), sb.clone()] })?;
            let a = if sa == target { *self } else { self.broadcast_to(&target)? };
            let b = if sb == target { other } else { other.broadcast_to(&target)? };
            (a, b)
        };
        let value = {
            let (va, vb) = (a.value(), b.value());
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_parts(va.shape().to_vec(), data)
        };
        let op = match kind {
            OpKind::Add => Op::Add(a.id, b.id),
            OpKind::Sub => Op::Sub(a.id, b.id),
            OpKind::Mul => Op::Mul(a.id, b.id),
            OpKind::Div => Op::Div(a.id, b.id),
            _ => unreachable!("binary op kind"),
        };
        Ok(self.tape.push(op, value))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.binary(other, OpKind::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.binary(other, OpKind::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.binary(other, OpKind::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.binary(other, OpKind::Div, |a, b| a / b)
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(Op::Neg, |x| -x)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp, f64::exp)
    }

    /// Natural log; log(0) = −∞.
    pub fn ln(&self) -> Var<'t> {
        self.unary(Op::Log, f64::ln)
    }

    pub fn ln_gamma(&self) -> Var<'t> {
        self.unary(Op::LogGamma, ln_gamma)
    }

    pub fn log_sigmoid(&self) -> Var<'t> {
        self.unary(Op::LogSigmoid, log_sigmoid)
    }

    /// scale·x + shift with constant coefficients.
    pub fn affine(&self, scale: f64, shift: f64) -> Var<'t> {
        self.unary(|x| Op::Affine { x, scale }, |v| scale * v + shift)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.affine(c, 0.0)
    }

    pub fn shift(&self, c: f64) -> Var<'t> {
        self.affine(1.0, c)
    }

    pub fn square(&self) -> Var<'t> {
        self.mul(*self).expect("same shape")
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var<'t>, AutodiffError> {
        let from = self.shape();
        match broadcast_shapes(&from, shape) {
            Some(s) if s == shape => {}
            _ => {
                return Err(AutodiffError::Shape {
                    op: "broadcast",
                    shapes: vec![from, shape.to_vec()],
                })
            }
        }
        let map = broadcast_index_map(&from, shape);
        let value = {
            let v = self.value();
            Tensor::from_parts(shape.to_vec(), map.iter().map(|&j| v.data()[j]).collect())
        };
        Ok(self.tape.push(Op::Broadcast { x: self.id, map }, value))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>, AutodiffError> {
        let value = self.value().clone().reshaped(shape.to_vec())?;
        Ok(self.tape.push(Op::Reshape(self.id), value))
    }

    /// Contiguous run of the flattened data, viewed with `shape`.
    pub fn segment(&self, start: usize, shape: &[usize]) -> Result<Var<'t>, AutodiffError> {
        let len: usize = shape.iter().product();
        let value = {
            let v = self.value();
            if start + len > v.len() {
                return Err(AutodiffError::Shape {
                    op: "segment",
                    shapes: vec![v.shape().to_vec(), shape.to_vec()],
                });
            }
            Tensor::from_parts(shape.to_vec(), v.data()[start..start + len].to_vec())
        };
        Ok(self.tape.push(Op::Segment { x: self.id, start }, value))
    }

    fn check_axis(&self, op: &'static str, axis: usize) -> Result<Vec<usize>, AutodiffError> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(AutodiffError::Shape { op, shapes: vec![shape, vec![axis]] });
        }
        Ok(shape)
    }

    /// Sum over `axis`, removing it.
    pub fn sum(&self, axis: usize) -> Result<Var<'t>, AutodiffError> {
        let shape = self.check_axis("sum", axis)?;
        let (outer, n, inner) = axis_split(&shape, axis);
        let value = {
            let v = self.value();
            let x = v.data();
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for k in 0..n {
                    for i in 0..inner {
                        out[o * inner + i] += x[(o * n + k) * inner + i];
                    }
                }
            }
            let mut s = shape.clone();
            s.remove(axis);
            Tensor::from_parts(s, out)
        };
        Ok(self.tape.push(Op::Sum { x: self.id, axis }, value))
    }

    pub fn sum_all(&self) -> Var<'t> {
        let value = Tensor::scalar(self.value().data().iter().sum());
        self.tape.push(Op::SumAll(self.id), value)
    }

    /// log Σ exp over `axis`, removing it.
    pub fn log_sum_exp(&self, axis: usize) -> Result<Var<'t>, AutodiffError> {
        let shape = self.check_axis("log-sum-exp", axis)?;
        let (outer, n, inner) = axis_split(&shape, axis);
        let (value, weights) = {
            let v = self.value();
            let x = v.data();
            let mut out = vec![0.0; outer * inner];
            let mut w = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * n + k) * inner + i;
                    let max = (0..n).map(|k| x[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                    if max == f64::NEG_INFINITY {
                        out[o * inner + i] = f64::NEG_INFINITY;
                        continue;
                    }
                    let mut total = 0.0;
                    for k in 0..n {
                        let e = (x[idx(k)] - max).exp();
                        w[idx(k)] = e;
                        total += e;
                    }
                    for k in 0..n {
                        w[idx(k)] /= total;
                    }
                    out[o * inner + i] = max + total.ln();
                }
            }
            let mut s = shape.clone();
            s.remove(axis);
            (Tensor::from_parts(s, out), w)
        };
        Ok(self.tape.push(Op::LogSumExp { x: self.id, axis, weights }, value))
    }

    fn softmax_impl(&self, axis: usize, log: bool) -> Result<Var<'t>, AutodiffError> {
        let shape = self.check_axis(if log { "log-softmax" } else { "softmax" }, axis)?;
        let (outer, n, inner) = axis_split(&shape, axis);
        let value = {
            let v = self.value();
            let x = v.data();
            let mut out = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * n + k) * inner + i;
                    let max = (0..n).map(|k| x[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                    let total: f64 = (0..n).map(|k| (x[idx(k)] - max).exp()).sum();
                    let lse = max + total.ln();
                    for k in 0..n {
                        out[idx(k)] = if log { x[idx(k)] - lse } else { (x[idx(k)] - lse).exp() };
                    }
                }
            }
            Tensor::from_parts(shape, out)
        };
        let op = if log { Op::LogSoftmax { x: self.id, axis } } else { Op::Softmax { x: self.id, axis } };
        Ok(self.tape.push(op, value))
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t>, AutodiffError> {
        self.softmax_impl(axis, false)
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Var<'t>, AutodiffError> {
        self.softmax_impl(axis, true)
    }

    /// (m×k)·(k×n) matrix product.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::Shape { op: "matrix-multiply", shapes: vec![sa, sb] });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = {
            let (va, vb) = (self.value(), other.value());
            let (a, b) = (va.data(), vb.data());
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let aip = a[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let row = &b[p * n..(p + 1) * n];
                    let dst = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        dst[j] += aip * row[j];
                    }
                }
            }
            Tensor::from_parts(vec![m, n], out)
        };
        Ok(self.tape.push(Op::MatMul(self.id, other.id), value))
    }

    pub fn transpose(&self) -> Result<Var<'t>, AutodiffError> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(AutodiffError::Shape { op: "transpose", shapes: vec![shape] });
        }
        let (r, c) = (shape[0], shape[1]);
        let value = {
            let v = self.value();
            let x = v.data();
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = x[i * c + j];
                }
            }
            Tensor::from_parts(vec![c, r], out)
        };
        Ok(self.tape.push(Op::Transpose(self.id), value))
    }

    /// Selects entries along `axis` by integer index (repeats allowed).
    pub fn gather(&self, axis: usize, indices: Arc<[usize]>) -> Result<Var<'t>, AutodiffError> {
        let shape = self.check_axis("gather", axis)?;
        let (outer, n, inner) = axis_split(&shape, axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(AutodiffError::Contract {
                op: "gather",
                message: format!("index {bad} out of range for axis of length {n}"),
            });
        }
        let m = indices.len();
        let value = {
            let v = self.value();
            let x = v.data();
            let mut out = Vec::with_capacity(outer * m * inner);
            for o in 0..outer {
                for &src in indices.iter() {
                    out.extend_from_slice(&x[(o * n + src) * inner..(o * n + src + 1) * inner]);
                }
            }
            let mut s = shape;
            s[axis] = m;
            Tensor::from_parts(s, out)
        };
        Ok(self.tape.push(Op::Gather { x: self.id, axis, indices }, value))
    }

    /// Row gather followed by a sum over consecutive groups of `group` indices:
    /// out[r, :] = Σ_j self[indices[r·group + j], :]. `self` must be a matrix.
    pub fn gather_sum(&self, indices: Arc<[usize]>, group: usize) -> Result<Var<'t>, AutodiffError> {
        let shape = self.shape();
        if shape.len() != 2 || group == 0 || indices.len() % group != 0 {
            return Err(AutodiffError::Shape {
                op: "gather-sum",
                shapes: vec![shape, vec![indices.len(), group]],
            });
        }
        let (rows, cols) = (shape[0], shape[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(AutodiffError::Contract {
                op: "gather-sum",
                message: format!("index {bad} out of range for {rows} rows"),
            });
        }
        let out_rows = indices.len() / group;
        let value = {
            let v = self.value();
            let x = v.data();
            let mut out = vec![0.0; out_rows * cols];
            for (r, chunk) in indices.chunks(group).enumerate() {
                let dst = &mut out[r * cols..(r + 1) * cols];
                for &src in chunk {
                    let row = &x[src * cols..(src + 1) * cols];
                    for c in 0..cols {
                        dst[c] += row[c];
                    }
                }
            }
            Tensor::from_parts(vec![out_rows, cols], out)
        };
        Ok(self.tape.push(Op::GatherSum { table: self.id, indices, group }, value))
    }

    /// Running sum along `axis`; the exclusive form starts each run at zero.
    pub fn cumsum(&self, axis: usize, exclusive: bool) -> Result<Var<'t>, AutodiffError> {
        let shape = self.check_axis("cumulative-sum", axis)?;
        let (outer, n, inner) = axis_split(&shape, axis);
        let value = {
            let v = self.value();
            let x = v.data();
            let mut out = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let mut acc = 0.0;
                    for k in 0..n {
                        let idx = (o * n + k) * inner + i;
                        if exclusive {
                            out[idx] = acc;
                            acc += x[idx];
                        } else {
                            acc += x[idx];
                            out[idx] = acc;
                        }
                    }
                }
            }
            Tensor::from_parts(shape, out)
        };
        Ok(self.tape.push(Op::CumSum { x: self.id, axis, exclusive }, value))
    }
}
