//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records operations append-only during the forward pass, so
//! node order is already topological and the backward pass is a single
//! reverse sweep. Graphs are rebuilt per training step (the adapter rank, and
//! with it the tape topology, changes every step) and are single-threaded;
//! tensors detached from any graph move freely between threads.
//!
//! All graph ops are matrix ops: scalars are `[1 x 1]`, vectors `[1 x n]`.

use super::{matmul_raw, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

enum Op {
    Leaf,
    /// `a[m x k] * b[k x n]`
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    /// `a[m x n] + bias[1 x n]` broadcast over rows
    AddBias { a: NodeId, bias: NodeId },
    MulElem { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    /// Add a constant (non-differentiated) tensor, e.g. attention masks.
    AddConst { a: NodeId },
    /// Multiply elementwise by a constant tensor, e.g. dropout masks.
    MulConst { a: NodeId, k: Vec<f64> },
    /// Multiply every entry of `a` by the single entry of scalar node `s`.
    MulScalar { a: NodeId, s: NodeId },
    Transpose { a: NodeId },
    SliceCols { a: NodeId, start: usize },
    SliceRows { a: NodeId, start: usize },
    ConcatRows { parts: Vec<NodeId> },
    ConcatCols { parts: Vec<NodeId> },
    /// Row-wise softmax with max subtraction.
    Softmax { a: NodeId },
    Gelu { a: NodeId },
    /// Row-wise layer norm; `gamma`/`beta` are `[1 x n]`.
    LayerNorm { a: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    /// Row gather: out[i] = table[ids[i]].
    Embedding { table: NodeId, ids: Vec<usize> },
    /// `[m x n] -> [1 x n]` column means.
    MeanRows { a: NodeId },
    SumAll { a: NodeId },
    /// Mean binary cross-entropy over flat logits against constant labels.
    BceWithLogits { logits: NodeId, labels: Vec<f64> },
    /// Mean negative log-likelihood over rows with a target; `None` rows are
    /// ignored (padding).
    CrossEntropy { logits: NodeId, targets: Vec<Option<usize>> },
}

struct Node {
    data: Vec<f64>,
    shape: [usize; 2],
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].data
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id].data[0]
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id].shape[0], self.nodes[id].shape[1])
    }

    /// Gradient of the last `backward` target w.r.t. node `id`, if tracked.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    pub fn tensor(&self, id: NodeId) -> Tensor {
        let (m, n) = self.shape(id);
        Tensor::from_parts(vec![m, n], self.nodes[id].data.clone())
    }

    fn dims(&self, id: NodeId) -> (usize, usize) {
        self.shape(id)
    }

    fn push(&mut self, data: Vec<f64>, shape: [usize; 2], op: Op, requires_grad: bool) -> NodeId {
        debug_assert_eq!(shape[0] * shape[1], data.len());
        self.nodes.push(Node { data, shape, op, requires_grad });
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    /// Trainable leaf: gradient tracked iff `t.requires_grad`.
    pub fn param(&mut self, t: &Tensor) -> Result<NodeId> {
        let (m, n) = t.dims2()?;
        Ok(self.push(t.data().to_vec(), [m, n], Op::Leaf, t.requires_grad))
    }

    /// Non-differentiated leaf (inputs, frozen weights).
    pub fn constant(&mut self, t: &Tensor) -> Result<NodeId> {
        let (m, n) = t.dims2()?;
        Ok(self.push(t.data().to_vec(), [m, n], Op::Leaf, false))
    }

    pub fn constant_raw(&mut self, data: Vec<f64>, rows: usize, cols: usize) -> NodeId {
        self.push(data, [rows, cols], Op::Leaf, false)
    }

    // ── Ops ─────────────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dimensions disagree: [{m}, {k}] x [{k2}, {n}]"
            )));
        }
        let data = matmul_raw(&self.nodes[a].data, &self.nodes[b].data, m, k, n);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(data, [m, n], Op::MatMul { a, b }, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.dims(a);
        let sb = self.dims(b);
        if sa != sb {
            return Err(Error::Shape(format!("add shapes disagree: {sa:?} vs {sb:?}")));
        }
        let data = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(data, [sa.0, sa.1], Op::Add { a, b }, rg))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        let (bm, bn) = self.dims(bias);
        if bm != 1 || bn != n {
            return Err(Error::Shape(format!(
                "bias must be [1, {n}], got [{bm}, {bn}]"
            )));
        }
        let mut data = self.nodes[a].data.clone();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += self.nodes[bias].data[j];
            }
        }
        let rg = self.needs(a) || self.needs(bias);
        Ok(self.push(data, [m, n], Op::AddBias { a, bias }, rg))
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.dims(a);
        if sa != self.dims(b) {
            return Err(Error::Shape("elementwise mul shapes disagree".into()));
        }
        let data = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(data, [sa.0, sa.1], Op::MulElem { a, b }, rg))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let s = self.dims(a);
        let data = self.nodes[a].data.iter().map(|x| x * c).collect();
        let rg = self.needs(a);
        self.push(data, [s.0, s.1], Op::Scale { a, c }, rg)
    }

    pub fn add_const(&mut self, a: NodeId, k: &[f64]) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        if k.len() != m * n {
            return Err(Error::Shape("constant length differs from operand".into()));
        }
        let data = self.nodes[a].data.iter().zip(k).map(|(x, y)| x + y).collect();
        let rg = self.needs(a);
        Ok(self.push(data, [m, n], Op::AddConst { a }, rg))
    }

    pub fn mul_const(&mut self, a: NodeId, k: Vec<f64>) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        if k.len() != m * n {
            return Err(Error::Shape("constant length differs from operand".into()));
        }
        let data = self.nodes[a].data.iter().zip(&k).map(|(x, y)| x * y).collect();
        let rg = self.needs(a);
        Ok(self.push(data, [m, n], Op::MulConst { a, k }, rg))
    }

    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        if self.dims(s) != (1, 1) {
            return Err(Error::Shape("scalar multiplier must be [1, 1]".into()));
        }
        let sv = self.nodes[s].data[0];
        let data = self.nodes[a].data.iter().map(|x| x * sv).collect();
        let rg = self.needs(a) || self.needs(s);
        Ok(self.push(data, [m, n], Op::MulScalar { a, s }, rg))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.dims(a);
        let src = &self.nodes[a].data;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.needs(a);
        self.push(data, [n, m], Op::Transpose { a }, rg)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        if start + len > n {
            return Err(Error::Contract(format!(
                "column slice {start}..{} out of range for {n} columns",
                start + len
            )));
        }
        let src = &self.nodes[a].data;
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let rg = self.needs(a);
        Ok(self.push(data, [m, len], Op::SliceCols { a, start }, rg))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        if start + len > m {
            return Err(Error::Contract(format!(
                "row slice {start}..{} out of range for {m} rows",
                start + len
            )));
        }
        let data = self.nodes[a].data[start * n..(start + len) * n].to_vec();
        let rg = self.needs(a);
        Ok(self.push(data, [len, n], Op::SliceRows { a, start }, rg))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero parts".into()));
        }
        let n = self.dims(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        let mut rg = false;
        for &p in parts {
            let (pm, pn) = self.dims(p);
            if pn != n {
                return Err(Error::Shape("row concat column counts disagree".into()));
            }
            rows += pm;
            rg |= self.needs(p);
            data.extend_from_slice(&self.nodes[p].data);
        }
        Ok(self.push(data, [rows, n], Op::ConcatRows { parts: parts.to_vec() }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero parts".into()));
        }
        let m = self.dims(parts[0]).0;
        let mut widths = Vec::with_capacity(parts.len());
        let mut rg = false;
        let mut total = 0;
        for &p in parts {
            let (pm, pn) = self.dims(p);
            if pm != m {
                return Err(Error::Shape("column concat row counts disagree".into()));
            }
            widths.push(pn);
            total += pn;
            rg |= self.needs(p);
        }
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.nodes[p].data[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(data, [m, total], Op::ConcatCols { parts: parts.to_vec() }, rg))
    }

    /// Row-wise softmax; each row sums to 1.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.dims(a);
        let src = &self.nodes[a].data;
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let out = &mut data[i * n..(i + 1) * n];
            softmax_row(row, out);
        }
        let rg = self.needs(a);
        self.push(data, [m, n], Op::Softmax { a }, rg)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let s = self.dims(a);
        let data = self.nodes[a].data.iter().map(|&x| gelu(x)).collect();
        let rg = self.needs(a);
        self.push(data, [s.0, s.1], Op::Gelu { a }, rg)
    }

    pub fn layer_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        if self.dims(gamma) != (1, n) || self.dims(beta) != (1, n) {
            return Err(Error::Shape("layer norm gamma/beta must be [1, n]".into()));
        }
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.nodes[a].data[i * n..(i + 1) * n];
            let (mean, inv_std) = row_moments(row, eps);
            for j in 0..n {
                let xh = (row[j] - mean) * inv_std;
                data[i * n + j] = self.nodes[gamma].data[j] * xh + self.nodes[beta].data[j];
            }
        }
        let rg = self.needs(a) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(data, [m, n], Op::LayerNorm { a, gamma, beta, eps }, rg))
    }

    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (v, e) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Contract(format!("token id {bad} out of vocab {v}")));
        }
        let mut data = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            data.extend_from_slice(&self.nodes[table].data[i * e..(i + 1) * e]);
        }
        let rg = self.needs(table);
        Ok(self.push(data, [ids.len(), e], Op::Embedding { table, ids: ids.to_vec() }, rg))
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.dims(a);
        let mut data = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                data[j] += self.nodes[a].data[i * n + j];
            }
        }
        for v in &mut data {
            *v /= m as f64;
        }
        let rg = self.needs(a);
        self.push(data, [1, n], Op::MeanRows { a }, rg)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a].data.iter().sum();
        let rg = self.needs(a);
        self.push(vec![s], [1, 1], Op::SumAll { a }, rg)
    }

    /// Numerically stable mean binary cross-entropy on raw logits.
    pub fn bce_with_logits(&mut self, logits: NodeId, labels: &[f64]) -> Result<NodeId> {
        let numel = self.nodes[logits].data.len();
        if labels.len() != numel {
            return Err(Error::Shape(format!(
                "{} labels for {numel} logits",
                labels.len()
            )));
        }
        let b = numel as f64;
        let mut loss = 0.0;
        for (&z, &y) in self.nodes[logits].data.iter().zip(labels) {
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        }
        loss /= b;
        let rg = self.needs(logits);
        Ok(self.push(
            vec![loss],
            [1, 1],
            Op::BceWithLogits { logits, labels: labels.to_vec() },
            rg,
        ))
    }

    /// Mean `-log softmax(row)[target]` over rows with a target.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[Option<usize>]) -> Result<NodeId> {
        let (m, n) = self.dims(logits);
        if targets.len() != m {
            return Err(Error::Shape(format!("{} targets for {m} rows", targets.len())));
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(Error::Contract("cross entropy with no target positions".into()));
        }
        if let Some(&bad) = targets.iter().flatten().find(|&&t| t >= n) {
            return Err(Error::Contract(format!("target {bad} out of range {n}")));
        }
        let mut loss = 0.0;
        for (i, t) in targets.iter().enumerate() {
            if let Some(t) = t {
                let row = &self.nodes[logits].data[i * n..(i + 1) * n];
                loss += log_sum_exp(row) - row[*t];
            }
        }
        loss /= count as f64;
        let rg = self.needs(logits);
        Ok(self.push(
            vec![loss],
            [1, 1],
            Op::CrossEntropy { logits, targets: targets.to_vec() },
            rg,
        ))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss node. Gradients are afterwards
    /// available from [`Graph::grad`] for every tracked node.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward target must be scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let n_nodes = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n_nodes];
        grads[loss] = Some(vec![1.0]);

        for id in (0..=loss).rev() {
            if !self.nodes[id].requires_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: NodeId, f: impl FnOnce(&mut [f64])) {
        if !nodes[id].requires_grad {
            return;
        }
        let buf = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].data.len()]);
        f(buf);
    }

    fn propagate(&self, id: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let (m, n) = self.dims(id);
        match &nodes[id].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (_, k) = self.dims(*a);
                // dA = g . B^T
                Self::accumulate(grads, nodes, *a, |da| {
                    let bd = &nodes[*b].data;
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * bd[p * n + j];
                            }
                            da[i * k + p] += s;
                        }
                    }
                });
                // dB = A^T . g
                Self::accumulate(grads, nodes, *b, |db| {
                    let ad = &nodes[*a].data;
                    for p in 0..k {
                        for i in 0..m {
                            let a_ip = ad[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += a_ip * g[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                Self::accumulate(grads, nodes, *a, |da| add_into(da, g, 1.0));
                Self::accumulate(grads, nodes, *b, |db| add_into(db, g, 1.0));
            }
            Op::AddBias { a, bias } => {
                Self::accumulate(grads, nodes, *a, |da| add_into(da, g, 1.0));
                Self::accumulate(grads, nodes, *bias, |db| {
                    for i in 0..m {
                        for j in 0..n {
                            db[j] += g[i * n + j];
                        }
                    }
                });
            }
            Op::MulElem { a, b } => {
                Self::accumulate(grads, nodes, *a, |da| {
                    for (i, d) in da.iter_mut().enumerate() {
                        *d += g[i] * nodes[*b].data[i];
                    }
                });
                Self::accumulate(grads, nodes, *b, |db| {
                    for (i, d) in db.iter_mut().enumerate() {
                        *d += g[i] * nodes[*a].data[i];
                    }
                });
            }
            Op::Scale { a, c } => {
                Self::accumulate(grads, nodes, *a, |da| add_into(da, g, *c));
            }
            Op::AddConst { a } => {
                Self::accumulate(grads, nodes, *a, |da| add_into(da, g, 1.0));
            }
            Op::MulConst { a, k } => {
                Self::accumulate(grads, nodes, *a, |da| {
                    for (i, d) in da.iter_mut().enumerate() {
                        *d += g[i] * k[i];
                    }
                });
            }
            Op::MulScalar { a, s } => {
                let sv = nodes[*s].data[0];
                Self::accumulate(grads, nodes, *a, |da| add_into(da, g, sv));
                Self::accumulate(grads, nodes, *s, |ds| {
                    let mut acc = 0.0;
                    for (gi, ai) in g.iter().zip(&nodes[*a].data) {
                        acc += gi * ai;
                    }
                    ds[0] += acc;
                });
            }
            Op::Transpose { a } => {
                // out is [m x n]; a is [n x m]
                Self::accumulate(grads, nodes, *a, |da| {
                    for i in 0..m {
                        for j in 0..n {
                            da[j * m + i] += g[i * n + j];
                        }
                    }
                });
            }
            Op::SliceCols { a, start } => {
                let an = self.dims(*a).1;
                Self::accumulate(grads, nodes, *a, |da| {
                    for i in 0..m {
                        for j in 0..n {
                            da[i * an + start + j] += g[i * n + j];
                        }
                    }
                });
            }
            Op::SliceRows { a, start } => {
                Self::accumulate(grads, nodes, *a, |da| {
                    for i in 0..m {
                        for j in 0..n {
                            da[(start + i) * n + j] += g[i * n + j];
                        }
                    }
                });
            }
            Op::ConcatRows { parts } => {
                let mut row = 0;
                for &p in parts {
                    let (pm, _) = self.dims(p);
                    let seg = &g[row * n..(row + pm) * n];
                    Self::accumulate(grads, nodes, p, |dp| add_into(dp, seg, 1.0));
                    row += pm;
                }
            }
            Op::ConcatCols { parts } => {
                let mut col = 0;
                for &p in parts {
                    let (_, pw) = self.dims(p);
                    Self::accumulate(grads, nodes, p, |dp| {
                        for i in 0..m {
                            for j in 0..pw {
                                dp[i * pw + j] += g[i * n + col + j];
                            }
                        }
                    });
                    col += pw;
                }
            }
            Op::Softmax { a } => {
                let y = &nodes[id].data;
                Self::accumulate(grads, nodes, *a, |da| {
                    for i in 0..m {
                        let yr = &y[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                        for j in 0..n {
                            da[i * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Gelu { a } => {
                Self::accumulate(grads, nodes, *a, |da| {
                    for (i, d) in da.iter_mut().enumerate() {
                        *d += g[i] * gelu_deriv(nodes[*a].data[i]);
                    }
                });
            }
            Op::LayerNorm { a, gamma, beta, eps } => {
                let x = &nodes[*a].data;
                let gm = &nodes[*gamma].data;
                for i in 0..m {
                    let row = &x[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let (mean, inv_std) = row_moments(row, *eps);
                    let xh: Vec<f64> = row.iter().map(|&v| (v - mean) * inv_std).collect();
                    Self::accumulate(grads, nodes, *gamma, |dg| {
                        for j in 0..n {
                            dg[j] += gr[j] * xh[j];
                        }
                    });
                    Self::accumulate(grads, nodes, *beta, |db| {
                        for j in 0..n {
                            db[j] += gr[j];
                        }
                    });
                    Self::accumulate(grads, nodes, *a, |da| {
                        let gx: Vec<f64> = (0..n).map(|j| gr[j] * gm[j]).collect();
                        let mean_gx: f64 = gx.iter().sum::<f64>() / n as f64;
                        let mean_gx_xh: f64 =
                            gx.iter().zip(&xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            da[i * n + j] += inv_std * (gx[j] - mean_gx - xh[j] * mean_gx_xh);
                        }
                    });
                }
            }
            Op::Embedding { table, ids } => {
                let e = self.dims(*table).1;
                Self::accumulate(grads, nodes, *table, |dt| {
                    for (row, &tok) in ids.iter().enumerate() {
                        for j in 0..e {
                            dt[tok * e + j] += g[row * e + j];
                        }
                    }
                });
            }
            Op::MeanRows { a } => {
                let am = self.dims(*a).0;
                let inv = 1.0 / am as f64;
                Self::accumulate(grads, nodes, *a, |da| {
                    for i in 0..am {
                        for j in 0..n {
                            da[i * n + j] += g[j] * inv;
                        }
                    }
                });
            }
            Op::SumAll { a } => {
                Self::accumulate(grads, nodes, *a, |da| {
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                });
            }
            Op::BceWithLogits { logits, labels } => {
                let b = labels.len() as f64;
                Self::accumulate(grads, nodes, *logits, |dz| {
                    for (i, d) in dz.iter_mut().enumerate() {
                        let p = sigmoid(nodes[*logits].data[i]);
                        *d += g[0] * (p - labels[i]) / b;
                    }
                });
            }
            Op::CrossEntropy { logits, targets } => {
                let (lm, ln) = self.dims(*logits);
                let count = targets.iter().flatten().count() as f64;
                Self::accumulate(grads, nodes, *logits, |dz| {
                    for i in 0..lm {
                        let Some(t) = targets[i] else { continue };
                        let row = &nodes[*logits].data[i * ln..(i + 1) * ln];
                        let mut sm = vec![0.0; ln];
                        softmax_row(row, &mut sm);
                        for j in 0..ln {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            dz[i * ln + j] += g[0] * (sm[j] - onehot) / count;
                        }
                    }
                });
            }
        }
    }
}

/// Name-memoized parameter binding: each named tensor becomes exactly one
/// leaf per graph, so re-uses across a batch accumulate into a single
/// gradient buffer. Names double as the optimizer/accumulator keys.
#[derive(Default)]
pub struct Binder {
    order: Vec<(String, NodeId)>,
    map: std::collections::HashMap<String, NodeId>,
}

impl Binder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, g: &mut Graph, name: &str, t: &Tensor) -> Result<NodeId> {
        if let Some(&id) = self.map.get(name) {
            return Ok(id);
        }
        let id = g.param(t)?;
        self.map.insert(name.to_string(), id);
        self.order.push((name.to_string(), id));
        Ok(id)
    }

    /// Bound (name, node) pairs in first-bind order.
    pub fn bindings(&self) -> &[(String, NodeId)] {
        &self.order
    }
}

fn add_into(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s * c;
    }
}

pub(crate) fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_symmetry_and_single_element() {
        let mut g = Graph::new();
        let x = g.constant(&t(&[1, 2], &[0.0, 0.0])).unwrap();
        let y = g.softmax(x);
        assert_eq!(g.value(y), &[0.5, 0.5]);

        let one = g.constant(&t(&[1, 1], &[3.7])).unwrap();
        let y1 = g.softmax(one);
        assert_eq!(g.value(y1), &[1.0]);
    }

    #[test]
    fn softmax_closed_form() {
        // [ln 3, 0] -> [0.75, 0.25]
        let mut g = Graph::new();
        let x = g.constant(&t(&[1, 2], &[3.0_f64.ln(), 0.0])).unwrap();
        let y = g.softmax(x);
        assert!((g.value(y)[0] - 0.75).abs() < 1e-12);
        assert!((g.value(y)[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let x = g.constant(&Tensor::randn(&[6, 9], 4.0, &mut rng)).unwrap();
        let y = g.softmax(x);
        for i in 0..6 {
            let s: f64 = g.value(y)[i * 9..(i + 1) * 9].iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            for &v in &g.value(y)[i * 9..(i + 1) * 9] {
                assert!(v > 0.0 && v <= 1.0);
            }
        }
    }

    #[test]
    fn matmul_backward_formula() {
        // y = a.b, loss = sum(y): da = 1.b^T, db = a^T.1
        let mut g = Graph::new();
        let a = g.param(&t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).with_grad()).unwrap();
        let b = g.param(&t(&[3, 2], &[1.0, -1.0, 0.5, 2.0, 0.0, 1.0]).with_grad()).unwrap();
        let y = g.matmul(a, b).unwrap();
        let l = g.sum_all(y);
        g.backward(l).unwrap();
        // dA[i][p] = sum_j B[p][j]
        let row_sums = [0.0, 2.5, 1.0];
        let da = g.grad(a).unwrap();
        for i in 0..2 {
            for p in 0..3 {
                assert!((da[i * 3 + p] - row_sums[p]).abs() < 1e-12);
            }
        }
        // dB[p][j] = sum_i A[i][p]
        let col_sums = [5.0, 7.0, 9.0];
        let db = g.grad(b).unwrap();
        for p in 0..3 {
            for j in 0..2 {
                assert!((db[p * 2 + j] - col_sums[p]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let a = g.param(&t(&[2, 2], &[1.0; 4]).with_grad()).unwrap();
        let err = g.backward(a).unwrap_err();
        assert!(err.to_string().contains("scalar"));
    }

    #[test]
    fn cross_entropy_uniform_logits_is_log_vocab() {
        let mut g = Graph::new();
        let logits = g.constant(&Tensor::zeros(&[3, 10])).unwrap();
        let l = g
            .cross_entropy(logits, &[Some(1), Some(7), Some(3)])
            .unwrap();
        assert!((g.scalar(l) - 10.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_empty_targets() {
        let mut g = Graph::new();
        let logits = g.constant(&Tensor::zeros(&[2, 4])).unwrap();
        assert!(g.cross_entropy(logits, &[None, None]).is_err());
    }

    #[test]
    fn bce_at_half_probability_is_ln2() {
        let mut g = Graph::new();
        let z = g.constant(&Tensor::zeros(&[4, 1])).unwrap();
        let l = g.bce_with_logits(z, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((g.scalar(l) - 2.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn embedding_gathers_and_scatters() {
        let mut g = Graph::new();
        let table = g
            .param(&t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).with_grad())
            .unwrap();
        let e = g.embedding(table, &[2, 0, 2]).unwrap();
        assert_eq!(g.value(e), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let l = g.sum_all(e);
        g.backward(l).unwrap();
        // row 2 hit twice, row 0 once, row 1 never
        assert_eq!(g.grad(table).unwrap(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }
}
