use std::collections::HashMap;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Batch-norm variance epsilon.
pub const BN_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Elementwise operations, addressable by value for table-driven callers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Relu,
    Tanh,
    Sigmoid,
}

/// How the second operand of a binary op lines up with the first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Col,
    Scalar,
}

impl Broadcast {
    fn resolve(a: (usize, usize), b: (usize, usize)) -> Option<Self> {
        if a == b {
            Some(Broadcast::Same)
        } else if b == (1, 1) {
            Some(Broadcast::Scalar)
        } else if b.0 == 1 && b.1 == a.1 {
            Some(Broadcast::Row)
        } else if b.1 == 1 && b.0 == a.0 {
            Some(Broadcast::Col)
        } else {
            None
        }
    }

    #[inline]
    fn index(self, r: usize, c: usize, b_cols: usize) -> usize {
        match self {
            Broadcast::Same => r * b_cols + c,
            Broadcast::Row => c,
            Broadcast::Col => r,
            Broadcast::Scalar => 0,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    /// `argmax[out_row * cols + c]` is the input row that produced the value.
    SegmentMax {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        axis: Axis,
    },
    Slice {
        x: Var,
        axis: Axis,
        start: usize,
    },
    /// Each output row is a fixed weighted sum of input rows.
    RowCombine {
        x: Var,
        rows: Vec<Vec<(usize, f64)>>,
    },
    SumAll(Var),
    SumCols(Var),
    MulConst {
        x: Var,
        mask: Tensor,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Running-statistics update produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    mean_id: ParamId,
    var_id: ParamId,
    mean: Vec<f64>,
    var: Vec<f64>,
    momentum: f64,
}

/// A computation graph recorded in execution order.
///
/// Nodes only ever reference earlier nodes, so the recording order is a
/// topological order and the graph is acyclic by construction.
pub struct Graph {
    nodes: Vec<Node>,
    training: bool,
    bound: HashMap<ParamId, Var>,
    bn_updates: Vec<BnUpdate>,
}

/// Gradients of a scalar with respect to every differentiable leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn dim_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Dimension(format!("{what}: shapes {a:?} and {b:?} are incompatible"))
}

impl Graph {
    pub fn new(training: bool) -> Self {
        Graph {
            nodes: Vec::new(),
            training,
            bound: HashMap::new(),
            bn_updates: Vec::new(),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A differentiable leaf that is not a parameter.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Binds a parameter as a leaf. Binding the same parameter twice
    /// returns the same node so gradients are accumulated once.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        self.bound.insert(id, v);
        v
    }

    pub fn param_named(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let id = store.id(name)?;
        Ok(self.param(store, id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(dim_err("matmul", sa, sb));
        }
        let mut out = Tensor::zeros(sa.0, sb.1);
        gemm(self.value(a), false, self.value(b), false, &mut out, 0.0);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, kind: Elementwise, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let bc = Broadcast::resolve(sa, sb).ok_or_else(|| dim_err("elementwise", sa, sb))?;
        let f: fn(f64, f64) -> f64 = match kind {
            Elementwise::Add => |x, y| x + y,
            Elementwise::Sub => |x, y| x - y,
            Elementwise::Mul => |x, y| x * y,
            _ => unreachable!(),
        };
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Tensor::zeros(sa.0, sa.1);
        {
            let od = out.data_mut();
            let (ad, bd) = (va.data(), vb.data());
            for r in 0..sa.0 {
                for c in 0..sa.1 {
                    let i = r * sa.1 + c;
                    od[i] = f(ad[i], bd[bc.index(r, c, sb.1)]);
                }
            }
        }
        let op = match kind {
            Elementwise::Add => Op::Add(a, b, bc),
            Elementwise::Sub => Op::Sub(a, b, bc),
            _ => Op::Mul(a, b, bc),
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    /// Applies an elementwise op. Binary ops take two inputs where the second
    /// may be a `1 x c` row, an `r x 1` column or a `1 x 1` scalar.
    pub fn elementwise(&mut self, kind: Elementwise, inputs: &[Var]) -> Result<Var> {
        match (kind, inputs) {
            (Elementwise::Add | Elementwise::Sub | Elementwise::Mul, &[a, b]) => {
                self.binary(kind, a, b)
            }
            (Elementwise::Relu, &[x]) => Ok(self.relu(x)),
            (Elementwise::Tanh, &[x]) => Ok(self.tanh(x)),
            (Elementwise::Sigmoid, &[x]) => Ok(self.sigmoid(x)),
            _ => Err(Error::Contract(format!(
                "{kind:?} called with {} inputs",
                inputs.len()
            ))),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Mul, a, b)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    /// Softmax over each row, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.cols() == 0 {
            return Err(Error::Dimension("softmax of an empty vector".into()));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::SoftmaxRows(x), rg))
    }

    /// Columnwise maximum over all rows. Ties go to the lowest row index.
    pub fn max_reduce(&mut self, x: Var) -> Result<(Var, Vec<usize>)> {
        let rows = self.shape(x).0;
        let out = self.segment_max(x, &[(0, rows)])?;
        let argmax = match &self.nodes[out.0].op {
            Op::SegmentMax { argmax, .. } => argmax.clone(),
            _ => unreachable!(),
        };
        Ok((out, argmax))
    }

    /// Columnwise maximum over each `(start, len)` block of rows, giving one
    /// output row per segment.
    pub fn segment_max(&mut self, x: Var, segments: &[(usize, usize)]) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut out = Tensor::zeros(segments.len(), cols);
        let mut argmax = vec![0usize; segments.len() * cols];
        for (s, &(start, len)) in segments.iter().enumerate() {
            if len == 0 {
                return Err(Error::EmptyReduction(format!(
                    "max over zero rows (segment {s})"
                )));
            }
            if start + len > rows {
                return Err(Error::Dimension(format!(
                    "segment {start}..{} exceeds {rows} rows",
                    start + len
                )));
            }
            let best = &mut argmax[s * cols..(s + 1) * cols];
            best.iter_mut().for_each(|b| *b = start);
            let orow = out.row_mut(s);
            orow.copy_from_slice(xv.row(start));
            for r in start + 1..start + len {
                for (c, &v) in xv.row(r).iter().enumerate() {
                    if v > orow[c] {
                        orow[c] = v;
                        best[c] = r;
                    }
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::SegmentMax { x, argmax }, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let s0 = self.shape(first);
        let out = match axis {
            Axis::Cols => {
                let mut cols = 0;
                for &p in parts {
                    let s = self.shape(p);
                    if s.0 != s0.0 {
                        return Err(dim_err("concat along columns", s0, s));
                    }
                    cols += s.1;
                }
                let mut out = Tensor::zeros(s0.0, cols);
                for r in 0..s0.0 {
                    let mut off = 0;
                    let orow = out.row_mut(r);
                    for &p in parts {
                        let src = self.nodes[p.0].value.row(r);
                        orow[off..off + src.len()].copy_from_slice(src);
                        off += src.len();
                    }
                }
                out
            }
            Axis::Rows => {
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let s = self.shape(p);
                    if s.1 != s0.1 {
                        return Err(dim_err("concat along rows", s0, s));
                    }
                    rows += s.0;
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::from_vec(rows, s0.1, data)?
            }
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn slice(&mut self, x: Var, axis: Axis, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let out = match axis {
            Axis::Rows => {
                if start + len > rows {
                    return Err(Error::Dimension(format!(
                        "row slice {start}..{} of {rows} rows",
                        start + len
                    )));
                }
                Tensor::from_vec(len, cols, xv.data()[start * cols..(start + len) * cols].to_vec())?
            }
            Axis::Cols => {
                if start + len > cols {
                    return Err(Error::Dimension(format!(
                        "column slice {start}..{} of {cols} columns",
                        start + len
                    )));
                }
                let mut out = Tensor::zeros(rows, len);
                for r in 0..rows {
                    out.row_mut(r)
                        .copy_from_slice(&xv.row(r)[start..start + len]);
                }
                out
            }
        };
        let rg = self.rg(x);
        Ok(self.push(out, Op::Slice { x, axis, start }, rg))
    }

    /// Output row `i` is `sum_j w_ij * x[src_ij]` for the pairs in `rows[i]`.
    /// Gathering, broadcasting and interpolation all reduce to this.
    pub fn row_combine(&mut self, x: Var, rows: Vec<Vec<(usize, f64)>>) -> Result<Var> {
        let xv = self.value(x);
        let (n, cols) = xv.shape();
        let mut out = Tensor::zeros(rows.len(), cols);
        for (i, terms) in rows.iter().enumerate() {
            let orow = out.row_mut(i);
            for &(src, w) in terms {
                if src >= n {
                    return Err(Error::Dimension(format!(
                        "row_combine source row {src} out of {n}"
                    )));
                }
                for (o, &v) in orow.iter_mut().zip(xv.row(src)) {
                    *o += w * v;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::RowCombine { x, rows }, rg))
    }

    /// Repeats row `src[i]` of `x` as output row `i`.
    pub fn gather_rows(&mut self, x: Var, src: &[usize]) -> Result<Var> {
        self.row_combine(x, src.iter().map(|&s| vec![(s, 1.0)]).collect())
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::SumAll(x), rg)
    }

    /// Sum of each row, as an `r x 1` column.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let sums = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let out = Tensor::from_vec(xv.rows(), 1, sums).expect("shape");
        let rg = self.rg(x);
        self.push(out, Op::SumCols(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Inverted dropout: in training, zeroes each entry with probability
    /// `ratio` and scales survivors by `1 / (1 - ratio)`. Identity otherwise.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, ratio: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::Config(format!(
                "dropout ratio must lie in [0, 1), got {ratio}"
            )));
        }
        if !self.training || ratio == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - ratio);
        let (r, c) = self.shape(x);
        let mask_data = (0..r * c)
            .map(|_| if rng.gen::<f64>() < ratio { 0.0 } else { keep })
            .collect();
        let mask = Tensor::from_vec(r, c, mask_data)?;
        let mut out = self.value(x).clone();
        for (o, m) in out.data_mut().iter_mut().zip(mask.data()) {
            *o *= m;
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::MulConst { x, mask }, rg))
    }

    /// Batch normalization over the rows of `x` using the parameters
    /// `{prefix}.gamma`, `{prefix}.beta` and the buffers
    /// `{prefix}.running_mean`, `{prefix}.running_var`.
    ///
    /// In training mode the batch statistics are used and a running-stat
    /// update with the given momentum is queued; see [`Graph::apply_bn_updates`].
    pub fn batchnorm(
        &mut self,
        x: Var,
        store: &ParamStore,
        prefix: &str,
        momentum: f64,
    ) -> Result<Var> {
        let gamma = self.param_named(store, &format!("{prefix}.gamma"))?;
        let beta = self.param_named(store, &format!("{prefix}.beta"))?;
        let mean_id = store.id(&format!("{prefix}.running_mean"))?;
        let var_id = store.id(&format!("{prefix}.running_var"))?;
        let (rows, cols) = self.shape(x);
        for v in [gamma, beta] {
            if self.shape(v) != (1, cols) {
                return Err(dim_err("batchnorm affine", (1, cols), self.shape(v)));
            }
        }
        let running_mean = &store.get(mean_id).value;
        let running_var = &store.get(var_id).value;
        if running_mean.shape() != (1, cols) || running_var.shape() != (1, cols) {
            return Err(dim_err("batchnorm state", (1, cols), running_mean.shape()));
        }
        let xv = self.value(x);
        let (mean, var) = if self.training {
            if rows == 0 {
                return Err(Error::EmptyReduction("batchnorm over zero rows".into()));
            }
            let n = rows as f64;
            let mut mean = vec![0.0; cols];
            for r in 0..rows {
                for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; cols];
            for r in 0..rows {
                for ((s, v), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= n);
            (mean, var)
        } else {
            (running_mean.data().to_vec(), running_var.data().to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = Tensor::zeros(rows, cols);
        let mut out = Tensor::zeros(rows, cols);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        for r in 0..rows {
            let xr = xv.row(r);
            for c in 0..cols {
                let h = (xr[c] - mean[c]) * inv_std[c];
                xhat.set(r, c, h);
                out.set(r, c, g[c] * h + b[c]);
            }
        }
        let batch_stats = self.training;
        if batch_stats {
            self.bn_updates.push(BnUpdate {
                mean_id,
                var_id,
                mean,
                var,
                momentum,
            });
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        ))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, cols) = lv.shape();
        if targets.len() != rows {
            return Err(Error::Dimension(format!(
                "{} targets for {rows} logit rows",
                targets.len()
            )));
        }
        if rows == 0 {
            return Err(Error::EmptyReduction("cross entropy over zero rows".into()));
        }
        let mut probs = lv.clone();
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= cols {
                return Err(Error::Data(format!("target {t} outside [0, {cols})")));
            }
            let row = lv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            softmax_in_place(probs.row_mut(r));
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss / rows as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Batch-norm running-statistic updates queued by training-mode
    /// forward passes.
    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn apply_bn_updates(&self, store: &mut ParamStore) {
        for u in &self.bn_updates {
            for (id, batch) in [(u.mean_id, &u.mean), (u.var_id, &u.var)] {
                let running = store.get_mut(id).value.data_mut();
                for (r, b) in running.iter_mut().zip(batch) {
                    *r = (1.0 - u.momentum) * *r + u.momentum * b;
                }
            }
        }
    }

    /// Reverse-mode sweep from a scalar. Returns adjoints of all
    /// differentiable leaves.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    /// Backpropagates `loss` and adds the result into the `grad` of every
    /// bound parameter. Calling it twice without zeroing accumulates.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (&id, &v) in &self.bound {
            if let Some(g) = grads.get(v) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let acc = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if self.rg(*a) {
                    let mut da = Tensor::zeros(va.rows(), va.cols());
                    gemm(g, false, vb, true, &mut da, 0.0);
                    acc(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = Tensor::zeros(vb.rows(), vb.cols());
                    gemm(va, true, g, false, &mut db, 0.0);
                    acc(grads, *b, db);
                }
            }
            Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                acc(grads, *a, g.clone());
                if self.rg(*b) {
                    let db = reduce_to(g, *bc, val(*b).shape(), |_, gv| sign * gv);
                    acc(grads, *b, db);
                }
            }
            Op::Mul(a, b, bc) => {
                let (va, vb) = (val(*a), val(*b));
                let bcols = vb.cols();
                if self.rg(*a) {
                    let mut da = g.clone();
                    let cols = da.cols();
                    for (i, d) in da.data_mut().iter_mut().enumerate() {
                        *d *= vb.data()[bc.index(i / cols, i % cols, bcols)];
                    }
                    acc(grads, *a, da);
                }
                if self.rg(*b) {
                    let db = reduce_to(g, *bc, vb.shape(), |i, gv| gv * va.data()[i]);
                    acc(grads, *b, db);
                }
            }
            Op::Relu(x) => {
                let mut dx = g.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(val(*x).data()) {
                    if v <= 0.0 {
                        *d = 0.0;
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Tanh(x) => {
                let mut dx = g.clone();
                for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    *d *= 1.0 - y * y;
                }
                acc(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let mut dx = g.clone();
                for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    *d *= y * (1.0 - y);
                }
                acc(grads, *x, dx);
            }
            Op::Scale(x, s) => acc(grads, *x, g.map(|v| v * s)),
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                        *d = yr[c] * (gr[c] - dot);
                    }
                }
                acc(grads, *x, dx);
            }
            Op::SegmentMax { x, argmax } => {
                let (rows, cols) = val(*x).shape();
                let mut dx = Tensor::zeros(rows, cols);
                for (i, &src) in argmax.iter().enumerate() {
                    let c = i % cols;
                    let cur = dx.get(src, c);
                    dx.set(src, c, cur + g.data()[i]);
                }
                acc(grads, *x, dx);
            }
            Op::Concat { parts, axis } => {
                let mut off = 0;
                for &p in parts {
                    let (pr, pc) = val(p).shape();
                    if self.rg(p) {
                        let dp = match axis {
                            Axis::Cols => {
                                let mut dp = Tensor::zeros(pr, pc);
                                for r in 0..pr {
                                    dp.row_mut(r).copy_from_slice(&g.row(r)[off..off + pc]);
                                }
                                dp
                            }
                            Axis::Rows => Tensor::from_vec(
                                pr,
                                pc,
                                g.data()[off * pc..(off + pr) * pc].to_vec(),
                            )
                            .expect("shape"),
                        };
                        acc(grads, p, dp);
                    }
                    off += match axis {
                        Axis::Cols => pc,
                        Axis::Rows => pr,
                    };
                }
            }
            Op::Slice { x, axis, start } => {
                let (rows, cols) = val(*x).shape();
                let mut dx = Tensor::zeros(rows, cols);
                match axis {
                    Axis::Rows => {
                        dx.data_mut()[start * cols..start * cols + g.len()]
                            .copy_from_slice(g.data());
                    }
                    Axis::Cols => {
                        for r in 0..rows {
                            dx.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                        }
                    }
                }
                acc(grads, *x, dx);
            }
            Op::RowCombine { x, rows } => {
                let (n, cols) = val(*x).shape();
                let mut dx = Tensor::zeros(n, cols);
                for (i, terms) in rows.iter().enumerate() {
                    let gr = g.row(i);
                    for &(src, w) in terms {
                        for (d, &gv) in dx.row_mut(src).iter_mut().zip(gr) {
                            *d += w * gv;
                        }
                    }
                }
                acc(grads, *x, dx);
            }
            Op::SumAll(x) => {
                let (r, c) = val(*x).shape();
                acc(grads, *x, Tensor::filled(r, c, g.data()[0]));
            }
            Op::SumCols(x) => {
                let (r, c) = val(*x).shape();
                let mut dx = Tensor::zeros(r, c);
                for i in 0..r {
                    let gv = g.data()[i];
                    dx.row_mut(i).iter_mut().for_each(|d| *d = gv);
                }
                acc(grads, *x, dx);
            }
            Op::MulConst { x, mask } => {
                let mut dx = g.clone();
                for (d, m) in dx.data_mut().iter_mut().zip(mask.data()) {
                    *d *= m;
                }
                acc(grads, *x, dx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (rows, cols) = xhat.shape();
                let gam = val(*gamma).data();
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let gv = g.get(r, c);
                        dgamma[c] += gv * xhat.get(r, c);
                        dbeta[c] += gv;
                    }
                }
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(rows, cols);
                    if *batch_stats {
                        let n = rows as f64;
                        for r in 0..rows {
                            for c in 0..cols {
                                let dxhat = g.get(r, c) * gam[c];
                                let v = inv_std[c] / n
                                    * (n * dxhat
                                        - gam[c] * dbeta[c]
                                        - xhat.get(r, c) * gam[c] * dgamma[c]);
                                dx.set(r, c, v);
                            }
                        }
                    } else {
                        for r in 0..rows {
                            for c in 0..cols {
                                dx.set(r, c, g.get(r, c) * gam[c] * inv_std[c]);
                            }
                        }
                    }
                    acc(grads, *x, dx);
                }
                acc(grads, *gamma, Tensor::from_vec(1, cols, dgamma).expect("shape"));
                acc(grads, *beta, Tensor::from_vec(1, cols, dbeta).expect("shape"));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let n = targets.len() as f64;
                let scale = g.data()[0] / n;
                let mut dl = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    let row = dl.row_mut(r);
                    row[t] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                acc(grads, *logits, dl);
            }
        }
    }
}

/// Sums `f(i, g[i])` over the broadcast dimensions so the result has the
/// shape of the broadcast operand.
fn reduce_to(
    g: &Tensor,
    bc: Broadcast,
    shape: (usize, usize),
    f: impl Fn(usize, f64) -> f64,
) -> Tensor {
    let mut out = Tensor::zeros(shape.0, shape.1);
    let cols = g.cols();
    let od = out.data_mut();
    for (i, &gv) in g.data().iter().enumerate() {
        od[bc.index(i / cols, i % cols, shape.1)] += f(i, gv);
    }
    out
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
