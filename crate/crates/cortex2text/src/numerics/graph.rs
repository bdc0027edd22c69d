use super::tensor::{matmul_raw, Tensor};
use crate::error::{Error, Result};
use rand::Rng;

/// Node id within one computation graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Relu(Var),
    Softmax(Var),
    // Backward is identical to Softmax: masked positions have output 0, so
    // they drop out of the Jacobian-vector product on their own.
    SoftmaxMasked(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
    },
    GatherRows(Var, Vec<usize>),
    Mean(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        label_smoothing: f64,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Define-by-run reverse-mode autodiff tape.
///
/// A graph is built during one forward pass, consumed by one `backward`
/// call, and then dropped. Nodes only ever reference earlier nodes, so the
/// insertion order is a topological order and backward is a single reverse
/// sweep that visits each node exactly once.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass with respect to `v`, if any part
    /// of the loss depended on it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| {
            Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape mirrors value")
        })
    }

    pub fn grad_slice(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    // ── forward ops ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !ta.is_matrix() || !tb.is_matrix() || ta.cols() != tb.rows() {
            return Err(Error::ShapeMismatch(format!(
                "matmul {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let data = matmul_raw(ta.data(), tb.data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if !t.is_matrix() {
            return Err(Error::ShapeMismatch(format!("transpose {:?}", t.shape())));
        }
        let out = t.transposed();
        Ok(self.push(out, Op::Transpose(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !ta.same_shape(tb) {
            return Err(Error::ShapeMismatch(format!(
                "add {:?} + {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !ta.same_shape(tb) {
            return Err(Error::ShapeMismatch(format!(
                "mul {:?} * {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let data = t.data().iter().map(|v| v * factor).collect();
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Scale(x, factor)))
    }

    /// Broadcast-add a length-`n` row vector to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (&self.nodes[x.0].value, &self.nodes[row.0].value);
        let n = tx.cols();
        if tr.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "add_row {:?} + {:?}",
                tx.shape(),
                tr.shape()
            )));
        }
        let m = tx.rows();
        let mut data = tx.data().to_vec();
        for i in 0..m {
            for (d, r) in data[i * n..(i + 1) * n].iter_mut().zip(tr.data()) {
                *d += r;
            }
        }
        let shape = tx.shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::AddRow(x, row)))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let data = t.data().iter().map(|v| v.max(0.0)).collect();
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Relu(x)))
    }

    /// Row-wise softmax over the last axis, with max-subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if !t.all_finite() {
            return Err(Error::NonFiniteInput);
        }
        let out = softmax_forward(t, None)?;
        Ok(self.push(out, Op::Softmax(x)))
    }

    /// Row-wise softmax where `mask[i][j] == false` forbids column `j` in
    /// row `i`. A row with no allowed columns is an error.
    pub fn softmax_masked(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if !t.all_finite() {
            return Err(Error::NonFiniteInput);
        }
        if mask.len() != t.len() {
            return Err(Error::ShapeMismatch("mask length".into()));
        }
        let out = softmax_forward(t, Some(mask))?;
        Ok(self.push(out, Op::SoftmaxMasked(x)))
    }

    /// Per-row layer normalization over the last axis:
    /// `gain * (x - mean) / sqrt(var + eps) + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (
            &self.nodes[x.0].value,
            &self.nodes[gain.0].value,
            &self.nodes[bias.0].value,
        );
        let n = tx.cols();
        if tg.len() != n || tb.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "layer_norm {:?}, gain {:?}, bias {:?}",
                tx.shape(),
                tg.shape(),
                tb.shape()
            )));
        }
        if eps <= 0.0 {
            return Err(Error::InvalidConfig("layer_norm eps must be > 0".into()));
        }
        let m = tx.rows();
        let mut data = vec![0.0; tx.len()];
        for i in 0..m {
            let row = &tx.data()[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                data[i * n + j] = tg.data()[j] * (row[j] - mean) * inv + tb.data()[j];
            }
        }
        let shape = tx.shape().to_vec();
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::LayerNorm { x, gain, bias, eps },
        ))
    }

    /// Concatenate matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::ShapeMismatch("concat_cols of nothing".into()));
        }
        let m = self.nodes[parts[0].0].value.rows();
        let mut total = 0;
        for p in parts {
            let t = &self.nodes[p.0].value;
            if t.rows() != m {
                return Err(Error::ShapeMismatch("concat_cols row counts differ".into()));
            }
            total += t.cols();
        }
        let mut data = vec![0.0; m * total];
        let mut offset = 0;
        for p in parts {
            let t = &self.nodes[p.0].value;
            let c = t.cols();
            for i in 0..m {
                data[i * total + offset..i * total + offset + c]
                    .copy_from_slice(&t.data()[i * c..(i + 1) * c]);
            }
            offset += c;
        }
        Ok(self.push(Tensor::new(vec![m, total], data)?, Op::ConcatCols(parts.to_vec())))
    }

    /// Select `len` columns starting at `start`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let (m, c) = (t.rows(), t.cols());
        if start + len > c {
            return Err(Error::ShapeMismatch(format!(
                "slice_cols {}..{} of {} columns",
                start,
                start + len,
                c
            )));
        }
        let mut data = vec![0.0; m * len];
        for i in 0..m {
            data[i * len..(i + 1) * len]
                .copy_from_slice(&t.data()[i * c + start..i * c + start + len]);
        }
        Ok(self.push(Tensor::new(vec![m, len], data)?, Op::SliceCols { x, start, len }))
    }

    /// Gather rows of `table` by index (embedding lookup). Backward
    /// scatter-adds into the table gradient.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = &self.nodes[table.0].value;
        let (rows, c) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= rows {
                return Err(Error::UnknownTokenId(id as u32));
            }
            data.extend_from_slice(&t.data()[id * c..(id + 1) * c]);
        }
        Ok(self.push(
            Tensor::new(vec![ids.len(), c], data)?,
            Op::GatherRows(table, ids.to_vec()),
        ))
    }

    /// Mean over all entries, producing a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if t.is_empty() {
            return Err(Error::ShapeMismatch("mean of empty tensor".into()));
        }
        let v = t.data().iter().sum::<f64>() / t.len() as f64;
        Ok(self.push(Tensor::scalar(v), Op::Mean(x)))
    }

    /// Sum over all entries, producing a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let v = t.data().iter().sum::<f64>();
        Ok(self.push(Tensor::scalar(v), Op::Sum(x)))
    }

    /// Weighted mean cross-entropy from logits.
    ///
    /// `weights[s] == 0` drops row `s` from the loss entirely (used for pad
    /// positions); the mean is over the total weight. `label_smoothing`
    /// mixes the one-hot target with the uniform distribution.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
        label_smoothing: f64,
    ) -> Result<Var> {
        let t = &self.nodes[logits.0].value;
        let (s, v) = (t.rows(), t.cols());
        if targets.len() != s || weights.len() != s {
            return Err(Error::ShapeMismatch(format!(
                "cross_entropy: {} logit rows, {} targets, {} weights",
                s,
                targets.len(),
                weights.len()
            )));
        }
        let wsum: f64 = weights.iter().sum();
        if wsum <= 0.0 {
            return Err(Error::ShapeMismatch(
                "cross_entropy: total weight must be positive".into(),
            ));
        }
        let mut loss = 0.0;
        for i in 0..s {
            if weights[i] == 0.0 {
                continue;
            }
            if targets[i] >= v {
                return Err(Error::UnknownTokenId(targets[i] as u32));
            }
            let row = t.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            let mut ce = -(1.0 - label_smoothing) * (row[targets[i]] - lse);
            if label_smoothing > 0.0 {
                let uniform: f64 = row.iter().map(|x| x - lse).sum::<f64>() / v as f64;
                ce -= label_smoothing * uniform;
            }
            loss += weights[i] * ce;
        }
        Ok(self.push(
            Tensor::scalar(loss / wsum),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                label_smoothing,
            },
        ))
    }

    /// Inverted dropout built from a seeded mask constant; identity at p = 0.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p == 0.0 {
            return Ok(x);
        }
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("dropout p = {p}")));
        }
        let t = &self.nodes[x.0].value;
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let shape = t.shape().to_vec();
        let mask_var = self.leaf(Tensor::new(shape, mask)?);
        self.mul(x, mask_var)
    }

    // ── backward ─────────────────────────────────────────────────────

    fn accumulate(&mut self, v: Var, delta: &[f64]) {
        let node = &mut self.nodes[v.0];
        let grad = node
            .grad
            .get_or_insert_with(|| vec![0.0; node.value.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    /// Reverse sweep from a scalar loss. Each node is visited exactly once,
    /// in reverse insertion order.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::ShapeMismatch("backward from non-scalar".into()));
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            let Some(grad) = self.nodes[i].grad.clone() else {
                continue;
            };
            // Ops only reference earlier nodes, so accumulation below never
            // touches an index >= i.
            match &self.nodes[i].op {
                Op::Leaf => {}
                &Op::MatMul(a, b) => {
                    let ta = self.nodes[a.0].value.clone();
                    let tb = self.nodes[b.0].value.clone();
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    let da = matmul_raw(&grad, tb.transposed().data(), m, n, k);
                    let db = matmul_raw(ta.transposed().data(), &grad, k, m, n);
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                &Op::Transpose(x) => {
                    let (r, c) = {
                        let t = &self.nodes[i].value;
                        (t.rows(), t.cols())
                    };
                    let mut dx = vec![0.0; grad.len()];
                    for p in 0..r {
                        for q in 0..c {
                            dx[q * r + p] = grad[p * c + q];
                        }
                    }
                    self.accumulate(x, &dx);
                }
                &Op::Add(a, b) => {
                    self.accumulate(a, &grad);
                    self.accumulate(b, &grad);
                }
                &Op::Mul(a, b) => {
                    let ta = self.nodes[a.0].value.data().to_vec();
                    let tb = self.nodes[b.0].value.data().to_vec();
                    let da: Vec<f64> = grad.iter().zip(&tb).map(|(g, y)| g * y).collect();
                    let db: Vec<f64> = grad.iter().zip(&ta).map(|(g, x)| g * x).collect();
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                &Op::Scale(x, factor) => {
                    let dx: Vec<f64> = grad.iter().map(|g| g * factor).collect();
                    self.accumulate(x, &dx);
                }
                &Op::AddRow(x, row) => {
                    let n = self.nodes[row.0].value.len();
                    let mut drow = vec![0.0; n];
                    for chunk in grad.chunks(n) {
                        for (d, g) in drow.iter_mut().zip(chunk) {
                            *d += g;
                        }
                    }
                    self.accumulate(x, &grad);
                    self.accumulate(row, &drow);
                }
                &Op::Relu(x) => {
                    let input = self.nodes[x.0].value.data().to_vec();
                    let dx: Vec<f64> = grad
                        .iter()
                        .zip(&input)
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.accumulate(x, &dx);
                }
                Op::Softmax(x) | Op::SoftmaxMasked(x) => {
                    let x = *x;
                    let out = self.nodes[i].value.clone();
                    let (m, n) = (out.rows(), out.cols());
                    let mut dx = vec![0.0; out.len()];
                    for r in 0..m {
                        let s = &out.data()[r * n..(r + 1) * n];
                        let g = &grad[r * n..(r + 1) * n];
                        let dot: f64 = s.iter().zip(g).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dx[r * n + j] = s[j] * (g[j] - dot);
                        }
                    }
                    self.accumulate(x, &dx);
                }
                &Op::LayerNorm { x, gain, bias, eps } => {
                    let tx = self.nodes[x.0].value.clone();
                    let tg = self.nodes[gain.0].value.clone();
                    let (m, n) = (tx.rows(), tx.cols());
                    let nf = n as f64;
                    let mut dx = vec![0.0; tx.len()];
                    let mut dgain = vec![0.0; n];
                    let mut dbias = vec![0.0; n];
                    for r in 0..m {
                        let row = &tx.data()[r * n..(r + 1) * n];
                        let g = &grad[r * n..(r + 1) * n];
                        let mean = row.iter().sum::<f64>() / nf;
                        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                        let dxhat: Vec<f64> =
                            g.iter().zip(tg.data()).map(|(gv, gn)| gv * gn).collect();
                        let sum_dxhat: f64 = dxhat.iter().sum();
                        let sum_dxhat_xhat: f64 =
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dgain[j] += g[j] * xhat[j];
                            dbias[j] += g[j];
                            dx[r * n + j] = inv / nf
                                * (nf * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                        }
                    }
                    self.accumulate(x, &dx);
                    self.accumulate(gain, &dgain);
                    self.accumulate(bias, &dbias);
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let total = self.nodes[i].value.cols();
                    let m = self.nodes[i].value.rows();
                    let mut offset = 0;
                    for p in parts {
                        let c = self.nodes[p.0].value.cols();
                        let mut dp = vec![0.0; m * c];
                        for r in 0..m {
                            dp[r * c..(r + 1) * c]
                                .copy_from_slice(&grad[r * total + offset..r * total + offset + c]);
                        }
                        self.accumulate(p, &dp);
                        offset += c;
                    }
                }
                &Op::SliceCols { x, start, len } => {
                    let t = &self.nodes[x.0].value;
                    let (m, c) = (t.rows(), t.cols());
                    let mut dx = vec![0.0; t.len()];
                    for r in 0..m {
                        dx[r * c + start..r * c + start + len]
                            .copy_from_slice(&grad[r * len..(r + 1) * len]);
                    }
                    self.accumulate(x, &dx);
                }
                Op::GatherRows(table, ids) => {
                    let table = *table;
                    let ids = ids.clone();
                    let c = self.nodes[table.0].value.cols();
                    let mut dt = vec![0.0; self.nodes[table.0].value.len()];
                    for (s, &id) in ids.iter().enumerate() {
                        for j in 0..c {
                            dt[id * c + j] += grad[s * c + j];
                        }
                    }
                    self.accumulate(table, &dt);
                }
                &Op::Mean(x) => {
                    let n = self.nodes[x.0].value.len() as f64;
                    let dx = vec![grad[0] / n; self.nodes[x.0].value.len()];
                    self.accumulate(x, &dx);
                }
                &Op::Sum(x) => {
                    let dx = vec![grad[0]; self.nodes[x.0].value.len()];
                    self.accumulate(x, &dx);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    label_smoothing,
                } => {
                    let logits = *logits;
                    let targets = targets.clone();
                    let weights = weights.clone();
                    let ls = *label_smoothing;
                    let t = self.nodes[logits.0].value.clone();
                    let (s, v) = (t.rows(), t.cols());
                    let wsum: f64 = weights.iter().sum();
                    let gout = grad[0];
                    let mut dl = vec![0.0; t.len()];
                    for r in 0..s {
                        if weights[r] == 0.0 {
                            continue;
                        }
                        let row = t.row(r);
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
                        let z: f64 = exps.iter().sum();
                        let scale = gout * weights[r] / wsum;
                        for j in 0..v {
                            let p = exps[j] / z;
                            let y = if j == targets[r] { 1.0 - ls } else { 0.0 } + ls / v as f64;
                            dl[r * v + j] = scale * (p - y);
                        }
                    }
                    self.accumulate(logits, &dl);
                }
            }
        }
        Ok(())
    }
}

fn softmax_forward(t: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    let (m, n) = (t.rows(), t.cols());
    let mut data = vec![0.0; t.len()];
    for i in 0..m {
        let row = &t.data()[i * n..(i + 1) * n];
        let allowed = |j: usize| mask.is_none_or(|mk| mk[i * n + j]);
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            if allowed(j) && row[j] > max {
                max = row[j];
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::NoAttendableKeys);
        }
        let mut sum = 0.0;
        for j in 0..n {
            let e = if allowed(j) { (row[j] - max).exp() } else { 0.0 };
            data[i * n + j] = e;
            sum += e;
        }
        for j in 0..n {
            data[i * n + j] /= sum;
        }
    }
    Tensor::new(t.shape().to_vec(), data)
}
