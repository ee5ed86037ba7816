//! Reverse-mode differentiation over small dense matrices.
//!
//! Every node stores its forward value. `backward` walks the tape in reverse
//! and returns one gradient per node.

use super::ToyError;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape does not match data length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Self {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols);
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn scalar(&self) -> f64 {
        assert_eq!(self.data.len(), 1);
        self.data[0]
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    VStack(Vec<Var>),
    Interleave(Vec<Var>),
    ExpandAdd(Var, Var, usize),
    Reshape(Var),
    MaskedSoftmax(Var),
    WeightedSum(Var, Var),
    AdditiveEnergy(AdditiveEnergy),
    MaskedMse(Var, Tensor, Vec<bool>),
    MaskedBceLogits(Var, Vec<f64>, Vec<bool>),
}

#[derive(Debug)]
struct AdditiveEnergy {
    keys: Var,
    q: Var,
    bias: Var,
    v: Var,
    mask: Vec<bool>,
    hidden: Vec<f64>,
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn tanh_all(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(x)) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Inputs and parameters both enter as leaves.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.cols, y.rows, "matmul inner dimensions");
        let (r, k, c) = (x.rows, x.cols, y.cols);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let o = &mut out[i * c..(i + 1) * c];
            for p in 0..k {
                let a_ip = x.data[i * k + p];
                if a_ip == 0.0 {
                    continue;
                }
                for (o_j, b_pj) in o.iter_mut().zip(&y.data[p * c..(p + 1) * c]) {
                    *o_j += a_ip * b_pj;
                }
            }
        }
        self.push(Tensor::from_vec(r, c, out), Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "add shapes");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        self.push(Tensor::from_vec(x.rows, x.cols, data), Op::Add(a, b))
    }

    /// Adds a 1×C row to every row of an R×C matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (x, b) = (self.value(a), self.value(bias));
        assert_eq!((b.rows, b.cols), (1, x.cols), "bias shape");
        let mut data = x.data.clone();
        for row in data.chunks_mut(x.cols.max(1)) {
            for (v, bv) in row.iter_mut().zip(&b.data) {
                *v += bv;
            }
        }
        self.push(Tensor::from_vec(x.rows, x.cols, data), Op::AddRow(a, bias))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "mul shapes");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        self.push(Tensor::from_vec(x.rows, x.cols, data), Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let x = self.value(a);
        let data = x.data.iter().map(|v| v * k).collect();
        self.push(Tensor::from_vec(x.rows, x.cols, data), Op::Scale(a, k))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::from_vec(x.rows, x.cols, tanh_all(&x.data));
        self.push(t, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|&v| logistic(v)).collect());
        self.push(t, Op::Sigmoid(a))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows, rows, "concat row counts");
                data.extend_from_slice(t.row(r));
            }
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatCols(parts.to_vec()))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        assert!(start <= end && end <= x.cols, "slice bounds");
        let mut data = Vec::with_capacity(x.rows * (end - start));
        for r in 0..x.rows {
            data.extend_from_slice(&x.row(r)[start..end]);
        }
        self.push(Tensor::from_vec(x.rows, end - start, data), Op::SliceCols(a, start))
    }

    /// Row lookup into a table (embedding layer).
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let t = self.value(table);
        let mut data = Vec::with_capacity(idx.len() * t.cols);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_vec(idx.len(), t.cols, data);
        self.push(out, Op::GatherRows(table, idx.to_vec()))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols, "vstack column counts");
            data.extend_from_slice(&t.data);
            rows += t.rows;
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::VStack(parts.to_vec()))
    }

    /// Given N matrices of shape B×D, returns the (B·N)×D matrix whose row
    /// `b·N + n` is row `b` of part `n`.
    pub fn interleave(&mut self, parts: &[Var]) -> Var {
        let n = parts.len();
        let (b, d) = {
            let t = self.value(parts[0]);
            (t.rows, t.cols)
        };
        let mut data = vec![0.0; b * n * d];
        for (k, &p) in parts.iter().enumerate() {
            let t = self.value(p);
            assert_eq!((t.rows, t.cols), (b, d), "interleave shapes");
            for r in 0..b {
                let dst = (r * n + k) * d;
                data[dst..dst + d].copy_from_slice(t.row(r));
            }
        }
        self.push(Tensor::from_vec(b * n, d, data), Op::Interleave(parts.to_vec()))
    }

    /// `keys` is (B·N)×D and `q` is B×D; adds row `b` of `q` to the N rows of
    /// block `b`.
    pub fn expand_add(&mut self, keys: Var, q: Var, n: usize) -> Var {
        let (k, qv) = (self.value(keys), self.value(q));
        assert_eq!(k.cols, qv.cols, "expand_add widths");
        assert_eq!(k.rows, qv.rows * n, "expand_add rows");
        let mut data = k.data.clone();
        let d = k.cols;
        for (r, row) in data.chunks_mut(d.max(1)).enumerate() {
            for (v, qq) in row.iter_mut().zip(qv.row(r / n)) {
                *v += qq;
            }
        }
        self.push(Tensor::from_vec(k.rows, d, data), Op::ExpandAdd(keys, q, n))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.len(), rows * cols, "reshape size");
        let t = Tensor::from_vec(rows, cols, x.data.clone());
        self.push(t, Op::Reshape(a))
    }

    /// Row-wise softmax restricted to entries where `mask` is true; masked
    /// entries come out exactly 0. Rows with no valid entry are all zero.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Var {
        let x = self.value(a);
        assert_eq!(mask.len(), x.len(), "softmax mask size");
        let mut data = vec![0.0; x.len()];
        let c = x.cols;
        for r in 0..x.rows {
            let row = x.row(r);
            let m = &mask[r * c..(r + 1) * c];
            let peak = row
                .iter()
                .zip(m)
                .filter(|(_, &ok)| ok)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if peak == f64::NEG_INFINITY {
                continue;
            }
            let out = &mut data[r * c..(r + 1) * c];
            let mut sum = 0.0;
            for j in 0..c {
                if m[j] {
                    out[j] = (row[j] - peak).exp();
                    sum += out[j];
                }
            }
            out.iter_mut().for_each(|v| *v /= sum);
        }
        let t = Tensor::from_vec(x.rows, c, data);
        self.push(t, Op::MaskedSoftmax(a))
    }

    /// `alpha` is B×N and `mem` is (B·N)×D; row `b` of the result is
    /// Σ_n alpha[b,n] · mem[b·N+n].
    pub fn weighted_sum(&mut self, alpha: Var, mem: Var) -> Var {
        let (al, m) = (self.value(alpha), self.value(mem));
        let (b, n, d) = (al.rows, al.cols, m.cols);
        assert_eq!(m.rows, b * n, "weighted_sum rows");
        let mut data = vec![0.0; b * d];
        for r in 0..b {
            let out = &mut data[r * d..(r + 1) * d];
            for k in 0..n {
                let w = al.data[r * n + k];
                if w == 0.0 {
                    continue;
                }
                for (o, v) in out.iter_mut().zip(m.row(r * n + k)) {
                    *o += w * v;
                }
            }
        }
        self.push(Tensor::from_vec(b, d, data), Op::WeightedSum(alpha, mem))
    }

    /// Additive attention energies in one node:
    /// `e[b, n] = v · tanh(keys[b·N+n] + q[b] + bias)` for unmasked tokens,
    /// 0 for masked ones. `keys` is (B·N)×D, `q` is B×D, `bias` 1×D, `v` D×1;
    /// the result is B×N.
    pub fn additive_energy(&mut self, keys: Var, q: Var, bias: Var, v: Var, mask: &[bool]) -> Var {
        let (k, qv, bv, vv) = (self.value(keys), self.value(q), self.value(bias), self.value(v));
        let (b, d) = (qv.rows, qv.cols);
        assert_eq!(k.cols, d, "energy key width");
        assert_eq!((bv.rows, bv.cols, vv.rows, vv.cols), (1, d, d, 1), "energy parameter shapes");
        assert_eq!(k.rows % b.max(1), 0, "energy key rows");
        let n = k.rows / b.max(1);
        assert_eq!(mask.len(), k.rows, "energy mask");
        let mut hidden = vec![0.0; k.rows * d];
        let mut e = vec![0.0; k.rows];
        for r in (0..k.rows).filter(|&r| mask[r]) {
            let qr = qv.row(r / n);
            let h = &mut hidden[r * d..(r + 1) * d];
            let mut acc = 0.0;
            for j in 0..d {
                h[j] = (k.data[r * d + j] + qr[j] + bv.data[j]).tanh();
                acc += h[j] * vv.data[j];
            }
            e[r] = acc;
        }
        let op = Op::AdditiveEnergy(AdditiveEnergy {
            keys,
            q,
            bias,
            v,
            mask: mask.to_vec(),
            hidden,
        });
        self.push(Tensor::from_vec(b, n, e), op)
    }

    /// Mean squared error over the elements of rows where `row_mask` is true.
    pub fn masked_mse(&mut self, pred: Var, target: Tensor, row_mask: &[bool]) -> Var {
        let p = self.value(pred);
        assert_eq!((p.rows, p.cols), (target.rows, target.cols), "mse shapes");
        assert_eq!(row_mask.len(), p.rows, "mse mask");
        let valid = row_mask.iter().filter(|&&m| m).count();
        let denom = (valid * p.cols).max(1) as f64;
        let mut sum = 0.0;
        for r in (0..p.rows).filter(|&r| row_mask[r]) {
            for (a, b) in p.row(r).iter().zip(target.row(r)) {
                sum += (a - b) * (a - b);
            }
        }
        let out = Tensor::from_vec(1, 1, vec![sum / denom]);
        self.push(out, Op::MaskedMse(pred, target, row_mask.to_vec()))
    }

    /// Binary cross-entropy of logistic(logits) against targets, averaged
    /// over entries where `mask` is true. Computed on logits for stability.
    pub fn masked_bce_logits(&mut self, logits: Var, targets: &[f64], mask: &[bool]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.len(), targets.len(), "bce targets");
        assert_eq!(z.len(), mask.len(), "bce mask");
        let valid = mask.iter().filter(|&&m| m).count().max(1) as f64;
        let sum: f64 = z
            .data
            .iter()
            .zip(targets)
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((&x, &y), _)| softplus(x) - y * x)
            .sum();
        let out = Tensor::from_vec(1, 1, vec![sum / valid]);
        self.push(out, Op::MaskedBceLogits(logits, targets.to_vec(), mask.to_vec()))
    }

    /// Gradient of the 1×1 node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Vec<Tensor>, ToyError> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| ToyError::GraphConsistency(format!("node {} is not on this tape", loss.0)))?;
        if node.value.len() != 1 {
            return Err(ToyError::GraphConsistency(format!(
                "backward needs a scalar, got {}×{}",
                node.value.rows, node.value.cols
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_vec(1, 1, vec![1.0]));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.unwrap_or_else(|| Tensor::zeros(n.value.rows, n.value.cols)))
            .chain(self.nodes[loss.0 + 1..].iter().map(|n| Tensor::zeros(n.value.rows, n.value.cols)))
            .collect())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let shape = &self.nodes[v.0].value;
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.rows, shape.cols));
            f(&mut slot.data);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (r, k, c) = (x.rows, x.cols, y.cols);
                acc(*a, &mut |ga| {
                    for i in 0..r {
                        let gi = &g.data[i * c..(i + 1) * c];
                        for p in 0..k {
                            let bp = &y.data[p * c..(p + 1) * c];
                            ga[i * k + p] += gi.iter().zip(bp).map(|(u, v)| u * v).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..r {
                        let gi = &g.data[i * c..(i + 1) * c];
                        for p in 0..k {
                            let a_ip = x.data[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            for (o, u) in gb[p * c..(p + 1) * c].iter_mut().zip(gi) {
                                *o += a_ip * u;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(&g.data).for_each(|(o, u)| *o += u));
                acc(*b, &mut |gb| gb.iter_mut().zip(&g.data).for_each(|(o, u)| *o += u));
            }
            Op::AddRow(a, bias) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(&g.data).for_each(|(o, u)| *o += u));
                let c = g.cols;
                acc(*bias, &mut |gb| {
                    for row in g.data.chunks(c.max(1)) {
                        gb.iter_mut().zip(row).for_each(|(o, u)| *o += u);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                acc(*a, &mut |ga| {
                    for ((o, u), v) in ga.iter_mut().zip(&g.data).zip(&y.data) {
                        *o += u * v;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, u), v) in gb.iter_mut().zip(&g.data).zip(&x.data) {
                        *o += u * v;
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |ga| ga.iter_mut().zip(&g.data).for_each(|(o, u)| *o += k * u)),
            Op::Tanh(a) => acc(*a, &mut |ga| {
                for ((o, u), y) in ga.iter_mut().zip(&g.data).zip(&out.data) {
                    *o += u * (1.0 - y * y);
                }
            }),
            Op::Sigmoid(a) => acc(*a, &mut |ga| {
                for ((o, u), y) in ga.iter_mut().zip(&g.data).zip(&out.data) {
                    *o += u * y * (1.0 - y);
                }
            }),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols;
                    acc(p, &mut |gp| {
                        for r in 0..g.rows {
                            let src = &g.row(r)[offset..offset + w];
                            gp[r * w..(r + 1) * w].iter_mut().zip(src).for_each(|(o, u)| *o += u);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let c = self.value(*a).cols;
                let w = g.cols;
                acc(*a, &mut |ga| {
                    for r in 0..g.rows {
                        let dst = &mut ga[r * c + start..r * c + start + w];
                        dst.iter_mut().zip(g.row(r)).for_each(|(o, u)| *o += u);
                    }
                });
            }
            Op::GatherRows(table, idx) => {
                let c = g.cols;
                acc(*table, &mut |gt| {
                    for (r, &i) in idx.iter().enumerate() {
                        gt[i * c..(i + 1) * c].iter_mut().zip(g.row(r)).for_each(|(o, u)| *o += u);
                    }
                });
            }
            Op::VStack(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    acc(p, &mut |gp| {
                        gp.iter_mut().zip(&g.data[offset..offset + n]).for_each(|(o, u)| *o += u);
                    });
                    offset += n;
                }
            }
            Op::Interleave(parts) => {
                let n = parts.len();
                let d = g.cols;
                for (k, &p) in parts.iter().enumerate() {
                    let b = self.value(p).rows;
                    acc(p, &mut |gp| {
                        for r in 0..b {
                            let src = g.row(r * n + k);
                            gp[r * d..(r + 1) * d].iter_mut().zip(src).for_each(|(o, u)| *o += u);
                        }
                    });
                }
            }
            Op::ExpandAdd(keys, q, n) => {
                acc(*keys, &mut |gk| gk.iter_mut().zip(&g.data).for_each(|(o, u)| *o += u));
                let d = g.cols;
                acc(*q, &mut |gq| {
                    for r in 0..g.rows {
                        let b = r / n;
                        gq[b * d..(b + 1) * d].iter_mut().zip(g.row(r)).for_each(|(o, u)| *o += u);
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |ga| ga.iter_mut().zip(&g.data).for_each(|(o, u)| *o += u)),
            Op::MaskedSoftmax(a) => {
                // Masked entries have y = 0, so their gradient vanishes too.
                let c = out.cols;
                acc(*a, &mut |ga| {
                    for r in 0..out.rows {
                        let y = out.row(r);
                        let gr = g.row(r);
                        let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..c {
                            ga[r * c + j] += y[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::WeightedSum(alpha, mem) => {
                let (al, m) = (self.value(*alpha), self.value(*mem));
                let (b, n, d) = (al.rows, al.cols, m.cols);
                acc(*alpha, &mut |ga| {
                    for r in 0..b {
                        let gr = g.row(r);
                        for k in 0..n {
                            ga[r * n + k] += gr.iter().zip(m.row(r * n + k)).map(|(u, v)| u * v).sum::<f64>();
                        }
                    }
                });
                acc(*mem, &mut |gm| {
                    for r in 0..b {
                        let gr = g.row(r);
                        for k in 0..n {
                            let w = al.data[r * n + k];
                            if w == 0.0 {
                                continue;
                            }
                            let row = (r * n + k) * d;
                            gm[row..row + d].iter_mut().zip(gr).for_each(|(o, u)| *o += w * u);
                        }
                    }
                });
            }
            Op::AdditiveEnergy(ae) => {
                let d = self.value(ae.q).cols;
                let n = out.cols;
                let vv = &self.value(ae.v).data;
                let rows = ae.mask.len();
                let mut gpre = vec![0.0; rows * d];
                let mut gv = vec![0.0; d];
                for r in (0..rows).filter(|&r| ae.mask[r]) {
                    let gr = g.data[r];
                    if gr == 0.0 {
                        continue;
                    }
                    let h = &ae.hidden[r * d..(r + 1) * d];
                    for j in 0..d {
                        gv[j] += gr * h[j];
                        gpre[r * d + j] = gr * vv[j] * (1.0 - h[j] * h[j]);
                    }
                }
                acc(ae.v, &mut |o| o.iter_mut().zip(&gv).for_each(|(a, b)| *a += b));
                acc(ae.keys, &mut |o| o.iter_mut().zip(&gpre).for_each(|(a, b)| *a += b));
                acc(ae.q, &mut |o| {
                    for (r, row) in gpre.chunks(d.max(1)).enumerate() {
                        let b = r / n;
                        o[b * d..(b + 1) * d].iter_mut().zip(row).for_each(|(a, x)| *a += x);
                    }
                });
                acc(ae.bias, &mut |o| {
                    for row in gpre.chunks(d.max(1)) {
                        o.iter_mut().zip(row).for_each(|(a, x)| *a += x);
                    }
                });
            }
            Op::MaskedMse(pred, target, row_mask) => {
                let p = self.value(*pred);
                let valid = row_mask.iter().filter(|&&m| m).count();
                let k = 2.0 * g.scalar() / (valid * p.cols).max(1) as f64;
                let c = p.cols;
                acc(*pred, &mut |gp| {
                    for r in (0..p.rows).filter(|&r| row_mask[r]) {
                        for j in 0..c {
                            gp[r * c + j] += k * (p.data[r * c + j] - target.data[r * c + j]);
                        }
                    }
                });
            }
            Op::MaskedBceLogits(logits, targets, mask) => {
                let z = self.value(*logits);
                let valid = mask.iter().filter(|&&m| m).count().max(1) as f64;
                let k = g.scalar() / valid;
                acc(*logits, &mut |gz| {
                    for (j, o) in gz.iter_mut().enumerate() {
                        if mask[j] {
                            *o += k * (logistic(z.data[j]) - targets[j]);
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random(rng: &mut SeededRng, rows: usize, cols: usize) -> Tensor {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
    }

    /// Checks every leaf's gradient against central differences.
    fn check(leaves: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Var) {
        let eval = |vals: &[Tensor]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
            let out = build(&mut tape, &vars);
            (tape, vars, out)
        };
        let (tape, vars, out) = eval(&leaves);
        let grads = tape.backward(out).unwrap();
        let eps = 1e-6;
        for (li, leaf) in leaves.iter().enumerate() {
            for e in 0..leaf.len() {
                let mut plus = leaves.clone();
                plus[li].data[e] += eps;
                let mut minus = leaves.clone();
                minus[li].data[e] -= eps;
                let (tp, _, op) = eval(&plus);
                let (tm, _, om) = eval(&minus);
                let numeric = (tp.value(op).scalar() - tm.value(om).scalar()) / (2.0 * eps);
                let analytic = grads[vars[li].0].data[e];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(rel < 1e-5 || (analytic - numeric).abs() < 1e-9, "leaf {li}[{e}]: {analytic} vs {numeric}");
            }
        }
    }

    #[test]
    fn matmul_bias_tanh_mse() {
        let mut rng = SeededRng::new(1);
        let target = random(&mut rng, 3, 2);
        check(vec![random(&mut rng, 3, 4), random(&mut rng, 4, 2), random(&mut rng, 1, 2)], move |t, v| {
            let m = t.matmul(v[0], v[1]);
            let b = t.add_row(m, v[2]);
            let h = t.tanh(b);
            t.masked_mse(h, target.clone(), &[true, false, true])
        });
    }

    #[test]
    fn attention_ops() {
        let mut rng = SeededRng::new(2);
        let target = random(&mut rng, 2, 3);
        let mask = vec![true, true, true, true, true, false];
        check(vec![random(&mut rng, 6, 3), random(&mut rng, 2, 3), random(&mut rng, 3, 1)], move |t, v| {
            let e = t.expand_add(v[0], v[1], 3);
            let e = t.tanh(e);
            let s = t.matmul(e, v[2]);
            let s = t.reshape(s, 2, 3);
            let a = t.masked_softmax(s, &mask);
            let c = t.weighted_sum(a, v[0]);
            t.masked_mse(c, target.clone(), &[true, true])
        });
    }

    #[test]
    fn fused_energy_matches_composed_ops() {
        let mut rng = SeededRng::new(5);
        let leaves = vec![random(&mut rng, 6, 3), random(&mut rng, 2, 3), random(&mut rng, 1, 3), random(&mut rng, 3, 1)];
        let mask = vec![true, true, false, true, true, true];
        let m2 = mask.clone();
        check(leaves.clone(), move |t, v| {
            let e = t.additive_energy(v[0], v[1], v[2], v[3], &m2);
            let a = t.masked_softmax(e, &m2);
            let c = t.weighted_sum(a, v[0]);
            let w = t.sigmoid(c);
            t.masked_bce_logits(w, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0], &[true; 6])
        });
        let mut t = Tape::new();
        let v: Vec<Var> = leaves.iter().map(|x| t.leaf(x.clone())).collect();
        let fused = t.additive_energy(v[0], v[1], v[2], v[3], &mask);
        let e = t.expand_add(v[0], v[1], 3);
        let e = t.add_row(e, v[2]);
        let e = t.tanh(e);
        let e = t.matmul(e, v[3]);
        let composed = t.reshape(e, 2, 3);
        for (i, (a, b)) in t.value(fused).data.iter().zip(&t.value(composed).data).enumerate() {
            if mask[i] {
                assert!((a - b).abs() < 1e-15);
            } else {
                assert_eq!(*a, 0.0);
            }
        }
    }

    #[test]
    fn structural_ops_and_bce() {
        let mut rng = SeededRng::new(3);
        check(vec![random(&mut rng, 2, 2), random(&mut rng, 2, 3), random(&mut rng, 4, 3)], |t, v| {
            let c = t.concat_cols(&[v[0], v[1]]);
            let s = t.slice_cols(c, 1, 4);
            let g = t.gather_rows(v[2], &[3, 0]);
            let m = t.mul(s, g);
            let st = t.vstack(&[m, g]);
            let il = t.interleave(&[m, g]);
            let sum = t.add(st, il);
            let sc = t.scale(sum, 0.7);
            let sg = t.sigmoid(sc);
            let col = t.slice_cols(sg, 0, 1);
            let z = t.add(col, col);
            t.masked_bce_logits(z, &[0.0, 1.0, 1.0, 0.0], &[true, true, false, true])
        });
    }

    #[test]
    fn softmax_masking() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 0.0, 0.0, 5.0]));
        let y = t.masked_softmax(x, &[true, true, false, true, true, false]);
        let v = t.value(y);
        assert_eq!(v.data[2], 0.0);
        assert!((v.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(v.row(1), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(2, 2));
        assert!(matches!(t.backward(x), Err(ToyError::GraphConsistency(_))));
        assert!(matches!(t.backward(Var(9)), Err(ToyError::GraphConsistency(_))));
    }
}
