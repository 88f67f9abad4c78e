use std::collections::BTreeMap;

use crate::params::ParameterSet;
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::{NdError, Result};

/// Handle to a node on a [`Tape`].
pub type Var = usize;

/// Logit offset used to silence masked entries before row normalization.
pub const MASK_OFFSET: f64 = -1.0e30;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// a[BxK] + row[1xK], broadcast over rows.
    AddRow(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Reshape(Var),
    ConcatCols(Var, Var),
    GatherRows {
        table: Var,
        idx: Vec<usize>,
    },
    SumAll(Var),
    /// [G*k x C] -> [G x C], each output row the sum of k consecutive inputs.
    SumGroupRows {
        a: Var,
        k: usize,
    },
    PickPerRow {
        a: Var,
        idx: Vec<usize>,
    },
    WeightRows {
        a: Var,
        w: Vec<f64>,
    },
    LogSoftmaxRows {
        a: Var,
        mask: Option<Vec<bool>>,
    },
    /// Per-row -log softmax(logits)[label]; masked entries get zero probability.
    XentRows {
        logits: Var,
        labels: Vec<usize>,
        mask: Option<Vec<bool>>,
    },
    /// Per-row Shannon entropy of softmax(logits) over unmasked entries.
    EntropyRows {
        logits: Var,
        mask: Option<Vec<bool>>,
    },
    /// Per-row softplus(z) - t*z, the BCE of sigmoid(z) against target t.
    BceLogits {
        logits: Var,
        targets: Vec<f64>,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Eager-forward reverse-mode tape. Values are computed as nodes are pushed;
/// `backward` walks the graph once and returns parameter gradients by name.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: BTreeMap<String, Var>,
}

fn masked_log_softmax(logits: &Tensor, mask: Option<&[bool]>) -> Tensor {
    let (b, k) = (logits.rows(), logits.cols());
    if let Some(m) = mask {
        assert_eq!(m.len(), b * k, "mask length must equal logits length");
    }
    let mut out = vec![0.0; b * k];
    for r in 0..b {
        let row = logits.row(r);
        let mrow = mask.map(|m| &m[r * k..(r + 1) * k]);
        // Masked entries are pushed to -1e30 before the usual stable log-softmax.
        let shifted: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(j, &z)| match mrow {
                Some(mr) if !mr[j] => z + MASK_OFFSET,
                _ => z,
            })
            .collect();
        let mx = shifted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(
            mx > MASK_OFFSET / 2.0,
            "softmax row {} has no unmasked entry",
            r
        );
        let lse = mx + shifted.iter().map(|z| (z - mx).exp()).sum::<f64>().ln();
        for j in 0..k {
            out[r * k + j] = shifted[j] - lse;
        }
    }
    Tensor::from_vec(&[b, k], out).expect("shape is consistent by construction")
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v].value
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    /// Bind a named parameter from `ps` as a leaf. Repeated binds of the same
    /// name return the original node so the gradient accumulates once.
    pub fn param(&mut self, ps: &ParameterSet, name: &str) -> Var {
        if let Some(&v) = self.param_vars.get(name) {
            return v;
        }
        let t = ps
            .value(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
            .clone();
        let v = self.push(Op::Leaf, t);
        self.param_vars.insert(name.to_string(), v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = matmul(self.value(a), self.value(b));
        self.push(Op::MatMul(a, b), value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "add shapes");
        let value = Tensor::from_vec(
            self.value(a).shape(),
            self.value(a)
                .values()
                .iter()
                .zip(self.value(b).values())
                .map(|(x, y)| x + y)
                .collect(),
        )
        .expect("same shape");
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "sub shapes");
        let value = Tensor::from_vec(
            self.value(a).shape(),
            self.value(a)
                .values()
                .iter()
                .zip(self.value(b).values())
                .map(|(x, y)| x - y)
                .collect(),
        )
        .expect("same shape");
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "mul shapes");
        let value = Tensor::from_vec(
            self.value(a).shape(),
            self.value(a)
                .values()
                .iter()
                .zip(self.value(b).values())
                .map(|(x, y)| x * y)
                .collect(),
        )
        .expect("same shape");
        self.push(Op::Mul(a, b), value)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = Tensor::from_vec(
            self.value(a).shape(),
            self.value(a).values().iter().map(|x| x * c).collect(),
        )
        .expect("same shape");
        self.push(Op::Scale(a, c), value)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (b, k) = (self.value(a).rows(), self.value(a).cols());
        assert_eq!(self.value(row).shape(), &[1, k], "bias row shape");
        let mut value = self.value(a).clone();
        for r in 0..b {
            for j in 0..k {
                let v = value.at(r, j) + self.value(row).at(0, j);
                value.set(r, j, v);
            }
        }
        self.push(Op::AddRow(a, row), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = Tensor::from_vec(
            self.value(a).shape(),
            self.value(a)
                .values()
                .iter()
                .map(|&z| 1.0 / (1.0 + (-z).exp()))
                .collect(),
        )
        .expect("same shape");
        self.push(Op::Sigmoid(a), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = Tensor::from_vec(
            self.value(a).shape(),
            self.value(a).values().iter().map(|z| z.tanh()).collect(),
        )
        .expect("same shape");
        self.push(Op::Tanh(a), value)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = Tensor::from_vec(
            self.value(a).shape(),
            self.value(a).values().iter().map(|z| z.exp()).collect(),
        )
        .expect("same shape");
        self.push(Op::Exp(a), value)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let value = self
            .value(a)
            .reshaped(shape)
            .unwrap_or_else(|e| panic!("{e}"));
        self.push(Op::Reshape(a), value)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (ra, ca) = (self.value(a).rows(), self.value(a).cols());
        let (rb, cb) = (self.value(b).rows(), self.value(b).cols());
        assert_eq!(ra, rb, "concat_cols row counts");
        let mut values = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            values.extend_from_slice(self.value(a).row(r));
            values.extend_from_slice(self.value(b).row(r));
        }
        let value = Tensor::from_vec(&[ra, ca + cb], values).expect("length computed above");
        self.push(Op::ConcatCols(a, b), value)
    }

    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let cols = self.value(table).cols();
        let rows = self.value(table).rows();
        let mut values = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            assert!(i < rows, "gather index {} out of {} rows", i, rows);
            values.extend_from_slice(self.value(table).row(i));
        }
        let value = Tensor::from_vec(&[idx.len(), cols], values).expect("length computed above");
        self.push(
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
            value,
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).values().iter().sum());
        self.push(Op::SumAll(a), value)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn sum_group_rows(&mut self, a: Var, k: usize) -> Var {
        let (rows, cols) = (self.value(a).rows(), self.value(a).cols());
        assert!(k > 0 && rows % k == 0, "rows {rows} not divisible by group {k}");
        let groups = rows / k;
        let mut values = vec![0.0; groups * cols];
        for r in 0..rows {
            for c in 0..cols {
                values[(r / k) * cols + c] += self.value(a).at(r, c);
            }
        }
        let value = Tensor::from_vec(&[groups, cols], values).expect("length computed above");
        self.push(Op::SumGroupRows { a, k }, value)
    }

    pub fn pick_per_row(&mut self, a: Var, idx: &[usize]) -> Var {
        let (b, k) = (self.value(a).rows(), self.value(a).cols());
        assert_eq!(idx.len(), b, "one pick per row");
        let mut values = Vec::with_capacity(b);
        for (r, &j) in idx.iter().enumerate() {
            assert!(j < k, "pick index {} out of {} cols", j, k);
            values.push(self.value(a).at(r, j));
        }
        let value = Tensor::from_vec(&[b, 1], values).expect("length computed above");
        self.push(
            Op::PickPerRow {
                a,
                idx: idx.to_vec(),
            },
            value,
        )
    }

    pub fn weight_rows(&mut self, a: Var, w: &[f64]) -> Var {
        let b = self.value(a).rows();
        assert_eq!(self.value(a).cols(), 1, "weight_rows wants a column");
        assert_eq!(w.len(), b, "one weight per row");
        let values = self
            .value(a)
            .values()
            .iter()
            .zip(w)
            .map(|(x, wi)| x * wi)
            .collect();
        let value = Tensor::from_vec(&[b, 1], values).expect("length computed above");
        self.push(Op::WeightRows { a, w: w.to_vec() }, value)
    }

    pub fn log_softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Var {
        let value = masked_log_softmax(self.value(a), mask);
        self.push(
            Op::LogSoftmaxRows {
                a,
                mask: mask.map(|m| m.to_vec()),
            },
            value,
        )
    }

    /// Per-row cross-entropy column; fails if a label points at a masked entry.
    pub fn xent_rows(
        &mut self,
        logits: Var,
        labels: &[usize],
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        let (b, k) = (self.value(logits).rows(), self.value(logits).cols());
        if labels.len() != b {
            return Err(NdError::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                b
            )));
        }
        for (r, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(NdError::Shape(format!("label {} out of {} classes", l, k)));
            }
            if let Some(m) = mask {
                if !m[r * k + l] {
                    return Err(NdError::Contract(format!(
                        "label {} at row {} is masked",
                        l, r
                    )));
                }
            }
        }
        let logp = masked_log_softmax(self.value(logits), mask);
        let values = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| -logp.at(r, l))
            .collect();
        let value = Tensor::from_vec(&[b, 1], values).expect("length computed above");
        Ok(self.push(
            Op::XentRows {
                logits,
                labels: labels.to_vec(),
                mask: mask.map(|m| m.to_vec()),
            },
            value,
        ))
    }

    pub fn entropy_rows(&mut self, logits: Var, mask: Option<&[bool]>) -> Var {
        let (b, k) = (self.value(logits).rows(), self.value(logits).cols());
        let logp = masked_log_softmax(self.value(logits), mask);
        let mut values = Vec::with_capacity(b);
        for r in 0..b {
            let mut h = 0.0;
            for j in 0..k {
                if let Some(m) = &mask {
                    if !m[r * k + j] {
                        continue;
                    }
                }
                let lp = logp.at(r, j);
                h -= lp.exp() * lp;
            }
            values.push(h);
        }
        let value = Tensor::from_vec(&[b, 1], values).expect("length computed above");
        self.push(
            Op::EntropyRows {
                logits,
                mask: mask.map(|m| m.to_vec()),
            },
            value,
        )
    }

    pub fn bce_logits(&mut self, logits: Var, targets: &[f64]) -> Var {
        let b = self.value(logits).rows();
        assert_eq!(self.value(logits).cols(), 1, "bce_logits wants a column");
        assert_eq!(targets.len(), b, "one target per row");
        let values = self
            .value(logits)
            .values()
            .iter()
            .zip(targets)
            .map(|(&z, &t)| softplus(z) - t * z)
            .collect();
        let value = Tensor::from_vec(&[b, 1], values).expect("length computed above");
        self.push(
            Op::BceLogits {
                logits,
                targets: targets.to_vec(),
            },
            value,
        )
    }

    /// Reverse pass from a scalar root; returns gradients for every bound
    /// parameter (zeros if the parameter never influenced the root).
    pub fn backward(&self, root: Var) -> BTreeMap<String, Tensor> {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root] = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = matmul_nt(&g, self.value(*b));
                    let db = matmul_tn(self.value(*a), &g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    let neg = scale_tensor(&g, -1.0);
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let da = hadamard(&g, self.value(*b));
                    let db = hadamard(&g, self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, scale_tensor(&g, *c));
                }
                Op::AddRow(a, row) => {
                    let (b_, k) = (g.rows(), g.cols());
                    let mut drow = Tensor::zeros(&[1, k]);
                    for r in 0..b_ {
                        for j in 0..k {
                            let v = drow.at(0, j) + g.at(r, j);
                            drow.set(0, j, v);
                        }
                    }
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *row, drow);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    let da = Tensor::from_vec(
                        y.shape(),
                        g.values()
                            .iter()
                            .zip(y.values())
                            .map(|(gi, yi)| gi * yi * (1.0 - yi))
                            .collect(),
                    )
                    .expect("same shape");
                    accumulate(&mut grads, *a, da);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    let da = Tensor::from_vec(
                        y.shape(),
                        g.values()
                            .iter()
                            .zip(y.values())
                            .map(|(gi, yi)| gi * (1.0 - yi * yi))
                            .collect(),
                    )
                    .expect("same shape");
                    accumulate(&mut grads, *a, da);
                }
                Op::Exp(a) => {
                    let y = &self.nodes[i].value;
                    let da = hadamard(&g, y);
                    accumulate(&mut grads, *a, da);
                }
                Op::Reshape(a) => {
                    let da = Tensor::from_vec(self.value(*a).shape(), g.values().to_vec())
                        .expect("reshape keeps length");
                    accumulate(&mut grads, *a, da);
                }
                Op::ConcatCols(a, b) => {
                    let (ra, ca) = (self.value(*a).rows(), self.value(*a).cols());
                    let cb = self.value(*b).cols();
                    let mut da = Tensor::zeros(&[ra, ca]);
                    let mut db = Tensor::zeros(&[ra, cb]);
                    for r in 0..ra {
                        for j in 0..ca {
                            da.set(r, j, g.at(r, j));
                        }
                        for j in 0..cb {
                            db.set(r, j, g.at(r, ca + j));
                        }
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::GatherRows { table, idx } => {
                    let (rows, cols) = (self.value(*table).rows(), self.value(*table).cols());
                    let mut dt = Tensor::zeros(&[rows, cols]);
                    for (r, &src) in idx.iter().enumerate() {
                        for j in 0..cols {
                            let v = dt.at(src, j) + g.at(r, j);
                            dt.set(src, j, v);
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::SumGroupRows { a, k } => {
                    let (rows, cols) = (self.value(*a).rows(), self.value(*a).cols());
                    let mut da = Tensor::zeros(&[rows, cols]);
                    for r in 0..rows {
                        for c in 0..cols {
                            da.set(r, c, g.at(r / k, c));
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::SumAll(a) => {
                    let da = Tensor::filled(self.value(*a).shape(), g.item());
                    accumulate(&mut grads, *a, da);
                }
                Op::PickPerRow { a, idx } => {
                    let (rows, cols) = (self.value(*a).rows(), self.value(*a).cols());
                    let mut da = Tensor::zeros(&[rows, cols]);
                    for (r, &j) in idx.iter().enumerate() {
                        da.set(r, j, g.at(r, 0));
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::WeightRows { a, w } => {
                    let da = Tensor::from_vec(
                        self.value(*a).shape(),
                        g.values().iter().zip(w).map(|(gi, wi)| gi * wi).collect(),
                    )
                    .expect("same shape");
                    accumulate(&mut grads, *a, da);
                }
                Op::LogSoftmaxRows { a, mask } => {
                    // dz_j = g_j - p_j * sum_k g_k, with p identically 0 on masked entries.
                    let y = &self.nodes[i].value;
                    let (b_, k) = (y.rows(), y.cols());
                    let mut da = Tensor::zeros(&[b_, k]);
                    for r in 0..b_ {
                        let gsum: f64 = (0..k).map(|j| g.at(r, j)).sum();
                        for j in 0..k {
                            let masked = mask.as_ref().is_some_and(|m| !m[r * k + j]);
                            let p = if masked { 0.0 } else { y.at(r, j).exp() };
                            da.set(r, j, g.at(r, j) - p * gsum);
                        }
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::XentRows {
                    logits,
                    labels,
                    mask,
                } => {
                    // dz = (softmax - onehot) * g_row, zero on masked entries.
                    let z = self.value(*logits);
                    let logp = masked_log_softmax(z, mask.as_deref());
                    let (b_, k) = (z.rows(), z.cols());
                    let mut da = Tensor::zeros(&[b_, k]);
                    for r in 0..b_ {
                        let gr = g.at(r, 0);
                        for j in 0..k {
                            let masked = mask.as_ref().is_some_and(|m| !m[r * k + j]);
                            if masked {
                                continue;
                            }
                            let p = logp.at(r, j).exp();
                            let onehot = if labels[r] == j { 1.0 } else { 0.0 };
                            da.set(r, j, (p - onehot) * gr);
                        }
                    }
                    accumulate(&mut grads, *logits, da);
                }
                Op::EntropyRows { logits, mask } => {
                    // dH/dz_j = -p_j (log p_j + H).
                    let z = self.value(*logits);
                    let logp = masked_log_softmax(z, mask.as_deref());
                    let h = &self.nodes[i].value;
                    let (b_, k) = (z.rows(), z.cols());
                    let mut da = Tensor::zeros(&[b_, k]);
                    for r in 0..b_ {
                        let gr = g.at(r, 0);
                        for j in 0..k {
                            let masked = mask.as_ref().is_some_and(|m| !m[r * k + j]);
                            if masked {
                                continue;
                            }
                            let lp = logp.at(r, j);
                            da.set(r, j, -lp.exp() * (lp + h.at(r, 0)) * gr);
                        }
                    }
                    accumulate(&mut grads, *logits, da);
                }
                Op::BceLogits { logits, targets } => {
                    let z = self.value(*logits);
                    let da = Tensor::from_vec(
                        z.shape(),
                        z.values()
                            .iter()
                            .zip(targets)
                            .zip(g.values())
                            .map(|((&zi, &ti), &gi)| (1.0 / (1.0 + (-zi).exp()) - ti) * gi)
                            .collect(),
                    )
                    .expect("same shape");
                    accumulate(&mut grads, *logits, da);
                }
            }
        }

        let mut out = BTreeMap::new();
        for (name, &v) in &self.param_vars {
            let g = grads[v]
                .take()
                .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
            out.insert(name.clone(), g);
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, add: Tensor) {
    match &mut grads[v] {
        Some(g) => {
            for (gi, ai) in g.values_mut().iter_mut().zip(add.values()) {
                *gi += ai;
            }
        }
        slot => *slot = Some(add),
    }
}

fn scale_tensor(t: &Tensor, c: f64) -> Tensor {
    Tensor::from_vec(t.shape(), t.values().iter().map(|x| x * c).collect()).expect("same shape")
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::from_vec(
        a.shape(),
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| x * y)
            .collect(),
    )
    .expect("same shape")
}

/// Mean cross-entropy over a batch of rows. Masked entries are excluded from
/// the normalizer; a label at a masked position is a contract violation.
pub fn softmax_cross_entropy(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    mask: Option<&[bool]>,
) -> Result<Var> {
    let rows = tape.xent_rows(logits, labels, mask)?;
    Ok(tape.mean_all(rows))
}
