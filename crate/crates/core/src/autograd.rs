//! A small reverse-mode tape over dense `f64` matrices.
//!
//! Only the operations the encoder, the contrastive objective and the prompt
//! classifier need are provided, each with a hand-written backward rule.
//! A tape is built per forward pass and discarded after `backward`.

use std::sync::Arc;

use ndarray::{Array1, Array2, Axis, Zip};

use crate::error::{HgmpError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Row-compressed sparse matrix: row `i` holds `(col, weight)` pairs.
#[derive(Debug, Clone, Default)]
pub struct SparseRows {
    pub starts: Vec<usize>,
    pub entries: Vec<(usize, f64)>,
    pub ncols: usize,
}

impl SparseRows {
    pub fn nrows(&self) -> usize {
        self.starts.len().saturating_sub(1)
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.entries[self.starts[i]..self.starts[i + 1]]
    }
}

/// Segment assignment for graph readout: `segment[n]` is the graph of row n.
#[derive(Debug, Clone)]
pub struct Segments {
    pub segment: Vec<usize>,
    pub counts: Vec<usize>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Relu(Var),
    ConcatRows(Vec<Var>),
    Propagate(Var, Arc<SparseRows>),
    Attend {
        input: Var,
        att_dst: Var,
        att_src: Var,
        /// Row i lists the neighbors j attended by node i (weights unused).
        neighbors: Arc<SparseRows>,
        alpha: Vec<f64>,
        positive: Vec<bool>,
    },
    SegmentMean(Var, Arc<Segments>),
    NtXent {
        input: Var,
        temperature: f64,
        unit: Array2<f64>,
        norms: Array1<f64>,
        clamped: Vec<bool>,
        probs: Array2<f64>,
    },
    CrossEntropy {
        input: Var,
        labels: Arc<Vec<usize>>,
        probs: Array2<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zeros when `v` did not
    /// influence the root.
    pub fn get(&self, v: Var) -> Array2<f64> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Array2::zeros(self.shapes[v.0]))
    }
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => true,
            Op::MatMul(a, b) | Op::AddRow(a, b) | Op::MulRow(a, b) => self.needs(*a) || self.needs(*b),
            Op::Relu(a) | Op::Propagate(a, _) | Op::SegmentMean(a, _) => self.needs(*a),
            Op::ConcatRows(parts) => parts.iter().any(|&p| self.needs(p)),
            Op::Attend {
                input, att_dst, att_src, ..
            } => self.needs(*input) || self.needs(*att_dst) || self.needs(*att_src),
            Op::NtXent { input, .. } | Op::CrossEntropy { input, .. } => self.needs(*input),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a + b` with `b` (1 x n) broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::AddRow(a, b))
    }

    /// `a * b` elementwise with `b` (1 x n) broadcast over rows.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::MulRow(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    /// `A x` for a fixed sparse `A`.
    pub fn propagate(&mut self, x: Var, a: Arc<SparseRows>) -> Var {
        let xv = self.value(x);
        let mut out = Array2::zeros((a.nrows(), xv.ncols()));
        for i in 0..a.nrows() {
            let mut row = out.row_mut(i);
            for &(j, w) in a.row(i) {
                row.scaled_add(w, &xv.row(j));
            }
        }
        self.push(out, Op::Propagate(x, a))
    }

    /// Single-head graph attention:
    /// `out_i = sum_j alpha_ij x_j`, with
    /// `alpha_i. = softmax_j(leaky_relu(x_i . att_dst + x_j . att_src))`
    /// over the neighbor list of row i.
    pub fn attend(&mut self, x: Var, att_dst: Var, att_src: Var, neighbors: Arc<SparseRows>) -> Var {
        let xv = self.value(x);
        let ad = self.value(att_dst).row(0).to_owned();
        let as_ = self.value(att_src).row(0).to_owned();
        let f = xv.dot(&ad);
        let g = xv.dot(&as_);
        let mut alpha = vec![0.0; neighbors.entries.len()];
        let mut positive = vec![false; neighbors.entries.len()];
        let mut out = Array2::zeros(xv.raw_dim());
        for i in 0..neighbors.nrows() {
            let (lo, hi) = (neighbors.starts[i], neighbors.starts[i + 1]);
            if lo == hi {
                continue;
            }
            let mut m = f64::NEG_INFINITY;
            for k in lo..hi {
                let j = neighbors.entries[k].0;
                let u = f[i] + g[j];
                positive[k] = u > 0.0;
                let e = if u > 0.0 { u } else { LEAKY_SLOPE * u };
                alpha[k] = e;
                m = m.max(e);
            }
            let mut z = 0.0;
            for a in &mut alpha[lo..hi] {
                *a = (*a - m).exp();
                z += *a;
            }
            let mut row = out.row_mut(i);
            for k in lo..hi {
                alpha[k] /= z;
                row.scaled_add(alpha[k], &xv.row(neighbors.entries[k].0));
            }
        }
        self.push(
            out,
            Op::Attend {
                input: x,
                att_dst,
                att_src,
                neighbors,
                alpha,
                positive,
            },
        )
    }

    /// Mean of the rows belonging to each segment.
    pub fn segment_mean(&mut self, x: Var, seg: Arc<Segments>) -> Var {
        let xv = self.value(x);
        let mut out = Array2::zeros((seg.counts.len(), xv.ncols()));
        for (n, &s) in seg.segment.iter().enumerate() {
            out.row_mut(s).scaled_add(1.0 / seg.counts[s] as f64, &xv.row(n));
        }
        self.push(out, Op::SegmentMean(x, seg))
    }

    /// Normalized-temperature contrastive loss over `2N` rows where row `a`
    /// and row `(a + N) mod 2N` are the two views of one graph. Every row
    /// acts as an anchor; the loss is averaged over the `2N` anchors.
    pub fn nt_xent(&mut self, z: Var, temperature: f64) -> Result<Var> {
        self.nt_xent_floored(z, temperature, 0.0)
    }

    /// [`nt_xent`](Self::nt_xent) with row norms clamped below at
    /// `min_norm`, so degenerate (all-zero) latents are tolerated when
    /// `min_norm > 0`.
    pub fn nt_xent_floored(&mut self, z: Var, temperature: f64, min_norm: f64) -> Result<Var> {
        if temperature <= 0.0 || !temperature.is_finite() {
            return Err(HgmpError::InvalidArgument(format!("temperature {temperature} must be positive")));
        }
        let zv = self.value(z);
        let m = zv.nrows();
        if m == 0 || !m.is_multiple_of(2) {
            return Err(HgmpError::InvalidArgument(format!("contrastive loss needs 2N rows, got {m}")));
        }
        let raw: Array1<f64> = zv.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        if let Some(i) = raw.iter().position(|&n| !n.is_finite() || (min_norm <= 0.0 && n <= 0.0)) {
            return Err(HgmpError::Numerical(format!("latent row {i} has zero or non-finite norm")));
        }
        let clamped: Vec<bool> = raw.iter().map(|&n| n < min_norm).collect();
        let norms = raw.mapv(|n| n.max(min_norm));
        let unit = zv / &norms.view().insert_axis(Axis(1));
        let sim = unit.dot(&unit.t()) / temperature;
        let n = m / 2;
        let mut probs = Array2::zeros((m, m));
        let mut loss = 0.0;
        for a in 0..m {
            let pos = (a + n) % m;
            let others = (0..m).filter(|&l| l != a).map(|l| sim[[a, l]]);
            let lse = logsumexp(others);
            loss += lse - sim[[a, pos]];
            for l in (0..m).filter(|&l| l != a) {
                probs[[a, l]] = (sim[[a, l]] - lse).exp();
            }
        }
        let value = Array2::from_elem((1, 1), loss / m as f64);
        Ok(self.push(
            value,
            Op::NtXent {
                input: z,
                temperature,
                unit,
                norms,
                clamped,
                probs,
            },
        ))
    }

    /// Mean softmax cross-entropy of `logits` (B x C) against `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: Arc<Vec<usize>>) -> Var {
        let lv = self.value(logits);
        let b = lv.nrows();
        let mut probs = Array2::zeros(lv.raw_dim());
        let mut loss = 0.0;
        for (r, row) in lv.rows().into_iter().enumerate() {
            let lse = logsumexp(row.iter().copied());
            loss += lse - row[labels[r]];
            for (c, &x) in row.iter().enumerate() {
                probs[[r, c]] = (x - lse).exp();
            }
        }
        let value = Array2::from_elem((1, 1), loss / b as f64);
        self.push(value, Op::CrossEntropy { input: logits, labels, probs })
    }

    /// Gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let shapes = self.nodes.iter().map(|n| n.value.dim()).collect();
        grads[root.0] = Some(Array2::ones(self.nodes[root.0].value.raw_dim()));

        let needs = |v: Var| self.nodes[v.0].requires_grad;
        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if needs(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        acc(&mut grads, *b, gb);
                    }
                    if needs(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        acc(&mut grads, *a, ga);
                    }
                }
                Op::AddRow(a, b) => {
                    if needs(*b) {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        acc(&mut grads, *b, gb);
                    }
                    if needs(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::MulRow(a, b) => {
                    if needs(*b) {
                        let gb = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                        acc(&mut grads, *b, gb);
                    }
                    if needs(*a) {
                        let ga = &g * self.value(*b);
                        acc(&mut grads, *a, ga);
                    }
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|gv, &x| {
                        if x <= 0.0 {
                            *gv = 0.0;
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.value(p).nrows();
                        if needs(p) {
                            let slice = g.slice(ndarray::s![start..start + rows, ..]).to_owned();
                            acc(&mut grads, p, slice);
                        }
                        start += rows;
                    }
                }
                Op::Propagate(x, a) => {
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    for i in 0..a.nrows() {
                        for &(j, w) in a.row(i) {
                            gx.row_mut(j).scaled_add(w, &g.row(i));
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Attend {
                    input,
                    att_dst,
                    att_src,
                    neighbors,
                    alpha,
                    positive,
                } => {
                    let xv = self.value(*input);
                    let ad = self.value(*att_dst).row(0).to_owned();
                    let as_ = self.value(*att_src).row(0).to_owned();
                    let nrows = xv.nrows();
                    let mut gx = Array2::zeros(xv.raw_dim());
                    let mut df = vec![0.0; nrows];
                    let mut dg = vec![0.0; nrows];
                    for i in 0..neighbors.nrows() {
                        let (lo, hi) = (neighbors.starts[i], neighbors.starts[i + 1]);
                        if lo == hi {
                            continue;
                        }
                        let gi = g.row(i);
                        let dalpha: Vec<f64> = (lo..hi).map(|k| gi.dot(&xv.row(neighbors.entries[k].0))).collect();
                        let mean: f64 = (lo..hi).map(|k| alpha[k] * dalpha[k - lo]).sum();
                        for k in lo..hi {
                            let j = neighbors.entries[k].0;
                            gx.row_mut(j).scaled_add(alpha[k], &gi);
                            let de = alpha[k] * (dalpha[k - lo] - mean);
                            let du = if positive[k] { de } else { LEAKY_SLOPE * de };
                            df[i] += du;
                            dg[j] += du;
                        }
                    }
                    let df = Array1::from(df);
                    let dg = Array1::from(dg);
                    let gad = xv.t().dot(&df).insert_axis(Axis(0));
                    let gas = xv.t().dot(&dg).insert_axis(Axis(0));
                    for n in 0..nrows {
                        gx.row_mut(n).scaled_add(df[n], &ad);
                        gx.row_mut(n).scaled_add(dg[n], &as_);
                    }
                    if needs(*input) {
                        acc(&mut grads, *input, gx);
                    }
                    if needs(*att_dst) {
                        acc(&mut grads, *att_dst, gad);
                    }
                    if needs(*att_src) {
                        acc(&mut grads, *att_src, gas);
                    }
                }
                Op::SegmentMean(x, seg) => {
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    for (n, &s) in seg.segment.iter().enumerate() {
                        gx.row_mut(n).scaled_add(1.0 / seg.counts[s] as f64, &g.row(s));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::NtXent {
                    input,
                    temperature,
                    unit,
                    norms,
                    clamped,
                    probs,
                } => {
                    let upstream = g[[0, 0]];
                    let m = unit.nrows();
                    let n = m / 2;
                    let mut gs = probs.clone();
                    for a in 0..m {
                        gs[[a, (a + n) % m]] -= 1.0;
                    }
                    gs *= upstream / m as f64;
                    let sym = &gs + &gs.t();
                    let du = sym.dot(unit) / *temperature;
                    let mut gz = Array2::zeros(unit.raw_dim());
                    for k in 0..m {
                        let u = unit.row(k);
                        let d = du.row(k);
                        let mut row = gz.row_mut(k);
                        row.assign(&d);
                        if !clamped[k] {
                            row.scaled_add(-u.dot(&d), &u);
                        }
                        row /= norms[k];
                    }
                    acc(&mut grads, *input, gz);
                }
                Op::CrossEntropy { input, labels, probs } => {
                    let upstream = g[[0, 0]];
                    let b = probs.nrows();
                    let mut gl = probs.clone();
                    for (r, &y) in labels.iter().enumerate() {
                        gl[[r, y]] -= 1.0;
                    }
                    gl *= upstream / b as f64;
                    acc(&mut grads, *input, gl);
                }
            }
        }
        Gradients { grads, shapes }
    }
}
