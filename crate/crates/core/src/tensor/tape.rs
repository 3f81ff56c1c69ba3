//! Reverse-mode differentiation over a linear record of tensor ops.
//!
//! A [`Graph`] owns every value computed on it. Ops append a node holding the
//! forward result plus what the backward rule needs; [`Graph::backward`]
//! walks the nodes in exact reverse order and sums contributions into each
//! input's gradient.

use super::{masked_softmax_in_place, matmul_into, transpose_data, Tensor};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    GatherRows {
        src: Var,
        indices: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// The compute tape: an append-only list of nodes in execution order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    fn push(&mut self, mut value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad);
        value.requires_grad = rg;
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = true;
        t.grad = None;
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        t.grad = None;
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient populated by the last [`Graph::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape {
                op: "add",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`c` vector to every row of an `r × c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let (_, c) = ta.as_matrix_dims();
        if tr.numel() != c || ta.shape().len() != 2 {
            return Err(Error::Shape {
                op: "add_row",
                left: ta.shape().to_vec(),
                right: tr.shape().to_vec(),
            });
        }
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + tr.data()[i % c])
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(a, row), &[a, row]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape {
                op: "mul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * k).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Scale(a, k), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Gelu(a), &[a])
    }

    /// Per-row layer normalization with learned gain and bias of width `c`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = tx.as_matrix_dims();
        for p in [gain, bias] {
            if self.value(p).numel() != c {
                return Err(Error::Shape {
                    op: "layer_norm",
                    left: tx.shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &tx.data()[i * c..(i + 1) * c];
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mu) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + b[j];
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).row_softmax()?;
        Ok(self.push(out, Op::Softmax(a), &[a]))
    }

    /// Selects rows of a matrix by index; indices may repeat.
    pub fn gather_rows(&mut self, src: Var, indices: &[usize]) -> Result<Var> {
        let ts = self.value(src);
        if ts.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "gather_rows expects a matrix, got {:?}",
                ts.shape()
            )));
        }
        let (r, c) = ts.as_matrix_dims();
        if indices.is_empty() {
            return Err(Error::Dimension("gather_rows with no indices".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= r {
                return Err(Error::Index { index: i, len: r });
            }
            data.extend_from_slice(ts.row(i));
        }
        let out = Tensor::new(vec![indices.len(), c], data)?;
        Ok(self.push(
            out,
            Op::GatherRows {
                src,
                indices: indices.to_vec(),
            },
            &[src],
        ))
    }

    /// Concatenates along axis 0 (any rank, matching trailing dims) or
    /// axis 1 (matrices with matching row counts).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let base = self.value(*first).shape().to_vec();
        let out = match axis {
            0 => {
                let mut lead = 0;
                let mut data = Vec::new();
                for v in inputs {
                    let t = self.value(*v);
                    if t.shape()[1..] != base[1..] || t.shape().len() != base.len() {
                        return Err(Error::Shape {
                            op: "concat",
                            left: base,
                            right: t.shape().to_vec(),
                        });
                    }
                    lead += t.shape()[0];
                    data.extend_from_slice(t.data());
                }
                let mut shape = base.clone();
                shape[0] = lead;
                Tensor::new(shape, data)?
            }
            1 => {
                if base.len() != 2 {
                    return Err(Error::Dimension("concat on axis 1 needs matrices".into()));
                }
                let r = base[0];
                let mut widths = Vec::with_capacity(inputs.len());
                for v in inputs {
                    let t = self.value(*v);
                    if t.shape().len() != 2 || t.shape()[0] != r {
                        return Err(Error::Shape {
                            op: "concat",
                            left: base,
                            right: t.shape().to_vec(),
                        });
                    }
                    widths.push(t.shape()[1]);
                }
                let total: usize = widths.iter().sum();
                let mut data = Vec::with_capacity(r * total);
                for i in 0..r {
                    for v in inputs {
                        data.extend_from_slice(self.value(*v).row(i));
                    }
                }
                Tensor::new(vec![r, total], data)?
            }
            _ => return Err(Error::Dimension(format!("unsupported concat axis {axis}"))),
        };
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Per-row negative log-likelihood of `targets[i]` under a softmax of
    /// row `i`, computed as a fused log-softmax. Entries flagged in `mask`
    /// (row-major, same size as `logits`) are excluded from the softmax.
    /// Returns a vector with one loss per row.
    pub fn cross_entropy_rows(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        let tl = self.value(logits);
        if tl.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "cross_entropy_rows expects a matrix, got {:?}",
                tl.shape()
            )));
        }
        let (r, c) = tl.as_matrix_dims();
        if targets.len() != r {
            return Err(Error::Shape {
                op: "cross_entropy_rows",
                left: tl.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(Error::Shape {
                    op: "cross_entropy_rows",
                    left: tl.shape().to_vec(),
                    right: vec![m.len()],
                });
            }
        }
        let no_mask = vec![false; c];
        let mut probs = tl.data().to_vec();
        let mut losses = Vec::with_capacity(r);
        for (i, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(Error::Index { index: t, len: c });
            }
            let row_mask = mask.map_or(no_mask.as_slice(), |m| &m[i * c..(i + 1) * c]);
            if row_mask[t] {
                return Err(Error::Internal(format!("target entry of row {i} is masked")));
            }
            let row = &tl.data()[i * c..(i + 1) * c];
            let max = row
                .iter()
                .zip(row_mask)
                .filter(|(_, &m)| !m)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = row
                .iter()
                .zip(row_mask)
                .filter(|(_, &m)| !m)
                .map(|(v, _)| (v - max).exp())
                .sum::<f64>()
                .ln()
                + max;
            losses.push(lse - row[t]);
            masked_softmax_in_place(&mut probs[i * c..(i + 1) * c], row_mask);
        }
        let out = Tensor::new(vec![r], losses)?;
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Populates the gradient of `loss` in every `requires_grad` node.
    /// Trainable leaves not reachable from `loss` get a zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].value.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if !node.value.requires_grad {
                continue;
            }
            let n = node.value.numel();
            node.value.set_grad(g.unwrap_or_else(|| vec![0.0; n]));
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (m, k) = ta.as_matrix_dims();
                let n = tb.cols();
                if self.needs(*a) {
                    // dA = dC · Bᵀ
                    let bt = transpose_data(tb.data(), k, n);
                    let mut da = vec![0.0; m * k];
                    matmul_into(g, &bt, &mut da, m, n, k);
                    accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    // dB = Aᵀ · dC
                    let at = transpose_data(ta.data(), m, k);
                    let mut db = vec![0.0; k * n];
                    matmul_into(&at, g, &mut db, k, m, n);
                    accumulate(grads, *b, &db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = out.as_matrix_dims();
                accumulate(grads, *a, &transpose_data(g, r, c));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g);
                if self.needs(*row) {
                    let c = self.value(*row).numel();
                    let mut dr = vec![0.0; c];
                    for (i, v) in g.iter().enumerate() {
                        dr[i % c] += v;
                    }
                    accumulate(grads, *row, &dr);
                }
            }
            Op::Mul(a, b) => {
                let ta = self.value(*a).data();
                let tb = self.value(*b).data();
                if self.needs(*a) {
                    let da: Vec<f64> = g.iter().zip(tb).map(|(g, y)| g * y).collect();
                    accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    let db: Vec<f64> = g.iter().zip(ta).map(|(g, x)| g * x).collect();
                    accumulate(grads, *b, &db);
                }
            }
            Op::Scale(a, k) => {
                let da: Vec<f64> = g.iter().map(|v| v * k).collect();
                accumulate(grads, *a, &da);
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                accumulate(grads, *a, &vec![g[0]; n]);
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                let da: Vec<f64> = x
                    .iter()
                    .zip(g)
                    .map(|(&x, g)| {
                        let u = GELU_C * (x + 0.044715 * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                        g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    })
                    .collect();
                accumulate(grads, *a, &da);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (r, c) = out.as_matrix_dims();
                let gv = self.value(*gain).data();
                if self.needs(*x) {
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        let s = i * c;
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..c {
                            let d = g[s + j] * gv[j];
                            mean_d += d;
                            mean_dx += d * xhat[s + j];
                        }
                        mean_d /= c as f64;
                        mean_dx /= c as f64;
                        for j in 0..c {
                            let d = g[s + j] * gv[j];
                            dx[s + j] = inv_std[i] * (d - mean_d - xhat[s + j] * mean_dx);
                        }
                    }
                    accumulate(grads, *x, &dx);
                }
                if self.needs(*gain) {
                    let mut dg = vec![0.0; c];
                    for (k, v) in g.iter().enumerate() {
                        dg[k % c] += v * xhat[k];
                    }
                    accumulate(grads, *gain, &dg);
                }
                if self.needs(*bias) {
                    let mut db = vec![0.0; c];
                    for (k, v) in g.iter().enumerate() {
                        db[k % c] += v;
                    }
                    accumulate(grads, *bias, &db);
                }
            }
            Op::Softmax(a) => {
                let (r, c) = out.as_matrix_dims();
                let y = out.data();
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    let s = i * c;
                    let dot: f64 = (0..c).map(|j| g[s + j] * y[s + j]).sum();
                    for j in 0..c {
                        da[s + j] = y[s + j] * (g[s + j] - dot);
                    }
                }
                accumulate(grads, *a, &da);
            }
            Op::GatherRows { src, indices } => {
                if self.needs(*src) {
                    let ts = self.value(*src);
                    let c = ts.cols();
                    let mut ds = vec![0.0; ts.numel()];
                    for (k, &i) in indices.iter().enumerate() {
                        for j in 0..c {
                            ds[i * c + j] += g[k * c + j];
                        }
                    }
                    accumulate(grads, *src, &ds);
                }
            }
            Op::Concat { inputs, axis } => {
                if *axis == 0 {
                    let mut offset = 0;
                    for v in inputs {
                        let n = self.value(*v).numel();
                        accumulate(grads, *v, &g[offset..offset + n]);
                        offset += n;
                    }
                } else {
                    let (r, total) = out.as_matrix_dims();
                    let mut col = 0;
                    for v in inputs {
                        let w = self.value(*v).cols();
                        if self.needs(*v) {
                            let mut dv = Vec::with_capacity(r * w);
                            for i in 0..r {
                                dv.extend_from_slice(&g[i * total + col..i * total + col + w]);
                            }
                            accumulate(grads, *v, &dv);
                        }
                        col += w;
                    }
                }
            }
            Op::Reshape(a) => accumulate(grads, *a, g),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = self.value(*logits).cols();
                let mut dl = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    for j in 0..c {
                        dl[i * c + j] *= g[i];
                    }
                    dl[i * c + t] -= g[i];
                }
                accumulate(grads, *logits, &dl);
            }
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, contribution: &[f64]) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contribution.to_vec()),
    }
}
