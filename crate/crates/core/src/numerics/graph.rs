//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation eagerly: values are computed when the
//! op is added, and the op keeps whatever it needs for the backward pass.
//! Nodes that do not depend on a gradient-requiring leaf are never visited
//! by [`Graph::backward`].

use crate::error::{Error, Result};
use crate::numerics::tensor::{kernels, Tensor};

/// Handle to a node of a [`Graph`].
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
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Sigmoid(Var),
    Transpose(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    Reshape(Var),
    TakeRows(Var),
    DepthwiseConv {
        x: Var,
        kernel: Var,
    },
    RowMask {
        x: Var,
        keep: Vec<bool>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<f64>,
        count: usize,
    },
    Mse(Var, Var),
    WeightedSum {
        x: Var,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every node that required
/// one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` did not influence the output or
    /// does not require a gradient.
    pub fn wrt(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_raw(self.shapes[v.0].clone(), g.clone()))
    }

    pub(crate) fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads[v.0].take()
    }
}

fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'g mut Vec<f64> {
    let len = nodes[v.0].value.len();
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn rq(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input node. `requires_grad` marks it as a differentiation target.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::shape(format!("{what}: expected a matrix, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul lhs")?;
        let (k2, n) = self.dims2(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![0.0; m * n];
        kernels::mm(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rq = self.rq(a) || self.rq(b);
        Ok(self.push(Tensor::from_raw(vec![m, n], out), Op::MatMul(a, b), rq))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_nt lhs")?;
        let (n, k2) = self.dims2(b, "matmul_nt rhs")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul_nt inner dimensions differ: {:?} x {:?}ᵀ",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![0.0; m * n];
        kernels::mm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rq = self.rq(a) || self.rq(b);
        Ok(self.push(Tensor::from_raw(vec![m, n], out), Op::MatMulNt(a, b), rq))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "add: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rq = self.rq(a) || self.rq(b);
        Ok(self.push(Tensor::from_raw(shape, data), Op::Add(a, b), rq))
    }

    /// Adds a length-`cols` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, c) = self.dims2(x, "add_row")?;
        if self.value(row).len() != c {
            return Err(Error::shape(format!(
                "add_row: row of {:?} onto {:?}",
                self.shape(row),
                self.shape(x)
            )));
        }
        let r = self.value(row).data();
        let data = self
            .value(x)
            .data()
            .chunks(c)
            .flat_map(|xr| xr.iter().zip(r).map(|(a, b)| a + b))
            .collect();
        let shape = self.shape(x).to_vec();
        let rq = self.rq(x) || self.rq(row);
        Ok(self.push(Tensor::from_raw(shape, data), Op::AddRow(x, row), rq))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "mul: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rq = self.rq(a) || self.rq(b);
        Ok(self.push(Tensor::from_raw(shape, data), Op::Mul(a, b), rq))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v * s).collect();
        let shape = self.shape(x).to_vec();
        let rq = self.rq(x);
        self.push(Tensor::from_raw(shape, data), Op::Scale(x, s), rq)
    }

    /// `x · sigmoid(x)`
    pub fn silu(&mut self, x: Var) -> Var {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| v * sigmoid(v))
            .collect();
        let shape = self.shape(x).to_vec();
        let rq = self.rq(x);
        self.push(Tensor::from_raw(shape, data), Op::Silu(x), rq)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        let rq = self.rq(x);
        self.push(Tensor::from_raw(shape, data), Op::Sigmoid(x), rq)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x, "transpose")?;
        let src = self.value(x).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let rq = self.rq(x);
        Ok(self.push(Tensor::from_raw(vec![c, r], data), Op::Transpose(x), rq))
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` for `j > i` is
    /// excluded (probability exactly zero).
    pub fn softmax_rows(&mut self, x: Var, causal: bool) -> Result<Var> {
        let (r, c) = self.dims2(x, "softmax_rows")?;
        let src = self.value(x).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let width = if causal { (i + 1).min(c) } else { c };
            let row = &src[i * c..i * c + width];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[i * c..i * c + width];
            let mut z = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - max).exp();
                z += *o;
            }
            for o in out.iter_mut() {
                *o /= z;
            }
        }
        let rq = self.rq(x);
        Ok(self.push(Tensor::from_raw(vec![r, c], data), Op::Softmax(x), rq))
    }

    /// Per-row normalization with population variance; `eps` sits inside the
    /// square root.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::config("layer_norm eps must be positive"));
        }
        let (r, c) = self.dims2(x, "layer_norm")?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shape(format!(
                "layer_norm: width {} vs gamma {:?} / beta {:?}",
                c,
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let rq = self.rq(x) || self.rq(gamma) || self.rq(beta);
        Ok(self.push(
            Tensor::from_raw(vec![r, c], out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rq,
        ))
    }

    /// Columns `[start, start + width)`.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = self.dims2(x, "slice_cols")?;
        if start + width > c {
            return Err(Error::shape(format!(
                "slice_cols [{start}, {}) out of {c} columns",
                start + width
            )));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + width]);
        }
        let rq = self.rq(x);
        Ok(self.push(
            Tensor::from_raw(vec![r, width], data),
            Op::SliceCols { x, start },
            rq,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat_cols of nothing"))?;
        let (r, _) = self.dims2(first, "concat_cols")?;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.dims2(p, "concat_cols")?;
            if pr != r {
                return Err(Error::shape(format!("concat_cols: {pr} rows vs {r}")));
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let rq = parts.iter().any(|&p| self.rq(p));
        Ok(self.push(
            Tensor::from_raw(vec![r, total], data),
            Op::ConcatCols(parts.to_vec()),
            rq,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat_rows of nothing"))?;
        let (_, c) = self.dims2(first, "concat_rows")?;
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.dims2(p, "concat_rows")?;
            if pc != c {
                return Err(Error::shape(format!(
                    "concat_rows: width {pc} vs {c}"
                )));
            }
            rows += pr;
        }
        let mut data = Vec::with_capacity(rows * c);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rq = parts.iter().any(|&p| self.rq(p));
        Ok(self.push(
            Tensor::from_raw(vec![rows, c], data),
            Op::ConcatRows(parts.to_vec()),
            rq,
        ))
    }

    /// Row lookup: output row `i` is `table[ids[i]]`. Ids may repeat.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, c) = self.dims2(table, "gather_rows")?;
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::TokenOutOfRange { id: bad, vocab: v });
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            data.extend_from_slice(t.row(id));
        }
        let rq = self.rq(table);
        Ok(self.push(
            Tensor::from_raw(vec![ids.len(), c], data),
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            rq,
        ))
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        let rq = self.rq(x);
        Ok(self.push(t, Op::Reshape(x), rq))
    }

    /// First `n` rows of a matrix.
    pub fn take_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let (r, _) = self.dims2(x, "take_rows")?;
        if n > r {
            return Err(Error::shape(format!("take_rows {n} of {r}")));
        }
        let t = self.value(x).take_rows(n);
        let rq = self.rq(x);
        Ok(self.push(t, Op::TakeRows(x), rq))
    }

    /// Per-channel 1-D convolution over time with zero padding that keeps
    /// the length. `kernel` is `w × D` with odd `w`; tap `j` reads frame
    /// `t + j - w/2`.
    pub fn depthwise_conv1d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (t, d) = self.dims2(x, "depthwise_conv1d input")?;
        let (w, kd) = self.dims2(kernel, "depthwise_conv1d kernel")?;
        if w % 2 == 0 {
            return Err(Error::config(format!(
                "depthwise_conv1d needs an odd kernel width, got {w}"
            )));
        }
        if kd != d {
            return Err(Error::shape(format!(
                "depthwise_conv1d: kernel channels {kd} vs input {d}"
            )));
        }
        let half = w / 2;
        let src = self.value(x).data();
        let k = self.value(kernel).data();
        let mut out = vec![0.0; t * d];
        for ti in 0..t {
            for j in 0..w {
                let s = ti as isize + j as isize - half as isize;
                if s < 0 || s >= t as isize {
                    continue;
                }
                let s = s as usize;
                let orow = &mut out[ti * d..(ti + 1) * d];
                let xrow = &src[s * d..(s + 1) * d];
                let krow = &k[j * d..(j + 1) * d];
                for c in 0..d {
                    orow[c] += krow[c] * xrow[c];
                }
            }
        }
        let rq = self.rq(x) || self.rq(kernel);
        Ok(self.push(
            Tensor::from_raw(vec![t, d], out),
            Op::DepthwiseConv { x, kernel },
            rq,
        ))
    }

    /// Zeros every row whose `keep` flag is false.
    pub fn row_mask(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let (r, c) = self.dims2(x, "row_mask")?;
        if keep.len() != r {
            return Err(Error::shape(format!("row_mask: {} flags for {r} rows", keep.len())));
        }
        let mut data = self.value(x).data().to_vec();
        for (i, &k) in keep.iter().enumerate() {
            if !k {
                data[i * c..(i + 1) * c].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let rq = self.rq(x);
        Ok(self.push(
            Tensor::from_raw(vec![r, c], data),
            Op::RowMask {
                x,
                keep: keep.to_vec(),
            },
            rq,
        ))
    }

    /// Mean negative log-likelihood of `targets` over the rows selected by
    /// `mask`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<Var> {
        let (l, v) = self.dims2(logits, "softmax_cross_entropy")?;
        if targets.len() != l || mask.len() != l {
            return Err(Error::shape(format!(
                "softmax_cross_entropy: {l} rows, {} targets, {} mask flags",
                targets.len(),
                mask.len()
            )));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::numeric("cross-entropy over an all-masked sequence"));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; l * v];
        let mut total = 0.0;
        for i in 0..l {
            if !mask[i] {
                continue;
            }
            if targets[i] >= v {
                return Err(Error::TokenOutOfRange {
                    id: targets[i],
                    vocab: v,
                });
            }
            let row = &src[i * v..(i + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + z.ln();
            total += lse - row[targets[i]];
            for (p, &x) in probs[i * v..(i + 1) * v].iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        let loss = total / count as f64;
        if !loss.is_finite() {
            return Err(Error::numeric("non-finite cross-entropy"));
        }
        let rq = self.rq(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
            rq,
        ))
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "mse: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::shape("mse of empty tensors"));
        }
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let loss = s / n as f64;
        if !loss.is_finite() {
            return Err(Error::numeric("non-finite mse"));
        }
        let rq = self.rq(a) || self.rq(b);
        Ok(self.push(Tensor::scalar(loss), Op::Mse(a, b), rq))
    }

    /// `Σ x ⊙ weights`, a scalar probe used to reduce tensor outputs.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(Error::shape("weighted_sum: weight count mismatch"));
        }
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(weights)
            .map(|(a, b)| a * b)
            .sum();
        let rq = self.rq(x);
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
            rq,
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar output, got {:?}",
                self.shape(output)
            )));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &gy, &mut grads);
            grads[idx] = Some(gy);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, node: &Node, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let rq = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        let nodes = &self.nodes;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).cols();
                if rq(*a) {
                    let ga = slot(grads, nodes, *a);
                    kernels::mm_nt(gy, val(*b).data(), ga, m, n, k);
                }
                if rq(*b) {
                    let gb = slot(grads, nodes, *b);
                    kernels::mm_tn(val(*a).data(), gy, gb, m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                // C = A·Bᵀ, A: m×k, B: n×k
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).rows();
                if rq(*a) {
                    let ga = slot(grads, nodes, *a);
                    kernels::mm(gy, val(*b).data(), ga, m, n, k);
                }
                if rq(*b) {
                    let gb = slot(grads, nodes, *b);
                    kernels::mm_tn(gy, val(*a).data(), gb, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if rq(v) {
                        slot(grads, nodes, v).iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::AddRow(x, row) => {
                if rq(*x) {
                    slot(grads, nodes, *x).iter_mut().zip(gy).for_each(|(g, d)| *g += d);
                }
                if rq(*row) {
                    let c = val(*row).len();
                    let gr = slot(grads, nodes, *row);
                    for chunk in gy.chunks(c) {
                        gr.iter_mut().zip(chunk).for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::Mul(a, b) => {
                if rq(*a) {
                    let bv = val(*b).data();
                    slot(grads, nodes, *a)
                        .iter_mut()
                        .zip(gy.iter().zip(bv))
                        .for_each(|(g, (d, y))| *g += d * y);
                }
                if rq(*b) {
                    let av = val(*a).data();
                    slot(grads, nodes, *b)
                        .iter_mut()
                        .zip(gy.iter().zip(av))
                        .for_each(|(g, (d, x))| *g += d * x);
                }
            }
            Op::Scale(x, s) => {
                slot(grads, nodes, *x).iter_mut().zip(gy).for_each(|(g, d)| *g += d * s);
            }
            Op::Silu(x) => {
                let xv = val(*x).data();
                slot(grads, nodes, *x)
                    .iter_mut()
                    .zip(gy.iter().zip(xv))
                    .for_each(|(g, (d, &v))| {
                        let s = sigmoid(v);
                        *g += d * (s * (1.0 + v * (1.0 - s)));
                    });
            }
            Op::Sigmoid(x) => {
                let yv = node.value.data();
                slot(grads, nodes, *x)
                    .iter_mut()
                    .zip(gy.iter().zip(yv))
                    .for_each(|(g, (d, &y))| *g += d * y * (1.0 - y));
            }
            Op::Transpose(x) => {
                let (r, c) = (val(*x).rows(), val(*x).cols());
                let gx = slot(grads, nodes, *x);
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] += gy[j * r + i];
                    }
                }
            }
            Op::Softmax(x) => {
                let (r, c) = (node.value.rows(), node.value.cols());
                let y = node.value.data();
                let gx = slot(grads, nodes, *x);
                for i in 0..r {
                    let yr = &y[i * c..(i + 1) * c];
                    let dr = &gy[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[i * c + j] += yr[j] * (dr[j] - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (r, c) = (node.value.rows(), node.value.cols());
                let gv = val(*gamma).data().to_vec();
                if rq(*gamma) {
                    let gg = slot(grads, nodes, *gamma);
                    for i in 0..r {
                        for j in 0..c {
                            gg[j] += gy[i * c + j] * xhat[i * c + j];
                        }
                    }
                }
                if rq(*beta) {
                    let gb = slot(grads, nodes, *beta);
                    for i in 0..r {
                        for j in 0..c {
                            gb[j] += gy[i * c + j];
                        }
                    }
                }
                if rq(*x) {
                    let gx = slot(grads, nodes, *x);
                    let cf = c as f64;
                    for i in 0..r {
                        let mut sum_d = 0.0;
                        let mut sum_dh = 0.0;
                        for j in 0..c {
                            let d = gy[i * c + j] * gv[j];
                            sum_d += d;
                            sum_dh += d * xhat[i * c + j];
                        }
                        for j in 0..c {
                            let d = gy[i * c + j] * gv[j];
                            gx[i * c + j] += inv_std[i] / cf
                                * (cf * d - sum_d - xhat[i * c + j] * sum_dh);
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = (val(*x).rows(), val(*x).cols());
                let w = node.value.cols();
                let gx = slot(grads, nodes, *x);
                for i in 0..r {
                    for j in 0..w {
                        gx[i * c + start + j] += gy[i * w + j];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let r = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if rq(p) {
                        let gp = slot(grads, nodes, p);
                        for i in 0..r {
                            for j in 0..w {
                                gp[i * w + j] += gy[i * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    if rq(p) {
                        slot(grads, nodes, p)
                            .iter_mut()
                            .zip(&gy[offset..offset + len])
                            .for_each(|(g, d)| *g += d);
                    }
                    offset += len;
                }
            }
            Op::GatherRows { table, ids } => {
                let c = val(*table).cols();
                let gt = slot(grads, nodes, *table);
                for (i, &id) in ids.iter().enumerate() {
                    gt[id * c..(id + 1) * c]
                        .iter_mut()
                        .zip(&gy[i * c..(i + 1) * c])
                        .for_each(|(g, d)| *g += d);
                }
            }
            Op::Reshape(x) => {
                slot(grads, nodes, *x).iter_mut().zip(gy).for_each(|(g, d)| *g += d);
            }
            Op::TakeRows(x) => {
                slot(grads, nodes, *x).iter_mut().zip(gy).for_each(|(g, d)| *g += d);
            }
            Op::DepthwiseConv { x, kernel } => {
                let (t, d) = (val(*x).rows(), val(*x).cols());
                let w = val(*kernel).rows();
                let half = w / 2;
                let taps = |f: &mut dyn FnMut(usize, usize, usize)| {
                    for ti in 0..t {
                        for j in 0..w {
                            let s = ti as isize + j as isize - half as isize;
                            if s >= 0 && s < t as isize {
                                f(ti, j, s as usize);
                            }
                        }
                    }
                };
                if rq(*x) {
                    let kv = val(*kernel).data().to_vec();
                    let gx = slot(grads, nodes, *x);
                    taps(&mut |ti, j, s| {
                        for c in 0..d {
                            gx[s * d + c] += kv[j * d + c] * gy[ti * d + c];
                        }
                    });
                }
                if rq(*kernel) {
                    let xv = val(*x).data().to_vec();
                    let gk = slot(grads, nodes, *kernel);
                    taps(&mut |ti, j, s| {
                        for c in 0..d {
                            gk[j * d + c] += xv[s * d + c] * gy[ti * d + c];
                        }
                    });
                }
            }
            Op::RowMask { x, keep } => {
                let c = node.value.cols();
                let gx = slot(grads, nodes, *x);
                for (i, &k) in keep.iter().enumerate() {
                    if k {
                        gx[i * c..(i + 1) * c]
                            .iter_mut()
                            .zip(&gy[i * c..(i + 1) * c])
                            .for_each(|(g, d)| *g += d);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                let v = val(*logits).cols();
                let scale = gy[0] / *count as f64;
                let gl = slot(grads, nodes, *logits);
                for (i, &m) in mask.iter().enumerate() {
                    if !m {
                        continue;
                    }
                    for j in 0..v {
                        let onehot = if j == targets[i] { 1.0 } else { 0.0 };
                        gl[i * v + j] += scale * (probs[i * v + j] - onehot);
                    }
                }
            }
            Op::Mse(a, b) => {
                let n = val(*a).len() as f64;
                let diff: Vec<f64> = val(*a)
                    .data()
                    .iter()
                    .zip(val(*b).data())
                    .map(|(x, y)| 2.0 * (x - y) / n * gy[0])
                    .collect();
                if rq(*a) {
                    slot(grads, nodes, *a).iter_mut().zip(&diff).for_each(|(g, d)| *g += d);
                }
                if rq(*b) {
                    slot(grads, nodes, *b).iter_mut().zip(&diff).for_each(|(g, d)| *g -= d);
                }
            }
            Op::WeightedSum { x, weights } => {
                slot(grads, nodes, *x)
                    .iter_mut()
                    .zip(weights)
                    .for_each(|(g, w)| *g += w * gy[0]);
            }
        }
    }
}
