//! Define-by-run reverse-mode differentiation over dense 2-D tensors.
//!
//! A [`Graph`] records every primitive as it is applied; node ids are handed out in
//! creation order, so the node list is already topologically sorted and
//! [`Graph::backward`] walks it once in reverse. Only the primitives the attentive
//! classifier needs are provided, and broadcasting is limited to row-wise bias addition.

mod batchnorm;
mod kernels;
mod tensor;

pub use batchnorm::{BatchNormState, Mode, BN_EPSILON, DEFAULT_BN_MOMENTUM};
pub use tensor::Tensor;

use crate::simplex;
use crate::{Error, Result};

/// Added inside logarithms.
pub const LOG_EPSILON: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which simplex mapping a row-wise projection uses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    Softmax,
    Sparsemax,
    Entmax(f64),
}

impl Projection {
    fn alpha(self) -> f64 {
        match self {
            Projection::Softmax => 1.0,
            Projection::Sparsemax => 2.0,
            Projection::Entmax(a) => a,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    ScaleShift(NodeId, f64),
    SliceCols { x: NodeId, start: usize },
    Glu(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Project(NodeId, Projection),
    BatchNormTrain {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormInfer {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    MaskEntropy(NodeId),
    Sum(NodeId),
    Mean(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that does not receive a gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient filled in by the last [`Graph::backward`] call.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].value.grad()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(Error::Shape(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let out = kernels::matmul(av, bv);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `x + 1·bias` with `bias` of shape `1 × cols`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Shape(format!(
                "bias {:?} does not broadcast over {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let mut out = xv.clone();
        out.clear_grad();
        let cols = out.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += bv.data()[i % cols];
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    fn zip(&mut self, a: NodeId, b: NodeId, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, what)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.rows(), av.cols(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// `scale · x + shift`, elementwise.
    pub fn scale_shift(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| scale * v + shift).collect();
        let out = Tensor::new(xv.rows(), xv.cols(), data).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, Op::ScaleShift(x, scale), rg)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(Error::Shape(format!(
                "column slice {start}..{} out of {} columns",
                start + len,
                xv.cols()
            )));
        }
        let mut data = Vec::with_capacity(xv.rows() * len);
        for r in xv.iter_rows() {
            data.extend_from_slice(&r[start..start + len]);
        }
        let out = Tensor::new(xv.rows(), len, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceCols { x, start }, rg))
    }

    /// Gated linear unit: `x[:, j] · σ(x[:, j + u])` for an input of width `2u`.
    pub fn glu(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.cols() % 2 != 0 {
            return Err(Error::Shape(format!(
                "glu needs an even column count, got {}",
                xv.cols()
            )));
        }
        let u = xv.cols() / 2;
        let mut data = Vec::with_capacity(xv.rows() * u);
        for r in xv.iter_rows() {
            for j in 0..u {
                data.push(r[j] * sigmoid(r[j + u]));
            }
        }
        let out = Tensor::new(xv.rows(), u, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Glu(x), rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::new(xv.rows(), xv.cols(), data).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| sigmoid(v)).collect();
        let out = Tensor::new(xv.rows(), xv.cols(), data).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Row-wise projection onto the simplex.
    pub fn project_rows(&mut self, x: NodeId, projection: Projection) -> Result<NodeId> {
        let xv = self.value(x);
        let mut data = Vec::with_capacity(xv.len());
        for r in xv.iter_rows() {
            let p = match projection {
                Projection::Softmax => simplex::softmax(r)?,
                Projection::Sparsemax => simplex::sparsemax(r)?.probabilities,
                Projection::Entmax(a) => simplex::entmax(r, a)?.probabilities,
            };
            data.extend(p);
        }
        let out = Tensor::new(xv.rows(), xv.cols(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Project(x, projection), rg))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.project_rows(x, Projection::Softmax)
    }

    /// Per-column batch normalisation with learnable `gamma`/`beta` (each `1 × cols`).
    ///
    /// In [`Mode::Train`] the batch statistics are used and `state` is updated; in
    /// [`Mode::Infer`] only the running statistics are read.
    pub fn batchnorm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        state: &mut BatchNormState,
        mode: Mode,
    ) -> Result<NodeId> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        for p in [gamma, beta] {
            let pv = self.value(p);
            if pv.shape() != (1, cols) {
                return Err(Error::Shape(format!(
                    "batchnorm parameter {:?} does not match {cols} columns",
                    pv.shape()
                )));
            }
        }
        if state.width() != cols {
            return Err(Error::Shape(format!(
                "batchnorm state has {} columns, input has {cols}",
                state.width()
            )));
        }
        if rows == 0 {
            return Err(Error::Shape("batchnorm of an empty batch".into()));
        }
        let (mean, var) = match mode {
            Mode::Train => {
                let (mean, var) = batchnorm::column_moments(xv);
                state.update(&mean, &var);
                (mean, var)
            }
            Mode::Infer => {
                if !state.is_initialized() {
                    return Err(Error::UninitializedStats);
                }
                (state.running_mean.clone(), state.running_var.clone())
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.epsilon).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(rows * cols);
        let mut out = Vec::with_capacity(rows * cols);
        for r in xv.iter_rows() {
            for j in 0..cols {
                let h = (r[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let out = Tensor::new(rows, cols, out)?;
        let rg = self.rg(&[x, gamma, beta]);
        let op = match mode {
            Mode::Train => Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            Mode::Infer => Op::BatchNormInfer {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        };
        Ok(self.push(out, op, rg))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        if labels.len() != lv.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                lv.rows()
            )));
        }
        if lv.rows() == 0 {
            return Err(Error::Contract("cross entropy of an empty batch".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= lv.cols()) {
            return Err(Error::Contract(format!(
                "label {bad} out of range for {} classes",
                lv.cols()
            )));
        }
        let mut probs = Vec::with_capacity(lv.len());
        let mut total = 0.0;
        for (r, &y) in lv.iter_rows().zip(labels) {
            let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = r.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum_exp.ln();
            total += lse - r[y];
            probs.extend(r.iter().map(|v| (v - max).exp() / sum_exp));
        }
        let loss = total / lv.rows() as f64;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean over all entries of `−m · ln(m + ε)`.
    pub fn mask_entropy(&mut self, m: NodeId) -> NodeId {
        let mv = self.value(m);
        let n = mv.len().max(1) as f64;
        let total: f64 = mv.data().iter().map(|&v| -v * (v + LOG_EPSILON).ln()).sum();
        let rg = self.rg(&[m]);
        self.push(Tensor::scalar(total / n), Op::MaskEntropy(m), rg)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let total: f64 = xv.data().iter().sum();
        let n = xv.len().max(1) as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(total / n), Op::Mean(x), rg)
    }

    /// Reverse sweep from a scalar node. Gradients land in each reachable node's grad slot.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        for node in &mut self.nodes {
            node.value.clear_grad();
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            self.nodes[idx].value.set_grad(g);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut acc = |id: NodeId, contribution: Vec<f64>| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => {
                    for (e, c) in existing.iter_mut().zip(contribution) {
                        *e += c;
                    }
                }
                slot @ None => *slot = Some(contribution),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    acc(*a, kernels::matmul_grad_lhs(g, bv, av.rows()));
                }
                if self.nodes[b.0].requires_grad {
                    acc(*b, kernels::matmul_grad_rhs(av, g, bv.cols()));
                }
            }
            Op::AddBias(x, bias) => {
                acc(*x, g.to_vec());
                let cols = out.cols();
                let mut gb = vec![0.0; cols];
                for (i, v) in g.iter().enumerate() {
                    gb[i % cols] += v;
                }
                acc(*bias, gb);
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, g.iter().zip(bv).map(|(g, y)| g * y).collect());
                acc(*b, g.iter().zip(av).map(|(g, x)| g * x).collect());
            }
            Op::ScaleShift(x, scale) => {
                acc(*x, g.iter().map(|v| v * scale).collect());
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let (w, len) = (xv.cols(), out.cols());
                let mut gx = vec![0.0; xv.len()];
                for r in 0..out.rows() {
                    gx[r * w + start..r * w + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                acc(*x, gx);
            }
            Op::Glu(x) => {
                let xv = self.value(*x);
                let u = out.cols();
                let mut gx = vec![0.0; xv.len()];
                for r in 0..xv.rows() {
                    let row = xv.row(r);
                    for j in 0..u {
                        let s = sigmoid(row[j + u]);
                        let gi = g[r * u + j];
                        gx[r * 2 * u + j] = gi * s;
                        gx[r * 2 * u + j + u] = gi * row[j] * s * (1.0 - s);
                    }
                }
                acc(*x, gx);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, g.iter().zip(xv).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect());
            }
            Op::Sigmoid(x) => {
                acc(*x, g.iter().zip(out.data()).map(|(g, s)| g * s * (1.0 - s)).collect());
            }
            Op::Project(x, projection) => {
                let alpha = projection.alpha();
                let cols = out.cols();
                let mut gx = vec![0.0; out.len()];
                for r in 0..out.rows() {
                    simplex::entmax_backward_into(
                        out.row(r),
                        alpha,
                        &g[r * cols..(r + 1) * cols],
                        &mut gx[r * cols..(r + 1) * cols],
                    );
                }
                acc(*x, gx);
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = out.shape();
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                let mut sum_dxhat = vec![0.0; cols];
                let mut sum_dxhat_xhat = vec![0.0; cols];
                for i in 0..rows * cols {
                    let j = i % cols;
                    dgamma[j] += g[i] * xhat[i];
                    dbeta[j] += g[i];
                    let dxh = g[i] * gam[j];
                    sum_dxhat[j] += dxh;
                    sum_dxhat_xhat[j] += dxh * xhat[i];
                }
                if self.nodes[x.0].requires_grad {
                    let n = rows as f64;
                    let gx = (0..rows * cols)
                        .map(|i| {
                            let j = i % cols;
                            let dxh = g[i] * gam[j];
                            inv_std[j] / n * (n * dxh - sum_dxhat[j] - xhat[i] * sum_dxhat_xhat[j])
                        })
                        .collect();
                    acc(*x, gx);
                }
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::BatchNormInfer {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = out.shape();
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                let mut gx = vec![0.0; rows * cols];
                for i in 0..rows * cols {
                    let j = i % cols;
                    dgamma[j] += g[i] * xhat[i];
                    dbeta[j] += g[i];
                    gx[i] = g[i] * gam[j] * inv_std[j];
                }
                acc(*x, gx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let cols = self.value(*logits).cols();
                let n = labels.len() as f64;
                let mut gl = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    gl[r * cols + y] -= 1.0;
                }
                for v in &mut gl {
                    *v *= g[0] / n;
                }
                acc(*logits, gl);
            }
            Op::MaskEntropy(m) => {
                let mv = self.value(*m).data();
                let n = mv.len().max(1) as f64;
                acc(
                    *m,
                    mv.iter()
                        .map(|&v| {
                            let e = v + LOG_EPSILON;
                            g[0] * (-e.ln() - v / e) / n
                        })
                        .collect(),
                );
            }
            Op::Sum(x) => {
                acc(*x, vec![g[0]; self.value(*x).len()]);
            }
            Op::Mean(x) => {
                let len = self.value(*x).len();
                acc(*x, vec![g[0] / len.max(1) as f64; len]);
            }
        }
    }
}

#[cfg(test)]
mod tests;
