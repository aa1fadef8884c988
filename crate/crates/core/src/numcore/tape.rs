//! Reverse-mode differentiation over an append-only operation tape.
//!
//! Every forward op pushes a node holding its output value and whatever the
//! backward rule needs. `backward` walks the nodes once in reverse creation
//! order, so gradients are bit-for-bit reproducible for identical tapes.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::kernels::{self, PoolAxis};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    Reshape(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    SoftmaxRows(Var),
    Gmp { x: Var, argmax: Vec<usize> },
    Gelu(Var),
    Sigmoid(Var),
    Sum(Var),
    SumSquares(Var),
    Cosine {
        pred: Var,
        protos: Arc<Tensor>,
        tau: f64,
        degenerate: Vec<bool>,
    },
    MaskedNll {
        scores: Var,
        target: usize,
        mask: Vec<bool>,
    },
    MomentGap { scores: Var, mask: Vec<bool> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    name: Option<String>,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A detached input: no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A named gradient-tracking leaf; its gradient is reported under `name`.
    pub fn named_leaf(&mut self, name: &str, value: Tensor) -> Var {
        let v = self.leaf(value);
        self.nodes[v.0].name = Some(name.to_string());
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = kernels::transpose(self.value(a))?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::add(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::sub(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::mul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = kernels::scale(self.value(a), c);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let out = kernels::add_row(self.value(x), self.value(row))?;
        let rg = self.rg(&[x, row]);
        Ok(self.push(out, Op::AddRow(x, row), rg))
    }

    pub fn scale_rows(&mut self, x: Var, factors: Var) -> Result<Var> {
        let out = kernels::scale_rows(self.value(x), self.value(factors))?;
        let rg = self.rg(&[x, factors]);
        Ok(self.push(out, Op::ScaleRows(x, factors), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (out, cache) =
            kernels::layer_norm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let rg = self.rg(&[x, gamma, beta]);
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat: cache.xhat,
            rstd: cache.rstd,
        };
        Ok(self.push(out, op, rg))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = kernels::softmax_rows(self.value(x))?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SoftmaxRows(x), rg))
    }

    /// Global max pooling; the gradient flows to the lowest-index maximum only.
    pub fn gmp(&mut self, x: Var, axis: PoolAxis) -> Result<Var> {
        let (out, argmax) = kernels::gmp(self.value(x), axis)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Gmp { x, argmax }, rg))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = kernels::gelu(self.value(x));
        let rg = self.rg(&[x]);
        self.push(out, Op::Gelu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = kernels::sigmoid(self.value(x));
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = kernels::sum(self.value(x));
        let rg = self.rg(&[x]);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let out = kernels::sum_squares(self.value(x));
        let rg = self.rg(&[x]);
        self.push(out, Op::SumSquares(x), rg)
    }

    /// Sum of several tensors of identical shape.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars
            .split_first()
            .ok_or_else(|| Error::Contract("add_all of an empty list".into()))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    pub fn mean_all(&mut self, vars: &[Var]) -> Result<Var> {
        let total = self.add_all(vars)?;
        Ok(self.scale(total, 1.0 / vars.len() as f64))
    }

    /// `tau · cos(pred, protos[c])` for every prototype row. Prototypes are
    /// treated as constants.
    pub fn cosine_scores(&mut self, pred: Var, protos: Arc<Tensor>, tau: f64) -> Result<Var> {
        let (scores, degenerate) = kernels::cosine_scores(self.value(pred).data(), &protos, tau)?;
        let rg = self.rg(&[pred]);
        let op = Op::Cosine {
            pred,
            protos,
            tau,
            degenerate,
        };
        Ok(self.push(Tensor::vector(scores), op, rg))
    }

    /// Entries whose cosine score fell back to 0 because of a zero norm.
    pub fn cosine_degenerate(&self, scores: Var) -> Option<&[bool]> {
        match &self.nodes[scores.0].op {
            Op::Cosine { degenerate, .. } => Some(degenerate),
            _ => None,
        }
    }

    pub fn masked_nll(&mut self, scores: Var, target: usize, mask: &[bool]) -> Result<Var> {
        let loss = kernels::masked_nll(self.value(scores).data(), target, mask)?;
        let rg = self.rg(&[scores]);
        let op = Op::MaskedNll {
            scores,
            target,
            mask: mask.to_vec(),
        };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    pub fn moment_gap(&mut self, scores: Var, mask: &[bool]) -> Result<Var> {
        let loss = kernels::moment_gap(self.value(scores).data(), mask)?;
        let rg = self.rg(&[scores]);
        let op = Op::MomentGap {
            scores,
            mask: mask.to_vec(),
        };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    /// Propagates d(loss)/d(node) back through the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[idx] = None;
            }
        }
        let names = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.name.clone().map(|name| (name, Var(i))))
            .collect();
        Ok(Gradients { grads, names })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, delta: Tensor| accumulate(grads, &self.nodes, v, delta);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, kernels::matmul(g, &kernels::transpose(val(*b))?)?);
                acc(*b, kernels::matmul(&kernels::transpose(val(*a))?, g)?);
            }
            Op::Transpose(a) => acc(*a, kernels::transpose(g)?),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, kernels::scale(g, -1.0));
            }
            Op::Mul(a, b) => {
                acc(*a, kernels::mul(g, val(*b))?);
                acc(*b, kernels::mul(g, val(*a))?);
            }
            Op::Scale(a, c) => acc(*a, kernels::scale(g, *c)),
            Op::AddRow(x, row) => {
                acc(*x, g.clone());
                let m = g.cols();
                let mut dr = vec![0.0; m];
                for i in 0..g.rows() {
                    for (d, v) in dr.iter_mut().zip(g.row(i)) {
                        *d += v;
                    }
                }
                acc(*row, Tensor::from_parts(val(*row).shape().to_vec(), dr));
            }
            Op::ScaleRows(x, f) => {
                let fx = val(*f);
                acc(*x, kernels::scale_rows(g, fx)?);
                let xv = val(*x);
                let df = (0..g.rows())
                    .map(|i| g.row(i).iter().zip(xv.row(i)).map(|(a, b)| a * b).sum())
                    .collect();
                acc(*f, Tensor::from_parts(fx.shape().to_vec(), df));
            }
            Op::Reshape(x) => acc(*x, g.reshape(val(*x).shape())?),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (n, d) = (g.rows(), g.cols());
                let gam = val(*gamma).data();
                let gd = g.data();
                let mut dx = vec![0.0; n * d];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for i in 0..n {
                    let row = i * d..(i + 1) * d;
                    let (gr, hr) = (&gd[row.clone()], &xhat[row.clone()]);
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..d {
                        let dh = gr[j] * gam[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                    }
                    mean_dh /= d as f64;
                    mean_dh_h /= d as f64;
                    for j in 0..d {
                        let dh = gr[j] * gam[j];
                        dx[i * d + j] = rstd[i] * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                acc(*x, Tensor::from_parts(vec![n, d], dx));
                acc(*gamma, Tensor::from_parts(val(*gamma).shape().to_vec(), dgamma));
                acc(*beta, Tensor::from_parts(val(*beta).shape().to_vec(), dbeta));
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let (n, m) = (y.rows(), y.cols());
                let mut dx = vec![0.0; n * m];
                for i in 0..n {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..m {
                        dx[i * m + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*x, Tensor::from_parts(vec![n, m], dx));
            }
            Op::Gmp { x, argmax } => {
                let mut dx = Tensor::zeros(val(*x).shape());
                for (k, &idx) in argmax.iter().enumerate() {
                    dx.data_mut()[idx] += g.data()[k];
                }
                acc(*x, dx);
            }
            Op::Gelu(x) => {
                let d = kernels::map(val(*x), kernels::gelu_grad_scalar);
                acc(*x, kernels::mul(g, &d)?);
            }
            Op::Sigmoid(x) => {
                let d = kernels::map(&node.value, |s| s * (1.0 - s));
                acc(*x, kernels::mul(g, &d)?);
            }
            Op::Sum(x) => acc(*x, Tensor::full(val(*x).shape(), g.item())),
            Op::SumSquares(x) => acc(*x, kernels::scale(val(*x), 2.0 * g.item())),
            Op::Cosine {
                pred,
                protos,
                tau,
                degenerate,
            } => {
                let p = val(*pred).data();
                let pn2: f64 = p.iter().map(|v| v * v).sum();
                let pn = pn2.sqrt();
                let mut dp = vec![0.0; p.len()];
                for (c, &gc) in g.data().iter().enumerate() {
                    if degenerate[c] || gc == 0.0 {
                        continue;
                    }
                    let a = protos.row(c);
                    let an = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = p.iter().zip(a).map(|(x, y)| x * y).sum();
                    let k = gc * tau / (pn * an);
                    for j in 0..p.len() {
                        dp[j] += k * (a[j] - dot / pn2 * p[j]);
                    }
                }
                acc(*pred, Tensor::from_parts(val(*pred).shape().to_vec(), dp));
            }
            Op::MaskedNll {
                scores,
                target,
                mask,
            } => {
                let s = val(*scores).data();
                let max = s
                    .iter()
                    .zip(mask)
                    .filter(|(_, &m)| m)
                    .map(|(&v, _)| v)
                    .fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = s
                    .iter()
                    .zip(mask)
                    .filter(|(_, &m)| m)
                    .map(|(&v, _)| (v - max).exp())
                    .sum();
                let gv = g.item();
                let mut ds: Vec<f64> = s
                    .iter()
                    .zip(mask)
                    .map(|(&v, &m)| if m { gv * (v - max).exp() / total } else { 0.0 })
                    .collect();
                ds[*target] -= gv;
                acc(*scores, Tensor::from_parts(val(*scores).shape().to_vec(), ds));
            }
            Op::MomentGap { scores, mask } => {
                let s = val(*scores).data();
                let (ms, vs) = kernels::masked_moments(s, mask, true)?;
                let (mu, vu) = kernels::masked_moments(s, mask, false)?;
                let ns = mask.iter().filter(|&&m| m).count() as f64;
                let nu = mask.len() as f64 - ns;
                let gv = g.item();
                let ds = s
                    .iter()
                    .zip(mask)
                    .map(|(&v, &m)| {
                        if m {
                            gv * (2.0 * (ms - mu) + 4.0 * (vs - vu) * (v - ms)) / ns
                        } else {
                            -gv * (2.0 * (ms - mu) + 4.0 * (vs - vu) * (v - mu)) / nu
                        }
                    })
                    .collect();
                acc(*scores, Tensor::from_parts(val(*scores).shape().to_vec(), ds));
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], v: Var, delta: Tensor) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    names: BTreeMap<String, Var>,
}

impl Gradients {
    /// Gradient of a node; `None` for detached nodes or nodes the loss does
    /// not depend on.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.get(name).and_then(|&v| self.get(v))
    }

    /// Gradients of all named leaves, keyed by name. Leaves the loss does not
    /// reach get a zero tensor.
    pub fn named(&self, tape: &Tape) -> BTreeMap<String, Tensor> {
        self.names
            .iter()
            .map(|(name, &v)| {
                let g = self
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(tape.shape(v)));
                (name.clone(), g)
            })
            .collect()
    }
}
