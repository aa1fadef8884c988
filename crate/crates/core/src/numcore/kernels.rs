//! Forward kernels on detached tensors.
//!
//! These are pure functions; the tape wraps them and adds backward rules.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_LN_EPS: f64 = 1e-5;

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.require_matrix("matmul")?;
    let (k2, n) = b.require_matrix("matmul")?;
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = a.require_matrix("transpose")?;
    let d = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

fn zip_same(a: &Tensor, b: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same(a, b, "add", |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same(a, b, "sub", |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_same(a, b, "mul", |x, y| x * y)
}

pub fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    map(a, |x| x * c)
}

/// Adds a length-`m` vector to every row of an `n×m` matrix.
pub fn add_row(x: &Tensor, row: &Tensor) -> Result<Tensor> {
    let (n, m) = x.require_matrix("add_row")?;
    if row.numel() != m {
        return Err(Error::shape("add_row", x.shape(), row.shape()));
    }
    let r = row.data();
    let mut out = x.data().to_vec();
    for i in 0..n {
        for (o, &b) in out[i * m..(i + 1) * m].iter_mut().zip(r) {
            *o += b;
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

/// Multiplies row `i` of an `n×m` matrix by `factors[i]`.
pub fn scale_rows(x: &Tensor, factors: &Tensor) -> Result<Tensor> {
    let (n, m) = x.require_matrix("scale_rows")?;
    if factors.numel() != n {
        return Err(Error::shape("scale_rows", x.shape(), factors.shape()));
    }
    let f = factors.data();
    let mut out = x.data().to_vec();
    for i in 0..n {
        for o in &mut out[i * m..(i + 1) * m] {
            *o *= f[i];
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

/// Normalized activations and inverse standard deviations kept for backward.
pub struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

/// Row-wise layer normalization with biased variance.
pub fn layer_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    let (n, d) = x.require_matrix("layer_norm")?;
    if gamma.numel() != d || beta.numel() != d {
        return Err(Error::shape("layer_norm", x.shape(), gamma.shape()));
    }
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("layer_norm eps must be positive, got {eps}")));
    }
    let (g, b) = (gamma.data(), beta.data());
    let mut out = vec![0.0; n * d];
    let mut xhat = vec![0.0; n * d];
    let mut rstd = vec![0.0; n];
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + eps).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat[i * d + j] = h;
            out[i * d + j] = h * g[j] + b[j];
        }
    }
    Ok((Tensor::from_parts(vec![n, d], out), LayerNormCache { xhat, rstd }))
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (n, m) = x.require_matrix("softmax_rows")?;
    let mut out = x.data().to_vec();
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

/// Axis along which global max pooling reduces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolAxis {
    /// Reduce over rows: one maximum per column.
    Rows,
    /// Reduce over columns: one maximum per row.
    Cols,
}

impl PoolAxis {
    /// Numeric axis index (0 = rows, 1 = columns).
    pub fn from_index(axis: usize) -> Result<Self> {
        match axis {
            0 => Ok(PoolAxis::Rows),
            1 => Ok(PoolAxis::Cols),
            _ => Err(Error::Contract(format!("gmp axis must be 0 or 1, got {axis}"))),
        }
    }
}

/// Global max pooling. Returns the maxima and, for each, the flat index of the
/// winning element. Ties go to the lowest index along the pooled axis.
pub fn gmp(x: &Tensor, axis: PoolAxis) -> Result<(Tensor, Vec<usize>)> {
    let (n, m) = x.require_matrix("gmp")?;
    let d = x.data();
    let (outer, inner, flat): (usize, usize, fn(usize, usize, usize, usize) -> usize) = match axis {
        PoolAxis::Cols => (n, m, |o, i, _n, m| o * m + i),
        PoolAxis::Rows => (m, n, |o, i, _n, m| i * m + o),
    };
    let mut values = Vec::with_capacity(outer);
    let mut argmax = Vec::with_capacity(outer);
    for o in 0..outer {
        let mut best = flat(o, 0, n, m);
        for i in 1..inner {
            let idx = flat(o, i, n, m);
            if d[idx] > d[best] {
                best = idx;
            }
        }
        values.push(d[best]);
        argmax.push(best);
    }
    Ok((Tensor::vector(values), argmax))
}

/// Standard normal CDF via `erf`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub fn gelu_grad_scalar(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn gelu(x: &Tensor) -> Tensor {
    map(x, gelu_scalar)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    map(x, sigmoid_scalar)
}

pub fn sum(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().sum())
}

pub fn sum_squares(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().map(|v| v * v).sum())
}

/// Scaled cosine similarity between `pred` and every row of `protos`.
///
/// Entries where either vector has zero norm fall back to a score of 0 and are
/// flagged in the returned mask.
pub fn cosine_scores(pred: &[f64], protos: &Tensor, tau: f64) -> Result<(Vec<f64>, Vec<bool>)> {
    let (c, n) = protos.require_matrix("cosine_scores")?;
    if pred.len() != n {
        return Err(Error::shape("cosine_scores", &[pred.len()], protos.shape()));
    }
    let pnorm = pred.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut scores = vec![0.0; c];
    let mut degenerate = vec![false; c];
    for k in 0..c {
        let row = protos.row(k);
        let anorm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if pnorm == 0.0 || anorm == 0.0 {
            degenerate[k] = true;
            continue;
        }
        let dot: f64 = pred.iter().zip(row).map(|(a, b)| a * b).sum();
        scores[k] = tau * dot / (pnorm * anorm);
    }
    Ok((scores, degenerate))
}

/// Negative log-softmax of `scores[target]`, normalized over the masked entries.
pub fn masked_nll(scores: &[f64], target: usize, mask: &[bool]) -> Result<f64> {
    if mask.len() != scores.len() {
        return Err(Error::shape("masked_nll", &[scores.len()], &[mask.len()]));
    }
    if target >= scores.len() || !mask[target] {
        return Err(Error::Contract(format!("target {target} is not in the softmax mask")));
    }
    let max = masked(scores, mask).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + masked(scores, mask).map(|s| (s - max).exp()).sum::<f64>().ln();
    Ok(lse - scores[target])
}

fn masked<'a>(scores: &'a [f64], mask: &'a [bool]) -> impl Iterator<Item = f64> + 'a {
    scores.iter().zip(mask).filter(|(_, &m)| m).map(|(&s, _)| s)
}

/// Mean and population variance of the masked (`want == true`) or unmasked entries.
pub fn masked_moments(scores: &[f64], mask: &[bool], want: bool) -> Result<(f64, f64)> {
    let n = mask.iter().filter(|&&m| m == want).count();
    if n == 0 {
        return Err(Error::Contract(format!(
            "no {} entries to take moments over",
            if want { "masked" } else { "unmasked" }
        )));
    }
    let pick = || scores.iter().zip(mask).filter(move |(_, &m)| m == want).map(|(&s, _)| s);
    let mean = pick().sum::<f64>() / n as f64;
    let var = pick().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
    Ok((mean, var))
}

/// Squared gap between the means plus squared gap between the variances of
/// the masked and unmasked entries.
pub fn moment_gap(scores: &[f64], mask: &[bool]) -> Result<f64> {
    if mask.len() != scores.len() {
        return Err(Error::shape("moment_gap", &[scores.len()], &[mask.len()]));
    }
    let (ms, vs) = masked_moments(scores, mask, true)?;
    let (mu, vu) = masked_moments(scores, mask, false)?;
    Ok((ms - mu).powi(2) + (vs - vu).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let a = t(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&a, &Tensor::eye(2)).unwrap(), a);
        let r = matmul(&t(&[&[1.0, 2.0]]), &t(&[&[3.0], &[4.0]])).unwrap();
        assert_eq!(r.data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = t(&[&[5.0, 5.0, 5.0]]);
        let (y, _) = layer_norm(&x, &Tensor::ones(&[3]), &Tensor::zeros(&[3]), DEFAULT_LN_EPS).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn layer_norm_two_point_row() {
        let x = t(&[&[1.0, -1.0]]);
        let (y, _) = layer_norm(&x, &Tensor::ones(&[2]), &Tensor::zeros(&[2]), 1e-12).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-9);
        assert!((y.data()[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_closed_forms() {
        let y = softmax_rows(&t(&[&[0.0, 0.0], &[2f64.ln(), 0.0], &[1000.0, 0.0]])).unwrap();
        assert_eq!(y.row(0), &[0.5, 0.5]);
        assert!((y.get(1, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((y.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((y.get(2, 0) - 1.0).abs() < 1e-15);
        assert!(y.get(2, 1) < 1e-300 || y.get(2, 1) == 0.0);
        assert!(y.is_finite());
    }

    #[test]
    fn gmp_rows_and_ties() {
        let x = t(&[&[1.0, 5.0, 3.0], &[2.0, 2.0, 2.0]]);
        let (v, idx) = gmp(&x, PoolAxis::Cols).unwrap();
        assert_eq!(v.data(), &[5.0, 2.0]);
        assert_eq!(idx, vec![1, 3]);
        let (v, idx) = gmp(&x, PoolAxis::Rows).unwrap();
        assert_eq!(v.data(), &[2.0, 5.0, 3.0]);
        assert_eq!(idx, vec![3, 1, 2]);
    }

    #[test]
    fn activation_origin_and_saturation() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!(1.0 - sigmoid_scalar(50.0) < 1e-20);
        assert!(sigmoid_scalar(-50.0) > 0.0);
    }
}
