//! Row-major matrices as nested vectors and the elementary operations on them.

use crate::real::Real;

pub type Mat<T = f64> = Vec<Vec<T>>;

pub fn zeros<T: Real>(rows: usize, cols: usize) -> Mat<T> {
    vec![vec![T::zero(); cols]; rows]
}

pub fn from_flat<T: Real>(rows: usize, cols: usize, data: &[f64]) -> Mat<T> {
    assert_eq!(rows * cols, data.len(), "flat data does not match {rows}x{cols}");
    (0..rows)
        .map(|i| (0..cols).map(|j| T::from_f64(data[i * cols + j])).collect())
        .collect()
}

pub fn flatten<T: Real>(m: &Mat<T>) -> Vec<f64> {
    let mut out = Vec::new();
    for row in m {
        for &v in row {
            out.push(v.to_f64());
        }
    }
    out
}

pub fn matmul<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    let n = a.len();
    let k = b.len();
    let m = b[0].len();
    let mut out = zeros(n, m);
    for i in 0..n {
        assert_eq!(a[i].len(), k, "inner dimensions differ");
        for j in 0..m {
            let mut acc = T::zero();
            for t in 0..k {
                acc += a[i][t] * b[t][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

pub fn transpose<T: Real>(a: &Mat<T>) -> Mat<T> {
    let mut out = zeros(a[0].len(), a.len());
    for i in 0..a.len() {
        for j in 0..a[0].len() {
            out[j][i] = a[i][j];
        }
    }
    out
}

pub fn add<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    let mut out = a.clone();
    for i in 0..a.len() {
        for j in 0..a[i].len() {
            out[i][j] = a[i][j] + b[i][j];
        }
    }
    out
}

pub fn map<T: Real>(a: &Mat<T>, f: impl Fn(T) -> T) -> Mat<T> {
    a.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect()
}

/// `x · W + b` with `W` stored `in × out`.
pub fn linear<T: Real>(x: &Mat<T>, w: &Mat<T>, b: Option<&[T]>) -> Mat<T> {
    let mut out = matmul(x, w);
    if let Some(b) = b {
        for row in out.iter_mut() {
            for j in 0..row.len() {
                row[j] += b[j];
            }
        }
    }
    out
}

/// Row-wise layer norm with biased variance.
pub fn layer_norm<T: Real>(x: &Mat<T>, gamma: &[T], beta: &[T], eps: f64) -> Mat<T> {
    let mut out = x.clone();
    for i in 0..x.len() {
        let d = T::from_f64(x[i].len() as f64);
        let mut mean = T::zero();
        for &v in &x[i] {
            mean += v;
        }
        mean = mean / d;
        let mut var = T::zero();
        for &v in &x[i] {
            var += (v - mean) * (v - mean);
        }
        var = var / d;
        let denom = (var + T::from_f64(eps)).sqrt();
        for j in 0..x[i].len() {
            out[i][j] = (x[i][j] - mean) / denom * gamma[j] + beta[j];
        }
    }
    out
}

pub fn softmax_rows<T: Real>(x: &Mat<T>) -> Mat<T> {
    let mut out = x.clone();
    for i in 0..x.len() {
        let mut max = x[i][0];
        for &v in &x[i] {
            max = max.max(v);
        }
        let mut total = T::zero();
        for j in 0..x[i].len() {
            out[i][j] = (x[i][j] - max).exp();
            total += out[i][j];
        }
        for j in 0..x[i].len() {
            out[i][j] = out[i][j] / total;
        }
    }
    out
}

/// Maximum of every row.
pub fn row_max<T: Real>(x: &Mat<T>) -> Vec<T> {
    let mut out = Vec::new();
    for row in x {
        let mut m = row[0];
        for &v in &row[1..] {
            m = m.max(v);
        }
        out.push(m);
    }
    out
}

/// Maximum of every column.
pub fn col_max<T: Real>(x: &Mat<T>) -> Vec<T> {
    row_max(&transpose(x))
}

pub fn gelu<T: Real>(x: T) -> T {
    let inv_sqrt2 = T::one() / T::from_f64(2.0).sqrt();
    T::from_f64(0.5) * x * (T::one() + (x * inv_sqrt2).erf())
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::Dd;

    #[test]
    fn softmax_rows_sum_to_one() {
        let s = softmax_rows(&vec![vec![1.0, 2.0, 3.0], vec![-50.0, 0.0, 50.0]]);
        for row in s {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_by_hand() {
        let a = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let b = vec![vec![5.0], vec![6.0]];
        assert_eq!(matmul(&a, &b), vec![vec![17.0], vec![39.0]]);
    }

    #[test]
    fn pooling_axes() {
        let x = vec![vec![1.0, 5.0], vec![3.0, 2.0]];
        assert_eq!(row_max(&x), vec![5.0, 3.0]);
        assert_eq!(col_max(&x), vec![3.0, 5.0]);
    }

    #[test]
    fn activations_at_known_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
    }

    #[test]
    fn double_double_agrees_with_f64() {
        for x in [-3.0, -0.4, 0.0, 0.7, 2.5, 6.0] {
            let d: Dd = gelu(Dd::from(x));
            assert!((d.to_f64() - gelu(x)).abs() < 1e-15, "{x}");
            let s: Dd = sigmoid(Dd::from(x));
            assert!((s.to_f64() - sigmoid(x)).abs() < 1e-15, "{x}");
        }
    }
}
