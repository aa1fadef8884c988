//! Central finite-difference gradient checks.

use serde::{Deserialize, Serialize};

use crate::real::Real;

/// Floor of the relative-error denominator.
pub const DELTA: f64 = 1e-8;
pub const DEFAULT_H: f64 = 1e-5;

/// A named parameter tensor in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// `|a − b| / max(|a|, |b|, δ)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(DELTA)
}

fn coords(shape: &[usize], mut flat: usize) -> Vec<usize> {
    let mut out = vec![0; shape.len()];
    for d in (0..shape.len()).rev() {
        out[d] = flat % shape[d];
        flat /= shape[d];
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Coordinates of the worst element.
    pub worst: Vec<usize>,
    pub analytic: f64,
    pub numeric: f64,
    /// Set when a probe produced a non-finite loss.
    pub non_finite: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub h: f64,
    pub coverage: Coverage,
    pub threshold: f64,
    pub max_rel_error: f64,
    pub passed: bool,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The parameter with the largest error.
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Smallest and largest accepted finite-difference step.
pub const H_RANGE: (f64, f64) = (1e-7, 1e-3);

/// Which scalars of each parameter are probed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coverage {
    All,
    /// At most this many evenly spaced elements per parameter (first and
    /// last included).
    Sampled(usize),
}

impl Coverage {
    fn indices(self, len: usize) -> Vec<usize> {
        match self {
            Coverage::Sampled(k) if k < len => {
                if k <= 1 {
                    return vec![0; k.min(len)];
                }
                let mut out: Vec<usize> = (0..k).map(|j| j * (len - 1) / (k - 1)).collect();
                out.dedup();
                out
            }
            _ => (0..len).collect(),
        }
    }
}

/// Compares `analytic` (one gradient per parameter) against central
/// differences `(L(θ+h) − L(θ−h)) / 2h` of `loss`, one scalar at a time.
/// The difference is taken in `T` before rounding to `f64`, so a
/// double-double loss resolves changes far below one `f64` ulp of `L`.
pub fn finite_diff_grad<T, F>(
    loss: F,
    params: &[NamedArray],
    analytic: &[Vec<f64>],
    h: f64,
    threshold: f64,
) -> GradCheckReport
where
    T: Real,
    F: FnMut(&[NamedArray]) -> T,
{
    finite_diff_grad_with(loss, params, analytic, h, threshold, Coverage::All)
}

pub fn finite_diff_grad_with<T, F>(
    mut loss: F,
    params: &[NamedArray],
    analytic: &[Vec<f64>],
    h: f64,
    threshold: f64,
    coverage: Coverage,
) -> GradCheckReport
where
    T: Real,
    F: FnMut(&[NamedArray]) -> T,
{
    assert_eq!(params.len(), analytic.len(), "one analytic gradient per parameter");
    let mut probe = params.to_vec();
    let mut checks = Vec::with_capacity(params.len());
    for (k, p) in params.iter().enumerate() {
        assert_eq!(p.values.len(), analytic[k].len(), "gradient size for {}", p.name);
        let mut check = ParamCheck {
            name: p.name.clone(),
            max_rel_error: 0.0,
            worst: coords(&p.shape, 0),
            analytic: analytic[k].first().copied().unwrap_or(0.0),
            numeric: 0.0,
            non_finite: false,
        };
        for i in coverage.indices(p.values.len()) {
            let original = p.values[i];
            probe[k].values[i] = original + h;
            let plus = loss(&probe);
            probe[k].values[i] = original - h;
            let minus = loss(&probe);
            probe[k].values[i] = original;
            let numeric = (plus - minus).to_f64() / (2.0 * h);
            let a = analytic[k][i];
            let err = if numeric.is_finite() && a.is_finite() {
                relative_error(a, numeric)
            } else {
                f64::INFINITY
            };
            if !numeric.is_finite() {
                check.non_finite = true;
            }
            if err.is_nan() || err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst = coords(&p.shape, i);
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        checks.push(check);
    }
    let max_rel_error = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    GradCheckReport {
        h,
        coverage,
        threshold,
        max_rel_error,
        passed: max_rel_error < threshold && checks.iter().all(|c| !c.non_finite),
        params: checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(ps: &[NamedArray]) -> f64 {
        ps.iter().flat_map(|p| p.values.iter()).map(|v| v * v).sum()
    }

    fn params() -> Vec<NamedArray> {
        vec![
            NamedArray {
                name: "w".into(),
                shape: vec![2, 3],
                values: vec![0.5, -1.0, 2.0, 0.0, 3.0, -0.25],
            },
            NamedArray {
                name: "b".into(),
                shape: vec![1],
                values: vec![1.5],
            },
        ]
    }

    #[test]
    fn quadratic_matches_closed_form() {
        let ps = params();
        let analytic: Vec<Vec<f64>> = ps.iter().map(|p| p.values.iter().map(|v| 2.0 * v).collect()).collect();
        let report = finite_diff_grad(quadratic, &ps, &analytic, DEFAULT_H, 1e-8);
        assert!(report.passed, "{}", report.to_json());
        assert!(report.max_rel_error < 1e-8);
    }

    #[test]
    fn wrong_gradient_is_located() {
        let ps = params();
        let mut analytic: Vec<Vec<f64>> = ps.iter().map(|p| p.values.iter().map(|v| 2.0 * v).collect()).collect();
        analytic[0][4] += 1.0;
        let report = finite_diff_grad(quadratic, &ps, &analytic, DEFAULT_H, 1e-4);
        assert!(!report.passed);
        let worst = report.worst().unwrap();
        assert_eq!((worst.name.as_str(), worst.worst.as_slice()), ("w", &[1, 1][..]));
    }

    #[test]
    fn non_finite_probe_fails_with_coordinates() {
        let ps = params();
        let analytic = vec![vec![0.0; 6], vec![0.0]];
        let loss = |p: &[NamedArray]| if p[1].values[0] > 1.5 { f64::NAN } else { 0.0 };
        let report = finite_diff_grad(loss, &ps, &analytic, DEFAULT_H, 1e-4);
        assert!(!report.passed);
        let b = &report.params[1];
        assert!(b.non_finite && b.max_rel_error.is_infinite());
        assert_eq!(b.worst, vec![0]);
    }

    #[test]
    fn sampled_coverage_is_even_and_bounded() {
        assert_eq!(Coverage::Sampled(3).indices(9), vec![0, 4, 8]);
        assert_eq!(Coverage::Sampled(5).indices(3), vec![0, 1, 2]);
        assert_eq!(Coverage::All.indices(2), vec![0, 1]);
        assert_eq!(Coverage::Sampled(1).indices(4), vec![0]);
    }

    #[test]
    fn coordinates_are_row_major() {
        assert_eq!(coords(&[2, 3], 4), vec![1, 1]);
        assert_eq!(coords(&[4], 3), vec![3]);
        assert_eq!(coords(&[], 0), Vec::<usize>::new());
    }

    #[test]
    fn denominator_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1e-9, 0.0), 0.1);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
    }
}
