//! Central finite-difference gradient verification.
//!
//! Every layer ships its own spot checks, but the end-to-end losses are
//! verified by flattening a fixture network's parameters, perturbing each
//! coordinate, and comparing the numeric slope against backpropagation.
//! Checks run in `f64`: the tolerances here are unreachable in `f32`.

use ndarray::Array1;

/// Perturbation used by the test suite. Large enough that `f64` rounding
/// is negligible, small enough that curvature is.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Numeric gradient of `f` at `theta` by central differences.
pub fn central_difference<F>(mut f: F, theta: &Array1<f64>, step: f64) -> Array1<f64>
where
    F: FnMut(&Array1<f64>) -> f64,
{
    let mut work = theta.clone();
    let mut grad = Array1::<f64>::zeros(theta.len());
    for i in 0..theta.len() {
        let orig = work[i];
        work[i] = orig + step;
        let up = f(&work);
        work[i] = orig - step;
        let down = f(&work);
        work[i] = orig;
        grad[i] = (up - down) / (2.0 * step);
    }
    grad
}

/// `|a-b| / (|a| + |b| + 1e-8)`: symmetric, and tolerant of pairs that are
/// both numerically zero.
pub fn symmetric_relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs() + 1e-8)
}

#[derive(Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

pub fn compare(analytic: &Array1<f64>, numeric: &Array1<f64>) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len());
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: analytic.len(),
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric.iter()).enumerate() {
        let rel = symmetric_relative_error(a, n);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    report
}

/// Convenience wrapper: numeric gradient of `f` at `theta` compared with
/// the caller's analytic gradient.
pub fn check<F>(f: F, theta: &Array1<f64>, analytic: &Array1<f64>, step: f64) -> GradCheckReport
where
    F: FnMut(&Array1<f64>) -> f64,
{
    let numeric = central_difference(f, theta, step);
    compare(analytic, &numeric)
}
