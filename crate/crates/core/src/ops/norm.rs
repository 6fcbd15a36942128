use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::Scalar;

/// Norms below this are treated as numerically zero.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Projects each row onto the unit sphere, returning the normalized rows
/// and the original norms (needed by the backward pass).
///
/// A row whose norm is below [`DEGENERATE_NORM`] cannot be given a
/// direction, so it is rejected rather than silently propagated.
pub fn l2_normalize_rows<R: Scalar>(x: &Array2<R>) -> Result<(Array2<R>, Array1<R>)> {
    let mut y = x.clone();
    let mut norms = Array1::<R>::zeros(x.nrows());
    for (i, mut row) in y.rows_mut().into_iter().enumerate() {
        let norm = row.iter().map(|&v| v * v).sum::<R>().sqrt();
        if norm.to_f64() < DEGENERATE_NORM {
            return Err(Error::DegenerateVector(format!(
                "row {i} has norm {:.3e}, below {DEGENERATE_NORM:.0e}",
                norm.to_f64()
            )));
        }
        row.mapv_inplace(|v| v / norm);
        norms[i] = norm;
    }
    Ok((y, norms))
}

/// Backward pass of row normalization given the forward outputs:
/// `dx = (dy - y (y . dy)) / norm`, the tangent-space projection of `dy`
/// scaled by the inverse input length.
pub fn l2_normalize_rows_backward<R: Scalar>(
    y: &Array2<R>,
    norms: &Array1<R>,
    dy: &Array2<R>,
) -> Array2<R> {
    debug_assert_eq!(y.dim(), dy.dim());
    let mut dx = dy.clone();
    for ((mut dx_row, y_row), &norm) in dx
        .rows_mut()
        .into_iter()
        .zip(y.rows())
        .zip(norms.iter())
    {
        let dot = y_row
            .iter()
            .zip(dx_row.iter())
            .map(|(&a, &b)| a * b)
            .sum::<R>();
        for (d, &yv) in dx_row.iter_mut().zip(y_row.iter()) {
            *d = (*d - yv * dot) / norm;
        }
    }
    dx
}
