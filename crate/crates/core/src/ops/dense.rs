use ndarray::{Array1, Array2};

use crate::linalg::{matmul, Scalar};

/// Fully connected layer: `y = x W^T + b` with `x` of shape `(B, in)` and
/// `w` of shape `(out, in)`.
pub fn dense_forward<R: Scalar>(x: &Array2<R>, w: &Array2<R>, b: &Array1<R>) -> Array2<R> {
    assert_eq!(x.ncols(), w.ncols(), "feature width mismatch");
    assert_eq!(b.len(), w.nrows());
    let mut y = matmul(x.view(), w.t());
    for mut row in y.rows_mut() {
        row += b;
    }
    y
}

pub struct DenseGrads<R> {
    pub dx: Array2<R>,
    pub dw: Array2<R>,
    pub db: Array1<R>,
}

pub fn dense_backward<R: Scalar>(x: &Array2<R>, w: &Array2<R>, dy: &Array2<R>) -> DenseGrads<R> {
    debug_assert_eq!(dy.dim(), (x.nrows(), w.nrows()));
    let dx = matmul(dy.view(), w.view());
    let dw = matmul(dy.t(), x.view());
    // Column sums accumulated in fixed row order for reproducibility.
    let mut db = Array1::<R>::zeros(w.nrows());
    for row in dy.rows() {
        db += &row;
    }
    DenseGrads { dx, dw, db }
}
