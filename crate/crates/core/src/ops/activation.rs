use ndarray::{Array, Dimension};

use crate::linalg::Scalar;

/// Negative slope shared by every leaky-ReLU in both networks.
pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu<R: Scalar, D: Dimension>(x: &Array<R, D>) -> Array<R, D> {
    let slope = R::from_f64(LEAKY_SLOPE);
    x.mapv(|v| if v > R::zero() { v } else { v * slope })
}

/// Gradient through leaky-ReLU. `y` is the forward output; its sign equals
/// the input sign, so the input need not be cached.
pub fn leaky_relu_backward<R: Scalar, D: Dimension>(
    y: &Array<R, D>,
    dy: &Array<R, D>,
) -> Array<R, D> {
    let slope = R::from_f64(LEAKY_SLOPE);
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |g, &out| {
        if out <= R::zero() {
            *g = *g * slope;
        }
    });
    dx
}

pub fn sigmoid<R: Scalar, D: Dimension>(z: &Array<R, D>) -> Array<R, D> {
    z.mapv(|v| R::one() / (R::one() + (-v).exp()))
}

/// Gradient through sigmoid given the forward output `s`.
pub fn sigmoid_backward<R: Scalar, D: Dimension>(s: &Array<R, D>, ds: &Array<R, D>) -> Array<R, D> {
    let mut dz = ds.clone();
    dz.zip_mut_with(s, |g, &sv| {
        *g = *g * sv * (R::one() - sv);
    });
    dz
}
