use ndarray::{Array, Dimension};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::linalg::Scalar;

/// Inverted dropout: kept activations are rescaled by `1/(1-rate)` during
/// training so inference can skip the layer entirely.
///
/// Returns the output and the multiplicative mask (0 for dropped units,
/// `1/(1-rate)` for kept ones). Mask entries are drawn in row-major order
/// from the supplied stream, so a given RNG state always yields the same
/// mask. A rate of zero performs no draws and returns an all-ones mask.
pub fn dropout_forward<R: Scalar, D: Dimension>(
    x: &Array<R, D>,
    rate: f64,
    rng: &mut ChaCha20Rng,
) -> (Array<R, D>, Array<R, D>) {
    assert!((0.0..1.0).contains(&rate), "dropout rate {rate} outside [0, 1)");
    if rate == 0.0 {
        return (x.clone(), Array::ones(x.raw_dim()));
    }
    let scale = R::from_f64(1.0 / (1.0 - rate));
    let mask = Array::from_shape_simple_fn(x.raw_dim(), || {
        if rng.gen::<f64>() < rate {
            R::zero()
        } else {
            scale
        }
    });
    (x * &mask, mask)
}

pub fn dropout_backward<R: Scalar, D: Dimension>(
    mask: &Array<R, D>,
    dy: &Array<R, D>,
) -> Array<R, D> {
    dy * mask
}
