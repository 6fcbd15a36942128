use ndarray::{Array3, Array4, ArrayView3, Axis};
use rayon::prelude::*;

use crate::linalg::{Scalar, BATCH_CHUNK};

/// Source coordinates for one output axis position under half-pixel
/// sampling: contributing indices `lo`/`hi` and the weight of `hi`.
#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn axis_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Bilinear interpolation of a `(C, H, W)` map to `(C, out_h, out_w)`
/// using half-pixel centers. Resizing to the input size returns an exact
/// copy (no arithmetic), so equal-resolution taps pass through bit-intact.
pub fn bilinear_resize_forward<R: Scalar>(
    x: ArrayView3<R>,
    out_h: usize,
    out_w: usize,
) -> Array3<R> {
    let (c, h, w) = x.dim();
    assert!(out_h > 0 && out_w > 0);
    if (h, w) == (out_h, out_w) {
        return x.to_owned();
    }
    let ys = axis_taps(h, out_h);
    let xs_taps = axis_taps(w, out_w);
    let src = x.as_slice().expect("resize input must be contiguous");
    let mut out = Array3::<R>::zeros((c, out_h, out_w));
    let dst = out.as_slice_mut().unwrap();
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let base = ch * out_h * out_w;
        for (oy, ty) in ys.iter().enumerate() {
            let wy = ty.frac;
            for (ox, tx) in xs_taps.iter().enumerate() {
                let wx = tx.frac;
                let v00 = plane[ty.lo * w + tx.lo].to_f64();
                let v01 = plane[ty.lo * w + tx.hi].to_f64();
                let v10 = plane[ty.hi * w + tx.lo].to_f64();
                let v11 = plane[ty.hi * w + tx.hi].to_f64();
                let top = v00 + (v01 - v00) * wx;
                let bot = v10 + (v11 - v10) * wx;
                dst[base + oy * out_w + ox] = R::from_f64(top + (bot - top) * wy);
            }
        }
    }
    out
}

/// Adjoint of [`bilinear_resize_forward`]: scatters each output gradient
/// back to its (up to four) source cells with the same weights.
pub fn bilinear_resize_backward<R: Scalar>(
    dy: ArrayView3<R>,
    in_h: usize,
    in_w: usize,
) -> Array3<R> {
    let (c, out_h, out_w) = dy.dim();
    if (in_h, in_w) == (out_h, out_w) {
        return dy.to_owned();
    }
    let ys = axis_taps(in_h, out_h);
    let xs_taps = axis_taps(in_w, out_w);
    let src = dy.as_slice().expect("resize grad must be contiguous");
    let mut dx = Array3::<R>::zeros((c, in_h, in_w));
    let dst = dx.as_slice_mut().unwrap();
    for ch in 0..c {
        let base = ch * out_h * out_w;
        let plane = &mut dst[ch * in_h * in_w..(ch + 1) * in_h * in_w];
        for (oy, ty) in ys.iter().enumerate() {
            let wy = ty.frac;
            for (ox, tx) in xs_taps.iter().enumerate() {
                let wx = tx.frac;
                let g = src[base + oy * out_w + ox].to_f64();
                plane[ty.lo * in_w + tx.lo] =
                    plane[ty.lo * in_w + tx.lo] + R::from_f64(g * (1.0 - wy) * (1.0 - wx));
                plane[ty.lo * in_w + tx.hi] =
                    plane[ty.lo * in_w + tx.hi] + R::from_f64(g * (1.0 - wy) * wx);
                plane[ty.hi * in_w + tx.lo] =
                    plane[ty.hi * in_w + tx.lo] + R::from_f64(g * wy * (1.0 - wx));
                plane[ty.hi * in_w + tx.hi] =
                    plane[ty.hi * in_w + tx.hi] + R::from_f64(g * wy * wx);
            }
        }
    }
    dx
}

/// Batched resize, parallel over fixed-size batch chunks.
pub fn bilinear_resize_batch<R: Scalar>(x: &Array4<R>, out_h: usize, out_w: usize) -> Array4<R> {
    let (bsz, c, h, w) = x.dim();
    if (h, w) == (out_h, out_w) {
        return x.clone();
    }
    let mut out = Array4::<R>::zeros((bsz, c, out_h, out_w));
    let x_chunks: Vec<_> = x.axis_chunks_iter(Axis(0), BATCH_CHUNK).collect();
    let out_chunks: Vec<_> = out.axis_chunks_iter_mut(Axis(0), BATCH_CHUNK).collect();
    x_chunks
        .into_par_iter()
        .zip(out_chunks)
        .for_each(|(xc, mut oc)| {
            for i in 0..xc.len_of(Axis(0)) {
                let resized = bilinear_resize_forward(xc.index_axis(Axis(0), i), out_h, out_w);
                oc.index_axis_mut(Axis(0), i).assign(&resized);
            }
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rng_from;
    use ndarray::Array;
    use rand::Rng;

    #[test]
    fn identity_resize_is_bitwise_copy() {
        let mut rng = rng_from(61);
        let x = Array::from_shape_fn((3, 5, 7), |_| rng.gen::<f32>());
        let y = bilinear_resize_forward(x.view(), 5, 7);
        assert_eq!(x, y);
    }

    #[test]
    fn doubling_known_values() {
        let x = Array::from_shape_vec((1, 2, 2), vec![0.0f64, 1.0, 2.0, 3.0]).unwrap();
        let y = bilinear_resize_forward(x.view(), 4, 4);
        // Effective fractional coordinates per axis are [0, .25, .75, 1],
        // and the source plane is the linear field 2*fy + fx.
        let f = [0.0, 0.25, 0.75, 1.0];
        for oy in 0..4 {
            for ox in 0..4 {
                let expect = 2.0 * f[oy] + f[ox];
                assert!((y[[0, oy, ox]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rng_from(62);
        let x = Array::from_shape_fn((2, 3, 5), |_| rng.gen::<f64>());
        let dy = Array::from_shape_fn((2, 7, 11), |_| rng.gen::<f64>() - 0.5);
        let dx = bilinear_resize_backward(dy.view(), 3, 5);
        let h = 1e-6;
        let mut xp = x.clone();
        for idx in [[0, 0, 0], [1, 2, 4], [0, 1, 2], [1, 0, 3]] {
            xp[idx] += h;
            let up = (&bilinear_resize_forward(xp.view(), 7, 11) * &dy).sum();
            xp[idx] -= 2.0 * h;
            let down = (&bilinear_resize_forward(xp.view(), 7, 11) * &dy).sum();
            xp[idx] += h;
            assert!((dx[idx] - (up - down) / (2.0 * h)).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_conserves_gradient_mass() {
        let mut rng = rng_from(63);
        let dy = Array::from_shape_fn((1, 33, 53), |_| rng.gen::<f64>() - 0.5);
        let dx = bilinear_resize_backward(dy.view(), 5, 10);
        assert!((dx.sum() - dy.sum()).abs() < 1e-9);
    }

    #[test]
    fn batch_matches_per_image() {
        let mut rng = rng_from(64);
        let x = Array::from_shape_fn((9, 2, 5, 10), |_| rng.gen::<f32>());
        let batched = bilinear_resize_batch(&x, 33, 53);
        for i in 0..9 {
            let single = bilinear_resize_forward(x.index_axis(Axis(0), i), 33, 53);
            assert_eq!(batched.index_axis(Axis(0), i), single);
        }
    }
}
