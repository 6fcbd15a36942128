use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayView3, ArrayViewMut3, Axis};
use rayon::prelude::*;

use crate::linalg::{Scalar, BATCH_CHUNK};

/// Spatial padding scheme.
///
/// The regressor uses `Valid` (no padding); the discriminators use `Same`
/// with ceil spatial division so small maps survive repeated halving.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

/// Output extent and leading pad for one spatial axis.
fn axis_geometry(input: usize, k: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => {
            assert!(input >= k, "input {input} smaller than kernel {k}");
            ((input - k) / stride + 1, 0)
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(input);
            (out, total / 2)
        }
    }
}

pub fn conv2d_output_shape(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: Padding,
) -> (usize, usize) {
    (
        axis_geometry(h, kh, stride, padding).0,
        axis_geometry(w, kw, stride, padding).0,
    )
}

/// Writes one sample's patch matrix into a shared column buffer.
///
/// The buffer holds a whole batch chunk side by side: each logical row has
/// `row_len` elements and this sample occupies columns
/// `[col_offset, col_offset + ho*wo)`, so one matrix product covers every
/// sample in the chunk.
#[allow(clippy::too_many_arguments)]
fn im2col<R: Scalar>(
    x: ArrayView3<R>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_t: usize,
    pad_l: usize,
    ho: usize,
    wo: usize,
    row_len: usize,
    col_offset: usize,
    col: &mut Array2<R>,
) {
    let (c_in, h, w) = x.dim();
    debug_assert_eq!(col.dim(), (c_in * kh * kw, row_len));
    debug_assert!(col_offset + ho * wo <= row_len);
    let xs = x.as_slice().expect("conv input must be contiguous");
    let cs = col.as_slice_mut().expect("col buffer is contiguous");
    let plane = h * w;
    for c in 0..c_in {
        for di in 0..kh {
            for dj in 0..kw {
                let row = (c * kh + di) * kw + dj;
                let row_base = row * row_len + col_offset;
                for oy in 0..ho {
                    let iy = (oy * stride + di) as isize - pad_t as isize;
                    let seg = &mut cs[row_base + oy * wo..row_base + (oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        seg.fill(R::zero());
                        continue;
                    }
                    let src_row = c * plane + iy as usize * w;
                    if stride == 1 {
                        // ix = ox + dj - pad_l must land in [0, w)
                        let ox_lo = pad_l.saturating_sub(dj).min(wo);
                        let ox_hi = (w + pad_l).saturating_sub(dj).min(wo).max(ox_lo);
                        seg[..ox_lo].fill(R::zero());
                        let src_lo = src_row + ox_lo + dj - pad_l;
                        seg[ox_lo..ox_hi].copy_from_slice(&xs[src_lo..src_lo + (ox_hi - ox_lo)]);
                        seg[ox_hi..].fill(R::zero());
                    } else {
                        for (ox, v) in seg.iter_mut().enumerate() {
                            let ix = (ox * stride + dj) as isize - pad_l as isize;
                            *v = if ix >= 0 && ix < w as isize {
                                xs[src_row + ix as usize]
                            } else {
                                R::zero()
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add transpose of [`im2col`]: accumulates one sample's column
/// gradients (at `col_offset` in the shared buffer) back into its input
/// gradient.
#[allow(clippy::too_many_arguments)]
fn col2im<R: Scalar>(
    col: &Array2<R>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_t: usize,
    pad_l: usize,
    ho: usize,
    wo: usize,
    row_len: usize,
    col_offset: usize,
    mut dx: ArrayViewMut3<R>,
) {
    let (c_in, h, w) = dx.dim();
    let xs = dx.as_slice_mut().expect("grad buffer is contiguous");
    let cs = col.as_slice().expect("col buffer is contiguous");
    let plane = h * w;
    for c in 0..c_in {
        for di in 0..kh {
            for dj in 0..kw {
                let row = (c * kh + di) * kw + dj;
                let row_base = row * row_len + col_offset;
                for oy in 0..ho {
                    let iy = (oy * stride + di) as isize - pad_t as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let seg = &cs[row_base + oy * wo..row_base + (oy + 1) * wo];
                    let dst_row = c * plane + iy as usize * w;
                    for (ox, &v) in seg.iter().enumerate() {
                        let ix = (ox * stride + dj) as isize - pad_l as isize;
                        if ix >= 0 && ix < w as isize {
                            xs[dst_row + ix as usize] = xs[dst_row + ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

/// Batched 2D convolution. `x` is `(B, C_in, H, W)`, `w` is
/// `(C_out, C_in, kh, kw)`.
pub fn conv2d_forward<R: Scalar>(
    x: &Array4<R>,
    w: &Array4<R>,
    b: &Array1<R>,
    stride: usize,
    padding: Padding,
) -> Array4<R> {
    let (bsz, c_in, h, wd) = x.dim();
    let (c_out, c_in2, kh, kw) = w.dim();
    assert_eq!(c_in, c_in2, "input channels {c_in} vs kernel {c_in2}");
    assert_eq!(b.len(), c_out);
    let (ho, pad_t) = axis_geometry(h, kh, stride, padding);
    let (wo, pad_l) = axis_geometry(wd, kw, stride, padding);
    let k = c_in * kh * kw;
    let p = ho * wo;
    let w_mat = w.view().into_shape_with_order((c_out, k)).unwrap();

    let mut out = Array4::<R>::zeros((bsz, c_out, ho, wo));
    let x_chunks: Vec<_> = x.axis_chunks_iter(Axis(0), BATCH_CHUNK).collect();
    let out_chunks: Vec<_> = out.axis_chunks_iter_mut(Axis(0), BATCH_CHUNK).collect();
    x_chunks
        .into_par_iter()
        .zip(out_chunks)
        .for_each(|(xc, mut oc)| {
            // One patch matrix and one product for the whole chunk: small
            // per-sample products waste most of the matmul kernel.
            let l = xc.len_of(Axis(0));
            let mut col = Array2::<R>::zeros((k, l * p));
            for i in 0..l {
                im2col(
                    xc.index_axis(Axis(0), i),
                    kh,
                    kw,
                    stride,
                    pad_t,
                    pad_l,
                    ho,
                    wo,
                    l * p,
                    i * p,
                    &mut col,
                );
            }
            let mut y = Array2::<R>::zeros((c_out, l * p));
            general_mat_mul(R::one(), &w_mat, &col.view(), R::zero(), &mut y);
            // Scatter back to (sample, channel, spatial) order, adding bias.
            let ys = y.as_slice().expect("gemm output is contiguous");
            let os = oc.as_slice_mut().expect("output chunk is contiguous");
            for i in 0..l {
                for o in 0..c_out {
                    let dst = &mut os[(i * c_out + o) * p..(i * c_out + o + 1) * p];
                    let src = &ys[o * l * p + i * p..o * l * p + (i + 1) * p];
                    let bias = b[o];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = *s + bias;
                    }
                }
            }
        });
    out
}

pub struct Conv2dGrads<R> {
    pub dx: Array4<R>,
    pub dw: Array4<R>,
    pub db: Array1<R>,
}

/// Gradients of a 2D convolution. Weight/bias partials are accumulated per
/// fixed-size batch chunk and reduced in chunk order, so the result does not
/// depend on thread scheduling.
pub fn conv2d_backward<R: Scalar>(
    x: &Array4<R>,
    w: &Array4<R>,
    dy: &Array4<R>,
    stride: usize,
    padding: Padding,
) -> Conv2dGrads<R> {
    let (bsz, c_in, h, wd) = x.dim();
    let (c_out, _, kh, kw) = w.dim();
    let (ho, pad_t) = axis_geometry(h, kh, stride, padding);
    let (wo, pad_l) = axis_geometry(wd, kw, stride, padding);
    debug_assert_eq!(dy.dim(), (bsz, c_out, ho, wo));
    let k = c_in * kh * kw;
    let p = ho * wo;
    let w_mat = w.view().into_shape_with_order((c_out, k)).unwrap();

    let mut dx = Array4::<R>::zeros((bsz, c_in, h, wd));
    let x_chunks: Vec<_> = x.axis_chunks_iter(Axis(0), BATCH_CHUNK).collect();
    let dy_chunks: Vec<_> = dy.axis_chunks_iter(Axis(0), BATCH_CHUNK).collect();
    let dx_chunks: Vec<_> = dx.axis_chunks_iter_mut(Axis(0), BATCH_CHUNK).collect();

    let partials: Vec<(Array2<R>, Array1<R>)> = x_chunks
        .into_par_iter()
        .zip(dy_chunks)
        .zip(dx_chunks)
        .map(|((xc, dyc), mut dxc)| {
            let l = xc.len_of(Axis(0));
            let mut col = Array2::<R>::zeros((k, l * p));
            for i in 0..l {
                im2col(
                    xc.index_axis(Axis(0), i),
                    kh,
                    kw,
                    stride,
                    pad_t,
                    pad_l,
                    ho,
                    wo,
                    l * p,
                    i * p,
                    &mut col,
                );
            }
            // Gather the chunk's upstream gradient into channel-major order
            // so each direction is a single product over the whole chunk.
            let mut dy_big = Array2::<R>::zeros((c_out, l * p));
            {
                let src = dyc.as_slice().expect("dy chunk is contiguous");
                let dst = dy_big.as_slice_mut().expect("dy buffer is contiguous");
                for i in 0..l {
                    for o in 0..c_out {
                        dst[o * l * p + i * p..o * l * p + (i + 1) * p]
                            .copy_from_slice(&src[(i * c_out + o) * p..(i * c_out + o + 1) * p]);
                    }
                }
            }
            // dW = dY · col^T, db = row sums of dY
            let mut dw_part = Array2::<R>::zeros((c_out, k));
            general_mat_mul(R::one(), &dy_big, &col.t(), R::one(), &mut dw_part);
            let mut db_part = Array1::<R>::zeros(c_out);
            for (o, row) in dy_big.outer_iter().enumerate() {
                db_part[o] = row.sum();
            }
            // dX = col2im(W^T · dY)
            let mut dcol = Array2::<R>::zeros((k, l * p));
            general_mat_mul(R::one(), &w_mat.t(), &dy_big, R::zero(), &mut dcol);
            for i in 0..l {
                col2im(
                    &dcol,
                    kh,
                    kw,
                    stride,
                    pad_t,
                    pad_l,
                    ho,
                    wo,
                    l * p,
                    i * p,
                    dxc.index_axis_mut(Axis(0), i),
                );
            }
            (dw_part, db_part)
        })
        .collect();

    let mut dw_mat = Array2::<R>::zeros((c_out, k));
    let mut db = Array1::<R>::zeros(c_out);
    for (dw_part, db_part) in partials {
        dw_mat += &dw_part;
        db += &db_part;
    }
    let dw = dw_mat
        .into_shape_with_order((c_out, c_in, kh, kw))
        .unwrap();
    Conv2dGrads { dx, dw, db }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rng_from;
    use ndarray::Array;
    use rand::Rng;

    /// Direct quadruple-loop convolution used as an oracle.
    fn conv2d_naive(
        x: &Array4<f64>,
        w: &Array4<f64>,
        b: &Array1<f64>,
        stride: usize,
        padding: Padding,
    ) -> Array4<f64> {
        let (bsz, c_in, h, wd) = x.dim();
        let (c_out, _, kh, kw) = w.dim();
        let (ho, pad_t) = axis_geometry(h, kh, stride, padding);
        let (wo, pad_l) = axis_geometry(wd, kw, stride, padding);
        let mut out = Array4::<f64>::zeros((bsz, c_out, ho, wo));
        for i in 0..bsz {
            for o in 0..c_out {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[o];
                        for c in 0..c_in {
                            for di in 0..kh {
                                for dj in 0..kw {
                                    let iy = (oy * stride + di) as isize - pad_t as isize;
                                    let ix = (ox * stride + dj) as isize - pad_l as isize;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < wd as isize {
                                        acc += x[[i, c, iy as usize, ix as usize]]
                                            * w[[o, c, di, dj]];
                                    }
                                }
                            }
                        }
                        out[[i, o, oy, ox]] = acc;
                    }
                }
            }
        }
        out
    }

    fn rand4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = rng_from(seed);
        Array::from_shape_fn(shape, |_| rng.gen::<f64>() - 0.5)
    }

    #[test]
    fn forward_matches_naive_valid() {
        let x = rand4((3, 2, 7, 9), 1);
        let w = rand4((4, 2, 3, 3), 2);
        let b = Array1::from_vec(vec![0.1, -0.2, 0.3, 0.0]);
        let fast = conv2d_forward(&x, &w, &b, 1, Padding::Valid);
        let slow = conv2d_naive(&x, &w, &b, 1, Padding::Valid);
        let diff = (&fast - &slow).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn forward_matches_naive_same_stride2() {
        let x = rand4((2, 3, 10, 20), 3);
        let w = rand4((5, 3, 3, 3), 4);
        let b = Array1::zeros(5);
        let fast = conv2d_forward(&x, &w, &b, 2, Padding::Same);
        let slow = conv2d_naive(&x, &w, &b, 2, Padding::Same);
        assert_eq!(fast.dim(), (2, 5, 5, 10));
        let diff = (&fast - &slow).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn same_padding_trace_10x20_reaches_2x3() {
        let (mut h, mut w) = (10usize, 20usize);
        let mut trace = Vec::new();
        for _ in 0..3 {
            let (nh, nw) = conv2d_output_shape(h, w, 3, 3, 2, Padding::Same);
            h = nh;
            w = nw;
            trace.push((h, w));
        }
        assert_eq!(trace, [(5, 10), (3, 5), (2, 3)]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for padding in [Padding::Valid, Padding::Same] {
            let stride = if padding == Padding::Valid { 1 } else { 2 };
            let x = rand4((2, 2, 6, 7), 5);
            let w = rand4((3, 2, 3, 3), 6);
            let b = Array1::from_vec(vec![0.05, -0.02, 0.01]);
            let dy_shape = conv2d_forward(&x, &w, &b, stride, padding).dim();
            let dy = rand4(dy_shape, 7);
            let loss = |x: &Array4<f64>, w: &Array4<f64>, b: &Array1<f64>| -> f64 {
                (&conv2d_forward(x, w, b, stride, padding) * &dy).sum()
            };
            let grads = conv2d_backward(&x, &w, &dy, stride, padding);
            let h = 1e-6;

            let mut xp = x.clone();
            for idx in [[0, 0, 0, 0], [1, 1, 3, 4], [0, 1, 5, 6]] {
                xp[idx] += h;
                let up = loss(&xp, &w, &b);
                xp[idx] -= 2.0 * h;
                let down = loss(&xp, &w, &b);
                xp[idx] += h;
                let num = (up - down) / (2.0 * h);
                assert!((grads.dx[idx] - num).abs() < 1e-6, "dx at {idx:?}");
            }
            let mut wp = w.clone();
            for idx in [[0, 0, 0, 0], [2, 1, 2, 2], [1, 0, 1, 2]] {
                wp[idx] += h;
                let up = loss(&x, &wp, &b);
                wp[idx] -= 2.0 * h;
                let down = loss(&x, &wp, &b);
                wp[idx] += h;
                let num = (up - down) / (2.0 * h);
                assert!((grads.dw[idx] - num).abs() < 1e-6, "dw at {idx:?}");
            }
            let mut bp = b.clone();
            for i in 0..3 {
                bp[i] += h;
                let up = loss(&x, &w, &bp);
                bp[i] -= 2.0 * h;
                let down = loss(&x, &w, &bp);
                bp[i] += h;
                let num = (up - down) / (2.0 * h);
                assert!((grads.db[i] - num).abs() < 1e-6, "db at {i}");
            }
        }
    }
}
