use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array5, ArrayView4, ArrayViewMut4, Axis};
use rayon::prelude::*;

use crate::linalg::{Scalar, BATCH_CHUNK};
use crate::ops::conv2d::Padding;

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

#[allow(clippy::too_many_arguments)]
pub fn conv3d_output_shape(
    d: usize,
    h: usize,
    w: usize,
    kernel: (usize, usize, usize),
    stride: (usize, usize, usize),
    padding: Padding,
) -> (usize, usize, usize) {
    (
        axis_geometry(d, kernel.0, stride.0, padding).0,
        axis_geometry(h, kernel.1, stride.1, padding).0,
        axis_geometry(w, kernel.2, stride.2, padding).0,
    )
}

struct Geometry {
    kernel: (usize, usize, usize),
    stride: (usize, usize, usize),
    pad: (usize, usize, usize),
    out: (usize, usize, usize),
}

fn geometry(
    dims: (usize, usize, usize),
    kernel: (usize, usize, usize),
    stride: (usize, usize, usize),
    padding: Padding,
) -> Geometry {
    let (d_out, pad_d) = axis_geometry(dims.0, kernel.0, stride.0, padding);
    let (h_out, pad_t) = axis_geometry(dims.1, kernel.1, stride.1, padding);
    let (w_out, pad_l) = axis_geometry(dims.2, kernel.2, stride.2, padding);
    Geometry {
        kernel,
        stride,
        pad: (pad_d, pad_t, pad_l),
        out: (d_out, h_out, w_out),
    }
}

fn im2col3<R: Scalar>(x: ArrayView4<R>, g: &Geometry, col: &mut Array2<R>) {
    let (c_in, d, h, w) = x.dim();
    let (kd, kh, kw) = g.kernel;
    let (sd, sh, sw) = g.stride;
    let (pd, pt, pl) = g.pad;
    let (d_o, h_o, w_o) = g.out;
    let xs = x.as_slice().expect("conv input must be contiguous");
    let cs = col.as_slice_mut().expect("col buffer is contiguous");
    let vol = d * h * w;
    let p = d_o * h_o * w_o;
    let mut row = 0usize;
    for c in 0..c_in {
        for dz in 0..kd {
            for di in 0..kh {
                for dj in 0..kw {
                    let row_base = row * p;
                    row += 1;
                    for od in 0..d_o {
                        let iz = (od * sd + dz) as isize - pd as isize;
                        for oy in 0..h_o {
                            let iy = (oy * sh + di) as isize - pt as isize;
                            let off = row_base + (od * h_o + oy) * w_o;
                            let seg = &mut cs[off..off + w_o];
                            if iz < 0 || iz >= d as isize || iy < 0 || iy >= h as isize {
                                seg.fill(R::zero());
                                continue;
                            }
                            let src = c * vol + iz as usize * h * w + iy as usize * w;
                            for (ox, v) in seg.iter_mut().enumerate() {
                                let ix = (ox * sw + dj) as isize - pl as isize;
                                *v = if ix >= 0 && ix < w as isize {
                                    xs[src + ix as usize]
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
}

fn col2im3<R: Scalar>(col: &Array2<R>, g: &Geometry, mut dx: ArrayViewMut4<R>) {
    let (c_in, d, h, w) = dx.dim();
    let (kd, kh, kw) = g.kernel;
    let (sd, sh, sw) = g.stride;
    let (pd, pt, pl) = g.pad;
    let (d_o, h_o, w_o) = g.out;
    let xs = dx.as_slice_mut().expect("grad buffer is contiguous");
    let cs = col.as_slice().expect("col buffer is contiguous");
    let vol = d * h * w;
    let p = d_o * h_o * w_o;
    let mut row = 0usize;
    for c in 0..c_in {
        for dz in 0..kd {
            for di in 0..kh {
                for dj in 0..kw {
                    let row_base = row * p;
                    row += 1;
                    for od in 0..d_o {
                        let iz = (od * sd + dz) as isize - pd as isize;
                        if iz < 0 || iz >= d as isize {
                            continue;
                        }
                        for oy in 0..h_o {
                            let iy = (oy * sh + di) as isize - pt as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let off = row_base + (od * h_o + oy) * w_o;
                            let seg = &cs[off..off + w_o];
                            let dst = c * vol + iz as usize * h * w + iy as usize * w;
                            for (ox, &v) in seg.iter().enumerate() {
                                let ix = (ox * sw + dj) as isize - pl as isize;
                                if ix >= 0 && ix < w as isize {
                                    xs[dst + ix as usize] = xs[dst + ix as usize] + v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Batched 3D convolution. `x` is `(B, C_in, D, H, W)`, `w` is
/// `(C_out, C_in, kd, kh, kw)`. Stride order is `(depth, height, width)`.
pub fn conv3d_forward<R: Scalar>(
    x: &Array5<R>,
    w: &Array5<R>,
    b: &Array1<R>,
    stride: (usize, usize, usize),
    padding: Padding,
) -> Array5<R> {
    let (bsz, c_in, d, h, wd) = x.dim();
    let (c_out, c_in2, kd, kh, kw) = w.dim();
    assert_eq!(c_in, c_in2, "input channels {c_in} vs kernel {c_in2}");
    assert_eq!(b.len(), c_out);
    let g = geometry((d, h, wd), (kd, kh, kw), stride, padding);
    let k = c_in * kd * kh * kw;
    let p = g.out.0 * g.out.1 * g.out.2;
    let w_mat = w.view().into_shape_with_order((c_out, k)).unwrap();

    let mut out = Array5::<R>::zeros((bsz, c_out, g.out.0, g.out.1, g.out.2));
    let x_chunks: Vec<_> = x.axis_chunks_iter(Axis(0), BATCH_CHUNK).collect();
    let out_chunks: Vec<_> = out.axis_chunks_iter_mut(Axis(0), BATCH_CHUNK).collect();
    x_chunks
        .into_par_iter()
        .zip(out_chunks)
        .for_each(|(xc, mut oc)| {
            let mut col = Array2::<R>::zeros((k, p));
            for i in 0..xc.len_of(Axis(0)) {
                im2col3(xc.index_axis(Axis(0), i), &g, &mut col);
                let mut y = oc
                    .index_axis_mut(Axis(0), i)
                    .into_shape_with_order((c_out, p))
                    .unwrap();
                for (o, mut row) in y.outer_iter_mut().enumerate() {
                    row.fill(b[o]);
                }
                general_mat_mul(R::one(), &w_mat, &col.view(), R::one(), &mut y);
            }
        });
    out
}

pub struct Conv3dGrads<R> {
    pub dx: Array5<R>,
    pub dw: Array5<R>,
    pub db: Array1<R>,
}

pub fn conv3d_backward<R: Scalar>(
    x: &Array5<R>,
    w: &Array5<R>,
    dy: &Array5<R>,
    stride: (usize, usize, usize),
    padding: Padding,
) -> Conv3dGrads<R> {
    let (bsz, c_in, d, h, wd) = x.dim();
    let (c_out, _, kd, kh, kw) = w.dim();
    let g = geometry((d, h, wd), (kd, kh, kw), stride, padding);
    debug_assert_eq!(dy.dim(), (bsz, c_out, g.out.0, g.out.1, g.out.2));
    let k = c_in * kd * kh * kw;
    let p = g.out.0 * g.out.1 * g.out.2;
    let w_mat = w.view().into_shape_with_order((c_out, k)).unwrap();

    let mut dx = Array5::<R>::zeros((bsz, c_in, d, h, wd));
    let x_chunks: Vec<_> = x.axis_chunks_iter(Axis(0), BATCH_CHUNK).collect();
    let dy_chunks: Vec<_> = dy.axis_chunks_iter(Axis(0), BATCH_CHUNK).collect();
    let dx_chunks: Vec<_> = dx.axis_chunks_iter_mut(Axis(0), BATCH_CHUNK).collect();

    let partials: Vec<(Array2<R>, Array1<R>)> = x_chunks
        .into_par_iter()
        .zip(dy_chunks)
        .zip(dx_chunks)
        .map(|((xc, dyc), mut dxc)| {
            let mut col = Array2::<R>::zeros((k, p));
            let mut dcol = Array2::<R>::zeros((k, p));
            let mut dw_part = Array2::<R>::zeros((c_out, k));
            let mut db_part = Array1::<R>::zeros(c_out);
            for i in 0..xc.len_of(Axis(0)) {
                let dy_mat = dyc
                    .index_axis(Axis(0), i)
                    .into_shape_with_order((c_out, p))
                    .unwrap();
                im2col3(xc.index_axis(Axis(0), i), &g, &mut col);
                general_mat_mul(R::one(), &dy_mat, &col.t(), R::one(), &mut dw_part);
                for (o, row) in dy_mat.outer_iter().enumerate() {
                    db_part[o] = db_part[o] + row.sum();
                }
                general_mat_mul(R::one(), &w_mat.t(), &dy_mat, R::zero(), &mut dcol);
                col2im3(&dcol, &g, dxc.index_axis_mut(Axis(0), i));
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
        .into_shape_with_order((c_out, c_in, kd, kh, kw))
        .unwrap();
    Conv3dGrads { dx, dw, db }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rng_from;
    use ndarray::Array;
    use rand::Rng;

    fn conv3d_naive(
        x: &Array5<f64>,
        w: &Array5<f64>,
        b: &Array1<f64>,
        stride: (usize, usize, usize),
        padding: Padding,
    ) -> Array5<f64> {
        let (bsz, c_in, d, h, wd) = x.dim();
        let (c_out, _, kd, kh, kw) = w.dim();
        let g = geometry((d, h, wd), (kd, kh, kw), stride, padding);
        let mut out = Array5::<f64>::zeros((bsz, c_out, g.out.0, g.out.1, g.out.2));
        for i in 0..bsz {
            for o in 0..c_out {
                for od in 0..g.out.0 {
                    for oy in 0..g.out.1 {
                        for ox in 0..g.out.2 {
                            let mut acc = b[o];
                            for c in 0..c_in {
                                for dz in 0..kd {
                                    for di in 0..kh {
                                        for dj in 0..kw {
                                            let iz =
                                                (od * stride.0 + dz) as isize - g.pad.0 as isize;
                                            let iy =
                                                (oy * stride.1 + di) as isize - g.pad.1 as isize;
                                            let ix =
                                                (ox * stride.2 + dj) as isize - g.pad.2 as isize;
                                            if iz >= 0
                                                && iz < d as isize
                                                && iy >= 0
                                                && iy < h as isize
                                                && ix >= 0
                                                && ix < wd as isize
                                            {
                                                acc += x[[
                                                    i,
                                                    c,
                                                    iz as usize,
                                                    iy as usize,
                                                    ix as usize,
                                                ]] * w[[o, c, dz, di, dj]];
                                            }
                                        }
                                    }
                                }
                            }
                            out[[i, o, od, oy, ox]] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    fn rand5(shape: (usize, usize, usize, usize, usize), seed: u64) -> Array5<f64> {
        let mut rng = rng_from(seed);
        Array::from_shape_fn(shape, |_| rng.gen::<f64>() - 0.5)
    }

    #[test]
    fn forward_matches_naive() {
        // depth 2, spatial halving: mirrors the two-tap discriminator input
        let x = rand5((2, 3, 2, 10, 20), 11);
        let w = rand5((4, 3, 3, 3, 3), 12);
        let b = Array1::from_vec(vec![0.1, 0.0, -0.3, 0.2]);
        let fast = conv3d_forward(&x, &w, &b, (1, 2, 2), Padding::Same);
        let slow = conv3d_naive(&x, &w, &b, (1, 2, 2), Padding::Same);
        assert_eq!(fast.dim(), (2, 4, 2, 5, 10));
        let diff = (&fast - &slow).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn depth_axis_is_preserved_under_unit_stride() {
        let (d_o, h_o, w_o) = conv3d_output_shape(5, 8, 16, (3, 3, 3), (1, 2, 2), Padding::Same);
        assert_eq!((d_o, h_o, w_o), (5, 4, 8));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = rand5((2, 2, 2, 6, 8), 13);
        let w = rand5((3, 2, 3, 3, 3), 14);
        let b = Array1::from_vec(vec![0.05, -0.02, 0.01]);
        let stride = (1, 2, 2);
        let dy_shape = conv3d_forward(&x, &w, &b, stride, Padding::Same).dim();
        let dy = rand5(dy_shape, 15);
        let loss = |x: &Array5<f64>, w: &Array5<f64>, b: &Array1<f64>| -> f64 {
            (&conv3d_forward(x, w, b, stride, Padding::Same) * &dy).sum()
        };
        let grads = conv3d_backward(&x, &w, &dy, stride, Padding::Same);
        let h = 1e-6;

        let mut xp = x.clone();
        for idx in [[0, 0, 0, 0, 0], [1, 1, 1, 3, 4], [0, 1, 0, 5, 7]] {
            xp[idx] += h;
            let up = loss(&xp, &w, &b);
            xp[idx] -= 2.0 * h;
            let down = loss(&xp, &w, &b);
            xp[idx] += h;
            let num = (up - down) / (2.0 * h);
            assert!((grads.dx[idx] - num).abs() < 1e-6, "dx at {idx:?}");
        }
        let mut wp = w.clone();
        for idx in [[0, 0, 0, 0, 0], [2, 1, 2, 2, 1], [1, 0, 1, 1, 2]] {
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
