use ndarray::{Array4, Axis};
use rayon::prelude::*;

use crate::linalg::{Scalar, BATCH_CHUNK};

/// Input geometry plus the flat input index of every window maximum,
/// recorded during the forward pass so the backward pass can route
/// gradients without re-scanning. Ties resolve to the first (row-major)
/// maximum, which keeps the routing deterministic.
pub struct PoolCache {
    input_dim: (usize, usize, usize, usize),
    output_dim: (usize, usize, usize, usize),
    argmax: Vec<u32>,
}

pub fn maxpool2d_output_shape(h: usize, w: usize, k: usize, stride: usize) -> (usize, usize) {
    assert!(h >= k && w >= k, "pool window {k} larger than input {h}x{w}");
    ((h - k) / stride + 1, (w - k) / stride + 1)
}

/// Max pooling with a `k`x`k` window, no padding.
pub fn maxpool2d_forward<R: Scalar>(x: &Array4<R>, k: usize, stride: usize) -> (Array4<R>, PoolCache) {
    let (bsz, c, h, w) = x.dim();
    let (ho, wo) = maxpool2d_output_shape(h, w, k, stride);
    let mut out = Array4::<R>::zeros((bsz, c, ho, wo));
    let mut argmax = vec![0u32; bsz * c * ho * wo];

    let x_chunks: Vec<_> = x.axis_chunks_iter(Axis(0), BATCH_CHUNK).collect();
    let out_chunks: Vec<_> = out.axis_chunks_iter_mut(Axis(0), BATCH_CHUNK).collect();
    let arg_chunks: Vec<_> = argmax.chunks_mut(BATCH_CHUNK * c * ho * wo).collect();
    x_chunks
        .into_par_iter()
        .zip(out_chunks)
        .zip(arg_chunks)
        .for_each(|((xc, mut oc), ac)| {
            let xs = xc.as_slice().expect("pool input must be contiguous");
            let os = oc.as_slice_mut().expect("pool output is contiguous");
            let n_planes = xc.len_of(Axis(0)) * c;
            for plane in 0..n_planes {
                let src = &xs[plane * h * w..(plane + 1) * h * w];
                let dst_base = plane * ho * wo;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let (y0, x0) = (oy * stride, ox * stride);
                        let mut best = src[y0 * w + x0];
                        let mut best_idx = (y0 * w + x0) as u32;
                        for dy in 0..k {
                            for dx in 0..k {
                                let idx = (y0 + dy) * w + (x0 + dx);
                                if src[idx] > best {
                                    best = src[idx];
                                    best_idx = idx as u32;
                                }
                            }
                        }
                        os[dst_base + oy * wo + ox] = best;
                        ac[dst_base + oy * wo + ox] = best_idx;
                    }
                }
            }
        });

    let cache = PoolCache {
        input_dim: (bsz, c, h, w),
        output_dim: (bsz, c, ho, wo),
        argmax,
    };
    (out, cache)
}

pub fn maxpool2d_backward<R: Scalar>(cache: &PoolCache, dy: &Array4<R>) -> Array4<R> {
    assert_eq!(dy.dim(), cache.output_dim);
    let (bsz, c, h, w) = cache.input_dim;
    let (_, _, ho, wo) = cache.output_dim;
    let mut dx = Array4::<R>::zeros((bsz, c, h, w));
    let dys = dy.as_slice().expect("grad must be contiguous");
    let dxs = dx.as_slice_mut().expect("grad buffer is contiguous");
    // Overlapping windows can route to the same input cell, so accumulate.
    for plane in 0..bsz * c {
        let src_base = plane * ho * wo;
        let dst_base = plane * h * w;
        for i in 0..ho * wo {
            let dst = dst_base + cache.argmax[src_base + i] as usize;
            dxs[dst] = dxs[dst] + dys[src_base + i];
        }
    }
    dx
}
