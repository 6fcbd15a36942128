//! Scalar abstraction and deterministic parallel linear algebra helpers.
//!
//! Everything here is bit-deterministic for a fixed build and machine
//! regardless of the rayon thread count: work is split into chunks of a
//! fixed size (never a function of available parallelism) and every chunk
//! writes a disjoint region of the output, so no floating-point reduction
//! order depends on scheduling.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

/// Floating-point element type the math layers are generic over.
///
/// The shipped pipeline uses `f32`; gradient-check tests instantiate the
/// same code with `f64` so finite differences are meaningful.
pub trait Scalar:
    ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + num_traits::Float
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + std::ops::AddAssign
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Rows/columns per matmul task. Fixed so that chunk boundaries (and
/// therefore per-element evaluation) never depend on the thread count.
const MM_ROW_CHUNK: usize = 64;
const MM_COL_CHUNK: usize = 512;

/// `a (m×k) · b (k×n)` split over whichever output axis is larger, so both
/// tall (weight-gradient) and wide (batch-activation) products parallelize.
/// Every output element is produced by exactly one `general_mat_mul` call
/// over the full `k` extent, so results are bitwise thread-count-invariant.
pub fn matmul<R: Scalar>(a: ArrayView2<R>, b: ArrayView2<R>) -> Array2<R> {
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "matmul inner dimensions differ: {k} vs {k2}");
    let mut out = Array2::<R>::zeros((m, n));
    if m >= n {
        let a_chunks: Vec<ArrayView2<R>> = a.axis_chunks_iter(Axis(0), MM_ROW_CHUNK).collect();
        let out_chunks: Vec<_> = out.axis_chunks_iter_mut(Axis(0), MM_ROW_CHUNK).collect();
        a_chunks
            .into_par_iter()
            .zip(out_chunks)
            .for_each(|(ablk, mut oblk)| {
                general_mat_mul(R::one(), &ablk, &b, R::zero(), &mut oblk);
            });
    } else {
        let b_chunks: Vec<ArrayView2<R>> = b.axis_chunks_iter(Axis(1), MM_COL_CHUNK).collect();
        let out_chunks: Vec<_> = out.axis_chunks_iter_mut(Axis(1), MM_COL_CHUNK).collect();
        b_chunks
            .into_par_iter()
            .zip(out_chunks)
            .for_each(|(bblk, mut oblk)| {
                general_mat_mul(R::one(), &a, &bblk, R::zero(), &mut oblk);
            });
    }
    out
}

/// Runs `f` over fixed-size index chunks of `0..n` in parallel and returns
/// the per-chunk results in chunk order.
pub fn par_chunk_map<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync,
{
    assert!(chunk > 0);
    let n_chunks = n.div_ceil(chunk);
    (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * chunk;
            let end = (start + chunk).min(n);
            f(start..end)
        })
        .collect()
}

/// Batch chunk size used when parallelizing per-sample work. Small enough
/// that a batch of 32 still fans out over eight cores.
pub const BATCH_CHUNK: usize = 4;

/// Seeded RNG used everywhere randomness is needed.
pub fn rng_from(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Derives an independent named RNG stream from a master seed.
///
/// Streams with different labels never collide in practice (FNV-1a label
/// hash mixed through splitmix64), and the derivation is stable across runs.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(master ^ h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fills `data` with samples from N(0, std²) truncated at ±2·std.
pub fn fill_truncated_normal<R: Scalar>(data: &mut [R], std: f64, rng: &mut ChaCha20Rng) {
    if std == 0.0 {
        for v in data.iter_mut() {
            *v = R::zero();
        }
        return;
    }
    let normal = Normal::new(0.0f64, std).expect("std must be finite and positive");
    for v in data.iter_mut() {
        loop {
            let x = normal.sample(rng);
            if x.abs() <= 2.0 * std {
                *v = R::from_f64(x);
                break;
            }
        }
    }
}

/// Uniform sample in [0, 1).
pub fn unit_uniform(rng: &mut ChaCha20Rng) -> f64 {
    rng.gen::<f64>()
}
