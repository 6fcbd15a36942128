//! Optimizers: Adam for every trainable block, plus the weight clipping the
//! WGAN critic requires.
//!
//! The optimizer state is flat and keyed by position: callers feed
//! `(parameter, gradient)` slice pairs in a fixed canonical order (the same
//! order every step), and the moments advance through the flat state in
//! step. The update is strictly elementwise, so splitting the work into
//! chunks — or feeding the same elements as one pair versus many — cannot
//! change any result bit; parallelism is free of reduction-order effects.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::nets::DiscTensors;

/// Elements per parallel chunk in the elementwise update.
const OPT_CHUNK: usize = 1 << 20;

/// Hard limit applied to every WGAN critic tensor after each critic step.
pub const WGAN_CLIP_LIMIT: f64 = 0.01;

/// Adam hyperparameters. The defaults are the standard first/second moment
/// decays; the stabilizer epsilon is 1e-8, applied outside the square root.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam state over a fixed number of elements.
#[derive(Debug, Clone)]
pub struct Adam<R> {
    cfg: AdamConfig,
    t: u64,
    m: Vec<R>,
    v: Vec<R>,
}

impl<R: Scalar> Adam<R> {
    /// Creates zeroed moment state for `len` elements.
    pub fn new(cfg: AdamConfig, len: usize) -> Self {
        Self { cfg, t: 0, m: vec![R::zero(); len], v: vec![R::zero(); len] }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Changes the learning rate without touching the moments.
    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Applies one Adam update. `pairs` must cover exactly the elements the
    /// state was created for, in the same order on every call; a total
    /// length mismatch is an [`Error::Shape`], as is a parameter slice whose
    /// gradient has a different length.
    pub fn step<'a, I>(&mut self, pairs: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a mut [R], &'a [R])>,
        R: 'a,
    {
        self.t += 1;
        let b1 = R::from_f64(self.cfg.beta1);
        let b2 = R::from_f64(self.cfg.beta2);
        let one = R::one();
        // Fold the bias corrections into the step size.
        let corr1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let corr2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        let alpha = R::from_f64(self.cfg.lr / corr1);
        let inv_sqrt_corr2 = R::from_f64(1.0 / corr2.sqrt());
        let eps = R::from_f64(self.cfg.epsilon);

        let mut offset = 0usize;
        for (param, grad) in pairs {
            if param.len() != grad.len() {
                return Err(Error::Shape(format!(
                    "parameter slice of {} elements paired with gradient of {}",
                    param.len(),
                    grad.len()
                )));
            }
            let end = offset + param.len();
            if end > self.m.len() {
                return Err(Error::Shape(format!(
                    "optimizer state holds {} elements but was fed more",
                    self.m.len()
                )));
            }
            let m = &mut self.m[offset..end];
            let v = &mut self.v[offset..end];
            param
                .par_chunks_mut(OPT_CHUNK)
                .zip(grad.par_chunks(OPT_CHUNK))
                .zip(m.par_chunks_mut(OPT_CHUNK))
                .zip(v.par_chunks_mut(OPT_CHUNK))
                .for_each(|(((p, g), m), v)| {
                    for i in 0..p.len() {
                        m[i] = b1 * m[i] + (one - b1) * g[i];
                        v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                        let denom = (v[i] * inv_sqrt_corr2 * inv_sqrt_corr2).sqrt() + eps;
                        p[i] = p[i] - alpha * m[i] / denom;
                    }
                });
            offset = end;
        }
        if offset != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer state holds {} elements but was fed {offset}",
                self.m.len()
            )));
        }
        Ok(())
    }
}

/// Clamps every critic tensor — weights and biases — to the WGAN limit.
pub fn wgan_clip<R: Scalar>(tensors: &mut DiscTensors<R>) {
    let hi = R::from_f64(WGAN_CLIP_LIMIT);
    let lo = -hi;
    for slice in tensors.slices_mut() {
        slice
            .par_chunks_mut(OPT_CHUNK)
            .for_each(|chunk| {
                for v in chunk.iter_mut() {
                    if *v > hi {
                        *v = hi;
                    } else if *v < lo {
                        *v = lo;
                    }
                }
            });
    }
}
