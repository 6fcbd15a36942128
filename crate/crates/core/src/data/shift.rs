use ndarray::Array2;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::rng_from;
use crate::Elem;

/// Photometric perturbation that manufactures the target domain from
/// rendered source images.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainShiftConfig {
    pub brightness_delta: f64,
    pub contrast_gain: f64,
    /// Gaussian blur standard deviation in pixels.
    pub blur_sigma: f64,
    /// Additive Gaussian noise sigma in [-1, 1] intensity units.
    pub noise_sigma: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl DomainShiftConfig {
    /// The do-nothing configuration (0, 1, 0, 0, 1).
    pub fn identity(seed: u64) -> Self {
        DomainShiftConfig {
            brightness_delta: 0.0,
            contrast_gain: 1.0,
            blur_sigma: 0.0,
            noise_sigma: 0.0,
            gamma: 1.0,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.contrast_gain > 0.0) {
            return Err(Error::Config(format!(
                "contrast_gain must be positive, got {}",
                self.contrast_gain
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.blur_sigma < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::Config(format!(
                "blur_sigma/noise_sigma must be nonnegative, got {}/{}",
                self.blur_sigma, self.noise_sigma
            )));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.brightness_delta == 0.0
            && self.contrast_gain == 1.0
            && self.blur_sigma == 0.0
            && self.noise_sigma == 0.0
            && self.gamma == 1.0
    }
}

/// Normalized 1D Gaussian taps over radius `ceil(3*sigma)`.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= total;
    }
    taps
}

/// Separable Gaussian blur with replicated edges, accumulated in f64.
fn gaussian_blur(image: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let (h, w) = image.dim();
    let taps = gaussian_kernel(sigma);
    let radius = (taps.len() / 2) as i64;
    let mut rows_done = Array2::<f64>::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                let cc = (c as i64 + k as i64 - radius).clamp(0, w as i64 - 1) as usize;
                acc += t * image[[r, cc]];
            }
            rows_done[[r, c]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                let rr = (r as i64 + k as i64 - radius).clamp(0, h as i64 - 1) as usize;
                acc += t * rows_done[[rr, c]];
            }
            out[[r, c]] = acc;
        }
    }
    out
}

/// Applies, in order: contrast/brightness affine, gamma on the [0, 1]
/// remap, Gaussian blur, additive Gaussian noise; the result is clamped
/// to [-1, 1]. Each stage at its neutral setting is skipped outright, so
/// the identity configuration returns the input bit-for-bit.
pub fn apply_domain_shift(image: &Array2<Elem>, config: &DomainShiftConfig) -> Result<Array2<Elem>> {
    config.validate()?;
    if config.is_identity() {
        return Ok(image.clone());
    }
    let mut work = image.mapv(|v| v as f64);
    if config.contrast_gain != 1.0 || config.brightness_delta != 0.0 {
        work.mapv_inplace(|v| config.contrast_gain * v + config.brightness_delta);
    }
    if config.gamma != 1.0 {
        // the affine stage may overshoot [-1, 1]; clamp so the power is
        // defined, matching the output clamp that follows anyway
        work.mapv_inplace(|v| {
            let u = ((v + 1.0) / 2.0).clamp(0.0, 1.0);
            2.0 * u.powf(config.gamma) - 1.0
        });
    }
    if config.blur_sigma > 0.0 {
        work = gaussian_blur(&work, config.blur_sigma);
    }
    if config.noise_sigma > 0.0 {
        let mut rng = rng_from(config.seed);
        let normal = Normal::new(0.0, config.noise_sigma).expect("validated sigma");
        // row-major draw order is part of the determinism contract
        work.mapv_inplace(|v| v + normal.sample(&mut rng));
    }
    Ok(work.mapv(|v| v.clamp(-1.0, 1.0) as Elem))
}

/// Draws the same noise field the shift stage would add, for tests and
/// diagnostics that need a reference oracle.
pub fn reference_noise_field(
    rows: usize,
    cols: usize,
    sigma: f64,
    seed: u64,
) -> Array2<f64> {
    let mut rng = rng_from(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma must be valid");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut rng))
}
