//! Training objectives: the regression loss on normalized gaze vectors, the
//! adversarial losses for both discriminator flavours, and the gradient
//! reversal used by the baseline adaptation method.
//!
//! Conventions shared by every loss here:
//!
//! - Losses are means over the batch, so the batch size changes the variance
//!   of an estimate but never its scale.
//! - Each function returns the loss together with the gradient with respect
//!   to its direct inputs. Mismatched shapes fail with [`Error::Shape`] and
//!   empty batches are rejected rather than turning into NaN means.
//! - Probability scores are clamped to `[SCORE_CLAMP, 1 - SCORE_CLAMP]`
//!   before any logarithm, so a saturated sigmoid cannot produce an infinite
//!   loss. Gradients are evaluated at the clamped value, which bounds their
//!   magnitude instead of silently zeroing them.
//! - In the adversarial losses the source domain plays the "real" role
//!   (label 1) and the target domain the "fake" role (label 0); the mapper
//!   losses reward target features that the discriminator scores as real.

use ndarray::{Array, Array1, Array2, Dimension};

use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::nets::DiscMode;

/// Lower clamp applied to probability scores before logarithms.
pub const SCORE_CLAMP: f64 = 1e-7;

fn require_nonempty(len: usize, what: &str) -> Result<()> {
    if len == 0 {
        return Err(Error::Shape(format!("{what} batch is empty")));
    }
    Ok(())
}

fn require_same_shape<R: Scalar>(pred: &Array2<R>, target: &Array2<R>) -> Result<()> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "prediction shape {:?} does not match target shape {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    require_nonempty(pred.nrows(), "prediction")
}

/// Mean Euclidean distance between predicted and reference gaze vectors,
/// together with its gradient with respect to the predictions.
///
/// For unit vectors separated by an angle `theta` the per-sample value is
/// the chord length `2 sin(theta / 2)`, so driving this loss to zero drives
/// the angular error to zero. The gradient of a zero-distance row is taken
/// to be zero (a valid subgradient at the kink).
pub fn regression_loss<R: Scalar>(
    pred: &Array2<R>,
    target: &Array2<R>,
) -> Result<(R, Array2<R>)> {
    require_same_shape(pred, target)?;
    let b = pred.nrows();
    let inv_b = R::from_f64(1.0 / b as f64);
    let mut grad = Array2::<R>::zeros(pred.raw_dim());
    let mut total = R::zero();
    for i in 0..b {
        let diff = &pred.row(i) - &target.row(i);
        let norm = diff.iter().map(|v| *v * *v).sum::<R>().sqrt();
        total += norm;
        if norm > R::zero() {
            let scale = inv_b / norm;
            grad.row_mut(i).assign(&diff.mapv(|v| v * scale));
        }
    }
    Ok((total * inv_b, grad))
}

/// Mean angle in degrees between predicted and reference gaze directions.
///
/// Both inputs are normalized internally, so callers may pass raw vectors;
/// a zero-length row in either argument is a [`Error::DegenerateVector`].
pub fn angular_error_degrees<R: Scalar>(pred: &Array2<R>, target: &Array2<R>) -> Result<R> {
    require_same_shape(pred, target)?;
    let b = pred.nrows();
    let mut total = R::zero();
    for i in 0..b {
        let p = pred.row(i);
        let t = target.row(i);
        let pn = p.iter().map(|v| *v * *v).sum::<R>().sqrt();
        let tn = t.iter().map(|v| *v * *v).sum::<R>().sqrt();
        if pn == R::zero() || tn == R::zero() {
            return Err(Error::DegenerateVector(format!(
                "row {i} has a zero-length gaze vector"
            )));
        }
        let mut cos = p.iter().zip(t.iter()).map(|(a, b)| *a * *b).sum::<R>() / (pn * tn);
        let one = R::one();
        if cos > one {
            cos = one;
        }
        if cos < -one {
            cos = -one;
        }
        total += cos.acos();
    }
    let mean = total / R::from_f64(b as f64);
    Ok(mean * R::from_f64(180.0 / std::f64::consts::PI))
}

fn clamp_score<R: Scalar>(s: R) -> R {
    let lo = R::from_f64(SCORE_CLAMP);
    let hi = R::one() - lo;
    if s < lo {
        lo
    } else if s > hi {
        hi
    } else {
        s
    }
}

/// Binary cross-entropy discriminator loss over both domains:
/// `-mean(log s_source) - mean(log(1 - s_target))`.
///
/// Returns `(loss, d_source, d_target)`. At the adversarial equilibrium,
/// where every score is 1/2, the loss equals `2 ln 2`.
pub fn gan_discriminator_loss<R: Scalar>(
    source_scores: &Array1<R>,
    target_scores: &Array1<R>,
) -> Result<(R, Array1<R>, Array1<R>)> {
    require_nonempty(source_scores.len(), "source score")?;
    require_nonempty(target_scores.len(), "target score")?;
    let inv_s = R::from_f64(1.0 / source_scores.len() as f64);
    let inv_t = R::from_f64(1.0 / target_scores.len() as f64);
    let mut loss = R::zero();
    let d_source = source_scores.mapv(|s| {
        let s = clamp_score(s);
        loss += -(s.ln() * inv_s);
        -inv_s / s
    });
    let d_target = target_scores.mapv(|s| {
        let q = R::one() - clamp_score(s);
        loss += -(q.ln() * inv_t);
        inv_t / q
    });
    Ok((loss, d_source, d_target))
}

/// Mapper loss for the GAN flavour: `-mean(log s_target)`, the inverted
/// label trick that rewards target features scored as source. Returns
/// `(loss, d_target)`; at scores of 1/2 the loss equals `ln 2`.
pub fn gan_mapper_loss<R: Scalar>(target_scores: &Array1<R>) -> Result<(R, Array1<R>)> {
    require_nonempty(target_scores.len(), "target score")?;
    let inv_t = R::from_f64(1.0 / target_scores.len() as f64);
    let mut loss = R::zero();
    let grad = target_scores.mapv(|s| {
        let s = clamp_score(s);
        loss += -(s.ln() * inv_t);
        -inv_t / s
    });
    Ok((loss, grad))
}

/// Critic loss for the WGAN flavour: `mean(s_target) - mean(s_source)`.
///
/// Minimizing it pushes source scores up and target scores down, which
/// estimates the score gap between the domains. Scores are raw (no
/// sigmoid), so nothing is clamped. Returns `(loss, d_source, d_target)`.
pub fn wgan_critic_loss<R: Scalar>(
    source_scores: &Array1<R>,
    target_scores: &Array1<R>,
) -> Result<(R, Array1<R>, Array1<R>)> {
    require_nonempty(source_scores.len(), "source score")?;
    require_nonempty(target_scores.len(), "target score")?;
    let inv_s = R::from_f64(1.0 / source_scores.len() as f64);
    let inv_t = R::from_f64(1.0 / target_scores.len() as f64);
    let loss = target_scores.iter().copied().sum::<R>() * inv_t
        - source_scores.iter().copied().sum::<R>() * inv_s;
    let d_source = Array1::from_elem(source_scores.len(), -inv_s);
    let d_target = Array1::from_elem(target_scores.len(), inv_t);
    Ok((loss, d_source, d_target))
}

/// Mapper loss for the WGAN flavour: `-mean(s_target)`, pushing target
/// features toward higher critic scores. Returns `(loss, d_target)`.
pub fn wgan_mapper_loss<R: Scalar>(target_scores: &Array1<R>) -> Result<(R, Array1<R>)> {
    require_nonempty(target_scores.len(), "target score")?;
    let inv_t = R::from_f64(1.0 / target_scores.len() as f64);
    let loss = -target_scores.iter().copied().sum::<R>() * inv_t;
    let grad = Array1::from_elem(target_scores.len(), -inv_t);
    Ok((loss, grad))
}

/// Fraction of held-out samples the discriminator classifies correctly,
/// treating source as the positive class. GAN scores are probabilities
/// thresholded at 1/2; WGAN scores are raw and thresholded at 0.
///
/// An accuracy pinned near 1 means the discriminator still separates the
/// domains; adaptation should drive this toward chance (1/2).
pub fn domain_accuracy<R: Scalar>(
    source_scores: &Array1<R>,
    target_scores: &Array1<R>,
    mode: DiscMode,
) -> Result<f64> {
    require_nonempty(source_scores.len(), "source score")?;
    require_nonempty(target_scores.len(), "target score")?;
    let threshold = match mode {
        DiscMode::Gan => R::from_f64(0.5),
        DiscMode::Wgan => R::zero(),
    };
    let correct = source_scores.iter().filter(|s| **s > threshold).count()
        + target_scores.iter().filter(|s| **s <= threshold).count();
    Ok(correct as f64 / (source_scores.len() + target_scores.len()) as f64)
}

/// Gradient reversal: scales a gradient by `-lambda` at the boundary where
/// the domain branch meets the shared features. With `lambda = 0` the
/// domain branch is detached entirely; the shared features then receive
/// exactly the task gradient.
pub fn reverse_gradient<R: Scalar, D: Dimension>(
    grad: &Array<R, D>,
    lambda: R,
) -> Array<R, D> {
    grad.mapv(|v| -(lambda * v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, compare};
    use crate::linalg::rng_from;
    use rand::Rng;

    /// Independent oracle: for unit vectors at angle `theta` the Euclidean
    /// distance is the chord length `2 sin(theta / 2)`.
    #[test]
    fn regression_loss_equals_chord_length() {
        let angles = [0.0f64, 30.0, 90.0, 180.0];
        let pred = Array2::from_shape_fn((4, 3), |(i, j)| match j {
            0 => angles[i].to_radians().cos(),
            1 => angles[i].to_radians().sin(),
            _ => 0.0,
        });
        let target = Array2::from_shape_fn((4, 3), |(_, j)| if j == 0 { 1.0 } else { 0.0 });
        let oracle: f64 = angles
            .iter()
            .map(|a| 2.0 * (a.to_radians() / 2.0).sin())
            .sum::<f64>()
            / 4.0;
        let (loss, _) = regression_loss(&pred, &target).unwrap();
        assert!((loss - oracle).abs() < 1e-12, "loss {loss} vs oracle {oracle}");
    }

    #[test]
    fn angular_error_matches_constructed_angles() {
        let angles = [0.0f64, 30.0, 90.0, 180.0];
        // Scale rows arbitrarily: the metric must normalize internally.
        let pred = Array2::from_shape_fn((4, 3), |(i, j)| {
            let scale = 0.5 + i as f64;
            scale
                * match j {
                    0 => angles[i].to_radians().cos(),
                    1 => angles[i].to_radians().sin(),
                    _ => 0.0,
                }
        });
        let target = Array2::from_shape_fn((4, 3), |(_, j)| if j == 0 { 2.0 } else { 0.0 });
        let mean = angular_error_degrees(&pred, &target).unwrap();
        assert!((mean - 75.0).abs() < 1e-9, "mean {mean}");
    }

    #[test]
    fn zero_length_rows_are_degenerate_for_angles() {
        let pred = Array2::<f64>::zeros((1, 3));
        let target = Array2::from_shape_fn((1, 3), |(_, j)| if j == 2 { 1.0 } else { 0.0 });
        assert!(matches!(
            angular_error_degrees(&pred, &target),
            Err(Error::DegenerateVector(_))
        ));
    }

    #[test]
    fn regression_loss_gradient_matches_finite_differences() {
        let mut rng = rng_from(5);
        let pred = Array2::from_shape_simple_fn((3, 3), || rng.gen::<f64>() - 0.5);
        let target = Array2::from_shape_simple_fn((3, 3), || rng.gen::<f64>() - 0.5);
        let (_, grad) = regression_loss(&pred, &target).unwrap();
        let flat = Array1::from(pred.iter().copied().collect::<Vec<_>>());
        let numeric = central_difference(
            |f| {
                let p = Array2::from_shape_vec(pred.raw_dim(), f.to_vec()).unwrap();
                regression_loss(&p, &target).unwrap().0
            },
            &flat,
            1e-6,
        );
        let analytic = Array1::from(grad.iter().copied().collect::<Vec<_>>());
        let report = compare(&analytic, &numeric);
        assert!(report.max_rel_error < 1e-7, "rel {}", report.max_rel_error);
    }

    #[test]
    fn exact_match_has_zero_loss_and_zero_subgradient() {
        let v = Array2::from_shape_fn((2, 3), |(i, j)| (i + j) as f64 * 0.25);
        let (loss, grad) = regression_loss(&v, &v).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gan_equilibrium_is_2_ln_2() {
        let s = Array1::from_elem(8, 0.5f64);
        let t = Array1::from_elem(6, 0.5f64);
        let (ld, _, _) = gan_discriminator_loss(&s, &t).unwrap();
        let (lm, _) = gan_mapper_loss(&t).unwrap();
        assert!((ld - 2.0 * std::f64::consts::LN_2).abs() < 1e-9, "L_D {ld}");
        assert!((lm - std::f64::consts::LN_2).abs() < 1e-9, "L_M {lm}");
    }

    #[test]
    fn gan_gradients_match_finite_differences() {
        let mut rng = rng_from(11);
        let src = Array1::from_shape_simple_fn(4, || 0.05 + 0.9 * rng.gen::<f64>());
        let tgt = Array1::from_shape_simple_fn(3, || 0.05 + 0.9 * rng.gen::<f64>());
        let (_, ds, dt) = gan_discriminator_loss(&src, &tgt).unwrap();
        let joint = Array1::from_iter(src.iter().chain(tgt.iter()).copied());
        let numeric = central_difference(
            |f| {
                let s = f.slice(ndarray::s![..4]).to_owned();
                let t = f.slice(ndarray::s![4..]).to_owned();
                gan_discriminator_loss(&s, &t).unwrap().0
            },
            &joint,
            1e-7,
        );
        let analytic = Array1::from_iter(ds.iter().chain(dt.iter()).copied());
        let report = compare(&analytic, &numeric);
        assert!(report.max_rel_error < 1e-7, "rel {}", report.max_rel_error);

        let (_, dm) = gan_mapper_loss(&tgt).unwrap();
        let numeric_m =
            central_difference(|f| gan_mapper_loss(&f.to_owned()).unwrap().0, &tgt, 1e-7);
        let report_m = compare(&dm, &numeric_m);
        assert!(report_m.max_rel_error < 1e-7, "rel {}", report_m.max_rel_error);
    }

    #[test]
    fn saturated_scores_stay_finite() {
        let s = ndarray::arr1(&[0.0f64, 1.0]);
        let t = ndarray::arr1(&[1.0f64, 0.0]);
        let (loss, ds, dt) = gan_discriminator_loss(&s, &t).unwrap();
        assert!(loss.is_finite());
        for g in ds.iter().chain(dt.iter()) {
            assert!(g.is_finite());
            assert!(g.abs() <= 1.0 / (2.0 * SCORE_CLAMP) + 1.0);
        }
        let (lm, dm) = gan_mapper_loss(&s).unwrap();
        assert!(lm.is_finite() && dm.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn losses_are_permutation_invariant() {
        let mut rng = rng_from(17);
        let src: Vec<f64> = (0..6).map(|_| 0.1 + 0.8 * rng.gen::<f64>()).collect();
        let tgt: Vec<f64> = (0..5).map(|_| 0.1 + 0.8 * rng.gen::<f64>()).collect();
        let mut src_rev = src.clone();
        src_rev.reverse();
        let mut tgt_rev = tgt.clone();
        tgt_rev.reverse();
        let (a, _, _) =
            gan_discriminator_loss(&Array1::from(src.clone()), &Array1::from(tgt.clone()))
                .unwrap();
        let (b, _, _) =
            gan_discriminator_loss(&Array1::from(src_rev.clone()), &Array1::from(tgt_rev.clone()))
                .unwrap();
        assert!((a - b).abs() < 1e-12);
        let (wa, _, _) =
            wgan_critic_loss(&Array1::from(src), &Array1::from(tgt)).unwrap();
        let (wb, _, _) =
            wgan_critic_loss(&Array1::from(src_rev), &Array1::from(tgt_rev)).unwrap();
        assert!((wa - wb).abs() < 1e-12);
    }

    #[test]
    fn wgan_losses_are_linear_with_constant_gradients() {
        let src = ndarray::arr1(&[1.5f64, -0.5, 2.0]);
        let tgt = ndarray::arr1(&[0.25f64, -1.25]);
        let (loss, ds, dt) = wgan_critic_loss(&src, &tgt).unwrap();
        assert!((loss - ((0.25 - 1.25) / 2.0 - (1.5 - 0.5 + 2.0) / 3.0)).abs() < 1e-12);
        assert!(ds.iter().all(|g| (*g + 1.0 / 3.0).abs() < 1e-15));
        assert!(dt.iter().all(|g| (*g - 0.5).abs() < 1e-15));
        let (lm, dm) = wgan_mapper_loss(&tgt).unwrap();
        assert!((lm - 0.5).abs() < 1e-12);
        assert!(dm.iter().all(|g| (*g + 0.5).abs() < 1e-15));
        // Equal score distributions: no gap to report.
        let (zero, _, _) = wgan_critic_loss(&tgt, &tgt).unwrap();
        assert!(zero.abs() < 1e-12);
    }

    #[test]
    fn empty_batches_are_rejected() {
        let empty = Array1::<f64>::zeros(0);
        let some = Array1::from_elem(2, 0.5f64);
        assert!(matches!(
            gan_discriminator_loss(&empty, &some),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            gan_discriminator_loss(&some, &empty),
            Err(Error::Shape(_))
        ));
        assert!(matches!(gan_mapper_loss(&empty), Err(Error::Shape(_))));
        assert!(matches!(
            wgan_critic_loss(&empty, &some),
            Err(Error::Shape(_))
        ));
        assert!(matches!(wgan_mapper_loss(&empty), Err(Error::Shape(_))));
        let one_row = Array2::<f64>::zeros((0, 3));
        assert!(matches!(
            regression_loss(&one_row, &one_row),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = Array2::<f64>::zeros((2, 3));
        let b = Array2::<f64>::zeros((3, 3));
        assert!(matches!(regression_loss(&a, &b), Err(Error::Shape(_))));
        assert!(matches!(angular_error_degrees(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn domain_accuracy_uses_mode_specific_thresholds() {
        let src = ndarray::arr1(&[0.9f64, 0.4]);
        let tgt = ndarray::arr1(&[0.3f64, 0.6]);
        let acc = domain_accuracy(&src, &tgt, DiscMode::Gan).unwrap();
        assert!((acc - 0.5).abs() < 1e-12);
        let src_w = ndarray::arr1(&[1.0f64, -0.2]);
        let tgt_w = ndarray::arr1(&[-0.4f64, -0.1]);
        let acc_w = domain_accuracy(&src_w, &tgt_w, DiscMode::Wgan).unwrap();
        assert!((acc_w - 0.75).abs() < 1e-12);
    }

    #[test]
    fn reverse_gradient_scales_and_negates() {
        let g = Array2::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64 - 2.0);
        let zero = reverse_gradient(&g, 0.0);
        assert!(zero.iter().all(|v| *v == 0.0));
        let full = reverse_gradient(&g, 1.0);
        assert_eq!(full, g.mapv(|v| -v));
        let scaled = reverse_gradient(&g, 0.25);
        assert_eq!(scaled, g.mapv(|v| -0.25 * v));
    }
}
