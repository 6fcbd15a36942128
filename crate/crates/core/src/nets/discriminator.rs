//! Domain discriminators over feature stacks.
//!
//! Both variants use three stride-2 same-padded conv stages followed by a
//! single dense unit. Single-level (2-D) stacks get 3×3 kernels; double-level
//! (3-D) stacks get 3×3×3 kernels with stride 1 along depth, so the depth
//! axis — which encodes which tap sits at which level — is preserved through
//! every stage rather than being flattened away. Each conv stage is followed
//! by a leaky ReLU and 25% dropout; the flattened features see 50% dropout
//! before the final unit. In GAN mode the unit's output passes through a
//! sigmoid; in WGAN mode it is returned raw as a critic score.

use ndarray::{Array1, Array2, Array4, Array5};
use rand_chacha::ChaCha20Rng;

use super::params::{ConvLayer, DenseLayer};
use super::{DiscArch, FeatureStack};
use crate::error::{Error, Result};
use crate::linalg::{fill_truncated_normal, rng_from, Scalar};
use crate::ops::{
    conv2d_backward, conv2d_forward, conv3d_backward, conv3d_forward, dense_backward,
    dense_forward, dropout_backward, dropout_forward, leaky_relu, leaky_relu_backward, sigmoid,
    sigmoid_backward, Padding,
};

/// Dropout rate after each conv stage (training only).
pub const CONV_DROPOUT_RATE: f64 = 0.25;
/// Dropout rate on the flattened features before the final unit.
pub const FC_DROPOUT_RATE: f64 = 0.5;

/// Output mode: probability in (0, 1) for the GAN game, raw critic score
/// for the WGAN game.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DiscMode {
    Gan,
    Wgan,
}

impl DiscMode {
    pub fn name(self) -> &'static str {
        match self {
            DiscMode::Gan => "gan",
            DiscMode::Wgan => "wgan",
        }
    }
}

/// A 3-D conv layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3dLayer<R> {
    pub w: Array5<R>,
    pub b: Array1<R>,
}

/// The discriminator's tensors; arity matches the stack it was built for.
#[derive(Debug, Clone, PartialEq)]
pub enum DiscTensors<R> {
    Two {
        conv: [ConvLayer<R>; 3],
        fc: DenseLayer<R>,
    },
    Three {
        conv: [Conv3dLayer<R>; 3],
        fc: DenseLayer<R>,
    },
}

/// Gradients share the tensor layout.
pub type DiscGrads<R> = DiscTensors<R>;

/// A discriminator bound to a fixed input signature.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscParams<R> {
    arch: DiscArch,
    mode: DiscMode,
    /// `(channels, depth, rows, cols)`; depth is `None` for 2-D stacks.
    in_channels: usize,
    in_depth: Option<usize>,
    in_hw: (usize, usize),
    tensors: DiscTensors<R>,
}

fn ceil_halve(v: usize) -> usize {
    v.div_ceil(2)
}

/// Spatial sizes after each of the three stride-2 stages.
fn spatial_trace(hw: (usize, usize)) -> [(usize, usize); 3] {
    let s1 = (ceil_halve(hw.0), ceil_halve(hw.1));
    let s2 = (ceil_halve(s1.0), ceil_halve(s1.1));
    let s3 = (ceil_halve(s2.0), ceil_halve(s2.1));
    [s1, s2, s3]
}

impl<R: Scalar> DiscParams<R> {
    /// Builds a 2-D discriminator for stacks of `in_channels` channels at
    /// `in_hw`. Fails if either spatial axis is below
    /// [`DiscArch::MIN_SPATIAL`], the smallest extent for which all three
    /// halvings see at least two rows/columns of real signal.
    pub fn init_2d(
        arch: &DiscArch,
        mode: DiscMode,
        in_channels: usize,
        in_hw: (usize, usize),
        seed: u64,
    ) -> Result<DiscParams<R>> {
        check_spatial(in_hw)?;
        if in_channels == 0 {
            return Err(Error::Config("discriminator input has zero channels".into()));
        }
        let mut rng = rng_from(seed);
        let chans = arch.channels;
        let mut c_in = in_channels;
        let conv = std::array::from_fn(|i| {
            let mut w = Array4::<R>::zeros((chans[i], c_in, 3, 3));
            fill_truncated_normal(w.as_slice_mut().unwrap(), super::CONV_INIT_STD, &mut rng);
            let layer = ConvLayer {
                w,
                b: Array1::zeros(chans[i]),
            };
            c_in = chans[i];
            layer
        });
        let s3 = spatial_trace(in_hw)[2];
        let flat = chans[2] * s3.0 * s3.1;
        let mut fc_w = Array2::<R>::zeros((1, flat));
        fill_truncated_normal(fc_w.as_slice_mut().unwrap(), 1.0 / (flat as f64).sqrt(), &mut rng);
        Ok(DiscParams {
            arch: arch.clone(),
            mode,
            in_channels,
            in_depth: None,
            in_hw,
            tensors: DiscTensors::Two {
                conv,
                fc: DenseLayer {
                    w: fc_w,
                    b: Array1::zeros(1),
                },
            },
        })
    }

    /// Builds a 3-D discriminator for stacks of `in_channels` channels,
    /// `depth` levels, at `in_hw`. Depth is preserved through every stage.
    pub fn init_3d(
        arch: &DiscArch,
        mode: DiscMode,
        in_channels: usize,
        depth: usize,
        in_hw: (usize, usize),
        seed: u64,
    ) -> Result<DiscParams<R>> {
        check_spatial(in_hw)?;
        if in_channels == 0 || depth == 0 {
            return Err(Error::Config(
                "discriminator input has zero channels or zero depth".into(),
            ));
        }
        let mut rng = rng_from(seed);
        let chans = arch.channels;
        let mut c_in = in_channels;
        let conv = std::array::from_fn(|i| {
            let mut w = Array5::<R>::zeros((chans[i], c_in, 3, 3, 3));
            fill_truncated_normal(w.as_slice_mut().unwrap(), super::CONV_INIT_STD, &mut rng);
            let layer = Conv3dLayer {
                w,
                b: Array1::zeros(chans[i]),
            };
            c_in = chans[i];
            layer
        });
        let s3 = spatial_trace(in_hw)[2];
        let flat = chans[2] * depth * s3.0 * s3.1;
        let mut fc_w = Array2::<R>::zeros((1, flat));
        fill_truncated_normal(fc_w.as_slice_mut().unwrap(), 1.0 / (flat as f64).sqrt(), &mut rng);
        Ok(DiscParams {
            arch: arch.clone(),
            mode,
            in_channels,
            in_depth: Some(depth),
            in_hw,
            tensors: DiscTensors::Three {
                conv,
                fc: DenseLayer {
                    w: fc_w,
                    b: Array1::zeros(1),
                },
            },
        })
    }

    pub fn mode(&self) -> DiscMode {
        self.mode
    }

    pub fn arch(&self) -> &DiscArch {
        &self.arch
    }

    pub fn tensors(&self) -> &DiscTensors<R> {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut DiscTensors<R> {
        &mut self.tensors
    }

    /// Stable textual fingerprint for checkpoint compatibility checks.
    pub fn fingerprint(&self) -> String {
        let depth = self
            .in_depth
            .map(|d| format!("x{d}"))
            .unwrap_or_default();
        format!(
            "disc{}/{}/in{}{}x{}x{}/ch{}-{}-{}",
            if self.in_depth.is_some() { 3 } else { 2 },
            self.mode.name(),
            self.in_channels,
            depth,
            self.in_hw.0,
            self.in_hw.1,
            self.arch.channels[0],
            self.arch.channels[1],
            self.arch.channels[2],
        )
    }
}

fn check_spatial(hw: (usize, usize)) -> Result<()> {
    if hw.0 < DiscArch::MIN_SPATIAL || hw.1 < DiscArch::MIN_SPATIAL {
        return Err(Error::Config(format!(
            "feature stack spatial size {}x{} is too small for three stride-2 stages; \
             the discriminator needs at least {}x{}",
            hw.0,
            hw.1,
            DiscArch::MIN_SPATIAL,
            DiscArch::MIN_SPATIAL
        )));
    }
    Ok(())
}

impl<R: Scalar> DiscTensors<R> {
    /// Mutable flat views of every tensor, in canonical order
    /// (d1.w, d1.b, d2.w, d2.b, d3.w, d3.b, fc.w, fc.b). Used by the
    /// optimizer and by WGAN weight clipping, which clips all of them.
    pub fn slices_mut(&mut self) -> Vec<&mut [R]> {
        match self {
            DiscTensors::Two { conv, fc } => {
                let mut out: Vec<&mut [R]> = Vec::with_capacity(8);
                for layer in conv.iter_mut() {
                    out.push(layer.w.as_slice_mut().unwrap());
                    out.push(layer.b.as_slice_mut().unwrap());
                }
                out.push(fc.w.as_slice_mut().unwrap());
                out.push(fc.b.as_slice_mut().unwrap());
                out
            }
            DiscTensors::Three { conv, fc } => {
                let mut out: Vec<&mut [R]> = Vec::with_capacity(8);
                for layer in conv.iter_mut() {
                    out.push(layer.w.as_slice_mut().unwrap());
                    out.push(layer.b.as_slice_mut().unwrap());
                }
                out.push(fc.w.as_slice_mut().unwrap());
                out.push(fc.b.as_slice_mut().unwrap());
                out
            }
        }
    }

    /// Immutable flat views in the same canonical order.
    pub fn slices(&self) -> Vec<&[R]> {
        match self {
            DiscTensors::Two { conv, fc } => {
                let mut out: Vec<&[R]> = Vec::with_capacity(8);
                for layer in conv.iter() {
                    out.push(layer.w.as_slice().unwrap());
                    out.push(layer.b.as_slice().unwrap());
                }
                out.push(fc.w.as_slice().unwrap());
                out.push(fc.b.as_slice().unwrap());
                out
            }
            DiscTensors::Three { conv, fc } => {
                let mut out: Vec<&[R]> = Vec::with_capacity(8);
                for layer in conv.iter() {
                    out.push(layer.w.as_slice().unwrap());
                    out.push(layer.b.as_slice().unwrap());
                }
                out.push(fc.w.as_slice().unwrap());
                out.push(fc.b.as_slice().unwrap());
                out
            }
        }
    }

    /// All-zero tensors with the same shapes (gradient containers).
    pub fn zeros_like(&self) -> DiscTensors<R> {
        match self {
            DiscTensors::Two { conv, fc } => DiscTensors::Two {
                conv: std::array::from_fn(|i| ConvLayer {
                    w: Array4::zeros(conv[i].w.raw_dim()),
                    b: Array1::zeros(conv[i].b.raw_dim()),
                }),
                fc: DenseLayer {
                    w: Array2::zeros(fc.w.raw_dim()),
                    b: Array1::zeros(fc.b.raw_dim()),
                },
            },
            DiscTensors::Three { conv, fc } => DiscTensors::Three {
                conv: std::array::from_fn(|i| Conv3dLayer {
                    w: Array5::zeros(conv[i].w.raw_dim()),
                    b: Array1::zeros(conv[i].b.raw_dim()),
                }),
                fc: DenseLayer {
                    w: Array2::zeros(fc.w.raw_dim()),
                    b: Array1::zeros(fc.b.raw_dim()),
                },
            },
        }
    }

    pub fn element_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Flattened copy in canonical order (finite-difference sweeps).
    pub fn to_flat(&self) -> Vec<R> {
        let mut out = Vec::with_capacity(self.element_count());
        for s in self.slices() {
            out.extend_from_slice(s);
        }
        out
    }

    /// Writes a flat vector back (canonical order).
    pub fn assign_flat(&mut self, flat: &[R]) {
        let mut offset = 0;
        for s in self.slices_mut() {
            let n = s.len();
            s.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat vector length mismatch");
    }
}

enum StageData<R> {
    Two {
        inputs: [Array4<R>; 3],
        acts: [Array4<R>; 3],
        masks: Option<[Array4<R>; 3]>,
    },
    Three {
        inputs: [Array5<R>; 3],
        acts: [Array5<R>; 3],
        masks: Option<[Array5<R>; 3]>,
    },
}

/// Forward cache for [`discriminator_backward`].
pub struct DiscCache<R> {
    stages: StageData<R>,
    /// FC-stage dropout mask (training only).
    fc_mask: Option<Array2<R>>,
    /// Post-dropout dense input.
    fin: Array2<R>,
    /// Final scores as returned (after sigmoid in GAN mode).
    scores: Array1<R>,
}

/// Runs the discriminator on a stack.
///
/// Pass `Some(rng)` during training to draw dropout masks (25% after each
/// conv stage, 50% on the flattened features); pass `None` for a
/// deterministic evaluation pass with no dropout. The stack's arity,
/// channels, depth, and spatial size must match what the discriminator was
/// built for.
pub fn discriminator_forward<R: Scalar>(
    params: &DiscParams<R>,
    stack: &FeatureStack<R>,
    dropout_rng: Option<&mut ChaCha20Rng>,
) -> Result<(Array1<R>, DiscCache<R>)> {
    match (&params.tensors, stack) {
        (DiscTensors::Two { conv, fc }, FeatureStack::Two(x)) => {
            let (b, c, h, w) = x.dim();
            if c != params.in_channels || (h, w) != params.in_hw {
                return Err(Error::Shape(format!(
                    "2-D stack ({b}, {c}, {h}, {w}) does not match discriminator input \
                     ({} channels at {}x{})",
                    params.in_channels, params.in_hw.0, params.in_hw.1
                )));
            }
            let mut rng = dropout_rng;
            let mut inputs: Vec<Array4<R>> = Vec::with_capacity(3);
            let mut acts: Vec<Array4<R>> = Vec::with_capacity(3);
            let mut masks: Vec<Array4<R>> = Vec::with_capacity(3);
            let mut cur = x.clone();
            for layer in conv.iter() {
                inputs.push(cur.clone());
                let a = leaky_relu(&conv2d_forward(&cur, &layer.w, &layer.b, 2, Padding::Same));
                acts.push(a.clone());
                cur = match rng {
                    Some(ref mut r) => {
                        let (d, m) = dropout_forward(&a, CONV_DROPOUT_RATE, r);
                        masks.push(m);
                        d
                    }
                    None => a,
                };
            }
            let (b2, c3, h3, w3) = cur.dim();
            let flat = cur
                .into_shape_with_order((b2, c3 * h3 * w3))
                .expect("conv output flattens contiguously");
            let (fin, fc_mask) = match rng {
                Some(ref mut r) => {
                    let (d, m) = dropout_forward(&flat, FC_DROPOUT_RATE, r);
                    (d, Some(m))
                }
                None => (flat.clone(), None),
            };
            let z = dense_forward(&fin, &fc.w, &fc.b);
            let scores_2d = match params.mode {
                DiscMode::Gan => sigmoid(&z),
                DiscMode::Wgan => z,
            };
            let scores = scores_2d.column(0).to_owned();
            let masks_arr = if masks.is_empty() {
                None
            } else {
                let mut it = masks.into_iter();
                Some([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
            };
            let mut in_it = inputs.into_iter();
            let mut act_it = acts.into_iter();
            Ok((
                scores.clone(),
                DiscCache {
                    stages: StageData::Two {
                        inputs: [in_it.next().unwrap(), in_it.next().unwrap(), in_it.next().unwrap()],
                        acts: [act_it.next().unwrap(), act_it.next().unwrap(), act_it.next().unwrap()],
                        masks: masks_arr,
                    },
                    fc_mask,
                    fin,
                    scores,
                },
            ))
        }
        (DiscTensors::Three { conv, fc }, FeatureStack::Three(x)) => {
            let (b, c, d, h, w) = x.dim();
            if c != params.in_channels || Some(d) != params.in_depth || (h, w) != params.in_hw {
                return Err(Error::Shape(format!(
                    "3-D stack ({b}, {c}, {d}, {h}, {w}) does not match discriminator input \
                     ({} channels, depth {:?}, {}x{})",
                    params.in_channels, params.in_depth, params.in_hw.0, params.in_hw.1
                )));
            }
            let mut rng = dropout_rng;
            let mut inputs: Vec<Array5<R>> = Vec::with_capacity(3);
            let mut acts: Vec<Array5<R>> = Vec::with_capacity(3);
            let mut masks: Vec<Array5<R>> = Vec::with_capacity(3);
            let mut cur = x.clone();
            for layer in conv.iter() {
                inputs.push(cur.clone());
                let a = leaky_relu(&conv3d_forward(
                    &cur,
                    &layer.w,
                    &layer.b,
                    (1, 2, 2),
                    Padding::Same,
                ));
                acts.push(a.clone());
                cur = match rng {
                    Some(ref mut r) => {
                        let (dd, m) = dropout_forward(&a, CONV_DROPOUT_RATE, r);
                        masks.push(m);
                        dd
                    }
                    None => a,
                };
            }
            let (b2, c3, d3, h3, w3) = cur.dim();
            debug_assert_eq!(d3, d, "depth is preserved through stride-1 stages");
            let flat = cur
                .into_shape_with_order((b2, c3 * d3 * h3 * w3))
                .expect("conv output flattens contiguously");
            let (fin, fc_mask) = match rng {
                Some(ref mut r) => {
                    let (dd, m) = dropout_forward(&flat, FC_DROPOUT_RATE, r);
                    (dd, Some(m))
                }
                None => (flat.clone(), None),
            };
            let z = dense_forward(&fin, &fc.w, &fc.b);
            let scores_2d = match params.mode {
                DiscMode::Gan => sigmoid(&z),
                DiscMode::Wgan => z,
            };
            let scores = scores_2d.column(0).to_owned();
            let masks_arr = if masks.is_empty() {
                None
            } else {
                let mut it = masks.into_iter();
                Some([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
            };
            let mut in_it = inputs.into_iter();
            let mut act_it = acts.into_iter();
            Ok((
                scores.clone(),
                DiscCache {
                    stages: StageData::Three {
                        inputs: [in_it.next().unwrap(), in_it.next().unwrap(), in_it.next().unwrap()],
                        acts: [act_it.next().unwrap(), act_it.next().unwrap(), act_it.next().unwrap()],
                        masks: masks_arr,
                    },
                    fc_mask,
                    fin,
                    scores,
                },
            ))
        }
        _ => Err(Error::Shape(
            "stack arity does not match the discriminator (2-D vs 3-D)".into(),
        )),
    }
}

/// Backpropagates a gradient on the returned scores through the
/// discriminator, yielding parameter gradients and the gradient with
/// respect to the input stack. Requires a training-mode cache (dropout
/// masks recorded).
pub fn discriminator_backward<R: Scalar>(
    params: &DiscParams<R>,
    cache: &DiscCache<R>,
    dscores: &Array1<R>,
) -> Result<(DiscGrads<R>, FeatureStack<R>)> {
    if dscores.len() != cache.scores.len() {
        return Err(Error::Shape(format!(
            "score gradient has {} entries for a batch of {}",
            dscores.len(),
            cache.scores.len()
        )));
    }
    let b = cache.scores.len();
    let ds = dscores.view().into_shape_with_order((b, 1)).unwrap().to_owned();
    let s = cache.scores.view().into_shape_with_order((b, 1)).unwrap().to_owned();
    let dz = match params.mode {
        DiscMode::Gan => sigmoid_backward(&s, &ds),
        DiscMode::Wgan => ds,
    };

    let fc = match &params.tensors {
        DiscTensors::Two { fc, .. } => fc,
        DiscTensors::Three { fc, .. } => fc,
    };
    let gfc = dense_backward(&cache.fin, &fc.w, &dz);
    let fc_mask = cache.fc_mask.as_ref().ok_or_else(|| {
        Error::Domain("discriminator backward requires a training-mode forward".into())
    })?;
    let dflat = dropout_backward(fc_mask, &gfc.dx);

    match (&params.tensors, &cache.stages) {
        (DiscTensors::Two { conv, .. }, StageData::Two { inputs, acts, masks }) => {
            let masks = masks.as_ref().ok_or_else(|| {
                Error::Domain("discriminator backward requires a training-mode forward".into())
            })?;
            let mut dcur = dflat
                .into_shape_with_order(acts[2].raw_dim())
                .expect("flat gradient reshapes onto the last stage");
            let mut grads: Vec<ConvLayer<R>> = Vec::with_capacity(3);
            for i in (0..3).rev() {
                let da = dropout_backward(&masks[i], &dcur);
                let dzc = leaky_relu_backward(&acts[i], &da);
                let g = conv2d_backward(&inputs[i], &conv[i].w, &dzc, 2, Padding::Same);
                grads.push(ConvLayer { w: g.dw, b: g.db });
                dcur = g.dx;
            }
            grads.reverse();
            let mut it = grads.into_iter();
            Ok((
                DiscTensors::Two {
                    conv: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
                    fc: DenseLayer {
                        w: gfc.dw,
                        b: gfc.db,
                    },
                },
                FeatureStack::Two(dcur),
            ))
        }
        (DiscTensors::Three { conv, .. }, StageData::Three { inputs, acts, masks }) => {
            let masks = masks.as_ref().ok_or_else(|| {
                Error::Domain("discriminator backward requires a training-mode forward".into())
            })?;
            let mut dcur = dflat
                .into_shape_with_order(acts[2].raw_dim())
                .expect("flat gradient reshapes onto the last stage");
            let mut grads: Vec<Conv3dLayer<R>> = Vec::with_capacity(3);
            for i in (0..3).rev() {
                let da = dropout_backward(&masks[i], &dcur);
                let dzc = leaky_relu_backward(&acts[i], &da);
                let g = conv3d_backward(&inputs[i], &conv[i].w, &dzc, (1, 2, 2), Padding::Same);
                grads.push(Conv3dLayer { w: g.dw, b: g.db });
                dcur = g.dx;
            }
            grads.reverse();
            let mut it = grads.into_iter();
            Ok((
                DiscTensors::Three {
                    conv: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
                    fc: DenseLayer {
                        w: gfc.dw,
                        b: gfc.db,
                    },
                },
                FeatureStack::Three(dcur),
            ))
        }
        _ => unreachable!("cache arity always matches the parameters that built it"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, compare};
    use crate::linalg::rng_from;
    use crate::Elem;
    use ndarray::Array;
    use rand::Rng;

    fn random_stack2<R: Scalar>(dim: (usize, usize, usize, usize), seed: u64) -> FeatureStack<R> {
        let mut rng = rng_from(seed);
        FeatureStack::Two(Array::from_shape_simple_fn(dim, || {
            R::from_f64(rng.gen::<f64>() * 2.0 - 1.0)
        }))
    }

    fn random_stack3<R: Scalar>(
        dim: (usize, usize, usize, usize, usize),
        seed: u64,
    ) -> FeatureStack<R> {
        let mut rng = rng_from(seed);
        FeatureStack::Three(Array::from_shape_simple_fn(dim, || {
            R::from_f64(rng.gen::<f64>() * 2.0 - 1.0)
        }))
    }

    #[test]
    fn standard_single_level_geometry() {
        // A C5+FC1 stack on the full-size network: 384 channels at 10x20.
        // Spatial trace through the three halvings: 5x10 -> 3x5 -> 2x3.
        assert_eq!(spatial_trace((10, 20)), [(5, 10), (3, 5), (2, 3)]);
        let disc = DiscParams::<Elem>::init_2d(
            &DiscArch::standard(),
            DiscMode::Gan,
            384,
            (10, 20),
            7,
        )
        .unwrap();
        match disc.tensors() {
            DiscTensors::Two { fc, .. } => assert_eq!(fc.w.dim(), (1, 64 * 2 * 3)),
            _ => unreachable!(),
        }
        let stack = random_stack2::<Elem>((2, 384, 10, 20), 3);
        let (scores, _) = discriminator_forward(&disc, &stack, None).unwrap();
        assert_eq!(scores.len(), 2);
        for s in scores.iter() {
            assert!(*s > 0.0 && *s < 1.0, "GAN score {s} outside (0, 1)");
        }
    }

    #[test]
    fn too_small_stack_is_a_config_error_naming_the_minimum() {
        let err = DiscParams::<Elem>::init_2d(
            &DiscArch::tiny(),
            DiscMode::Gan,
            8,
            (5, 10),
            1,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("5x10"), "{msg}");
        assert!(msg.contains("8x8"), "{msg}");
    }

    #[test]
    fn wgan_scores_are_unbounded_raw_values() {
        let mut disc = DiscParams::<Elem>::init_2d(
            &DiscArch::tiny(),
            DiscMode::Wgan,
            3,
            (9, 9),
            11,
        )
        .unwrap();
        // Force a large positive bias so the raw score exceeds 1.
        if let DiscTensors::Two { fc, .. } = disc.tensors_mut() {
            fc.b[0] = 5.0;
        }
        let stack = random_stack2::<Elem>((1, 3, 9, 9), 5);
        let (scores, _) = discriminator_forward(&disc, &stack, None).unwrap();
        assert!(scores[0] > 1.0, "raw critic score {}", scores[0]);
    }

    #[test]
    fn depth_is_preserved_and_sized_into_the_dense_stage() {
        for depth in [2usize, 3] {
            let disc = DiscParams::<Elem>::init_3d(
                &DiscArch::tiny(),
                DiscMode::Gan,
                5,
                depth,
                (8, 12),
                13,
            )
            .unwrap();
            let s3 = spatial_trace((8, 12))[2];
            match disc.tensors() {
                DiscTensors::Three { fc, .. } => {
                    assert_eq!(fc.w.dim(), (1, 4 * depth * s3.0 * s3.1))
                }
                _ => unreachable!(),
            }
            let stack = random_stack3::<Elem>((2, 5, depth, 8, 12), 17);
            let (scores, _) = discriminator_forward(&disc, &stack, None).unwrap();
            assert_eq!(scores.len(), 2);
        }
    }

    #[test]
    fn arity_and_shape_mismatches_are_shape_errors() {
        let disc =
            DiscParams::<Elem>::init_2d(&DiscArch::tiny(), DiscMode::Gan, 3, (9, 9), 1).unwrap();
        let wrong_arity = random_stack3::<Elem>((1, 3, 2, 9, 9), 2);
        assert!(matches!(
            discriminator_forward(&disc, &wrong_arity, None),
            Err(Error::Shape(_))
        ));
        let wrong_channels = random_stack2::<Elem>((1, 4, 9, 9), 3);
        assert!(matches!(
            discriminator_forward(&disc, &wrong_channels, None),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn training_forward_is_reproducible_for_a_fixed_rng() {
        let disc =
            DiscParams::<Elem>::init_2d(&DiscArch::tiny(), DiscMode::Gan, 3, (9, 9), 19).unwrap();
        let stack = random_stack2::<Elem>((4, 3, 9, 9), 23);
        let (a, _) = discriminator_forward(&disc, &stack, Some(&mut rng_from(5))).unwrap();
        let (b, _) = discriminator_forward(&disc, &stack, Some(&mut rng_from(5))).unwrap();
        let (c, _) = discriminator_forward(&disc, &stack, Some(&mut rng_from(6))).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn eval_cache_rejects_backward() {
        let disc =
            DiscParams::<Elem>::init_2d(&DiscArch::tiny(), DiscMode::Gan, 3, (9, 9), 19).unwrap();
        let stack = random_stack2::<Elem>((2, 3, 9, 9), 23);
        let (scores, cache) = discriminator_forward(&disc, &stack, None).unwrap();
        let ds = Array1::<Elem>::ones(scores.len());
        assert!(matches!(
            discriminator_backward(&disc, &cache, &ds),
            Err(Error::Domain(_))
        ));
    }

    /// Over 100 random initializations, swapping which tap sits at which
    /// depth changes the 3-D discriminator's score essentially always —
    /// the depth axis carries information.
    #[test]
    fn three_d_scores_are_sensitive_to_tap_order()
    {
        let mut rng = rng_from(29);
        let a = Array::from_shape_simple_fn((1usize, 4usize, 8usize, 10usize), || {
            rng.gen::<f32>() - 0.5
        });
        let b = Array::from_shape_simple_fn((1usize, 4usize, 8usize, 10usize), || {
            rng.gen::<f32>() - 0.5
        });
        let mut fwd = ndarray::Array5::<Elem>::zeros((1, 4, 2, 8, 10));
        fwd.slice_mut(ndarray::s![.., .., 0, .., ..]).assign(&a);
        fwd.slice_mut(ndarray::s![.., .., 1, .., ..]).assign(&b);
        let mut rev = ndarray::Array5::<Elem>::zeros((1, 4, 2, 8, 10));
        rev.slice_mut(ndarray::s![.., .., 0, .., ..]).assign(&b);
        rev.slice_mut(ndarray::s![.., .., 1, .., ..]).assign(&a);
        let fwd = FeatureStack::Three(fwd);
        let rev = FeatureStack::Three(rev);

        let mut differing = 0;
        for seed in 0..100u64 {
            let disc = DiscParams::<Elem>::init_3d(
                &DiscArch::tiny(),
                DiscMode::Wgan,
                4,
                2,
                (8, 10),
                1000 + seed,
            )
            .unwrap();
            let (s1, _) = discriminator_forward(&disc, &fwd, None).unwrap();
            let (s2, _) = discriminator_forward(&disc, &rev, None).unwrap();
            if (s1[0] - s2[0]).abs() > 1e-9 {
                differing += 1;
            }
        }
        assert!(differing >= 99, "only {differing}/100 initializations differed");
    }

    /// Smallest kept (non-dropped) post-activation magnitude across conv
    /// stages. Bias perturbations shift whole channels, so the finite
    /// difference is only trustworthy when every kept pre-activation sits
    /// well away from the leaky-ReLU kink; `|z| >= |leaky(z)|`, so a lower
    /// bound on the activations bounds the kink distance too.
    fn min_kept_activation(cache: &DiscCache<f64>) -> f64 {
        let mut min = f64::INFINITY;
        match &cache.stages {
            StageData::Two { acts, masks, .. } => {
                for (a, m) in acts.iter().zip(masks.as_ref().unwrap()) {
                    for (av, mv) in a.iter().zip(m.iter()) {
                        if *mv != 0.0 && av.abs() < min {
                            min = av.abs();
                        }
                    }
                }
            }
            StageData::Three { acts, masks, .. } => {
                for (a, m) in acts.iter().zip(masks.as_ref().unwrap()) {
                    for (av, mv) in a.iter().zip(m.iter()) {
                        if *mv != 0.0 && av.abs() < min {
                            min = av.abs();
                        }
                    }
                }
            }
        }
        min
    }

    #[test]
    fn backward_matches_finite_differences_2d_and_3d() {
        const FD_STEP: f64 = 1e-6;
        for three_d in [false, true] {
            let build = |flat: Option<&[f64]>| -> DiscParams<f64> {
                let mut p = if three_d {
                    DiscParams::<f64>::init_3d(
                        &DiscArch::tiny(),
                        DiscMode::Gan,
                        2,
                        2,
                        (8, 9),
                        37,
                    )
                    .unwrap()
                } else {
                    DiscParams::<f64>::init_2d(&DiscArch::tiny(), DiscMode::Gan, 2, (8, 9), 37)
                        .unwrap()
                };
                if let Some(f) = flat {
                    p.tensors_mut().assign_flat(f);
                }
                p
            };
            let stack = if three_d {
                random_stack3::<f64>((2, 2, 2, 8, 9), 41)
            } else {
                random_stack2::<f64>((2, 2, 8, 9), 41)
            };
            let mut rng = rng_from(43);
            let coeff = ndarray::arr1(&[rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5]);
            // Dropout masks must be identical across perturbed evaluations,
            // so every forward uses a freshly seeded RNG.
            let mask_seed = 47;

            // Scale the freshly drawn parameters up so pre-activations are
            // O(0.1) rather than microscopic; otherwise the difference step
            // can straddle a leaky-ReLU kink and corrupt the bias columns.
            let mut theta = ndarray::Array1::from(build(None).tensors().to_flat());
            theta *= 8.0;
            let params = build(Some(theta.as_slice().unwrap()));
            let loss = |flat: &ndarray::Array1<f64>| -> f64 {
                let p = build(Some(flat.as_slice().unwrap()));
                let (scores, _) =
                    discriminator_forward(&p, &stack, Some(&mut rng_from(mask_seed))).unwrap();
                (&scores * &coeff).sum()
            };

            let (_, cache) =
                discriminator_forward(&params, &stack, Some(&mut rng_from(mask_seed))).unwrap();
            let margin = min_kept_activation(&cache);
            assert!(
                margin > 1e2 * FD_STEP,
                "3d={three_d}: fixture too close to a kink (min kept activation {margin:.3e})"
            );
            let (grads, dstack) = discriminator_backward(&params, &cache, &coeff).unwrap();

            let analytic = ndarray::Array1::from(grads.to_flat());
            let numeric = central_difference(loss, &theta, FD_STEP);
            let report = compare(&analytic, &numeric);
            assert!(
                report.max_rel_error < 1e-5,
                "3d={three_d}: param grads rel error {} at {}",
                report.max_rel_error,
                report.worst_index
            );

            // Stack gradient against finite differences over the input.
            let stack_flat: Vec<f64> = match &stack {
                FeatureStack::Two(a) => a.iter().copied().collect(),
                FeatureStack::Three(a) => a.iter().copied().collect(),
            };
            let input_loss = |flat: &ndarray::Array1<f64>| -> f64 {
                let s = match &stack {
                    FeatureStack::Two(a) => FeatureStack::Two(
                        Array::from_shape_vec(a.raw_dim(), flat.to_vec()).unwrap(),
                    ),
                    FeatureStack::Three(a) => FeatureStack::Three(
                        Array::from_shape_vec(a.raw_dim(), flat.to_vec()).unwrap(),
                    ),
                };
                let (scores, _) =
                    discriminator_forward(&params, &s, Some(&mut rng_from(mask_seed))).unwrap();
                (&scores * &coeff).sum()
            };
            let dstack_flat: Vec<f64> = match &dstack {
                FeatureStack::Two(a) => a.iter().copied().collect(),
                FeatureStack::Three(a) => a.iter().copied().collect(),
            };
            let numeric_in = central_difference(
                input_loss,
                &ndarray::Array1::from(stack_flat),
                FD_STEP,
            );
            let report_in = compare(&ndarray::Array1::from(dstack_flat), &numeric_in);
            assert!(
                report_in.max_rel_error < 1e-5,
                "3d={three_d}: input grads rel error {} at {}",
                report_in.max_rel_error,
                report_in.worst_index
            );
        }
    }

    #[test]
    fn fingerprints_encode_arity_mode_and_signature() {
        let d2 =
            DiscParams::<Elem>::init_2d(&DiscArch::standard(), DiscMode::Gan, 384, (10, 20), 1)
                .unwrap();
        let d3 = DiscParams::<Elem>::init_3d(
            &DiscArch::standard(),
            DiscMode::Wgan,
            192,
            3,
            (10, 20),
            1,
        )
        .unwrap();
        assert_ne!(d2.fingerprint(), d3.fingerprint());
        assert!(d2.fingerprint().contains("gan"));
        assert!(d3.fingerprint().contains("wgan"));
        assert!(d3.fingerprint().contains("x3x"));
    }
}
