//! Forward and backward passes of the gaze regressor.
//!
//! The forward pass records every activation later needed for the backward
//! pass and exposes the six feature taps (post-activation C1..C5 plus FC1).
//! The backward pass accepts an optional gradient on the normalized
//! prediction and any number of gradients injected directly into tap
//! activations, which is how the adversarial stages steer the feature block
//! without touching the regression head.

use ndarray::{Array1, Array2, Array4, ArrayView4};

use super::{Arch, ParamStore, RegressorGrads, RegressorTensors, Tap};
use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::ops::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, l2_normalize_rows,
    l2_normalize_rows_backward, leaky_relu, leaky_relu_backward, maxpool2d_backward,
    maxpool2d_forward, Padding, PoolCache,
};

/// Everything the backward pass needs from a forward pass, including the
/// tap activations.
pub struct RegressorCache<R> {
    x0: Array4<R>,
    /// Post-activation conv outputs C1..C5 (the conv taps).
    a: [Array4<R>; 5],
    /// Post-activation P1 output (input to C4).
    q1: Array4<R>,
    p1_cache: PoolCache,
    p2_cache: PoolCache,
    /// Post-activation P2 output, flattened (input to FC1).
    f: Array2<R>,
    /// Post-activation FC1 output (the FC1 tap, flat form).
    a6: Array2<R>,
    /// Post-activation FC2 output.
    a7: Array2<R>,
    /// Normalized predictions.
    y: Array2<R>,
    norms: Array1<R>,
    /// FC1 grid form `(channels, rows, cols)` = C5 channels × P2 size.
    fc1_grid: (usize, usize, usize),
}

impl<R: Scalar> RegressorCache<R> {
    /// A tap's activation as a `(batch, channels, rows, cols)` view. FC1 is
    /// presented reshaped onto its pre-flatten grid.
    pub fn tap(&self, tap: Tap) -> ArrayView4<'_, R> {
        match tap {
            Tap::C1 => self.a[0].view(),
            Tap::C2 => self.a[1].view(),
            Tap::C3 => self.a[2].view(),
            Tap::C4 => self.a[3].view(),
            Tap::C5 => self.a[4].view(),
            Tap::Fc1 => {
                let b = self.a6.dim().0;
                let (c, h, w) = self.fc1_grid;
                self.a6
                    .view()
                    .into_shape_with_order((b, c, h, w))
                    .expect("FC1 width equals its grid size by construction")
            }
        }
    }

    pub fn batch_size(&self) -> usize {
        self.y.dim().0
    }
}

/// Result of a forward pass: unit-norm predictions plus the cache.
pub struct RegressorOutput<R> {
    pub y: Array2<R>,
    pub cache: RegressorCache<R>,
}

/// Runs the regressor on a batch `(B, 1, rows, cols)`.
///
/// Every layer except FC3 is followed by a leaky ReLU with slope 0.2; this
/// includes the two pooling stages, so a window whose values are all
/// negative passes through the slope twice. FC3 feeds a unit normalization,
/// and a batch row whose FC3 output is numerically zero (for example from
/// all-zero weights) is reported as a degenerate-vector error instead of
/// producing NaNs.
pub fn forward_regressor<R: Scalar>(
    params: &ParamStore<R>,
    x: &Array4<R>,
) -> Result<RegressorOutput<R>> {
    let arch = params.arch();
    let (b, c, h, w) = x.dim();
    if b == 0 {
        return Err(Error::Shape("regressor input batch is empty".into()));
    }
    if c != 1 || (h, w) != arch.input_hw {
        return Err(Error::Shape(format!(
            "regressor expects input (B, 1, {}, {}), got ({b}, {c}, {h}, {w})",
            arch.input_hw.0, arch.input_hw.1
        )));
    }
    let t = params.tensors();
    let trace = params.arch_trace();

    let a1 = leaky_relu(&conv2d_forward(x, &t.conv[0].w, &t.conv[0].b, 1, Padding::Valid));
    let a2 = leaky_relu(&conv2d_forward(&a1, &t.conv[1].w, &t.conv[1].b, 1, Padding::Valid));
    let a3 = leaky_relu(&conv2d_forward(&a2, &t.conv[2].w, &t.conv[2].b, 1, Padding::Valid));
    let (p1, p1_cache) = maxpool2d_forward(&a3, 3, 2);
    let q1 = leaky_relu(&p1);
    let a4 = leaky_relu(&conv2d_forward(&q1, &t.conv[3].w, &t.conv[3].b, 1, Padding::Valid));
    let a5 = leaky_relu(&conv2d_forward(&a4, &t.conv[4].w, &t.conv[4].b, 1, Padding::Valid));
    let (p2, p2_cache) = maxpool2d_forward(&a5, 2, 2);
    let q2 = leaky_relu(&p2);

    let f = q2
        .into_shape_with_order((b, trace.fc1_dim))
        .expect("P2 output flattens to the FC1 width");
    let a6 = leaky_relu(&dense_forward(&f, &t.fc1.w, &t.fc1.b));
    let a7 = leaky_relu(&dense_forward(&a6, &t.fc2.w, &t.fc2.b));
    let z8 = dense_forward(&a7, &t.fc3.w, &t.fc3.b);
    let (y, norms) = l2_normalize_rows(&z8)?;

    let fc1_grid = (arch.conv_channels[4], trace.p2_hw.0, trace.p2_hw.1);
    Ok(RegressorOutput {
        y: y.clone(),
        cache: RegressorCache {
            x0: x.clone(),
            a: [a1, a2, a3, a4, a5],
            q1,
            p1_cache,
            p2_cache,
            f,
            a6,
            a7,
            y,
            norms,
            fc1_grid,
        },
    })
}

/// Backpropagates through the regressor.
///
/// `dy` is the loss gradient with respect to the normalized prediction
/// (pass `None` for purely adversarial steps, which leave FC2/FC3 gradients
/// at zero). `tap_grads` are additional gradients added to the named tap
/// activations, e.g. from a feature-stack discriminator. Both contributions
/// accumulate: a tap gradient joins whatever flows down from above at the
/// tap's position in the chain.
pub fn backward_regressor<R: Scalar>(
    params: &ParamStore<R>,
    cache: &RegressorCache<R>,
    dy: Option<&Array2<R>>,
    tap_grads: &[(Tap, Array4<R>)],
) -> Result<RegressorGrads<R>> {
    let arch = params.arch();
    let t = params.tensors();
    let b = cache.batch_size();
    let trace = params.arch_trace();
    let mut grads = RegressorTensors::<R>::zeros(arch)?;

    for (tap, g) in tap_grads {
        let want = {
            let (ch, (gh, gw)) = arch.tap_shape(*tap)?;
            (b, ch, gh, gw)
        };
        if g.dim() != want {
            return Err(Error::Shape(format!(
                "gradient for tap {tap} has shape {:?}, expected {:?}",
                g.dim(),
                want
            )));
        }
    }
    let injected = |tap: Tap| -> Option<&Array4<R>> {
        tap_grads.iter().find(|(t, _)| *t == tap).map(|(_, g)| g)
    };

    // Regression head (only when a prediction gradient is supplied).
    let mut da6 = Array2::<R>::zeros(cache.a6.raw_dim());
    if let Some(dy) = dy {
        if dy.dim() != cache.y.dim() {
            return Err(Error::Shape(format!(
                "prediction gradient has shape {:?}, expected {:?}",
                dy.dim(),
                cache.y.dim()
            )));
        }
        let dz8 = l2_normalize_rows_backward(&cache.y, &cache.norms, dy);
        let g3 = dense_backward(&cache.a7, &t.fc3.w, &dz8);
        grads.fc3.w = g3.dw;
        grads.fc3.b = g3.db;
        let dz7 = leaky_relu_backward(&cache.a7, &g3.dx);
        let g2 = dense_backward(&cache.a6, &t.fc2.w, &dz7);
        grads.fc2.w = g2.dw;
        grads.fc2.b = g2.db;
        da6 = g2.dx;
    }

    // FC1 tap injection arrives in grid form; flatten it onto the FC1 axis.
    if let Some(g) = injected(Tap::Fc1) {
        let flat = g
            .view()
            .into_shape_with_order((b, trace.fc1_dim))
            .expect("validated above");
        da6 += &flat;
    }
    let dz6 = leaky_relu_backward(&cache.a6, &da6);
    let g1 = dense_backward(&cache.f, &t.fc1.w, &dz6);
    grads.fc1.w = g1.dw;
    grads.fc1.b = g1.db;

    // Down through P2 into the conv stack.
    let dp2 = leaky_relu_backward(&cache.f, &g1.dx);
    let dp2 = dp2
        .into_shape_with_order((b, arch.conv_channels[4], trace.p2_hw.0, trace.p2_hw.1))
        .expect("flat gradient reshapes onto the P2 grid");
    let mut da5 = maxpool2d_backward(&cache.p2_cache, &dp2);
    if let Some(g) = injected(Tap::C5) {
        da5 += g;
    }
    let dz5 = leaky_relu_backward(&cache.a[4], &da5);
    let g5 = conv2d_backward(&cache.a[3], &t.conv[4].w, &dz5, 1, Padding::Valid);
    grads.conv[4].w = g5.dw;
    grads.conv[4].b = g5.db;

    let mut da4 = g5.dx;
    if let Some(g) = injected(Tap::C4) {
        da4 += g;
    }
    let dz4 = leaky_relu_backward(&cache.a[3], &da4);
    let g4 = conv2d_backward(&cache.q1, &t.conv[3].w, &dz4, 1, Padding::Valid);
    grads.conv[3].w = g4.dw;
    grads.conv[3].b = g4.db;

    let dp1 = leaky_relu_backward(&cache.q1, &g4.dx);
    let mut da3 = maxpool2d_backward(&cache.p1_cache, &dp1);
    if let Some(g) = injected(Tap::C3) {
        da3 += g;
    }
    let dz3 = leaky_relu_backward(&cache.a[2], &da3);
    let g3 = conv2d_backward(&cache.a[1], &t.conv[2].w, &dz3, 1, Padding::Valid);
    grads.conv[2].w = g3.dw;
    grads.conv[2].b = g3.db;

    let mut da2 = g3.dx;
    if let Some(g) = injected(Tap::C2) {
        da2 += g;
    }
    let dz2 = leaky_relu_backward(&cache.a[1], &da2);
    let g2 = conv2d_backward(&cache.a[0], &t.conv[1].w, &dz2, 1, Padding::Valid);
    grads.conv[1].w = g2.dw;
    grads.conv[1].b = g2.db;

    let mut da1 = g2.dx;
    if let Some(g) = injected(Tap::C1) {
        da1 += g;
    }
    let dz1 = leaky_relu_backward(&cache.a[0], &da1);
    let g1 = conv2d_backward(&cache.x0, &t.conv[0].w, &dz1, 1, Padding::Valid);
    grads.conv[0].w = g1.dw;
    grads.conv[0].b = g1.db;

    Ok(grads)
}

/// Number of scalar parameters of an architecture, computed analytically so
/// no tensors are allocated.
pub fn regressor_param_count(arch: &Arch) -> Result<usize> {
    let trace = arch.trace()?;
    let mut n = 0usize;
    let mut c_in = 1usize;
    for &c_out in &arch.conv_channels {
        n += c_out * (c_in * 9 + 1);
        c_in = c_out;
    }
    n += trace.fc1_dim * (trace.fc1_dim + 1);
    n += arch.fc2_out * (trace.fc1_dim + 1);
    n += arch.out_dim * (arch.fc2_out + 1);
    Ok(n)
}
