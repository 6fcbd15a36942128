//! Multi-depth feature-stack assembly.
//!
//! A stack collects the selected tap activations, bilinearly resizes each to
//! the largest selected resolution, multiplies each by its learned
//! importance scalar, and joins them: single-level selections concatenate
//! along channels (a 2-D stack), double-level selections stack along a new
//! depth axis (a 3-D stack) after zero-padding channels up to the widest
//! tap. Depth order is tap order, which is what makes the 3-D discriminator
//! sensitive to which level sits where.

use ndarray::{Array1, Array4, Array5, ArrayView4, Axis};

use super::{FeatureSelection, RegressorCache, Tap};
use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::ops::{bilinear_resize_backward, bilinear_resize_batch};

/// One learned scalar per stack entry, initialized to one and left
/// unconstrained during training. Logged per run so the learned level
/// weighting can be inspected.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceVector<R> {
    pub values: Array1<R>,
}

impl<R: Scalar> ImportanceVector<R> {
    /// All-ones importance for a selection (the initial state).
    pub fn ones(selection: &FeatureSelection) -> ImportanceVector<R> {
        ImportanceVector {
            values: Array1::ones(selection.taps().len()),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check(&self, selection: &FeatureSelection) -> Result<()> {
        let k = selection.taps().len();
        if self.values.len() != k {
            return Err(Error::Shape(format!(
                "importance vector has {} entries but the selection feeds {k} taps",
                self.values.len()
            )));
        }
        Ok(())
    }
}

/// How the stack tensor is laid out, with per-tap provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StackLayout {
    /// Channel-concatenated: tap `k` occupies `channel_ranges[k]`.
    Single { channel_ranges: Vec<(usize, usize)> },
    /// Depth-stacked: tap `k` sits at depth `k`, occupying its first
    /// `channels[k]` channels; channels above that are zero padding.
    Double { channels: Vec<usize> },
}

/// The assembled discriminator input.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureStack<R> {
    /// `(batch, total_channels, rows, cols)`
    Two(Array4<R>),
    /// `(batch, max_channels, depth, rows, cols)`
    Three(Array5<R>),
}

impl<R: Scalar> FeatureStack<R> {
    pub fn batch_size(&self) -> usize {
        match self {
            FeatureStack::Two(a) => a.dim().0,
            FeatureStack::Three(a) => a.dim().0,
        }
    }

    /// Spatial size (rows, cols).
    pub fn spatial_hw(&self) -> (usize, usize) {
        match self {
            FeatureStack::Two(a) => {
                let d = a.dim();
                (d.2, d.3)
            }
            FeatureStack::Three(a) => {
                let d = a.dim();
                (d.3, d.4)
            }
        }
    }

    pub fn as_two(&self) -> Option<&Array4<R>> {
        match self {
            FeatureStack::Two(a) => Some(a),
            FeatureStack::Three(_) => None,
        }
    }

    pub fn as_three(&self) -> Option<&Array5<R>> {
        match self {
            FeatureStack::Two(_) => None,
            FeatureStack::Three(a) => Some(a),
        }
    }
}

/// What the stack backward pass needs from assembly: the resized but
/// still unweighted tap activations plus layout bookkeeping.
pub struct StackCache<R> {
    taps: Vec<Tap>,
    resized: Vec<Array4<R>>,
    original_hw: Vec<(usize, usize)>,
    layout: StackLayout,
    target_hw: (usize, usize),
}

impl<R: Scalar> StackCache<R> {
    pub fn layout(&self) -> &StackLayout {
        &self.layout
    }

    pub fn target_hw(&self) -> (usize, usize) {
        self.target_hw
    }
}

/// Gradients flowing out of a stack: one gradient per tap (shaped like the
/// tap's original activation) plus the importance gradient.
pub struct StackGrads<R> {
    pub tap_grads: Vec<(Tap, Array4<R>)>,
    pub d_importance: Array1<R>,
}

/// Collects the selected tap activations from a forward cache, in
/// selection order (conv taps then FC1).
pub struct TapArrays<'a, R> {
    pub views: Vec<ArrayView4<'a, R>>,
}

impl<'a, R: Scalar> TapArrays<'a, R> {
    pub fn from_cache(
        selection: &FeatureSelection,
        cache: &'a RegressorCache<R>,
    ) -> TapArrays<'a, R> {
        TapArrays {
            views: selection.taps().iter().map(|t| cache.tap(*t)).collect(),
        }
    }

    pub fn from_views(views: Vec<ArrayView4<'a, R>>) -> TapArrays<'a, R> {
        TapArrays { views }
    }
}

/// Assembles the discriminator input from tap activations.
///
/// `taps.views` must align with `selection.taps()`. Every tap is resized to
/// the largest selected resolution (taps already at that size pass through
/// bit-identically) and scaled by its importance entry before joining.
pub fn assemble_feature_stack<R: Scalar>(
    selection: &FeatureSelection,
    importance: &ImportanceVector<R>,
    taps: &TapArrays<'_, R>,
) -> Result<(FeatureStack<R>, StackCache<R>)> {
    selection.validate()?;
    importance.check(selection)?;
    let tap_ids = selection.taps();
    if taps.views.len() != tap_ids.len() {
        return Err(Error::Shape(format!(
            "selection feeds {} taps but {} activations were provided",
            tap_ids.len(),
            taps.views.len()
        )));
    }
    let b = taps.views[0].dim().0;
    for (tap, v) in tap_ids.iter().zip(&taps.views) {
        if v.dim().0 != b {
            return Err(Error::Shape(format!(
                "tap {tap} has batch {} but the first tap has batch {b}",
                v.dim().0
            )));
        }
    }
    let target_hw = taps
        .views
        .iter()
        .fold((0usize, 0usize), |acc, v| {
            let (_, _, h, w) = v.dim();
            (acc.0.max(h), acc.1.max(w))
        });

    let mut resized: Vec<Array4<R>> = Vec::with_capacity(tap_ids.len());
    let mut original_hw = Vec::with_capacity(tap_ids.len());
    for v in &taps.views {
        let (_, _, h, w) = v.dim();
        original_hw.push((h, w));
        resized.push(bilinear_resize_batch(&v.to_owned(), target_hw.0, target_hw.1));
    }

    if selection.is_double() {
        let channels: Vec<usize> = resized.iter().map(|r| r.dim().1).collect();
        let c_max = *channels.iter().max().expect("at least one tap");
        let depth = resized.len();
        let mut out = Array5::<R>::zeros((b, c_max, depth, target_hw.0, target_hw.1));
        for (k, r) in resized.iter().enumerate() {
            let scale = importance.values[k];
            let c_k = r.dim().1;
            let mut slot = out.slice_mut(ndarray::s![.., 0..c_k, k, .., ..]);
            slot.assign(r);
            slot.mapv_inplace(|v| v * scale);
        }
        Ok((
            FeatureStack::Three(out),
            StackCache {
                taps: tap_ids,
                resized,
                original_hw,
                layout: StackLayout::Double { channels },
                target_hw,
            },
        ))
    } else {
        let total: usize = resized.iter().map(|r| r.dim().1).sum();
        let mut out = Array4::<R>::zeros((b, total, target_hw.0, target_hw.1));
        let mut offset = 0;
        let mut ranges = Vec::with_capacity(resized.len());
        for (k, r) in resized.iter().enumerate() {
            let scale = importance.values[k];
            let c_k = r.dim().1;
            let mut slot = out.slice_mut(ndarray::s![.., offset..offset + c_k, .., ..]);
            slot.assign(r);
            slot.mapv_inplace(|v| v * scale);
            ranges.push((offset, offset + c_k));
            offset += c_k;
        }
        Ok((
            FeatureStack::Two(out),
            StackCache {
                taps: tap_ids,
                resized,
                original_hw,
                layout: StackLayout::Single {
                    channel_ranges: ranges,
                },
                target_hw,
            },
        ))
    }
}

/// Backpropagates a stack gradient onto the tap activations and the
/// importance scalars.
pub fn feature_stack_backward<R: Scalar>(
    cache: &StackCache<R>,
    importance: &ImportanceVector<R>,
    dstack: &FeatureStack<R>,
) -> Result<StackGrads<R>> {
    let k = cache.taps.len();
    if importance.values.len() != k {
        return Err(Error::Shape(format!(
            "importance vector has {} entries but the stack holds {k} taps",
            importance.values.len()
        )));
    }
    let mut tap_grads = Vec::with_capacity(k);
    let mut d_importance = Array1::<R>::zeros(k);

    for idx in 0..k {
        // Slice this tap's region of the stack gradient.
        let g_region: Array4<R> = match (&cache.layout, dstack) {
            (StackLayout::Single { channel_ranges }, FeatureStack::Two(g)) => {
                let (lo, hi) = channel_ranges[idx];
                g.slice(ndarray::s![.., lo..hi, .., ..]).to_owned()
            }
            (StackLayout::Double { channels }, FeatureStack::Three(g)) => {
                let c_k = channels[idx];
                g.slice(ndarray::s![.., 0..c_k, idx, .., ..]).to_owned()
            }
            _ => {
                return Err(Error::Shape(
                    "stack gradient dimensionality does not match the stack layout".into(),
                ))
            }
        };
        let resized = &cache.resized[idx];
        if g_region.dim() != resized.dim() {
            return Err(Error::Shape(format!(
                "stack gradient region {:?} does not match tap activation {:?}",
                g_region.dim(),
                resized.dim()
            )));
        }

        // dL/dI_k = <g_region, resized unweighted tap>.
        d_importance[idx] = (&g_region * resized).sum();

        // dL/d(resized tap) = I_k * g_region, then undo the resize.
        let scale = importance.values[idx];
        let weighted = g_region.mapv(|v| v * scale);
        let (in_h, in_w) = cache.original_hw[idx];
        let (b, c, _, _) = weighted.dim();
        let mut dtap = Array4::<R>::zeros((b, c, in_h, in_w));
        for i in 0..b {
            let per_image = bilinear_resize_backward(weighted.index_axis(Axis(0), i), in_h, in_w);
            dtap.index_axis_mut(Axis(0), i).assign(&per_image);
        }
        tap_grads.push((cache.taps[idx], dtap));
    }

    Ok(StackGrads {
        tap_grads,
        d_importance,
    })
}
