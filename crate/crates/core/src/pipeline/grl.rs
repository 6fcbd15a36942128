//! Gradient-reversal baseline: a single stage that trains the whole
//! regressor on labeled source data while a domain classifier watches a
//! feature stack drawn from both domains. The classifier minimizes its own
//! loss; its gradient is sign-flipped and scaled by λ before it reaches the
//! feature block, so the features simultaneously serve the gaze task and
//! maximize domain confusion. With λ = 0 the domain path adds nothing and
//! the run is bit-identical to plain source training under the same seed.

use serde::Serialize;

use crate::data::batching::BatchProvider;
use crate::error::{Error, Result};
use crate::linalg::{derive_seed, rng_from, Scalar};
use crate::nets::{
    assemble_feature_stack, backward_regressor, discriminator_backward, discriminator_forward,
    feature_stack_backward, forward_regressor, DiscArch, DiscMode, DiscParams, FeatureSelection,
    FeatureStack, ImportanceVector, ParamStore, RegressorTensors, TapArrays,
};
use crate::objectives::{
    domain_accuracy, gan_discriminator_loss, regression_loss, reverse_gradient,
};
use crate::opt::{Adam, AdamConfig};
use crate::Elem;

use super::adapt::disc_signature;
use super::compose::evaluate_provider;
use super::source::ValPoint;
use super::{add_disc_grads, add_reg_grads, PlanCycler};

#[derive(Debug, Clone, Serialize)]
pub struct GrlConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_iters: usize,
    /// Reversal strength once the warm-up ends.
    pub lambda_max: f64,
    /// Fraction of `max_iters` during which λ stays 0 so the task head
    /// stabilizes before domain pressure starts.
    pub warmup_frac: f64,
    /// Which feature stack the domain classifier sees.
    pub selection: FeatureSelection,
    pub disc_arch: DiscArch,
    pub seed: u64,
    pub val_interval: usize,
    /// Stop after this many validation checks without improvement; 0 disables.
    pub patience: usize,
    pub eval_batch: usize,
}

impl GrlConfig {
    pub fn with_selection(selection: FeatureSelection) -> GrlConfig {
        GrlConfig {
            lr: 1e-3,
            batch_size: 128,
            max_iters: 2000,
            lambda_max: 1.0,
            warmup_frac: 0.2,
            selection,
            disc_arch: DiscArch::standard(),
            seed: 17,
            val_interval: 100,
            patience: 0,
            eval_batch: 256,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GrlDomainPoint {
    pub iter: usize,
    pub lambda: f64,
    pub domain_loss: f64,
    /// Training-batch domain accuracy of the classifier.
    pub domain_accuracy: f64,
}

#[derive(Debug)]
pub struct GrlOutput {
    /// Best-validation parameters (the whole network, trained jointly).
    pub params: ParamStore<Elem>,
    pub disc: DiscParams<Elem>,
    pub curve: Vec<ValPoint>,
    pub domain_trace: Vec<GrlDomainPoint>,
    pub final_val_deg: f64,
    pub iters_run: usize,
}

/// Runs the gradient-reversal baseline. `src_train` and `val` must be
/// labeled; `tgt_train` needs no labels. The task-batch stream matches
/// [`super::source::train_source`] under the same seed, which is what makes
/// the λ = 0 case bit-identical to plain source training.
pub fn run_grl_baseline(
    mut params: ParamStore<Elem>,
    src_train: &dyn BatchProvider,
    tgt_train: &dyn BatchProvider,
    val: &dyn BatchProvider,
    cfg: &GrlConfig,
) -> Result<GrlOutput> {
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    if cfg.val_interval == 0 {
        return Err(Error::Config("validation interval must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.warmup_frac) {
        return Err(Error::Config(format!(
            "warm-up fraction must lie in [0, 1], got {}",
            cfg.warmup_frac
        )));
    }
    if !(cfg.lambda_max >= 0.0 && cfg.lambda_max.is_finite()) {
        return Err(Error::Config(format!(
            "reversal strength must be finite and non-negative, got {}",
            cfg.lambda_max
        )));
    }
    if !src_train.is_labeled() {
        return Err(Error::Config(
            "the task stream requires gaze labels on every source record".into(),
        ));
    }
    if !val.is_labeled() {
        return Err(Error::Config("validation requires gaze labels".into()));
    }
    cfg.selection.validate()?;

    let arch = params.arch().clone();
    let (in_channels, depth, in_hw) = disc_signature(&arch, &cfg.selection)?;
    let disc_seed = derive_seed(cfg.seed, "grl/disc-init");
    let mut disc = match depth {
        Some(d) => {
            DiscParams::<Elem>::init_3d(&cfg.disc_arch, DiscMode::Gan, in_channels, d, in_hw, disc_seed)?
        }
        None => DiscParams::<Elem>::init_2d(&cfg.disc_arch, DiscMode::Gan, in_channels, in_hw, disc_seed)?,
    };
    let disc_elems: usize = disc.tensors().slices().iter().map(|s| s.len()).sum();
    let mut adam_d = Adam::new(AdamConfig::with_lr(cfg.lr), disc_elems);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), params.tensors().element_count());
    // The domain stack carries no learned importance in this baseline.
    let ones = ImportanceVector::<Elem>::ones(&cfg.selection);

    let mut task_cycler = PlanCycler::new(src_train.len(), cfg.batch_size, cfg.seed, "source/epoch")?;
    let mut src_dom_cycler =
        PlanCycler::new(src_train.len(), cfg.batch_size, cfg.seed, "grl/src-epoch")?;
    let mut tgt_dom_cycler =
        PlanCycler::new(tgt_train.len(), cfg.batch_size, cfg.seed, "grl/tgt-epoch")?;
    let mut dropout_rng = rng_from(derive_seed(cfg.seed, "grl/dropout"));

    let warmup_iters = (cfg.warmup_frac * cfg.max_iters as f64).ceil() as usize;
    let mut curve: Vec<ValPoint> = Vec::new();
    let mut domain_trace: Vec<GrlDomainPoint> = Vec::with_capacity(cfg.max_iters);
    let mut best: Option<(f64, RegressorTensors<Elem>)> = None;
    let mut stale = 0usize;
    let mut iters_run = 0usize;

    for iter in 0..cfg.max_iters {
        let lambda = if iter < warmup_iters { 0.0 } else { cfg.lambda_max };

        // --- Task step: supervised gaze loss on labeled source data. ---
        let t_idx = task_cycler.next_batch().to_vec();
        let t_batch = src_train.materialize(&t_idx);
        let gazes = t_batch
            .gazes
            .as_ref()
            .ok_or_else(|| Error::Config("task batch lost its labels".into()))?;
        let out_task = forward_regressor(&params, &t_batch.images)?;
        let (task_loss, dy) = regression_loss(&out_task.y, gazes)?;
        if !task_loss.to_f64().is_finite() {
            return Err(Error::TrainingAborted {
                reason: format!("non-finite task loss at iteration {iter}"),
                checkpoint: None,
            });
        }
        let mut grads = backward_regressor(&params, &out_task.cache, Some(&dy), &[])?;

        // --- Domain step: classifier update plus (optionally) reversed
        // feature gradient. ---
        let s_idx = src_dom_cycler.next_batch().to_vec();
        let g_idx = tgt_dom_cycler.next_batch().to_vec();
        let s_batch = src_train.materialize(&s_idx);
        let g_batch = tgt_train.materialize(&g_idx);
        let out_s = forward_regressor(&params, &s_batch.images)?;
        let out_g = forward_regressor(&params, &g_batch.images)?;
        let (stack_s, scache_s) = {
            let views = TapArrays::from_cache(&cfg.selection, &out_s.cache);
            assemble_feature_stack(&cfg.selection, &ones, &views)?
        };
        let (stack_g, scache_g) = {
            let views = TapArrays::from_cache(&cfg.selection, &out_g.cache);
            assemble_feature_stack(&cfg.selection, &ones, &views)?
        };
        let (scores_s, dc_s) = discriminator_forward(&disc, &stack_s, Some(&mut dropout_rng))?;
        let (scores_g, dc_g) = discriminator_forward(&disc, &stack_g, Some(&mut dropout_rng))?;
        let (d_loss, gs, gt) = gan_discriminator_loss(&scores_s, &scores_g)?;
        let d_loss = d_loss.to_f64();
        if !d_loss.is_finite() {
            return Err(Error::TrainingAborted {
                reason: format!("non-finite domain loss at iteration {iter}"),
                checkpoint: None,
            });
        }
        let acc = domain_accuracy(&scores_s, &scores_g, DiscMode::Gan)?;
        let (mut dgrads, dstack_s) = discriminator_backward(&disc, &dc_s, &gs)?;
        let (dgrads_g, dstack_g) = discriminator_backward(&disc, &dc_g, &gt)?;
        add_disc_grads(&mut dgrads, &dgrads_g);
        adam_d.step(
            disc.tensors_mut()
                .slices_mut()
                .into_iter()
                .zip(dgrads.slices()),
        )?;

        if lambda > 0.0 {
            let lam = lambda as Elem;
            let rev_s = reverse_stack(&dstack_s, lam);
            let rev_g = reverse_stack(&dstack_g, lam);
            let sg_s = feature_stack_backward(&scache_s, &ones, &rev_s)?;
            let sg_g = feature_stack_backward(&scache_g, &ones, &rev_g)?;
            let gr_s = backward_regressor(&params, &out_s.cache, None, &sg_s.tap_grads)?;
            let gr_g = backward_regressor(&params, &out_g.cache, None, &sg_g.tap_grads)?;
            add_reg_grads(&mut grads, &gr_s);
            add_reg_grads(&mut grads, &gr_g);
        }

        {
            let tensors = params.tensors_mut()?;
            let pairs = tensors
                .slices_mut()
                .into_iter()
                .zip(grads.slices())
                .map(|(p, g)| (p.data, g.data));
            adam.step(pairs)?;
        }
        iters_run = iter + 1;
        domain_trace.push(GrlDomainPoint {
            iter,
            lambda,
            domain_loss: d_loss,
            domain_accuracy: acc,
        });

        let at_interval = (iter + 1) % cfg.val_interval == 0;
        if at_interval || iter + 1 == cfg.max_iters {
            let report = evaluate_provider(&params, val, cfg.eval_batch)?;
            curve.push(ValPoint {
                iter: iter + 1,
                train_loss: task_loss.to_f64(),
                val_error_deg: report.mean_error_deg,
            });
            let improved = best
                .as_ref()
                .map_or(true, |(b, _)| report.mean_error_deg < *b);
            if improved {
                best = Some((report.mean_error_deg, params.tensors().clone()));
                stale = 0;
            } else {
                stale += 1;
            }
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }

    let (final_val_deg, best_tensors) = match best {
        Some((deg, tensors)) => (deg, tensors),
        None => (
            evaluate_provider(&params, val, cfg.eval_batch)?.mean_error_deg,
            params.tensors().clone(),
        ),
    };
    Ok(GrlOutput {
        params: ParamStore::from_tensors(&arch, best_tensors)?,
        disc,
        curve,
        domain_trace,
        final_val_deg,
        iters_run,
    })
}

fn reverse_stack(dstack: &FeatureStack<Elem>, lambda: Elem) -> FeatureStack<Elem> {
    match dstack {
        FeatureStack::Two(a) => FeatureStack::Two(reverse_gradient(a, lambda)),
        FeatureStack::Three(a) => FeatureStack::Three(reverse_gradient(a, lambda)),
    }
}
