//! Stage 2: adversarial adaptation of the target feature block.
//!
//! The fully trained source network is frozen and a copy of it becomes the
//! target network. Each round first trains the domain discriminator to tell
//! frozen-source feature stacks from target feature stacks (one or more
//! critic steps), then updates the target feature block and its stack
//! importance scalars to fool the discriminator. The target regression block
//! receives no gradient: with no loss on the predictions, only the tap
//! injections flowing back through the feature block carry signal, and the
//! optimizer is restricted to feature tensors regardless.

use ndarray::{Array1, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::data::batching::BatchProvider;
use crate::error::{Error, Result};
use crate::linalg::{derive_seed, rng_from, Scalar};
use crate::nets::{
    assemble_feature_stack, backward_regressor, discriminator_backward, discriminator_forward,
    forward_regressor, init_target_from_source, Arch, Block, DiscArch, DiscMode, DiscParams,
    FeatureSelection, FeatureStack, ImportanceVector, ParamStore, TapArrays,
};
use crate::objectives::{
    domain_accuracy, gan_discriminator_loss, gan_mapper_loss, wgan_critic_loss, wgan_mapper_loss,
};
use crate::opt::{wgan_clip, Adam, AdamConfig};
use crate::Elem;

use super::{add_disc_grads, PlanCycler};

/// Discriminator accuracy at which a probe counts as saturated: the game has
/// collapsed when the discriminator is (essentially) never wrong.
const SATURATED_ACCURACY: f64 = 0.999;

#[derive(Debug, Clone, Serialize)]
pub struct AdaptConfig {
    pub mode: DiscMode,
    pub selection: FeatureSelection,
    pub disc_arch: DiscArch,
    /// Learning rate shared by the discriminator and the feature block.
    pub lr: f64,
    pub batch_size: usize,
    /// Feature-block update rounds. Each round runs `critic_steps`
    /// discriminator updates first.
    pub iters: usize,
    pub critic_steps: usize,
    pub seed: u64,
    /// Probe held-out discriminator accuracy every this many rounds (0
    /// disables probing). The first probe happens before any update and a
    /// final probe after the last round.
    pub acc_interval: usize,
    /// Held-out records per domain used by each probe.
    pub acc_samples: usize,
    /// When nonzero, source feature taps are precomputed for a pool of this
    /// many source images (the source network is frozen, so its features
    /// never change) and batches are drawn from the pool.
    pub source_pool: usize,
    /// Consecutive saturated probes before the run is declared diverged and
    /// stopped early; 0 disables.
    pub divergence_patience: usize,
}

impl AdaptConfig {
    /// Defaults for a mode: one critic step per round for the GAN game, five
    /// for the WGAN game.
    pub fn for_mode(mode: DiscMode, selection: FeatureSelection) -> AdaptConfig {
        AdaptConfig {
            mode,
            selection,
            disc_arch: DiscArch::standard(),
            lr: 1e-4,
            batch_size: 32,
            iters: 200,
            critic_steps: match mode {
                DiscMode::Gan => 1,
                DiscMode::Wgan => 5,
            },
            seed: 23,
            acc_interval: 0,
            acc_samples: 256,
            source_pool: 0,
            divergence_patience: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AdaptTracePoint {
    pub iter: usize,
    /// Discriminator (or critic) loss of the round's last critic step.
    pub disc_loss: f64,
    pub mapper_loss: f64,
    /// Importance scalars after the round's feature update, in tap order.
    pub importance: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AccuracyPoint {
    pub iter: usize,
    pub accuracy: f64,
}

#[derive(Debug)]
pub struct AdaptOutput {
    /// The adapted target network (feature block trained, regression block
    /// still the source copy).
    pub target: ParamStore<Elem>,
    pub disc: DiscParams<Elem>,
    pub importance: ImportanceVector<Elem>,
    pub trace: Vec<AdaptTracePoint>,
    /// Held-out discriminator accuracy probes, when probing was enabled.
    pub accuracy: Vec<AccuracyPoint>,
    /// True when probing saturated for `divergence_patience` consecutive
    /// probes and the run stopped early.
    pub diverged: bool,
}

/// Derives the discriminator input signature for a selection under an
/// architecture: stack resolution is the elementwise maximum over the
/// selected taps; single-level stacks concatenate channels, double-level
/// stacks pad channels to the widest tap and add a depth axis.
pub(crate) fn disc_signature(
    arch: &Arch,
    selection: &FeatureSelection,
) -> Result<(usize, Option<usize>, (usize, usize))> {
    let mut hw = (0usize, 0usize);
    let mut channels = Vec::new();
    for tap in selection.taps() {
        let (c, tap_hw) = arch.tap_shape(tap)?;
        channels.push(c);
        hw = (hw.0.max(tap_hw.0), hw.1.max(tap_hw.1));
    }
    if selection.is_double() {
        let c_max = *channels.iter().max().expect("selection is non-empty");
        Ok((c_max, Some(channels.len()), hw))
    } else {
        Ok((channels.iter().sum(), None, hw))
    }
}

/// Adversarially adapts a copy of `source`'s feature block to `tgt_train`
/// (no labels used) against frozen-source feature stacks from `src_train`.
/// `source` is frozen on entry and verified unchanged on exit. Pass held-out
/// source/target data to enable discriminator-accuracy probes.
pub fn adapt_target(
    source: &mut ParamStore<Elem>,
    src_train: &dyn BatchProvider,
    tgt_train: &dyn BatchProvider,
    heldout: Option<(&dyn BatchProvider, &dyn BatchProvider)>,
    cfg: &AdaptConfig,
) -> Result<AdaptOutput> {
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    if cfg.critic_steps == 0 {
        return Err(Error::Config("adaptation needs at least one critic step per round".into()));
    }
    if cfg.acc_interval > 0 && heldout.is_none() {
        return Err(Error::Config(
            "accuracy probing was requested but no held-out data was given".into(),
        ));
    }
    cfg.selection.validate()?;

    let hash_before = source.content_hash();
    let mut target = init_target_from_source(source);
    let arch = target.arch().clone();

    let (in_channels, depth, in_hw) = disc_signature(&arch, &cfg.selection)?;
    let disc_seed = derive_seed(cfg.seed, "adapt/disc-init");
    let mut disc = match depth {
        Some(d) => DiscParams::<Elem>::init_3d(&cfg.disc_arch, cfg.mode, in_channels, d, in_hw, disc_seed)?,
        None => DiscParams::<Elem>::init_2d(&cfg.disc_arch, cfg.mode, in_channels, in_hw, disc_seed)?,
    };

    let disc_elems: usize = disc.tensors().slices().iter().map(|s| s.len()).sum();
    let mut adam_d = Adam::new(AdamConfig::with_lr(cfg.lr), disc_elems);
    let feature_elems: usize = target
        .tensors()
        .slices()
        .iter()
        .filter(|s| s.block == Block::Feature)
        .map(|s| s.data.len())
        .sum();
    let mut importance = ImportanceVector::<Elem>::ones(&cfg.selection);
    let source_importance = ImportanceVector::<Elem>::ones(&cfg.selection);
    let mut adam_t = Adam::new(AdamConfig::with_lr(cfg.lr), feature_elems + importance.len());

    let mut dropout_rng = rng_from(derive_seed(cfg.seed, "adapt/dropout"));
    let mut src_pool = SourcePool::build(source, src_train, cfg)?;
    let mut tgt_cycler = PlanCycler::new(tgt_train.len(), cfg.batch_size, cfg.seed, "adapt/tgt-epoch")?;

    let probes = match heldout {
        Some((hs, ht)) if cfg.acc_interval > 0 => Some(ProbeSet::new(hs, ht, cfg)),
        _ => None,
    };

    let mut trace: Vec<AdaptTracePoint> = Vec::with_capacity(cfg.iters);
    let mut accuracy: Vec<AccuracyPoint> = Vec::new();
    let mut saturated = 0usize;
    let mut diverged = false;

    for iter in 0..cfg.iters {
        if let Some(p) = &probes {
            if iter % cfg.acc_interval == 0 {
                let acc = p.measure(source, &target, &importance, &source_importance, &disc, cfg)?;
                accuracy.push(AccuracyPoint { iter, accuracy: acc });
                if acc >= SATURATED_ACCURACY {
                    saturated += 1;
                    if cfg.divergence_patience > 0 && saturated >= cfg.divergence_patience {
                        diverged = true;
                        break;
                    }
                } else {
                    saturated = 0;
                }
            }
        }

        // --- Critic phase: train the discriminator, features fixed. ---
        let mut last_d_loss = 0f64;
        let mut kept: Option<(crate::nets::RegressorOutput<Elem>, FeatureStack<Elem>, crate::nets::StackCache<Elem>)> = None;
        for _ in 0..cfg.critic_steps {
            let src_stack = src_pool.next_stack(source, &cfg.selection, &source_importance)?;
            let tgt_idx = tgt_cycler.next_batch().to_vec();
            let tgt_batch = tgt_train.materialize(&tgt_idx);
            let out = forward_regressor(&target, &tgt_batch.images)?;
            let (tgt_stack, tgt_scache) = {
                let views = TapArrays::from_cache(&cfg.selection, &out.cache);
                assemble_feature_stack(&cfg.selection, &importance, &views)?
            };

            let (s_src, c_src) = discriminator_forward(&disc, &src_stack, Some(&mut dropout_rng))?;
            let (s_tgt, c_tgt) = discriminator_forward(&disc, &tgt_stack, Some(&mut dropout_rng))?;
            let (d_loss, g_src, g_tgt) = match cfg.mode {
                DiscMode::Gan => gan_discriminator_loss(&s_src, &s_tgt)?,
                DiscMode::Wgan => wgan_critic_loss(&s_src, &s_tgt)?,
            };
            last_d_loss = d_loss.to_f64();
            if !last_d_loss.is_finite() {
                return Err(Error::TrainingAborted {
                    reason: format!("non-finite discriminator loss at round {iter}"),
                    checkpoint: None,
                });
            }
            let (mut gd, _) = discriminator_backward(&disc, &c_src, &g_src)?;
            let gd_t = discriminator_backward(&disc, &c_tgt, &g_tgt)?.0;
            add_disc_grads(&mut gd, &gd_t);
            adam_d.step(
                disc.tensors_mut()
                    .slices_mut()
                    .into_iter()
                    .zip(gd.slices())
                    .map(|(p, g)| (p, g)),
            )?;
            if cfg.mode == DiscMode::Wgan {
                wgan_clip(disc.tensors_mut());
            }
            kept = Some((out, tgt_stack, tgt_scache));
        }

        // --- Mapper phase: update features to fool the fresh discriminator.
        // Feature parameters were untouched during the critic phase, so the
        // last critic step's target forward is still exact and is reused.
        let (out, tgt_stack, tgt_scache) = kept.expect("at least one critic step ran");
        let (s_m, c_m) = discriminator_forward(&disc, &tgt_stack, Some(&mut dropout_rng))?;
        let (m_loss, g_m) = match cfg.mode {
            DiscMode::Gan => gan_mapper_loss(&s_m)?,
            DiscMode::Wgan => wgan_mapper_loss(&s_m)?,
        };
        let m_loss = m_loss.to_f64();
        if !m_loss.is_finite() {
            return Err(Error::TrainingAborted {
                reason: format!("non-finite mapper loss at round {iter}"),
                checkpoint: None,
            });
        }
        let (_, dstack) = discriminator_backward(&disc, &c_m, &g_m)?;
        let sgrads = crate::nets::feature_stack_backward(&tgt_scache, &importance, &dstack)?;
        let grads = backward_regressor(&target, &out.cache, None, &sgrads.tap_grads)?;
        {
            let tensors = target.tensors_mut()?;
            let mut pairs: Vec<(&mut [Elem], &[Elem])> = tensors
                .slices_mut()
                .into_iter()
                .zip(grads.slices())
                .filter(|(p, g)| {
                    debug_assert_eq!(p.name, g.name);
                    p.block == Block::Feature
                })
                .map(|(p, g)| (p.data, g.data))
                .collect();
            pairs.push((
                importance.values.as_slice_mut().expect("contiguous"),
                sgrads.d_importance.as_slice().expect("contiguous"),
            ));
            adam_t.step(pairs)?;
        }
        trace.push(AdaptTracePoint {
            iter,
            disc_loss: last_d_loss,
            mapper_loss: m_loss,
            importance: importance.values.iter().map(|&v| v.to_f64()).collect(),
        });
    }

    if let Some(p) = &probes {
        let end_iter = trace.len();
        let acc = p.measure(source, &target, &importance, &source_importance, &disc, cfg)?;
        accuracy.push(AccuracyPoint { iter: end_iter, accuracy: acc });
    }

    if source.content_hash() != hash_before {
        return Err(Error::Domain(
            "the frozen source network changed during adaptation".into(),
        ));
    }
    Ok(AdaptOutput {
        target,
        disc,
        importance,
        trace,
        accuracy,
        diverged,
    })
}

/// Where source feature stacks come from during the critic phase.
enum SourcePool<'a> {
    /// Per-image tap activations precomputed once over a fixed pool.
    Cached {
        taps: Vec<Vec<Array3<Elem>>>,
        cycler: PlanCycler,
    },
    /// Forward the frozen source network on each batch.
    Fly {
        data: &'a dyn BatchProvider,
        cycler: PlanCycler,
    },
}

/// Forward batch size for feature precomputation and accuracy probes.
const FEATURE_EVAL_BATCH: usize = 32;

impl<'a> SourcePool<'a> {
    fn build(
        source: &ParamStore<Elem>,
        data: &'a dyn BatchProvider,
        cfg: &AdaptConfig,
    ) -> Result<SourcePool<'a>> {
        if cfg.source_pool == 0 {
            return Ok(SourcePool::Fly {
                data,
                cycler: PlanCycler::new(data.len(), cfg.batch_size, cfg.seed, "adapt/src-epoch")?,
            });
        }
        let mut indices: Vec<usize> = (0..data.len()).collect();
        indices.shuffle(&mut rng_from(derive_seed(cfg.seed, "adapt/src-pool")));
        indices.truncate(cfg.source_pool.min(indices.len()));
        let mut taps: Vec<Vec<Array3<Elem>>> = Vec::with_capacity(indices.len());
        for chunk in indices.chunks(FEATURE_EVAL_BATCH) {
            let batch = data.materialize(chunk);
            let out = forward_regressor(source, &batch.images)?;
            let views = TapArrays::from_cache(&cfg.selection, &out.cache);
            for i in 0..chunk.len() {
                taps.push(
                    views
                        .views
                        .iter()
                        .map(|v| v.index_axis(Axis(0), i).to_owned())
                        .collect(),
                );
            }
        }
        let cycler = PlanCycler::new(taps.len(), cfg.batch_size, cfg.seed, "adapt/src-epoch")?;
        Ok(SourcePool::Cached { taps, cycler })
    }

    fn next_stack(
        &mut self,
        source: &ParamStore<Elem>,
        selection: &FeatureSelection,
        importance: &ImportanceVector<Elem>,
    ) -> Result<FeatureStack<Elem>> {
        match self {
            SourcePool::Cached { taps, cycler } => {
                let idx = cycler.next_batch().to_vec();
                let k = taps[0].len();
                let mut batched: Vec<Array4<Elem>> = Vec::with_capacity(k);
                for t in 0..k {
                    let (c, h, w) = taps[idx[0]][t].dim();
                    let mut arr = Array4::<Elem>::zeros((idx.len(), c, h, w));
                    for (slot, &i) in idx.iter().enumerate() {
                        arr.index_axis_mut(Axis(0), slot).assign(&taps[i][t]);
                    }
                    batched.push(arr);
                }
                let views = TapArrays::from_views(batched.iter().map(|a| a.view()).collect());
                Ok(assemble_feature_stack(selection, importance, &views)?.0)
            }
            SourcePool::Fly { data, cycler } => {
                let idx = cycler.next_batch().to_vec();
                let batch = data.materialize(&idx);
                let out = forward_regressor(source, &batch.images)?;
                let views = TapArrays::from_cache(selection, &out.cache);
                Ok(assemble_feature_stack(selection, importance, &views)?.0)
            }
        }
    }
}

/// Fixed held-out index sets for discriminator accuracy probes.
struct ProbeSet<'a> {
    src: &'a dyn BatchProvider,
    tgt: &'a dyn BatchProvider,
    src_idx: Vec<usize>,
    tgt_idx: Vec<usize>,
}

impl<'a> ProbeSet<'a> {
    fn new(src: &'a dyn BatchProvider, tgt: &'a dyn BatchProvider, cfg: &AdaptConfig) -> ProbeSet<'a> {
        let sample = |n: usize, label: &str| -> Vec<usize> {
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng_from(derive_seed(cfg.seed, label)));
            all.truncate(cfg.acc_samples.min(all.len()));
            all
        };
        ProbeSet {
            src,
            tgt,
            src_idx: sample(src.len(), "adapt/heldout-src"),
            tgt_idx: sample(tgt.len(), "adapt/heldout-tgt"),
        }
    }

    /// Discriminator accuracy on the held-out sets, dropout disabled.
    fn measure(
        &self,
        source: &ParamStore<Elem>,
        target: &ParamStore<Elem>,
        importance: &ImportanceVector<Elem>,
        source_importance: &ImportanceVector<Elem>,
        disc: &DiscParams<Elem>,
        cfg: &AdaptConfig,
    ) -> Result<f64> {
        let src_scores =
            eval_scores(source, self.src, &self.src_idx, &cfg.selection, source_importance, disc)?;
        let tgt_scores =
            eval_scores(target, self.tgt, &self.tgt_idx, &cfg.selection, importance, disc)?;
        domain_accuracy(&src_scores, &tgt_scores, cfg.mode)
    }
}

fn eval_scores(
    params: &ParamStore<Elem>,
    data: &dyn BatchProvider,
    indices: &[usize],
    selection: &FeatureSelection,
    importance: &ImportanceVector<Elem>,
    disc: &DiscParams<Elem>,
) -> Result<Array1<Elem>> {
    let mut scores: Vec<Elem> = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(FEATURE_EVAL_BATCH) {
        let batch = data.materialize(chunk);
        let out = forward_regressor(params, &batch.images)?;
        let views = TapArrays::from_cache(selection, &out.cache);
        let (stack, _) = assemble_feature_stack(selection, importance, &views)?;
        let (s, _) = discriminator_forward(disc, &stack, None)?;
        scores.extend(s.iter().copied());
    }
    Ok(Array1::from(scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Tap;
    use crate::opt::WGAN_CLIP_LIMIT;
    use crate::pipeline::source::testutil::{toy_task, unlabeled_images};

    fn tiny_cfg(mode: DiscMode, selection: FeatureSelection) -> AdaptConfig {
        AdaptConfig {
            disc_arch: DiscArch::tiny(),
            lr: 1e-3,
            batch_size: 8,
            iters: 4,
            acc_samples: 16,
            seed: 31,
            ..AdaptConfig::for_mode(mode, selection)
        }
    }

    #[test]
    fn gan_adaptation_runs_with_pooled_source_features() {
        let mut source = ParamStore::<Elem>::init(&Arch::tiny(), 41).unwrap();
        let hash = source.content_hash();
        let src = toy_task(48, 1);
        let tgt = unlabeled_images(48, 2, 0.4);
        let src_held = toy_task(24, 3);
        let tgt_held = unlabeled_images(24, 4, 0.4);
        let cfg = AdaptConfig {
            source_pool: 16,
            acc_interval: 2,
            ..tiny_cfg(DiscMode::Gan, FeatureSelection::single(Tap::C3).unwrap())
        };
        let out = adapt_target(&mut source, &src, &tgt, Some((&src_held, &tgt_held)), &cfg).unwrap();

        assert!(source.is_frozen());
        assert_eq!(source.content_hash(), hash, "the frozen source must not move");
        assert_eq!(out.trace.len(), 4);
        // Probes at rounds 0 and 2, plus the final probe.
        assert_eq!(out.accuracy.len(), 3);
        assert!(out.accuracy.iter().all(|p| (0.0..=1.0).contains(&p.accuracy)));
        assert_eq!(out.importance.len(), 2);
        assert!(out.trace.iter().all(|p| p.disc_loss.is_finite() && p.mapper_loss.is_finite()));
        // The feature block actually moved.
        assert_ne!(out.target.content_hash(), hash);
        // Importance scalars received gradient.
        assert!(out
            .trace
            .last()
            .unwrap()
            .importance
            .iter()
            .any(|v| (v - 1.0).abs() > 0.0));
        assert!(!out.diverged);
    }

    #[test]
    fn wgan_critic_weights_stay_clipped() {
        let mut source = ParamStore::<Elem>::init(&Arch::tiny(), 43).unwrap();
        let src = toy_task(32, 5);
        let tgt = unlabeled_images(32, 6, 0.3);
        let cfg = AdaptConfig {
            iters: 2,
            critic_steps: 2,
            ..tiny_cfg(DiscMode::Wgan, FeatureSelection::single(Tap::C3).unwrap())
        };
        let out = adapt_target(&mut source, &src, &tgt, None, &cfg).unwrap();
        let limit = WGAN_CLIP_LIMIT as Elem;
        for slice in out.disc.tensors().slices() {
            assert!(slice.iter().all(|v| v.abs() <= limit + 1e-7));
        }
    }

    #[test]
    fn zero_rounds_leave_the_copy_identical_to_the_source() {
        let mut source = ParamStore::<Elem>::init(&Arch::tiny(), 47).unwrap();
        let hash = source.content_hash();
        let src = toy_task(24, 7);
        let tgt = unlabeled_images(24, 8, 0.2);
        let cfg = AdaptConfig {
            iters: 0,
            ..tiny_cfg(DiscMode::Gan, FeatureSelection::single(Tap::C2).unwrap())
        };
        let out = adapt_target(&mut source, &src, &tgt, None, &cfg).unwrap();
        assert_eq!(out.target.content_hash(), hash);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn double_level_selection_adapts_through_a_3d_discriminator() {
        let mut source = ParamStore::<Elem>::init(&Arch::tiny(), 53).unwrap();
        let src = toy_task(32, 9);
        let tgt = unlabeled_images(32, 10, 0.3);
        let cfg = AdaptConfig {
            iters: 2,
            ..tiny_cfg(
                DiscMode::Gan,
                FeatureSelection::double(Tap::C2, Tap::C3).unwrap(),
            )
        };
        let out = adapt_target(&mut source, &src, &tgt, None, &cfg).unwrap();
        assert_eq!(out.trace.len(), 2);
        assert_eq!(out.importance.len(), 3);
        assert!(out.disc.fingerprint().contains("disc3"));
    }

    #[test]
    fn probing_without_heldout_data_is_a_config_error() {
        let mut source = ParamStore::<Elem>::init(&Arch::tiny(), 59).unwrap();
        let src = toy_task(16, 11);
        let tgt = unlabeled_images(16, 12, 0.1);
        let cfg = AdaptConfig {
            acc_interval: 1,
            ..tiny_cfg(DiscMode::Gan, FeatureSelection::single(Tap::C3).unwrap())
        };
        let err = adapt_target(&mut source, &src, &tgt, None, &cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err:?}");
    }

    #[test]
    fn selections_too_small_for_the_discriminator_are_rejected() {
        // The reduced architecture's C5 tap is 2x5, far below the
        // discriminator's spatial floor.
        let mut source = ParamStore::<Elem>::init(&Arch::tiny(), 61).unwrap();
        let src = toy_task(16, 13);
        let tgt = unlabeled_images(16, 14, 0.1);
        let cfg = tiny_cfg(DiscMode::Gan, FeatureSelection::single(Tap::C5).unwrap());
        let err = adapt_target(&mut source, &src, &tgt, None, &cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err:?}");
    }
}
