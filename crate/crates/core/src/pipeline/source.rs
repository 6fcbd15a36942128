//! Stage 1: supervised training of the full regressor on labeled
//! source-domain data, with periodic validation and best-checkpoint
//! selection.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::batching::BatchProvider;
use crate::error::{Error, Result};
use crate::linalg::{rng_from, Scalar};
use crate::nets::{backward_regressor, forward_regressor, ParamStore, RegressorTensors};
use crate::objectives::regression_loss;
use crate::opt::{Adam, AdamConfig};
use crate::Elem;

use super::checkpoint::Checkpoint;
use super::compose::evaluate_provider;
use super::{config_hash, PlanCycler};

#[derive(Debug, Clone)]
pub struct SourceTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_iters: usize,
    /// Validate every this many iterations (and at the final iteration).
    pub val_interval: usize,
    /// Stop after this many validation checks without improvement; 0 disables.
    pub patience: usize,
    /// Stop as soon as validation error reaches this many degrees or less.
    pub stop_below_deg: Option<f64>,
    /// Batch size used for validation passes.
    pub eval_batch: usize,
    pub seed: u64,
}

impl Default for SourceTrainConfig {
    fn default() -> Self {
        SourceTrainConfig {
            lr: 1e-3,
            batch_size: 128,
            max_iters: 2000,
            val_interval: 100,
            patience: 0,
            stop_below_deg: None,
            eval_batch: 256,
            seed: 17,
        }
    }
}

/// One validation checkpoint on the training curve.
#[derive(Debug, Clone, Serialize)]
pub struct ValPoint {
    pub iter: usize,
    pub train_loss: f64,
    pub val_error_deg: f64,
}

#[derive(Debug)]
pub struct SourceTrainOutput {
    /// The parameters of the best validation checkpoint seen.
    pub params: ParamStore<Elem>,
    pub curve: Vec<ValPoint>,
    /// Validation error of the returned parameters, in degrees.
    pub final_val_deg: f64,
    pub iters_run: usize,
}

/// Trains the regressor on `train`, tracking mean angular error on `val` and
/// returning the best-validation parameters. Batches follow the
/// `source/epoch` stream of `cfg.seed`, so a rerun with the same
/// initialization and config reproduces the run exactly. A non-finite
/// training loss aborts, writing a diagnostic checkpoint into `abort_dir`
/// when one is given.
pub fn train_source(
    mut params: ParamStore<Elem>,
    train: &dyn BatchProvider,
    val: &dyn BatchProvider,
    cfg: &SourceTrainConfig,
    abort_dir: Option<&Path>,
) -> Result<SourceTrainOutput> {
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    if cfg.val_interval == 0 {
        return Err(Error::Config("validation interval must be at least 1".into()));
    }
    if !train.is_labeled() {
        return Err(Error::Config(
            "source training requires gaze labels on every training record".into(),
        ));
    }
    if !val.is_labeled() {
        return Err(Error::Config("validation requires gaze labels".into()));
    }

    let mut cycler = PlanCycler::new(train.len(), cfg.batch_size, cfg.seed, "source/epoch")?;
    let mut adam = Adam::new(
        AdamConfig::with_lr(cfg.lr),
        params.tensors().element_count(),
    );
    // Stage 1 draws nothing from a live RNG stream (batch orders are derived
    // per epoch), so diagnostic checkpoints carry the unconsumed stream.
    let rng = rng_from(cfg.seed);
    let cfg_hash = config_hash(cfg);

    let mut curve: Vec<ValPoint> = Vec::new();
    let mut best: Option<(f64, RegressorTensors<Elem>)> = None;
    let mut stale = 0usize;
    let mut iters_run = 0usize;

    for iter in 0..cfg.max_iters {
        let indices = cycler.next_batch().to_vec();
        let batch = train.materialize(&indices);
        let gazes = batch.gazes.as_ref().ok_or_else(|| {
            Error::Config("training batch lost its labels".into())
        })?;
        let out = forward_regressor(&params, &batch.images)?;
        let (loss, dy) = regression_loss(&out.y, gazes)?;
        let loss_f = loss.to_f64();
        if !loss_f.is_finite() {
            let saved = write_abort_checkpoint(abort_dir, iter, &cfg_hash, &params, &rng);
            return Err(Error::TrainingAborted {
                reason: format!("non-finite training loss at iteration {iter}"),
                checkpoint: saved,
            });
        }
        let grads = backward_regressor(&params, &out.cache, Some(&dy), &[])?;
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

        let at_interval = (iter + 1) % cfg.val_interval == 0;
        if at_interval || iter + 1 == cfg.max_iters {
            let report = evaluate_provider(&params, val, cfg.eval_batch)?;
            curve.push(ValPoint {
                iter: iter + 1,
                train_loss: loss_f,
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
            if let Some(limit) = cfg.stop_below_deg {
                if report.mean_error_deg <= limit {
                    break;
                }
            }
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }

    let (final_val_deg, best_tensors) = match best {
        Some((deg, tensors)) => (deg, tensors),
        // max_iters = 0: nothing trained, evaluate what came in.
        None => (
            evaluate_provider(&params, val, cfg.eval_batch)?.mean_error_deg,
            params.tensors().clone(),
        ),
    };
    let arch = params.arch().clone();
    Ok(SourceTrainOutput {
        params: ParamStore::from_tensors(&arch, best_tensors)?,
        curve,
        final_val_deg,
        iters_run,
    })
}

fn write_abort_checkpoint(
    abort_dir: Option<&Path>,
    iter: usize,
    cfg_hash: &str,
    params: &ParamStore<Elem>,
    rng: &rand_chacha::ChaCha20Rng,
) -> Option<PathBuf> {
    let dir = abort_dir?;
    std::fs::create_dir_all(dir).ok()?;
    let path = dir.join(format!("abort-iter{iter}.ckpt"));
    let ck = Checkpoint::from_params("stage1-abort", cfg_hash, params, rng);
    ck.save(&path).ok()?;
    Some(path)
}


#[cfg(test)]
mod tests {
    use super::testutil::toy_task;
    use super::*;
    use crate::nets::Arch;

    fn quick_cfg() -> SourceTrainConfig {
        SourceTrainConfig {
            lr: 2e-3,
            batch_size: 16,
            max_iters: 40,
            val_interval: 10,
            eval_batch: 32,
            seed: 5,
            ..SourceTrainConfig::default()
        }
    }

    #[test]
    fn training_reduces_loss_on_a_learnable_task() {
        let train = toy_task(128, 1);
        let val = toy_task(48, 2);
        let params = ParamStore::<Elem>::init(&Arch::tiny(), 9).unwrap();
        let out = train_source(params, &train, &val, &quick_cfg(), None).unwrap();
        assert_eq!(out.iters_run, 40);
        assert_eq!(out.curve.len(), 4);
        let first = out.curve.first().unwrap();
        let last = out.curve.last().unwrap();
        assert!(
            last.train_loss < first.train_loss,
            "loss should fall: {} -> {}",
            first.train_loss,
            last.train_loss
        );
        assert!(
            out.final_val_deg <= out.curve[0].val_error_deg,
            "best-val selection can never be worse than the first checkpoint"
        );
    }

    #[test]
    fn reruns_are_bit_identical() {
        let train = toy_task(64, 3);
        let val = toy_task(32, 4);
        let init = ParamStore::<Elem>::init(&Arch::tiny(), 21).unwrap();
        let cfg = SourceTrainConfig {
            max_iters: 12,
            val_interval: 6,
            batch_size: 16,
            eval_batch: 32,
            ..quick_cfg()
        };
        let a = train_source(init.clone(), &train, &val, &cfg, None).unwrap();
        let b = train_source(init, &train, &val, &cfg, None).unwrap();
        assert_eq!(a.params.content_hash(), b.params.content_hash());
        assert_eq!(a.curve.len(), b.curve.len());
        for (pa, pb) in a.curve.iter().zip(&b.curve) {
            assert_eq!(pa.train_loss.to_bits(), pb.train_loss.to_bits());
            assert_eq!(pa.val_error_deg.to_bits(), pb.val_error_deg.to_bits());
        }
    }

    #[test]
    fn unlabeled_data_is_rejected() {
        let train = super::testutil::unlabeled_images(32, 1, 0.0);
        let val = toy_task(16, 2);
        let params = ParamStore::<Elem>::init(&Arch::tiny(), 1).unwrap();
        let err = train_source(params, &train, &val, &quick_cfg(), None).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err:?}");
    }

    #[test]
    fn stop_below_halts_early() {
        let train = toy_task(64, 5);
        let val = toy_task(32, 6);
        let params = ParamStore::<Elem>::init(&Arch::tiny(), 2).unwrap();
        let cfg = SourceTrainConfig {
            stop_below_deg: Some(180.0),
            ..quick_cfg()
        };
        let out = train_source(params, &train, &val, &cfg, None).unwrap();
        assert_eq!(out.iters_run, cfg.val_interval, "stops at the first check");
        assert_eq!(out.curve.len(), 1);
    }

    #[test]
    fn patience_halts_after_stale_checks() {
        let train = toy_task(64, 7);
        let val = toy_task(32, 8);
        let params = ParamStore::<Elem>::init(&Arch::tiny(), 3).unwrap();
        // An absurd learning rate makes validation get worse, not better.
        let cfg = SourceTrainConfig {
            lr: 10.0,
            patience: 2,
            max_iters: 200,
            val_interval: 5,
            batch_size: 16,
            eval_batch: 32,
            seed: 5,
            ..SourceTrainConfig::default()
        };
        let out = train_source(params, &train, &val, &cfg, None).unwrap();
        assert!(
            out.iters_run < 200,
            "patience should stop the run, ran {}",
            out.iters_run
        );
    }

    #[test]
    fn zero_iterations_returns_the_input_parameters() {
        let train = toy_task(32, 9);
        let val = toy_task(16, 10);
        let params = ParamStore::<Elem>::init(&Arch::tiny(), 4).unwrap();
        let hash = params.content_hash();
        let cfg = SourceTrainConfig {
            max_iters: 0,
            ..quick_cfg()
        };
        let out = train_source(params, &train, &val, &cfg, None).unwrap();
        assert_eq!(out.params.content_hash(), hash);
        assert!(out.curve.is_empty());
        assert!(out.final_val_deg > 0.0);
    }
}
