//! Training stages, checkpointing, and evaluation.
//!
//! The pipeline has three stages. Stage 1 ([`source::train_source`]) fits the
//! regressor on labeled source-domain images. Stage 2
//! ([`adapt::adapt_target`]) freezes that network and trains a copy of its
//! feature block on unlabeled target images, steering it so a domain
//! discriminator cannot tell its feature stacks from the frozen source ones.
//! Stage 3 ([`compose::compose_inference`]) splices the adapted feature block
//! onto the source regression head for target-domain inference.
//! [`grl::run_grl_baseline`] is a single-stage comparison point that trains
//! features and regression jointly with a reversed domain gradient.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::batching::shuffled_full_batch_indices;
use crate::error::{Error, Result};
use crate::linalg::derive_seed;

pub mod adapt;
pub mod checkpoint;
pub mod compose;
pub mod grl;
pub mod source;

pub use adapt::{adapt_target, AccuracyPoint, AdaptConfig, AdaptOutput, AdaptTracePoint};
pub use checkpoint::{Checkpoint, NamedTensor, RngState, CHECKPOINT_MAGIC};
pub use compose::{compose_inference, evaluate_provider};
pub use grl::{run_grl_baseline, GrlConfig, GrlDomainPoint, GrlOutput};
pub use source::{train_source, SourceTrainConfig, SourceTrainOutput, ValPoint};

/// Endless deterministic batch stream: each epoch is a seeded shuffle of the
/// dataset chunked into full batches (partial tails dropped). Epoch `e` of
/// stream `s` under master seed `m` is seeded with `derive_seed(m, "s/e")`,
/// so distinct streams are independent and every epoch is reproducible.
pub(crate) struct PlanCycler {
    n: usize,
    batch: usize,
    master: u64,
    stream: String,
    epoch: usize,
    plan: Vec<Vec<usize>>,
    next: usize,
}

impl PlanCycler {
    pub(crate) fn new(n: usize, batch: usize, master: u64, stream: &str) -> Result<PlanCycler> {
        if batch == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if n < batch {
            return Err(Error::Config(format!(
                "dataset of {n} records cannot fill a batch of {batch}"
            )));
        }
        let mut cycler = PlanCycler {
            n,
            batch,
            master,
            stream: stream.to_string(),
            epoch: 0,
            plan: Vec::new(),
            next: 0,
        };
        cycler.reshuffle();
        Ok(cycler)
    }

    fn reshuffle(&mut self) {
        let seed = derive_seed(self.master, &format!("{}/{}", self.stream, self.epoch));
        self.plan = shuffled_full_batch_indices(self.n, self.batch, seed);
        self.next = 0;
    }

    pub(crate) fn next_batch(&mut self) -> &[usize] {
        if self.next >= self.plan.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        let i = self.next;
        self.next += 1;
        &self.plan[i]
    }
}

/// Accumulates discriminator gradients from a second backward pass.
pub(crate) fn add_disc_grads(acc: &mut crate::nets::DiscGrads<crate::Elem>, add: &crate::nets::DiscGrads<crate::Elem>) {
    for (a, b) in acc.slices_mut().into_iter().zip(add.slices()) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += *y;
        }
    }
}

/// Accumulates regressor gradients from a second backward pass.
pub(crate) fn add_reg_grads(
    acc: &mut crate::nets::RegressorGrads<crate::Elem>,
    add: &crate::nets::RegressorGrads<crate::Elem>,
) {
    for (a, b) in acc.slices_mut().into_iter().zip(add.slices()) {
        debug_assert_eq!(a.name, b.name);
        for (x, y) in a.data.iter_mut().zip(b.data) {
            *x += *y;
        }
    }
}

/// Hex SHA-256 of a config's debug form, stored in checkpoints so a resumed
/// run can detect that it was launched with different settings.
pub fn config_hash(cfg: &impl std::fmt::Debug) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(format!("{cfg:?}").as_bytes());
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Mean angular error over a labeled dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_error_deg: f64,
    pub samples: usize,
    pub batches: usize,
}

/// Fraction of the pre-adaptation error removed by adaptation:
/// `(pre - post) / pre`. Positive means improvement; `pre` must be positive
/// for the ratio to mean anything.
pub fn relative_improvement(pre_deg: f64, post_deg: f64) -> Result<f64> {
    if !(pre_deg > 0.0) {
        return Err(Error::Domain(format!(
            "relative improvement needs a positive pre-adaptation error, got {pre_deg}"
        )));
    }
    Ok((pre_deg - post_deg) / pre_deg)
}

/// A run's output directory: artifacts (checkpoints, traces, tables, figures)
/// are written under one root so a run is self-describing.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates (or reuses) the directory at `root`.
    pub fn create(root: impl Into<PathBuf>) -> Result<RunDir> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(RunDir { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_text(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Serializes `rows` as CSV with the given header line.
    pub fn write_csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut writer = csv::Writer::from_path(&path).map_err(|e| Error::Csv {
            path: path.clone(),
            source: e,
        })?;
        for row in rows {
            writer.serialize(row).map_err(|e| Error::Csv {
                path: path.clone(),
                source: e,
            })?;
        }
        writer.flush().map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// On-demand full-pipeline cost/quality probe at benchmark scale; run
    /// with `--ignored --nocapture` to budget desk-scale configs.
    #[test]
    #[ignore]
    fn desk_benchmark_probe() {
        use crate::data::{
            generate_inline_manifest, Domain, DomainShiftConfig, GeneratorConfig, LoadedDataset,
            Split, SplitCounts, SubsetProvider,
        };
        use crate::nets::{Arch, DiscMode, FeatureSelection, ParamStore, Tap};
        use crate::Elem;
        use std::time::Instant;

        let mut gen = GeneratorConfig::default();
        gen.shift = DomainShiftConfig {
            brightness_delta: 0.0,
            contrast_gain: 0.6,
            blur_sigma: 1.0,
            noise_sigma: 0.05,
            gamma: 1.0,
            seed: 0,
        };
        gen.counts = SplitCounts {
            source_train: 20000,
            source_val: 2000,
            source_test: 0,
            target_train: 5000,
            target_val: 500,
            target_test: 2000,
        };
        let t0 = Instant::now();
        let load = |domain, split, count| {
            LoadedDataset::from_manifest(
                &generate_inline_manifest(&gen, domain, split, count).unwrap(),
            )
            .unwrap()
        };
        let src_train = load(Domain::Source, Split::Train, gen.counts.source_train);
        let src_val = load(Domain::Source, Split::Val, gen.counts.source_val);
        let tgt_train = load(Domain::Target, Split::Train, gen.counts.target_train);
        let tgt_val = load(Domain::Target, Split::Val, gen.counts.target_val);
        let tgt_test = load(Domain::Target, Split::Test, gen.counts.target_test);
        println!("synthesis+load: {:.2?}", t0.elapsed());

        let val_sub = SubsetProvider::sampled(&src_val, 256, 1);
        let scfg = source::SourceTrainConfig {
            lr: 1e-3,
            batch_size: 32,
            max_iters: 150,
            val_interval: 10,
            patience: 0,
            stop_below_deg: Some(4.0),
            eval_batch: 256,
            seed: 17,
        };
        let t = Instant::now();
        let out = source::train_source(
            ParamStore::<Elem>::init(&Arch::standard(), 17).unwrap(),
            &src_train,
            &val_sub,
            &scfg,
            None,
        )
        .unwrap();
        println!(
            "stage1: {:.2?} for {} iters ({:.2} s/iter)",
            t.elapsed(),
            out.iters_run,
            t.elapsed().as_secs_f64() / out.iters_run.max(1) as f64
        );
        for p in &out.curve {
            println!("  iter {:4} train_loss {:.4} val {:.3} deg", p.iter, p.train_loss, p.val_error_deg);
        }
        let full_val = compose::evaluate_provider(&out.params, &src_val, 256).unwrap();
        println!("stage1 full-val: {:.3} deg", full_val.mean_error_deg);

        let mut source_params = out.params;
        let t = Instant::now();
        let pre = compose::evaluate_provider(&source_params, &tgt_test, 256).unwrap();
        println!("pre-adapt target: {:.3} deg (eval {:.2?})", pre.mean_error_deg, t.elapsed());

        let mut acfg = adapt::AdaptConfig::for_mode(
            DiscMode::Gan,
            FeatureSelection::double(Tap::C3, Tap::C5).unwrap(),
        );
        acfg.iters = 60;
        acfg.seed = 11;
        acfg.acc_interval = 2;
        acfg.acc_samples = 96;
        acfg.source_pool = 512;
        let t = Instant::now();
        let aout = adapt::adapt_target(
            &mut source_params,
            &src_train,
            &tgt_train,
            Some((&src_val, &tgt_val)),
            &acfg,
        )
        .unwrap();
        println!(
            "adapt: {:.2?} for {} rounds, diverged={}",
            t.elapsed(),
            acfg.iters,
            aout.diverged
        );
        for a in &aout.accuracy {
            println!("  acc iter {:3} {:.3}", a.iter, a.accuracy);
        }
        println!("  importance: {:?}", aout.importance.values.to_vec());
        let composed = compose::compose_inference(&aout.target, &source_params).unwrap();
        let post = compose::evaluate_provider(&composed, &tgt_test, 256).unwrap();
        println!(
            "post: {:.3} deg improvement {:.3}",
            post.mean_error_deg,
            (pre.mean_error_deg - post.mean_error_deg) / pre.mean_error_deg
        );
    }

    #[test]
    fn relative_improvement_matches_hand_computed_ratios() {
        let a = relative_improvement(14.5, 8.2).unwrap();
        assert!((a - 0.43448).abs() < 1e-3, "got {a}");
        let b = relative_improvement(11.2, 7.8).unwrap();
        assert!((b - 0.30357).abs() < 1e-3, "got {b}");
    }

    #[test]
    fn relative_improvement_is_signed() {
        // A post error larger than pre is a regression, not an error.
        let r = relative_improvement(5.0, 7.5).unwrap();
        assert!((r + 0.5).abs() < 1e-12);
    }

    #[test]
    fn relative_improvement_rejects_nonpositive_pre() {
        assert!(relative_improvement(0.0, 1.0).is_err());
        assert!(relative_improvement(-2.0, 1.0).is_err());
        assert!(relative_improvement(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn plan_cycler_is_reproducible_and_covers_epochs() {
        let mut a = PlanCycler::new(10, 3, 42, "source/epoch").unwrap();
        let mut b = PlanCycler::new(10, 3, 42, "source/epoch").unwrap();
        let mut seen = Vec::new();
        for _ in 0..7 {
            let batch = a.next_batch().to_vec();
            assert_eq!(batch, b.next_batch());
            assert_eq!(batch.len(), 3);
            seen.extend(batch);
        }
        // Three full batches per epoch of ten records; index 10 never appears
        // and every index is in range.
        assert!(seen.iter().all(|&i| i < 10));
        // A different stream under the same master seed draws different epochs.
        let mut c = PlanCycler::new(10, 3, 42, "grl/src-epoch").unwrap();
        let first_a = PlanCycler::new(10, 3, 42, "source/epoch")
            .unwrap()
            .next_batch()
            .to_vec();
        assert_ne!(first_a, c.next_batch());
    }

    #[test]
    fn plan_cycler_rejects_undersized_datasets() {
        assert!(PlanCycler::new(2, 3, 1, "s").is_err());
        assert!(PlanCycler::new(5, 0, 1, "s").is_err());
    }

    #[test]
    fn config_hash_distinguishes_configs() {
        #[derive(Debug)]
        struct C {
            lr: f64,
        }
        assert_eq!(config_hash(&C { lr: 0.1 }), config_hash(&C { lr: 0.1 }));
        assert_ne!(config_hash(&C { lr: 0.1 }), config_hash(&C { lr: 0.2 }));
        assert_eq!(config_hash(&C { lr: 0.1 }).len(), 64);
    }

    #[test]
    fn run_dir_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path().join("run1")).unwrap();
        run.write_text("notes.txt", "hello\n").unwrap();
        let report = EvalReport { mean_error_deg: 3.25, samples: 100, batches: 2 };
        let json = run.write_json("eval.json", &report).unwrap();
        let text = std::fs::read_to_string(json).unwrap();
        let back: EvalReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.samples, 100);
        assert!((back.mean_error_deg - 3.25).abs() < 1e-12);

        #[derive(Serialize)]
        struct Row {
            iter: usize,
            loss: f64,
        }
        let csv_path = run
            .write_csv("curve.csv", &[Row { iter: 0, loss: 1.5 }, Row { iter: 10, loss: 0.5 }])
            .unwrap();
        let text = std::fs::read_to_string(csv_path).unwrap();
        assert!(text.starts_with("iter,loss\n"), "got {text}");
        assert!(text.contains("10,0.5"));
    }
}
