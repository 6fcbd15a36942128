//! The feature-selection ablation grid.
//!
//! Adapting different depths of the network gives different transfer
//! quality, and pairs of depths can beat any single depth. The grid
//! enumerates every choice of one or two conv taps (FC1 always joins the
//! stack), runs the adaptation stage once per cell and seed at a reduced
//! budget, and records pre-/post-adaptation target error for each run.

use serde::{Deserialize, Serialize};

use crate::data::BatchProvider;
use crate::error::{Error, Result};
use crate::nets::{FeatureSelection, ParamStore, Tap};
use crate::pipeline::{
    adapt_target, compose_inference, evaluate_provider, relative_improvement, AdaptConfig,
};
use crate::Elem;

/// Conv taps in network order; the grid draws its cells from these.
pub const GRID_TAPS: [Tap; 5] = [Tap::C1, Tap::C2, Tap::C3, Tap::C4, Tap::C5];

/// Number of grid cells: 5 single-tap selections plus the 10 unordered
/// pairs.
pub const GRID_CELLS: usize = 15;

/// One adaptation run of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// Selection label, e.g. `C3+C5`.
    pub selection: String,
    pub seed: u64,
    /// Target test error of the unadapted source predictor, degrees.
    pub pre_deg: f64,
    /// Target test error after adaptation and head composition, degrees.
    pub post_deg: f64,
    /// `(pre - post) / pre`.
    pub improvement: f64,
}

/// All single- and double-tap feature selections, with the shared
/// adaptation settings and the seeds each cell runs under.
#[derive(Debug, Clone)]
pub struct ExperimentGrid {
    pub selections: Vec<FeatureSelection>,
    /// Per-cell adaptation template; `selection` and `seed` are replaced
    /// for each run and probing is disabled.
    pub base: AdaptConfig,
    pub seeds: Vec<u64>,
}

impl ExperimentGrid {
    /// Builds the full 15-cell grid: C1..C5 singles then all pairs in
    /// network order.
    pub fn new(base: AdaptConfig, seeds: Vec<u64>) -> Result<ExperimentGrid> {
        if seeds.is_empty() {
            return Err(Error::Config("ablation needs at least one seed".into()));
        }
        let mut selections = Vec::with_capacity(GRID_CELLS);
        for &tap in &GRID_TAPS {
            selections.push(FeatureSelection::single(tap)?);
        }
        for i in 0..GRID_TAPS.len() {
            for j in i + 1..GRID_TAPS.len() {
                selections.push(FeatureSelection::double(GRID_TAPS[i], GRID_TAPS[j])?);
            }
        }
        debug_assert_eq!(selections.len(), GRID_CELLS);
        Ok(ExperimentGrid { selections, base, seeds })
    }

    /// Runs every cell × seed sequentially against a frozen source network.
    ///
    /// The unadapted baseline error is measured once per call (it depends on
    /// neither cell nor seed). A cell that fails — e.g. its stack is too
    /// small for the discriminator — is skipped with a warning on stderr so
    /// the rest of the grid still reports; the table emitter marks the gap.
    pub fn run(
        &self,
        source: &mut ParamStore<Elem>,
        src_train: &dyn BatchProvider,
        tgt_train: &dyn BatchProvider,
        tgt_test: &dyn BatchProvider,
        eval_batch: usize,
    ) -> Result<Vec<AblationRow>> {
        let pre = evaluate_provider(source, tgt_test, eval_batch)?.mean_error_deg;
        let mut rows = Vec::with_capacity(self.selections.len() * self.seeds.len());
        for selection in &self.selections {
            for &seed in &self.seeds {
                let mut cfg = self.base.clone();
                cfg.selection = selection.clone();
                cfg.seed = seed;
                cfg.acc_interval = 0;
                cfg.divergence_patience = 0;
                let label = selection.label();
                let run = adapt_target(source, src_train, tgt_train, None, &cfg)
                    .and_then(|out| compose_inference(&out.target, source))
                    .and_then(|composed| evaluate_provider(&composed, tgt_test, eval_batch));
                match run {
                    Ok(report) => {
                        let post = report.mean_error_deg;
                        rows.push(AblationRow {
                            selection: label,
                            seed,
                            pre_deg: pre,
                            post_deg: post,
                            improvement: relative_improvement(pre, post)?,
                        });
                    }
                    Err(err) => {
                        eprintln!("warning: ablation cell {label} seed {seed} skipped: {err}");
                    }
                }
            }
        }
        Ok(rows)
    }
}

/// Mean post-adaptation error per cell across seeds, in grid order.
/// Cells with no surviving rows are `None`.
pub fn mean_post_by_cell(
    grid: &ExperimentGrid,
    rows: &[AblationRow],
) -> Vec<(String, Option<f64>)> {
    grid.selections
        .iter()
        .map(|sel| {
            let label = sel.label();
            let cell: Vec<f64> = rows
                .iter()
                .filter(|r| r.selection == label)
                .map(|r| r.post_deg)
                .collect();
            let mean = if cell.is_empty() {
                None
            } else {
                Some(cell.iter().sum::<f64>() / cell.len() as f64)
            };
            (label, mean)
        })
        .collect()
}
