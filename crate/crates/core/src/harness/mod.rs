//! Command-line interface, configuration, ablation study, and reporting.

pub mod cli;
pub mod config;
pub mod grid;
pub mod plot;
pub mod report;

pub use cli::cli_dispatch;
pub use config::ExperimentConfig;
pub use grid::{mean_post_by_cell, AblationRow, ExperimentGrid, GRID_CELLS, GRID_TAPS};
pub use plot::{emit_overlay_figure, emit_training_curves, render_curve_plot, Series};
pub use report::{parse_table_csv, AblationTable, TableRow};
