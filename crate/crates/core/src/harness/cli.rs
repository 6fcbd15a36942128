//! Command-line interface.
//!
//! Every training subcommand resolves its settings the same way — defaults,
//! then an optional `--config` file, then repeatable `--set key=value`
//! overrides — and writes the resolved snapshot plus the argv line into its
//! run directory, so any run can be reproduced from its artifacts alone.
//!
//! Usage errors (unknown flags, missing arguments) exit with status 2 via
//! clap; runtime failures propagate as a single-line `error: ...` message
//! and exit status 1.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::data::{
    convert_external_metadata, generate_dataset_to_disk, DatasetManifest, Domain, LoadedDataset,
    Split,
};
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::grid::{AblationRow, ExperimentGrid};
use crate::harness::plot::{emit_overlay_figure, emit_training_curves};
use crate::harness::report::AblationTable;
use crate::nets::{Arch, FeatureSelection, ParamStore};
use crate::pipeline::{
    adapt_target, compose_inference, config_hash, evaluate_provider, relative_improvement,
    run_grl_baseline, train_source, AdaptTracePoint, Checkpoint, EvalReport, RunDir,
};
use crate::Elem;

/// Parses the process arguments and runs the selected subcommand.
pub fn cli_dispatch() -> Result<()> {
    let cli = Cli::parse();
    run_command(cli.command)
}

#[derive(Parser)]
#[command(
    name = "gazeadapt",
    version,
    about = "Train a gaze regressor on a labeled source domain and adapt it \
             to an unlabeled target domain by adversarial feature alignment."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file (flat key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set source.lr=5e-4 (repeatable;
    /// applied after the file).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply_overrides(&self.set)?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    /// 35×55 input network.
    Standard,
    /// Reduced fixture network (19×25 input).
    Tiny,
}

impl ArchArg {
    fn arch(self) -> Arch {
        match self {
            ArchArg::Standard => Arch::standard(),
            ArchArg::Tiny => Arch::tiny(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Source,
    Target,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Domain {
        match d {
            DomainArg::Source => Domain::Source,
            DomainArg::Target => Domain::Target,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the two-domain dataset to disk (PNGs plus CSV manifests).
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert external JSON-lines gaze metadata into a dataset manifest.
    Convert {
        /// JSON-lines metadata file ({"image": .., "look_vec": [x,y,z]}).
        #[arg(long)]
        metadata: PathBuf,
        /// Directory the image names resolve against.
        #[arg(long)]
        images: PathBuf,
        #[arg(long, value_enum)]
        domain: DomainArg,
        #[arg(long, value_enum)]
        split: SplitArg,
        /// Output manifest CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage 1: train the regressor on the labeled source split.
    TrainSource {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory produced by gen-data.
        #[arg(long)]
        data: PathBuf,
    },
    /// Stage 2: adapt the feature block against the frozen stage-1 network,
    /// once per configured seed.
    Adapt {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Stage-1 checkpoint (defaults to <run.dir>/stage1.ckpt).
        #[arg(long)]
        source_ckpt: Option<PathBuf>,
    },
    /// Joint-training baseline: gradient-reversal domain confusion.
    GrlBaseline {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory produced by gen-data.
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a checkpoint on a labeled manifest and print the mean
    /// angular error.
    Eval {
        /// Checkpoint to evaluate.
        #[arg(long)]
        ckpt: PathBuf,
        /// Labeled manifest CSV.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, value_enum, default_value_t = ArchArg::Standard)]
        arch: ArchArg,
    },
    /// Run the 15-cell feature-selection ablation grid at the configured
    /// budget and emit the aggregated table.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Stage-1 checkpoint (defaults to <run.dir>/stage1.ckpt).
        #[arg(long)]
        source_ckpt: Option<PathBuf>,
    },
    /// Rebuild the ablation table from a raw rows CSV.
    Report {
        /// Rows CSV written by the ablate subcommand.
        #[arg(long)]
        rows: PathBuf,
        /// Directory for the re-emitted table files (prints only when
        /// omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit figures from run artifacts.
    Plot {
        #[command(subcommand)]
        figure: PlotCommand,
    },
}

#[derive(Subcommand)]
enum PlotCommand {
    /// Overlay one or more trace CSV columns as polylines.
    Curves {
        /// Trace to draw, as NAME=PATH (repeatable).
        #[arg(long = "trace", value_name = "NAME=PATH", required = true)]
        traces: Vec<String>,
        /// Column plotted on the x axis.
        #[arg(long, default_value = "iter")]
        x: String,
        /// Column plotted on the y axis.
        #[arg(long)]
        y: String,
        /// Output PNG path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render eye images with truth / pre-adaptation / post-adaptation
    /// gaze arrows.
    Overlay {
        /// Pre-adaptation (source) checkpoint.
        #[arg(long)]
        pre: PathBuf,
        /// Post-adaptation (composed) checkpoint.
        #[arg(long)]
        post: PathBuf,
        /// Labeled manifest CSV.
        #[arg(long)]
        manifest: PathBuf,
        /// How many samples to render.
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Output directory for the per-sample PNGs.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ArchArg::Standard)]
        arch: ArchArg,
    },
}

fn run_command(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { config, out } => cmd_gen_data(&config, &out),
        Command::Convert {
            metadata,
            images,
            domain,
            split,
            out,
        } => cmd_convert(&metadata, &images, domain.into(), split.into(), &out),
        Command::TrainSource { config, data } => cmd_train_source(&config, &data),
        Command::Adapt {
            config,
            data,
            source_ckpt,
        } => cmd_adapt(&config, &data, source_ckpt.as_deref()),
        Command::GrlBaseline { config, data } => cmd_grl(&config, &data),
        Command::Eval {
            ckpt,
            manifest,
            batch,
            arch,
        } => cmd_eval(&ckpt, &manifest, batch, arch.arch()),
        Command::Ablate {
            config,
            data,
            source_ckpt,
        } => cmd_ablate(&config, &data, source_ckpt.as_deref()),
        Command::Report { rows, out } => cmd_report(&rows, out.as_deref()),
        Command::Plot { figure } => match figure {
            PlotCommand::Curves { traces, x, y, out } => cmd_plot_curves(&traces, &x, &y, &out),
            PlotCommand::Overlay {
                pre,
                post,
                manifest,
                count,
                out,
                arch,
            } => cmd_plot_overlay(&pre, &post, &manifest, count, &out, arch.arch()),
        },
    }
}

/// Records what reproduces this run: the resolved config and the argv line.
fn write_provenance(run: &RunDir, cfg: &ExperimentConfig) -> Result<()> {
    run.write_text("config.cfg", &cfg.snapshot())?;
    let argv: Vec<String> = std::env::args().collect();
    run.write_text("command.txt", &format!("{}\n", argv.join(" ")))?;
    Ok(())
}

fn load_split(dir: &Path, domain: Domain, split: Split) -> Result<LoadedDataset> {
    let path = dir.join(format!("{domain}_{split}.csv"));
    let manifest = DatasetManifest::load_csv(&path)?;
    LoadedDataset::from_manifest(&manifest)
}

fn load_params(path: &Path, arch: &Arch) -> Result<ParamStore<Elem>> {
    let ckpt = Checkpoint::load(path)?;
    let mut params = ParamStore::init(arch, 0)?;
    ckpt.apply(&mut params)?;
    Ok(params)
}

fn save_params(path: &Path, stage: &str, hash: &str, params: &ParamStore<Elem>) -> Result<()> {
    let rng = ChaCha20Rng::seed_from_u64(0);
    Checkpoint::from_params(stage, hash, params, &rng).save(path)
}

fn format_eval_line(report: &EvalReport) -> String {
    format!("mean_error_deg={:.3}", report.mean_error_deg)
}

fn cmd_gen_data(config: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = config.load()?;
    let outputs = generate_dataset_to_disk(&cfg.generator, out)?;
    let run = RunDir::create(out)?;
    write_provenance(&run, &cfg)?;
    for m in &outputs {
        println!("wrote {} ({} records)", m.path.display(), m.count);
    }
    Ok(())
}

fn cmd_convert(
    metadata: &Path,
    images: &Path,
    domain: Domain,
    split: Split,
    out: &Path,
) -> Result<()> {
    let (manifest, report) = convert_external_metadata(metadata, images, domain, split)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    manifest.save_csv(out)?;
    for issue in &report.errors {
        eprintln!("warning: line {}: {}", issue.line, issue.message);
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "converted {} records to {} ({} rejected)",
        report.converted,
        out.display(),
        report.errors.len()
    );
    Ok(())
}

fn cmd_train_source(config: &ConfigArgs, data: &Path) -> Result<()> {
    let cfg = config.load()?;
    let run = RunDir::create(&cfg.run_dir)?;
    write_provenance(&run, &cfg)?;
    let train = load_split(data, Domain::Source, Split::Train)?;
    let val = load_split(data, Domain::Source, Split::Val)?;
    let params = ParamStore::<Elem>::init(&Arch::standard(), cfg.source.seed)?;
    let out = train_source(params, &train, &val, &cfg.source, Some(run.root()))?;
    let hash = config_hash(&cfg.source);
    save_params(&run.path("stage1.ckpt"), "stage1", &hash, &out.params)?;
    run.write_csv("stage1_curve.csv", &out.curve)?;
    run.write_json(
        "stage1_report.json",
        &serde_json::json!({
            "final_val_deg": out.final_val_deg,
            "iters_run": out.iters_run,
        }),
    )?;
    println!(
        "stage1: final_val_deg={:.3} after {} iters (checkpoint: {})",
        out.final_val_deg,
        out.iters_run,
        run.path("stage1.ckpt").display()
    );
    Ok(())
}

#[derive(Serialize)]
struct AdaptSeedReport {
    seed: u64,
    pre_deg: f64,
    post_deg: f64,
    relative_improvement: f64,
    diverged: bool,
    importance: Vec<f64>,
}

/// Adaptation trace CSV: one importance column per tap in stack order.
fn adapt_trace_csv(selection: &FeatureSelection, trace: &[AdaptTracePoint]) -> String {
    let mut text = String::from("iter,disc_loss,mapper_loss");
    for tap in selection.taps() {
        text.push_str(&format!(",imp_{}", tap.name()));
    }
    text.push('\n');
    for point in trace {
        text.push_str(&format!(
            "{},{},{}",
            point.iter, point.disc_loss, point.mapper_loss
        ));
        for v in &point.importance {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    text
}

fn cmd_adapt(config: &ConfigArgs, data: &Path, source_ckpt: Option<&Path>) -> Result<()> {
    let cfg = config.load()?;
    let run = RunDir::create(&cfg.run_dir)?;
    write_provenance(&run, &cfg)?;
    let arch = Arch::standard();
    let default_ckpt = run.path("stage1.ckpt");
    let mut source = load_params(source_ckpt.unwrap_or(&default_ckpt), &arch)?;

    let src_train = load_split(data, Domain::Source, Split::Train)?;
    let tgt_train = load_split(data, Domain::Target, Split::Train)?;
    let tgt_test = load_split(data, Domain::Target, Split::Test)?;
    let heldout_data = if cfg.adapt.acc_interval > 0 {
        Some((
            load_split(data, Domain::Source, Split::Val)?,
            load_split(data, Domain::Target, Split::Val)?,
        ))
    } else {
        None
    };

    let pre = evaluate_provider(&source, &tgt_test, cfg.eval_batch)?;
    println!("pre-adaptation target error: {:.3} deg", pre.mean_error_deg);

    let mut reports = Vec::new();
    for &seed in &cfg.adapt_seeds {
        let acfg = cfg.adapt_config(seed);
        let heldout = heldout_data
            .as_ref()
            .map(|(s, t)| (s as &dyn crate::data::BatchProvider, t as &dyn crate::data::BatchProvider));
        let out = adapt_target(&mut source, &src_train, &tgt_train, heldout, &acfg)?;
        let hash = config_hash(&acfg);

        let prefix = format!("seed{seed}");
        run.write_text(
            &format!("{prefix}/adapt_trace.csv"),
            &adapt_trace_csv(&acfg.selection, &out.trace),
        )?;
        run.write_csv(&format!("{prefix}/disc_accuracy.csv"), &out.accuracy)?;
        save_params(
            &run.path(&format!("{prefix}/target.ckpt")),
            "adapt-target",
            &hash,
            &out.target,
        )?;
        let composed = compose_inference(&out.target, &source)?;
        save_params(
            &run.path(&format!("{prefix}/composed.ckpt")),
            "adapt-composed",
            &hash,
            &composed,
        )?;
        let post = evaluate_provider(&composed, &tgt_test, cfg.eval_batch)?;
        let improvement = relative_improvement(pre.mean_error_deg, post.mean_error_deg)?;
        println!(
            "seed {seed}: post={:.3} deg improvement={:.3}{}",
            post.mean_error_deg,
            improvement,
            if out.diverged { " (diverged)" } else { "" }
        );
        reports.push(AdaptSeedReport {
            seed,
            pre_deg: pre.mean_error_deg,
            post_deg: post.mean_error_deg,
            relative_improvement: improvement,
            diverged: out.diverged,
            importance: out.importance.values.iter().map(|&v| v as f64).collect(),
        });
    }
    run.write_json("adapt_report.json", &reports)?;
    Ok(())
}

fn cmd_grl(config: &ConfigArgs, data: &Path) -> Result<()> {
    let cfg = config.load()?;
    let run = RunDir::create(&cfg.run_dir)?;
    write_provenance(&run, &cfg)?;
    let src_train = load_split(data, Domain::Source, Split::Train)?;
    let tgt_train = load_split(data, Domain::Target, Split::Train)?;
    let val = load_split(data, Domain::Source, Split::Val)?;
    let params = ParamStore::<Elem>::init(&Arch::standard(), cfg.grl.seed)?;
    let out = run_grl_baseline(params, &src_train, &tgt_train, &val, &cfg.grl)?;
    let hash = config_hash(&cfg.grl);
    save_params(&run.path("grl.ckpt"), "grl", &hash, &out.params)?;
    run.write_csv("grl_curve.csv", &out.curve)?;
    run.write_csv("grl_domain.csv", &out.domain_trace)?;

    let mut report = serde_json::json!({
        "final_val_deg": out.final_val_deg,
        "iters_run": out.iters_run,
    });
    let tgt_test_path = data.join(format!("{}_{}.csv", Domain::Target, Split::Test));
    if tgt_test_path.exists() {
        let tgt_test = load_split(data, Domain::Target, Split::Test)?;
        let test = evaluate_provider(&out.params, &tgt_test, cfg.eval_batch)?;
        report["target_test_deg"] = serde_json::json!(test.mean_error_deg);
        println!(
            "grl: final_val_deg={:.3} target_test_deg={:.3}",
            out.final_val_deg, test.mean_error_deg
        );
    } else {
        println!("grl: final_val_deg={:.3}", out.final_val_deg);
    }
    run.write_json("grl_report.json", &report)?;
    Ok(())
}

fn cmd_eval(ckpt: &Path, manifest: &Path, batch: usize, arch: Arch) -> Result<()> {
    let params = load_params(ckpt, &arch)?;
    let manifest = DatasetManifest::load_csv(manifest)?;
    let data = LoadedDataset::from_manifest(&manifest)?;
    let report = evaluate_provider(&params, &data, batch)?;
    println!("{}", format_eval_line(&report));
    Ok(())
}

fn cmd_ablate(config: &ConfigArgs, data: &Path, source_ckpt: Option<&Path>) -> Result<()> {
    let cfg = config.load()?;
    let run = RunDir::create(&cfg.run_dir)?;
    write_provenance(&run, &cfg)?;
    let arch = Arch::standard();
    let default_ckpt = run.path("stage1.ckpt");
    let mut source = load_params(source_ckpt.unwrap_or(&default_ckpt), &arch)?;
    let src_train = load_split(data, Domain::Source, Split::Train)?;
    let tgt_train = load_split(data, Domain::Target, Split::Train)?;
    let tgt_test = load_split(data, Domain::Target, Split::Test)?;

    let grid = ExperimentGrid::new(cfg.adapt.clone(), cfg.adapt_seeds.clone())?;
    let rows = grid.run(&mut source, &src_train, &tgt_train, &tgt_test, cfg.eval_batch)?;
    run.write_csv("ablation_rows.csv", &rows)?;
    let table = AblationTable::from_rows(&grid, &rows);
    run.write_text("ablation_table.csv", &table.to_csv()?)?;
    run.write_text("ablation_table.txt", &table.to_text())?;
    print!("{}", table.to_text());
    Ok(())
}

fn cmd_report(rows_path: &Path, out: Option<&Path>) -> Result<()> {
    let mut reader = csv::Reader::from_path(rows_path).map_err(|e| Error::Csv {
        path: rows_path.to_path_buf(),
        source: e,
    })?;
    let mut rows: Vec<AblationRow> = Vec::new();
    for row in reader.deserialize() {
        rows.push(row.map_err(|e| Error::Csv {
            path: rows_path.to_path_buf(),
            source: e,
        })?);
    }
    // The grid only provides cell order here; its budget fields are unused.
    let grid = ExperimentGrid::new(ExperimentConfig::default().adapt, vec![0])?;
    let table = AblationTable::from_rows(&grid, &rows);
    print!("{}", table.to_text());
    if let Some(dir) = out {
        let run = RunDir::create(dir)?;
        run.write_text("ablation_table.csv", &table.to_csv()?)?;
        run.write_text("ablation_table.txt", &table.to_text())?;
    }
    Ok(())
}

fn cmd_plot_curves(traces: &[String], x: &str, y: &str, out: &Path) -> Result<()> {
    let mut inputs = Vec::with_capacity(traces.len());
    for spec in traces {
        let (name, path) = spec.split_once('=').ok_or_else(|| {
            Error::Config(format!("trace '{spec}' is not of the form NAME=PATH"))
        })?;
        inputs.push((name.to_string(), PathBuf::from(path)));
    }
    let emit = emit_training_curves(&inputs, x, y, out)?;
    if emit.skipped_rows > 0 {
        eprintln!("warning: skipped {} malformed trace row(s)", emit.skipped_rows);
    }
    if emit.empty_series > 0 {
        eprintln!("warning: {} trace(s) had no plottable points", emit.empty_series);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_plot_overlay(
    pre: &Path,
    post: &Path,
    manifest: &Path,
    count: usize,
    out: &Path,
    arch: Arch,
) -> Result<()> {
    let pre = load_params(pre, &arch)?;
    let post = load_params(post, &arch)?;
    let manifest = DatasetManifest::load_csv(manifest)?;
    let data = LoadedDataset::from_manifest(&manifest)?;
    let files = emit_overlay_figure(&pre, &post, &data, count, out)?;
    println!("wrote {} overlay(s) to {}", files.len(), out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::error::ErrorKind;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(args)
    }

    fn parse_err(args: &[&str]) -> clap::Error {
        match parse(args) {
            Err(e) => e,
            Ok(_) => panic!("expected a usage error for {args:?}"),
        }
    }

    #[test]
    fn usage_errors_are_exit_code_two() {
        let err = parse_err(&["gazeadapt", "frobnicate"]);
        assert_eq!(err.kind(), ErrorKind::InvalidSubcommand);
        assert_eq!(err.exit_code(), 2);

        let err = parse_err(&["gazeadapt", "eval", "--ckpt", "a.ckpt"]);
        assert_eq!(err.kind(), ErrorKind::MissingRequiredArgument);
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("--manifest"), "{err}");

        let err = parse_err(&["gazeadapt", "eval", "--ckpt", "a", "--manifest", "b", "--bogus"]);
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn all_nine_subcommands_parse() {
        for args in [
            vec!["gazeadapt", "gen-data", "--out", "d"],
            vec![
                "gazeadapt", "convert", "--metadata", "m.jsonl", "--images", "imgs",
                "--domain", "source", "--split", "train", "--out", "o.csv",
            ],
            vec!["gazeadapt", "train-source", "--data", "d"],
            vec!["gazeadapt", "adapt", "--data", "d", "--source-ckpt", "s.ckpt"],
            vec!["gazeadapt", "grl-baseline", "--data", "d"],
            vec!["gazeadapt", "eval", "--ckpt", "c", "--manifest", "m"],
            vec!["gazeadapt", "ablate", "--data", "d"],
            vec!["gazeadapt", "report", "--rows", "r.csv"],
            vec![
                "gazeadapt", "plot", "curves", "--trace", "a=t.csv", "--y", "loss",
                "--out", "p.png",
            ],
            vec![
                "gazeadapt", "plot", "overlay", "--pre", "a", "--post", "b",
                "--manifest", "m", "--out", "d",
            ],
        ] {
            parse(&args).unwrap_or_else(|e| panic!("{args:?}: {e}"));
        }
    }

    #[test]
    fn eval_line_formats_three_decimals() {
        let line = format_eval_line(&EvalReport {
            mean_error_deg: 0.0,
            samples: 4,
            batches: 1,
        });
        assert_eq!(line, "mean_error_deg=0.000");
        let line = format_eval_line(&EvalReport {
            mean_error_deg: 12.3456,
            samples: 4,
            batches: 1,
        });
        assert_eq!(line, "mean_error_deg=12.346");
    }

    /// End-to-end on a micro dataset: generate, train at zero iterations
    /// (checkpointing the init), and evaluate the checkpoint.
    #[test]
    fn gen_train_eval_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let runs = dir.path().join("run");
        let set = |k: &str, v: &str| format!("{k}={v}");

        let gen = Command::GenData {
            config: ConfigArgs {
                config: None,
                set: vec![
                    set("data.source_train", "6"),
                    set("data.source_val", "4"),
                    set("data.source_test", "0"),
                    set("data.target_train", "0"),
                    set("data.target_val", "0"),
                    set("data.target_test", "0"),
                ],
            },
            out: data.clone(),
        };
        run_command(gen).unwrap();
        assert!(data.join("source_train.csv").exists());
        assert!(data.join("source_val.csv").exists());
        assert!(data.join("config.cfg").exists());
        assert!(data.join("command.txt").exists());

        let train = Command::TrainSource {
            config: ConfigArgs {
                config: None,
                set: vec![
                    set("run.dir", runs.to_str().unwrap()),
                    set("source.max_iters", "0"),
                    set("source.batch_size", "4"),
                    set("source.eval_batch", "4"),
                ],
            },
            data: data.clone(),
        };
        run_command(train).unwrap();
        let ckpt = runs.join("stage1.ckpt");
        assert!(ckpt.exists());
        assert!(runs.join("config.cfg").exists());

        let eval = Command::Eval {
            ckpt,
            manifest: data.join("source_val.csv"),
            batch: 4,
            arch: ArchArg::Standard,
        };
        run_command(eval).unwrap();
    }
}
