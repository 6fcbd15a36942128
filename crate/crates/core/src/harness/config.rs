//! Experiment configuration files.
//!
//! The on-disk format is flat `key = value` text: one assignment per line,
//! `#` starts a comment line, blank lines are ignored, and a line of the
//! form `include other.cfg` splices in another file (resolved relative to
//! the including file). Later assignments override earlier ones, and
//! command-line `--set key=value` overrides are applied after the file, so
//! precedence is: defaults < file (in order) < CLI.
//!
//! Unknown keys are rejected rather than ignored; a typo in an experiment
//! config should fail loudly, not silently fall back to a default.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::GeneratorConfig;
use crate::error::{Error, Result};
use crate::nets::{DiscMode, FeatureSelection, Tap};
use crate::pipeline::{AdaptConfig, GrlConfig, SourceTrainConfig};

/// Maximum nesting depth for `include` directives; a cycle between two
/// files would otherwise recurse forever.
const MAX_INCLUDE_DEPTH: usize = 8;

/// Everything a full experiment run needs: dataset synthesis, stage-1
/// supervised training, stage-2 adversarial adaptation (one run per seed in
/// [`ExperimentConfig::adapt_seeds`]), the gradient-reversal baseline, and
/// evaluation.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Directory where run artifacts (traces, reports, figures) land.
    pub run_dir: PathBuf,
    pub generator: GeneratorConfig,
    pub source: SourceTrainConfig,
    /// Template for adaptation runs; `seed` is replaced per entry of
    /// `adapt_seeds` by [`ExperimentConfig::adapt_config`].
    pub adapt: AdaptConfig,
    pub adapt_seeds: Vec<u64>,
    pub grl: GrlConfig,
    /// Batch size for standalone evaluation passes.
    pub eval_batch: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let selection =
            FeatureSelection::single(Tap::C5).expect("single-tap C5 selection is always valid");
        ExperimentConfig {
            run_dir: PathBuf::from("runs/exp"),
            generator: GeneratorConfig::default(),
            source: SourceTrainConfig::default(),
            adapt: AdaptConfig::for_mode(DiscMode::Gan, selection.clone()),
            adapt_seeds: vec![23],
            grl: GrlConfig::with_selection(selection),
            eval_batch: 256,
        }
    }
}

impl ExperimentConfig {
    /// Loads a config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let mut pairs = Vec::new();
        collect_assignments(path, 0, &mut pairs)?;
        let mut cfg = ExperimentConfig::default();
        for (key, value) in &pairs {
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    /// Applies `key=value` override strings (the CLI's `--set` flag).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                Error::Config(format!("override '{item}' is not of the form key=value"))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// The adaptation config for one seed of the experiment.
    pub fn adapt_config(&self, seed: u64) -> AdaptConfig {
        let mut cfg = self.adapt.clone();
        cfg.seed = seed;
        cfg
    }

    /// Serializes the effective configuration as config-file text. Loading
    /// the snapshot reproduces the run: every key the parser understands is
    /// written out explicitly.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "run.dir = {}", self.run_dir.display());
        let g = &self.generator;
        let _ = writeln!(s, "data.seed = {}", g.seed);
        let _ = writeln!(s, "data.polar_range_deg = {}", g.polar_range_deg);
        let _ = writeln!(s, "data.azimuth_range_deg = {}", g.azimuth_range_deg);
        let _ = writeln!(s, "data.style_jitter = {}", g.style_jitter);
        let _ = writeln!(s, "data.source_train = {}", g.counts.source_train);
        let _ = writeln!(s, "data.source_val = {}", g.counts.source_val);
        let _ = writeln!(s, "data.source_test = {}", g.counts.source_test);
        let _ = writeln!(s, "data.target_train = {}", g.counts.target_train);
        let _ = writeln!(s, "data.target_val = {}", g.counts.target_val);
        let _ = writeln!(s, "data.target_test = {}", g.counts.target_test);
        let sh = &g.shift;
        let _ = writeln!(s, "shift.brightness = {}", sh.brightness_delta);
        let _ = writeln!(s, "shift.contrast = {}", sh.contrast_gain);
        let _ = writeln!(s, "shift.blur_sigma = {}", sh.blur_sigma);
        let _ = writeln!(s, "shift.noise_sigma = {}", sh.noise_sigma);
        let _ = writeln!(s, "shift.gamma = {}", sh.gamma);
        let src = &self.source;
        let _ = writeln!(s, "source.lr = {}", src.lr);
        let _ = writeln!(s, "source.batch_size = {}", src.batch_size);
        let _ = writeln!(s, "source.max_iters = {}", src.max_iters);
        let _ = writeln!(s, "source.val_interval = {}", src.val_interval);
        let _ = writeln!(s, "source.patience = {}", src.patience);
        let stop = match src.stop_below_deg {
            Some(v) => v.to_string(),
            None => "none".to_string(),
        };
        let _ = writeln!(s, "source.stop_below_deg = {stop}");
        let _ = writeln!(s, "source.eval_batch = {}", src.eval_batch);
        let _ = writeln!(s, "source.seed = {}", src.seed);
        let a = &self.adapt;
        let mode = match a.mode {
            DiscMode::Gan => "gan",
            DiscMode::Wgan => "wgan",
        };
        let _ = writeln!(s, "adapt.mode = {mode}");
        let _ = writeln!(s, "adapt.selection = {}", a.selection.label());
        let _ = writeln!(s, "adapt.lr = {}", a.lr);
        let _ = writeln!(s, "adapt.batch_size = {}", a.batch_size);
        let _ = writeln!(s, "adapt.iters = {}", a.iters);
        let _ = writeln!(s, "adapt.critic_steps = {}", a.critic_steps);
        let _ = writeln!(s, "adapt.acc_interval = {}", a.acc_interval);
        let _ = writeln!(s, "adapt.acc_samples = {}", a.acc_samples);
        let _ = writeln!(s, "adapt.source_pool = {}", a.source_pool);
        let _ = writeln!(s, "adapt.divergence_patience = {}", a.divergence_patience);
        let seeds: Vec<String> = self.adapt_seeds.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "adapt.seeds = {}", seeds.join(","));
        let grl = &self.grl;
        let _ = writeln!(s, "grl.lr = {}", grl.lr);
        let _ = writeln!(s, "grl.batch_size = {}", grl.batch_size);
        let _ = writeln!(s, "grl.max_iters = {}", grl.max_iters);
        let _ = writeln!(s, "grl.lambda_max = {}", grl.lambda_max);
        let _ = writeln!(s, "grl.warmup_frac = {}", grl.warmup_frac);
        let _ = writeln!(s, "grl.selection = {}", grl.selection.label());
        let _ = writeln!(s, "grl.seed = {}", grl.seed);
        let _ = writeln!(s, "grl.val_interval = {}", grl.val_interval);
        let _ = writeln!(s, "grl.patience = {}", grl.patience);
        let _ = writeln!(s, "grl.eval_batch = {}", grl.eval_batch);
        let _ = writeln!(s, "eval.batch = {}", self.eval_batch);
        s
    }

    /// Assigns one key. Setting `adapt.mode` resets `adapt.critic_steps` to
    /// that mode's default, so an explicit `adapt.critic_steps` must come
    /// after `adapt.mode` to stick (assignments apply in order).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "run.dir" => self.run_dir = PathBuf::from(value),

            "data.seed" => self.generator.seed = parse(key, value)?,
            "data.polar_range_deg" => self.generator.polar_range_deg = parse(key, value)?,
            "data.azimuth_range_deg" => self.generator.azimuth_range_deg = parse(key, value)?,
            "data.style_jitter" => self.generator.style_jitter = parse(key, value)?,
            "data.source_train" => self.generator.counts.source_train = parse(key, value)?,
            "data.source_val" => self.generator.counts.source_val = parse(key, value)?,
            "data.source_test" => self.generator.counts.source_test = parse(key, value)?,
            "data.target_train" => self.generator.counts.target_train = parse(key, value)?,
            "data.target_val" => self.generator.counts.target_val = parse(key, value)?,
            "data.target_test" => self.generator.counts.target_test = parse(key, value)?,

            "shift.brightness" => self.generator.shift.brightness_delta = parse(key, value)?,
            "shift.contrast" => self.generator.shift.contrast_gain = parse(key, value)?,
            "shift.blur_sigma" => self.generator.shift.blur_sigma = parse(key, value)?,
            "shift.noise_sigma" => self.generator.shift.noise_sigma = parse(key, value)?,
            "shift.gamma" => self.generator.shift.gamma = parse(key, value)?,

            "source.lr" => self.source.lr = parse(key, value)?,
            "source.batch_size" => self.source.batch_size = parse(key, value)?,
            "source.max_iters" => self.source.max_iters = parse(key, value)?,
            "source.val_interval" => self.source.val_interval = parse(key, value)?,
            "source.patience" => self.source.patience = parse(key, value)?,
            "source.stop_below_deg" => {
                self.source.stop_below_deg = if value.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(parse(key, value)?)
                };
            }
            "source.eval_batch" => self.source.eval_batch = parse(key, value)?,
            "source.seed" => self.source.seed = parse(key, value)?,

            "adapt.mode" => {
                let mode = match value.to_ascii_lowercase().as_str() {
                    "gan" => DiscMode::Gan,
                    "wgan" => DiscMode::Wgan,
                    other => {
                        return Err(Error::Config(format!(
                            "adapt.mode must be 'gan' or 'wgan', got '{other}'"
                        )))
                    }
                };
                let fresh = AdaptConfig::for_mode(mode, self.adapt.selection.clone());
                self.adapt.mode = mode;
                self.adapt.critic_steps = fresh.critic_steps;
            }
            "adapt.selection" => self.adapt.selection = FeatureSelection::parse(value)?,
            "adapt.lr" => self.adapt.lr = parse(key, value)?,
            "adapt.batch_size" => self.adapt.batch_size = parse(key, value)?,
            "adapt.iters" => self.adapt.iters = parse(key, value)?,
            "adapt.critic_steps" => self.adapt.critic_steps = parse(key, value)?,
            "adapt.acc_interval" => self.adapt.acc_interval = parse(key, value)?,
            "adapt.acc_samples" => self.adapt.acc_samples = parse(key, value)?,
            "adapt.source_pool" => self.adapt.source_pool = parse(key, value)?,
            "adapt.divergence_patience" => self.adapt.divergence_patience = parse(key, value)?,
            "adapt.seeds" => {
                let seeds: Result<Vec<u64>> = value
                    .split(',')
                    .map(|part| parse("adapt.seeds", part.trim()))
                    .collect();
                let seeds = seeds?;
                if seeds.is_empty() {
                    return Err(Error::Config("adapt.seeds must list at least one seed".into()));
                }
                self.adapt_seeds = seeds;
            }

            "grl.lr" => self.grl.lr = parse(key, value)?,
            "grl.batch_size" => self.grl.batch_size = parse(key, value)?,
            "grl.max_iters" => self.grl.max_iters = parse(key, value)?,
            "grl.lambda_max" => self.grl.lambda_max = parse(key, value)?,
            "grl.warmup_frac" => self.grl.warmup_frac = parse(key, value)?,
            "grl.selection" => self.grl.selection = FeatureSelection::parse(value)?,
            "grl.seed" => self.grl.seed = parse(key, value)?,
            "grl.val_interval" => self.grl.val_interval = parse(key, value)?,
            "grl.patience" => self.grl.patience = parse(key, value)?,
            "grl.eval_batch" => self.grl.eval_batch = parse(key, value)?,

            "eval.batch" => self.eval_batch = parse(key, value)?,

            other => {
                return Err(Error::Config(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::Config(format!(
            "invalid value '{value}' for key '{key}' (expected {})",
            std::any::type_name::<T>()
        ))
    })
}

/// Reads `path` and appends its assignments to `out` in file order,
/// expanding `include` directives depth-first.
fn collect_assignments(
    path: &Path,
    depth: usize,
    out: &mut Vec<(String, String)>,
) -> Result<()> {
    if depth > MAX_INCLUDE_DEPTH {
        return Err(Error::Config(format!(
            "include depth exceeds {MAX_INCLUDE_DEPTH} at {} (include cycle?)",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("include ") {
            let rel = rest.trim();
            if rel.is_empty() {
                return Err(Error::Config(format!(
                    "{}:{}: include directive without a path",
                    path.display(),
                    lineno + 1
                )));
            }
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            collect_assignments(&base.join(rel), depth + 1, out)?;
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "{}:{}: expected 'key = value', got '{line}'",
                path.display(),
                lineno + 1
            ))
        })?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(())
}
