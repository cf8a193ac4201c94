//! Command-line flags. Every flag is optional here so that a `--config` file can supply it;
//! defaults are applied when settings are resolved.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::commands;
use crate::settings::{resolve, CorpusSettings, RunConfig, TrainSettings};
use crate::Failure;

#[derive(Debug, Parser)]
#[command(name = "fluxspace", version, about = "Train a toy flow transformer on colored shapes and edit its samples")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a captioned training corpus into a directory.
    Corpus(CorpusArgs),
    /// Train a model on a corpus directory.
    Train(TrainArgs),
    /// Sample an image from a prompt.
    Generate(GenerateArgs),
    /// Sample an image from a prompt with an edit applied.
    Edit(EditArgs),
    /// Run one edit hyperparameter over a grid and score each panel.
    Sweep(SweepArgs),
    /// Recover the starting noise of an image.
    Invert(InvertArgs),
    /// Write the binary edit mask of every edited step and block.
    InspectMask(InspectArgs),
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct CorpusArgs {
    /// JSON file with any of these settings; flags override it.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Number of samples [default: 512].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    /// Seed of the per-sample seed stream [default: 0].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Image side in pixels [default: 16].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_size: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainArgs {
    /// JSON file with any of these settings; flags override it.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Corpus directory written by `corpus` (required).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Checkpoint path [default: model.fxsp].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Loss log path [default: checkpoint path with .log].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log: Option<PathBuf>,
    /// Adam learning rate [default: 0.002].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    /// Images per step [default: 16].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Optimizer steps [default: 2000].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Seed for weights, batches and noise [default: 0].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Steps between checkpoint saves, 0 for none [default: 500].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_interval: Option<usize>,
    /// Steps between loss log lines [default: 10].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_interval: Option<usize>,
    /// Global gradient norm bound [default: 1.0].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SampleArgs {
    /// JSON file with any of these settings (a sidecar works); flags override it.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Trained checkpoint (required).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Base prompt, e.g. "blue circle" (required).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    /// Euler steps [default: 30].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Noise seed [default: 0].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Start from this noise file instead of the seed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<PathBuf>,
    /// Output path (required).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EditFlags {
    /// Edit prompt, e.g. "red".
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edit_prompt: Option<String>,
    /// Preset: eyeglasses (coarse 0.8, fine 5, tau 0.5, start 3) or smile (coarse 0.5,
    /// fine 8, tau 0.5, start 5). Explicit flags win.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Fine edit scale on attention outputs [default: 5].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_fine: Option<f64>,
    /// Coarse edit blend of the pooled text embedding, in [0, 1] [default: 0.5].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_coarse: Option<f64>,
    /// Mask threshold, in [0, 1] [default: 0.5].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_m: Option<f64>,
    /// Sharpness of the soft mask sigmoid [default: 10].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<f64>,
    /// First edited sampler step, 0-based [default: 1].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_step: Option<usize>,
    /// Apply the fine edit to every image token instead of the masked ones.
    #[arg(long)]
    #[serde(skip)]
    pub no_mask: bool,
    /// Comma-separated block indices to edit [default: all].
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub sample: SampleArgs,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[command(flatten)]
    pub sample: SampleArgs,
    #[command(flatten)]
    pub edit: EditFlags,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub sample: SampleArgs,
    #[command(flatten)]
    pub edit: EditFlags,
    /// One axis as name=v1,v2,... with name lambda-fine, lambda-coarse, tau-m or start-step.
    #[arg(long)]
    pub grid: Vec<String>,
    /// Metrics table [default: output path with .txt].
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Channel scored inside the object: red, green or blue [default: color in the edit prompt,
    /// else red].
    #[arg(long)]
    pub metric_channel: Option<String>,
    /// Distance from the background gray that counts as object [default: 0.2].
    #[arg(long)]
    pub object_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[command(flatten)]
    pub sample: SampleArgs,
    /// Image to invert (PPM).
    #[arg(long)]
    pub image: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub sample: SampleArgs,
    #[command(flatten)]
    pub edit: EditFlags,
}

fn to_map<S: Serialize>(s: &S) -> Map<String, Value> {
    match serde_json::to_value(s).expect("flags serialize") {
        Value::Object(m) => m,
        _ => unreachable!("flags are structs"),
    }
}

fn run_flags(sample: &SampleArgs, edit: Option<&EditFlags>) -> Map<String, Value> {
    let mut m = to_map(sample);
    if let Some(e) = edit {
        m.extend(to_map(e));
        if e.no_mask {
            m.insert("masking".into(), Value::Bool(false));
        }
    }
    m
}

fn run_config(sample: &SampleArgs, edit: Option<&EditFlags>, extra: Map<String, Value>) -> Result<RunConfig, Failure> {
    let mut flags = run_flags(sample, edit);
    flags.extend(extra);
    RunConfig::resolve(sample.config.as_deref(), flags)
}

/// Resolves settings and runs the command; prints a short summary on success.
pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Corpus(a) => {
            let s: CorpusSettings = resolve(a.config.as_deref(), to_map(&a))?;
            let dir = commands::run_corpus(&s)?;
            println!("wrote {} samples to {}", s.count, dir.display());
        }
        Command::Train(a) => {
            let s: TrainSettings = resolve(a.config.as_deref(), to_map(&a))?;
            let out = commands::run_train(&s)?;
            let last = out.report.losses.last().copied().unwrap_or(f64::NAN);
            println!("wrote {} (final loss {last}) and {}", out.checkpoint.display(), out.log.display());
        }
        Command::Generate(a) => {
            let p = commands::run_generate(&run_config(&a.sample, None, Map::new())?)?;
            println!("wrote {}", p.display());
        }
        Command::Edit(a) => {
            let p = commands::run_edit(&run_config(&a.sample, Some(&a.edit), Map::new())?)?;
            println!("wrote {}", p.display());
        }
        Command::Sweep(a) => {
            let mut extra = Map::new();
            if !a.grid.is_empty() {
                extra.insert("grid".into(), Value::from(a.grid.clone()));
            }
            if let Some(t) = &a.table {
                extra.insert("table".into(), Value::from(t.display().to_string()));
            }
            if let Some(c) = &a.metric_channel {
                extra.insert("metric-channel".into(), Value::from(c.clone()));
            }
            if let Some(t) = a.object_threshold {
                extra.insert("object-threshold".into(), Value::from(t));
            }
            let s = run_config(&a.sample, Some(&a.edit), extra)?;
            let result = commands::run_sweep(&s)?;
            print!("{}", commands::sweep_table(&result.rows));
        }
        Command::Invert(a) => {
            let mut extra = Map::new();
            if let Some(i) = &a.image {
                extra.insert("image".into(), Value::from(i.display().to_string()));
            }
            let p = commands::run_invert(&run_config(&a.sample, None, extra)?)?;
            println!("wrote {}", p.display());
        }
        Command::InspectMask(a) => {
            let files = commands::run_inspect_mask(&run_config(&a.sample, Some(&a.edit), Map::new())?)?;
            println!("wrote {} mask files", files.len());
        }
    }
    Ok(())
}
