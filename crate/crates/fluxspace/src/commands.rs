//! One function per subcommand, shared by the binary and the tests.

use std::fs;
use std::path::{Path, PathBuf};

use fluxspace_core::editor::{edited_generate_from, BlockRecord, EditConfig};
use fluxspace_core::flow::{generate_from, initial_noise, invert, Conditioned};
use fluxspace_core::mmdit::Model;
use fluxspace_core::synth::{self, Color};
use fluxspace_core::trainer::{self, loss_log, TrainObserver, TrainReport};
use fluxspace_core::Tensor;

use crate::settings::{required, sidecar_path, write_sidecar, CorpusSettings, RunConfig, TrainSettings};
use crate::{checkpoint, corpus, noise, ppm, Failure};

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn create_parent(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| io_err(dir, e)),
        _ => Ok(()),
    }
}

pub fn run_corpus(s: &CorpusSettings) -> Result<PathBuf, Failure> {
    let out = required(&s.out, "out")?;
    let cfg = s.corpus_config();
    if cfg.size == 0 || s.image_size == 0 {
        return Err(Failure::Usage("count and image-size must be positive".into()));
    }
    corpus::write_corpus(out, &cfg, s.image_size)?;
    Ok(out.clone())
}

/// Result of a training command.
#[derive(Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

struct SaveCheckpoints<'a> {
    path: &'a Path,
}

impl TrainObserver<f32> for SaveCheckpoints<'_> {
    fn on_checkpoint(&mut self, _step: usize, model: &Model<f32>) -> fluxspace_core::Result<()> {
        // Interval saves are best effort; the final save reports errors.
        let _ = checkpoint::save(self.path, model);
        Ok(())
    }
}

/// Trains from a corpus directory. On divergence the last good weights are saved and the
/// error is numeric.
pub fn run_train(s: &TrainSettings) -> Result<TrainOutcome, Failure> {
    let dir = required(&s.corpus, "corpus")?;
    if !dir.is_dir() {
        return Err(Failure::Usage(format!("corpus directory {} does not exist", dir.display())));
    }
    let desc_path = dir.join(corpus::DESCRIPTION);
    let desc: corpus::Description = serde_json::from_str(&fs::read_to_string(&desc_path).map_err(|e| io_err(&desc_path, e))?)
        .map_err(|e| io_err(&desc_path, e))?;
    let items = corpus::read_corpus(dir)?;
    let config = s.train_config(desc.corpus);
    config.validate()?;
    let mut model = trainer::init_model::<f32>(s.model_config(desc.image_size), s.seed)?;

    create_parent(&s.out)?;
    let log = s.log_path();
    let mut losses = Vec::new();
    struct Both<'a> {
        save: SaveCheckpoints<'a>,
        losses: &'a mut Vec<f64>,
    }
    impl TrainObserver<f32> for Both<'_> {
        fn on_step(&mut self, _: usize, loss: f64) {
            self.losses.push(loss);
        }
        fn on_checkpoint(&mut self, step: usize, model: &Model<f32>) -> fluxspace_core::Result<()> {
            self.save.on_checkpoint(step, model)
        }
    }
    let result = trainer::train(&mut model, &items, &config, &mut Both { save: SaveCheckpoints { path: &s.out }, losses: &mut losses });
    if let Err(e) = &result {
        if !matches!(e, fluxspace_core::Error::NonFinite { .. }) {
            return Err(e.clone().into());
        }
    }
    fs::write(&log, loss_log(&losses, s.log_interval)).map_err(|e| io_err(&log, e))?;
    checkpoint::save(&s.out, &model)?;
    write_sidecar(&sidecar_path(&s.out), s)?;
    let report = result?;
    Ok(TrainOutcome { report, checkpoint: s.out.clone(), log })
}

pub fn load_model(s: &RunConfig) -> Result<Model<f32>, Failure> {
    let path = required(&s.checkpoint, "checkpoint")?;
    if !path.is_file() {
        return Err(Failure::Usage(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(checkpoint::load(path)?)
}

pub fn starting_noise(model: &Model<f32>, s: &RunConfig) -> Result<Tensor<f32>, Failure> {
    match &s.noise {
        Some(p) => {
            let n = noise::load(p)?;
            if n.shape() != model.image_shape() {
                return Err(Failure::Usage(format!(
                    "noise shape {:?} does not match the model image shape {:?}",
                    n.shape(),
                    model.image_shape()
                )));
            }
            Ok(n)
        }
        None => Ok(initial_noise(model, s.seed)),
    }
}

fn finite(image: Tensor<f32>) -> Result<Tensor<f32>, Failure> {
    if image.is_finite() {
        Ok(image)
    } else {
        Err(Failure::Numeric("sampling produced non-finite values".into()))
    }
}

/// Unedited sample in pixel space, unquantized.
pub fn generate_pixels(model: &Model<f32>, s: &RunConfig) -> Result<Tensor<f32>, Failure> {
    let noise = starting_noise(model, s)?;
    let x = generate_from(model, s.prompt()?, &s.schedule()?, &noise)?;
    finite(synth::to_pixels(&x))
}

/// Edited sample in pixel space with its per-block records.
pub fn edit_pixels(model: &Model<f32>, s: &RunConfig, config: EditConfig) -> Result<(Tensor<f32>, Vec<BlockRecord>), Failure> {
    let noise = starting_noise(model, s)?;
    let out = edited_generate_from(model, s.prompt()?, config, &s.schedule()?, &noise, false)?;
    Ok((finite(synth::to_pixels(&out.image))?, out.records))
}

/// The image as stored in an 8-bit file.
pub fn as_stored(image: &Tensor<f32>) -> Tensor<f32> {
    synth::dequantize(&synth::quantize(image), image.shape()).expect("same shape")
}

fn write_output(image: &Tensor<f32>, out: &Path, s: &RunConfig) -> Result<(), Failure> {
    create_parent(out)?;
    ppm::write_image(out, image)?;
    write_sidecar(&sidecar_path(out), s)
}

pub fn run_generate(s: &RunConfig) -> Result<PathBuf, Failure> {
    let out = required(&s.out, "out")?;
    let model = load_model(s)?;
    write_output(&generate_pixels(&model, s)?, out, s)?;
    Ok(out.clone())
}

pub fn run_edit(s: &RunConfig) -> Result<PathBuf, Failure> {
    let out = required(&s.out, "out")?;
    let config = s.edit_config()?;
    let model = load_model(s)?;
    let (image, _) = edit_pixels(&model, s, config)?;
    write_output(&image, out, s)?;
    Ok(out.clone())
}

/// The swept hyperparameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    LambdaFine,
    LambdaCoarse,
    TauM,
    StartStep,
}

impl SweepAxis {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "lambda-fine" => Self::LambdaFine,
            "lambda-coarse" => Self::LambdaCoarse,
            "tau-m" => Self::TauM,
            "start-step" => Self::StartStep,
            _ => return None,
        })
    }

    fn apply(self, config: &mut EditConfig, value: f64) {
        match self {
            Self::LambdaFine => config.lambda_fine = value,
            Self::LambdaCoarse => config.lambda_coarse = value,
            Self::TauM => config.tau_m = value,
            Self::StartStep => config.start_step = value as usize,
        }
    }
}

/// Parses `--grid` entries; exactly one axis with at least one value is accepted.
pub fn parse_grid(grid: &[String]) -> Result<(SweepAxis, Vec<f64>), Failure> {
    let usage = |m: String| Err(Failure::Usage(m));
    let [entry] = grid else {
        return usage(format!("sweep needs exactly one grid axis, got {}", grid.len()));
    };
    let Some((name, values)) = entry.split_once('=') else {
        return usage(format!("grid {entry:?} must look like name=v1,v2,..."));
    };
    let Some(axis) = SweepAxis::parse(name.trim()) else {
        return usage(format!("unknown grid axis {name:?} (expected lambda-fine, lambda-coarse, tau-m or start-step)"));
    };
    let Ok(values) = values.split(',').map(|v| v.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>() else {
        return usage(format!("grid values {values:?} must be numbers"));
    };
    if values.is_empty() {
        return usage("grid has no values".into());
    }
    if axis == SweepAxis::StartStep && values.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
        return usage("start-step values must be non-negative integers".into());
    }
    Ok((axis, values))
}

/// One sweep panel's scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    /// Mean of the scored channel over the unedited sample's object pixels, NaN if there are none.
    pub metric: f64,
    /// Mean squared change of the unedited sample's background pixels, NaN if there are none.
    pub background_mse: f64,
}

#[derive(Clone, Debug)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    /// Stored (8-bit) panels in grid order.
    pub panels: Vec<Tensor<f32>>,
    /// Stored unedited sample.
    pub reference: Tensor<f32>,
    pub object_mask: Vec<u8>,
    pub channel: usize,
}

fn metric_channel(s: &RunConfig, edit_prompt: &str) -> Result<usize, Failure> {
    if let Some(name) = &s.metric_channel {
        return Color::parse(name)
            .map(Color::channel)
            .ok_or_else(|| Failure::Usage(format!("metric-channel must be red, green or blue, got {name:?}")));
    }
    let from_prompt = edit_prompt.split_whitespace().find_map(|w| Color::parse(&w.to_lowercase()));
    Ok(from_prompt.unwrap_or(Color::Red).channel())
}

/// Runs every grid value and scores it against the unedited sample. Scores use the stored
/// 8-bit images.
pub fn sweep(model: &Model<f32>, s: &RunConfig) -> Result<Sweep, Failure> {
    let (axis, values) = parse_grid(&s.grid)?;
    let base_config = s.edit_config()?;
    let channel = metric_channel(s, &base_config.edit_prompt)?;
    let reference = as_stored(&generate_pixels(model, s)?);
    let object_mask = synth::segment_object(&reference, s.object_threshold as f32);
    let mut rows = Vec::with_capacity(values.len());
    let mut panels = Vec::with_capacity(values.len());
    for &value in &values {
        let mut config = base_config.clone();
        axis.apply(&mut config, value);
        let (image, _) = edit_pixels(model, s, config)?;
        let image = as_stored(&image);
        // An empty object or background region scores NaN.
        let metric = synth::attribute_metric(&image, &object_mask, channel).map_or(f64::NAN, f64::from);
        let background_mse = synth::background_mse(&image, &reference, &object_mask).map_or(f64::NAN, f64::from);
        rows.push(SweepRow { value, metric, background_mse });
        panels.push(image);
    }
    Ok(Sweep { rows, panels, reference, object_mask, channel })
}

/// Panels side by side.
pub fn strip(panels: &[Tensor<f32>]) -> Tensor<f32> {
    let [h, w, c] = [panels[0].shape()[0], panels[0].shape()[1], panels[0].shape()[2]];
    let n = panels.len();
    Tensor::from_fn(&[h, w * n, c], |i| {
        let (y, rest) = (i / (w * n * c), i % (w * n * c));
        let (x, k) = (rest / c, rest % c);
        panels[x / w].data()[(y * w + x % w) * c + k]
    })
}

/// `<value> <metric> <background MSE>` per row.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    rows.iter().map(|r| format!("{} {} {}\n", r.value, r.metric, r.background_mse)).collect()
}

pub fn run_sweep(s: &RunConfig) -> Result<Sweep, Failure> {
    let out = required(&s.out, "out")?;
    parse_grid(&s.grid)?;
    let model = load_model(s)?;
    let result = sweep(&model, s)?;
    write_output(&strip(&result.panels), out, s)?;
    let table = s.table.clone().unwrap_or_else(|| out.with_extension("txt"));
    fs::write(&table, sweep_table(&result.rows)).map_err(|e| io_err(&table, e))?;
    Ok(result)
}

/// Runs the sampler backwards from an image to its noise and saves the noise.
pub fn run_invert(s: &RunConfig) -> Result<PathBuf, Failure> {
    let out = required(&s.out, "out")?;
    let input = required(&s.image, "image")?;
    let model = load_model(s)?;
    let image = ppm::read_image(input)?;
    if image.shape() != model.image_shape() {
        return Err(Failure::Usage(format!(
            "image shape {:?} does not match the model image shape {:?}",
            image.shape(),
            model.image_shape()
        )));
    }
    let emb = model.encode(s.prompt()?);
    let mut field = Conditioned { model: &model, prompt: &emb, guidance: 1.0 };
    let noise = invert(&mut field, &synth::to_model_space(&image), &s.schedule()?)?;
    if !noise.is_finite() {
        return Err(Failure::Numeric("inversion produced non-finite values".into()));
    }
    create_parent(out)?;
    noise::save(out, &noise)?;
    write_sidecar(&sidecar_path(out), s)?;
    Ok(out.clone())
}

pub fn mask_file(step: usize, block: usize) -> String {
    format!("mask_s{step}_b{block}.ppm")
}

/// Writes the binary token mask of every edited (step, block) into the `out` directory.
pub fn run_inspect_mask(s: &RunConfig) -> Result<Vec<PathBuf>, Failure> {
    if !s.masking {
        return Err(Failure::Usage("inspect-mask needs masking enabled".into()));
    }
    let dir = required(&s.out, "out")?;
    let config = s.edit_config()?;
    let model = load_model(s)?;
    let (_, records) = edit_pixels(&model, s, config)?;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let grid = model.config().grid();
    let mut written = Vec::with_capacity(records.len());
    for r in &records {
        let mask = r.mask.as_ref().expect("masking is on");
        let path = dir.join(mask_file(r.step, r.block));
        fs::write(&path, ppm::encode(&ppm::from_mask(mask, grid, grid))).map_err(|e| io_err(&path, e))?;
        written.push(path);
    }
    write_sidecar(&dir.join("inspect-mask.json"), s)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g = |v: &[&str]| parse_grid(&v.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        assert_eq!(g(&["lambda-fine=0,2,4"]).unwrap(), (SweepAxis::LambdaFine, vec![0.0, 2.0, 4.0]));
        assert_eq!(g(&["start-step=3"]).unwrap(), (SweepAxis::StartStep, vec![3.0]));
        assert!(matches!(g(&["lambda-fine=0", "tau-m=0.5"]), Err(Failure::Usage(_))));
        assert!(matches!(g(&[]), Err(Failure::Usage(_))));
        assert!(matches!(g(&["gamma=1"]), Err(Failure::Usage(_))));
        assert!(matches!(g(&["tau-m=a"]), Err(Failure::Usage(_))));
        assert!(matches!(g(&["start-step=1.5"]), Err(Failure::Usage(_))));
    }

    #[test]
    fn strip_places_panels_left_to_right() {
        let a = Tensor::from_fn(&[2, 2, 1], |i| i as f32);
        let b = Tensor::from_fn(&[2, 2, 1], |i| 10.0 + i as f32);
        let s = strip(&[a, b]);
        assert_eq!(s.shape(), &[2, 4, 1]);
        assert_eq!(s.data(), &[0.0, 1.0, 10.0, 11.0, 2.0, 3.0, 12.0, 13.0]);
    }

    #[test]
    fn table_has_one_row_per_value() {
        let rows = [
            SweepRow { value: 0.0, metric: 0.1, background_mse: 0.0 },
            SweepRow { value: 2.0, metric: 0.5, background_mse: 0.01 },
        ];
        assert_eq!(sweep_table(&rows), "0 0.1 0\n2 0.5 0.01\n");
    }

    #[test]
    fn channel_follows_the_edit_prompt() {
        let s = RunConfig::default();
        assert_eq!(metric_channel(&s, "blue").unwrap(), 2);
        assert_eq!(metric_channel(&s, "smiling").unwrap(), 0);
        let s = RunConfig { metric_channel: Some("green".into()), ..RunConfig::default() };
        assert_eq!(metric_channel(&s, "blue").unwrap(), 1);
    }
}
