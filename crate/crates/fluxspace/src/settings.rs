//! Layered settings: built-in defaults, then a JSON config file, then command-line flags.
//!
//! Every settings struct is flat with kebab-case keys that mirror the flag names, so a sidecar
//! written next to an output can be passed back with `--config` to reproduce it.

use std::fs;
use std::path::{Path, PathBuf};

use fluxspace_core::editor::{EditConfig, Preset};
use fluxspace_core::flow::{LossWeighting, Schedule};
use fluxspace_core::mmdit::ModelConfig;
use fluxspace_core::synth::Jitter;
use fluxspace_core::trainer::{CorpusConfig, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::Failure;

/// Merges `file` and `flags` over the defaults of `S`. Flags win over the file.
pub fn resolve<S: Serialize + DeserializeOwned + Default>(
    file: Option<&Path>,
    flags: Map<String, Value>,
) -> Result<S, Failure> {
    let explicit = explicit_keys(file, flags)?;
    finish(explicit)
}

fn explicit_keys(file: Option<&Path>, flags: Map<String, Value>) -> Result<Map<String, Value>, Failure> {
    let mut explicit = match file {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("config file {}: {e}", p.display())))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(Failure::Usage(format!("config file {} must hold a JSON object", p.display()))),
                Err(e) => return Err(Failure::Usage(format!("config file {}: {e}", p.display()))),
            }
        }
        None => Map::new(),
    };
    explicit.extend(flags.into_iter().filter(|(_, v)| !v.is_null()));
    Ok(explicit)
}

fn finish<S: Serialize + DeserializeOwned + Default>(explicit: Map<String, Value>) -> Result<S, Failure> {
    let Value::Object(mut all) = serde_json::to_value(S::default()).expect("defaults serialize") else {
        unreachable!("settings are structs")
    };
    all.extend(explicit);
    serde_json::from_value(Value::Object(all)).map_err(|e| Failure::Usage(format!("invalid settings: {e}")))
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    output.with_extension("json")
}

/// Writes the effective settings as pretty JSON.
pub fn write_sidecar<S: Serialize>(path: &Path, settings: &S) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(settings).expect("settings serialize") + "\n";
    fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

pub(crate) fn required<'a, T>(value: &'a Option<T>, field: &str) -> Result<&'a T, Failure> {
    value.as_ref().ok_or_else(|| Failure::Usage(format!("missing required field `{field}`")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct CorpusSettings {
    pub out: Option<PathBuf>,
    pub count: usize,
    pub seed: u64,
    pub image_size: usize,
    pub center_min: f64,
    pub center_max: f64,
    pub size_min: f64,
    pub size_max: f64,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        let c = CorpusConfig::default();
        Self {
            out: None,
            count: c.size,
            seed: c.seed,
            image_size: ModelConfig::default().image_size,
            center_min: c.jitter.center_min,
            center_max: c.jitter.center_max,
            size_min: c.jitter.size_min,
            size_max: c.jitter.size_max,
        }
    }
}

impl CorpusSettings {
    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            size: self.count,
            seed: self.seed,
            jitter: Jitter {
                center_min: self.center_min,
                center_max: self.center_max,
                size_min: self.size_min,
                size_max: self.size_max,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct TrainSettings {
    pub corpus: Option<PathBuf>,
    pub out: PathBuf,
    /// Defaults to the checkpoint path with a `.log` extension.
    pub log: Option<PathBuf>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub weighting: LossWeighting,
    pub checkpoint_interval: usize,
    pub log_interval: usize,
    pub grad_clip: f64,
    pub null_caption_prob: f64,
    pub keyword_caption_prob: f64,
    pub hidden: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_ratio: usize,
    pub patch_size: usize,
    pub d_pool: usize,
    pub d_ctxt: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = ModelConfig::default();
        Self {
            corpus: None,
            out: PathBuf::from("model.fxsp"),
            log: None,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            batch_size: t.batch_size,
            steps: t.steps,
            seed: t.seed,
            weighting: t.weighting,
            checkpoint_interval: t.checkpoint_interval,
            log_interval: t.log_interval,
            grad_clip: t.grad_clip,
            null_caption_prob: t.null_caption_prob,
            keyword_caption_prob: t.keyword_caption_prob,
            hidden: m.hidden,
            heads: m.heads,
            blocks: m.blocks,
            mlp_ratio: m.mlp_ratio,
            patch_size: m.patch_size,
            d_pool: m.d_pool,
            d_ctxt: m.d_ctxt,
        }
    }
}

impl TrainSettings {
    pub fn train_config(&self, corpus: CorpusConfig) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            batch_size: self.batch_size,
            steps: self.steps,
            seed: self.seed,
            weighting: self.weighting,
            corpus,
            checkpoint_interval: self.checkpoint_interval,
            log_interval: self.log_interval,
            grad_clip: self.grad_clip,
            null_caption_prob: self.null_caption_prob,
            keyword_caption_prob: self.keyword_caption_prob,
        }
    }

    pub fn model_config(&self, image_size: usize) -> ModelConfig {
        ModelConfig {
            image_size,
            hidden: self.hidden,
            heads: self.heads,
            blocks: self.blocks,
            mlp_ratio: self.mlp_ratio,
            patch_size: self.patch_size,
            d_pool: self.d_pool,
            d_ctxt: self.d_ctxt,
            ..ModelConfig::default()
        }
    }

    pub fn log_path(&self) -> PathBuf {
        self.log.clone().unwrap_or_else(|| self.out.with_extension("log"))
    }
}

/// Settings for generation, editing, sweeps, inversion and mask inspection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct RunConfig {
    pub checkpoint: Option<PathBuf>,
    pub prompt: Option<String>,
    pub edit_prompt: Option<String>,
    pub preset: Option<String>,
    pub lambda_fine: f64,
    pub lambda_coarse: f64,
    pub tau_m: f64,
    pub boundary: f64,
    pub start_step: usize,
    pub masking: bool,
    /// Edited blocks; all when absent.
    pub blocks: Option<Vec<usize>>,
    pub steps: usize,
    pub seed: u64,
    /// Starting noise file; overrides `seed`.
    pub noise: Option<PathBuf>,
    /// Input image for inversion.
    pub image: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Sweep axis as `name=v1,v2,...`.
    pub grid: Vec<String>,
    /// Sweep metrics table; defaults to the strip path with a `.txt` extension.
    pub table: Option<PathBuf>,
    /// Channel scored by sweeps (`red`, `green`, `blue`); taken from the edit prompt when absent.
    pub metric_channel: Option<String>,
    /// Distance from the background gray that counts as object in sweeps.
    pub object_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = EditConfig::default();
        Self {
            checkpoint: None,
            prompt: None,
            edit_prompt: None,
            preset: None,
            lambda_fine: e.lambda_fine,
            lambda_coarse: e.lambda_coarse,
            tau_m: e.tau_m,
            boundary: e.boundary,
            start_step: e.start_step,
            masking: e.masking,
            blocks: None,
            steps: Schedule::DEFAULT_STEPS,
            seed: 0,
            noise: None,
            image: None,
            out: None,
            grid: Vec::new(),
            table: None,
            metric_channel: None,
            object_threshold: 0.2,
        }
    }
}

impl RunConfig {
    /// Like [`resolve`], with a preset filling every edit key that was not set explicitly.
    pub fn resolve(file: Option<&Path>, flags: Map<String, Value>) -> Result<Self, Failure> {
        let mut explicit = explicit_keys(file, flags)?;
        if let Some(name) = explicit.get("preset").and_then(Value::as_str) {
            let preset = Preset::parse(name)
                .ok_or_else(|| Failure::Usage(format!("unknown preset {name:?} (expected eyeglasses or smile)")))?;
            let e = EditConfig::preset(preset);
            let expanded = [
                ("edit-prompt", Value::from(e.edit_prompt)),
                ("lambda-fine", Value::from(e.lambda_fine)),
                ("lambda-coarse", Value::from(e.lambda_coarse)),
                ("tau-m", Value::from(e.tau_m)),
                ("start-step", Value::from(e.start_step)),
            ];
            for (k, v) in expanded {
                explicit.entry(k).or_insert(v);
            }
        }
        finish(explicit)
    }

    pub fn schedule(&self) -> Result<Schedule, Failure> {
        Ok(Schedule::uniform(self.steps)?)
    }

    pub fn prompt(&self) -> Result<&str, Failure> {
        required(&self.prompt, "prompt").map(String::as_str)
    }

    pub fn edit_config(&self) -> Result<EditConfig, Failure> {
        Ok(EditConfig {
            edit_prompt: required(&self.edit_prompt, "edit-prompt")?.clone(),
            lambda_fine: self.lambda_fine,
            lambda_coarse: self.lambda_coarse,
            tau_m: self.tau_m,
            boundary: self.boundary,
            start_step: self.start_step,
            masking: self.masking,
            target_blocks: self.blocks.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn flags(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn defaults_then_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        fs::write(&file, r#"{"lambda-fine": 2.0, "seed": 7, "prompt": "red circle"}"#).unwrap();
        let r = RunConfig::resolve(Some(&file), flags(json!({"seed": 9, "tau-m": null}))).unwrap();
        assert_eq!(r.lambda_fine, 2.0);
        assert_eq!(r.seed, 9);
        assert_eq!(r.tau_m, 0.5);
        assert_eq!(r.lambda_coarse, 0.5);
        assert_eq!(r.steps, 30);
        assert_eq!(r.prompt.as_deref(), Some("red circle"));
    }

    #[test]
    fn presets_expand_unless_overridden() {
        let r = RunConfig::resolve(None, flags(json!({"preset": "eyeglasses"}))).unwrap();
        assert_eq!((r.lambda_coarse, r.lambda_fine, r.tau_m, r.start_step), (0.8, 5.0, 0.5, 3));
        assert_eq!(r.edit_prompt.as_deref(), Some("eyeglasses"));
        let r = RunConfig::resolve(None, flags(json!({"preset": "smile", "lambda-fine": 1.0}))).unwrap();
        assert_eq!((r.lambda_coarse, r.lambda_fine, r.tau_m, r.start_step), (0.5, 1.0, 0.5, 5));
        assert!(matches!(RunConfig::resolve(None, flags(json!({"preset": "hat"}))), Err(Failure::Usage(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = resolve::<TrainSettings>(None, flags(json!({"learning-rat": 1.0}))).unwrap_err();
        assert!(matches!(err, Failure::Usage(m) if m.contains("learning-rat")));
    }

    #[test]
    fn sidecar_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let r = RunConfig::resolve(None, flags(json!({"prompt": "blue square", "blocks": [1]}))).unwrap();
        let p = dir.path().join("x.json");
        write_sidecar(&p, &r).unwrap();
        assert_eq!(RunConfig::resolve(Some(&p), Map::new()).unwrap(), r);
    }
}
