use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Result};

/// Named hyperparameter sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Preset {
    Eyeglasses,
    Smile,
}

impl Preset {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "eyeglasses" => Some(Self::Eyeglasses),
            "smile" => Some(Self::Smile),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Eyeglasses => "eyeglasses",
            Self::Smile => "smile",
        }
    }

    /// Edit prompt the preset was tuned for.
    pub fn edit_prompt(self) -> &'static str {
        match self {
            Self::Eyeglasses => "eyeglasses",
            Self::Smile => "smiling",
        }
    }
}

/// Every knob of an edit.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EditConfig {
    pub edit_prompt: String,
    /// Scale of the attention-output edit. Unbounded above.
    pub lambda_fine: f64,
    /// Interpolation weight of the pooled-condition edit, in `[0, 1]`.
    pub lambda_coarse: f64,
    /// Mask threshold, in `[0, 1]`.
    pub tau_m: f64,
    /// Sigmoid boundary coefficient of the soft mask.
    pub boundary: f64,
    /// First 0-based sampling step with editing active.
    pub start_step: usize,
    pub masking: bool,
    /// Joint blocks to edit; `None` edits all of them.
    pub target_blocks: Option<Vec<usize>>,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            edit_prompt: String::new(),
            lambda_fine: 5.0,
            lambda_coarse: 0.5,
            tau_m: 0.5,
            boundary: 10.0,
            start_step: 1,
            masking: true,
            target_blocks: None,
        }
    }
}

impl EditConfig {
    pub fn new(edit_prompt: &str) -> Self {
        Self { edit_prompt: edit_prompt.to_string(), ..Self::default() }
    }

    pub fn preset(preset: Preset) -> Self {
        let (lambda_coarse, lambda_fine, tau_m, start_step) = match preset {
            Preset::Eyeglasses => (0.8, 5.0, 0.5, 3),
            Preset::Smile => (0.5, 8.0, 0.5, 5),
        };
        Self {
            edit_prompt: preset.edit_prompt().to_string(),
            lambda_fine,
            lambda_coarse,
            tau_m,
            start_step,
            ..Self::default()
        }
    }

    pub fn validate(&self, block_count: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lambda_fine.is_finite() && self.lambda_fine >= 0.0) {
            return bad(format!("lambda_fine must be finite and >= 0, got {}", self.lambda_fine));
        }
        if !(0.0..=1.0).contains(&self.lambda_coarse) {
            return bad(format!("lambda_coarse must lie in [0, 1], got {}", self.lambda_coarse));
        }
        if !(0.0..=1.0).contains(&self.tau_m) {
            return bad(format!("tau_m must lie in [0, 1], got {}", self.tau_m));
        }
        if !self.boundary.is_finite() {
            return bad(format!("boundary must be finite, got {}", self.boundary));
        }
        if let Some(blocks) = &self.target_blocks {
            if let Some(b) = blocks.iter().find(|&&b| b >= block_count) {
                return bad(format!("target block {b} out of range (model has {block_count})"));
            }
        }
        Ok(())
    }

    pub fn targets(&self, block: usize) -> bool {
        self.target_blocks.as_ref().is_none_or(|b| b.contains(&block))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_documented_values() {
        let e = EditConfig::preset(Preset::Eyeglasses);
        assert_eq!((e.lambda_coarse, e.lambda_fine, e.tau_m, e.start_step), (0.8, 5.0, 0.5, 3));
        let s = EditConfig::preset(Preset::Smile);
        assert_eq!((s.lambda_coarse, s.lambda_fine, s.tau_m, s.start_step), (0.5, 8.0, 0.5, 5));
        assert_eq!(Preset::parse("smile"), Some(Preset::Smile));
        assert_eq!(Preset::parse("frown"), None);
    }

    #[test]
    fn defaults() {
        let d = EditConfig::default();
        assert_eq!((d.lambda_coarse, d.tau_m, d.boundary), (0.5, 0.5, 10.0));
        assert!(d.masking);
        assert!(d.targets(0) && d.targets(17));
    }

    #[test]
    fn validation() {
        let ok = EditConfig::new("red");
        assert!(ok.validate(2).is_ok());
        assert!(EditConfig { lambda_coarse: 1.5, ..ok.clone() }.validate(2).is_err());
        assert!(EditConfig { lambda_coarse: -0.1, ..ok.clone() }.validate(2).is_err());
        assert!(EditConfig { tau_m: 2.0, ..ok.clone() }.validate(2).is_err());
        assert!(EditConfig { lambda_fine: -1.0, ..ok.clone() }.validate(2).is_err());
        assert!(EditConfig { lambda_fine: f64::NAN, ..ok.clone() }.validate(2).is_err());
        assert!(EditConfig { target_blocks: Some(alloc::vec![2]), ..ok.clone() }.validate(2).is_err());
        assert!(EditConfig { target_blocks: Some(alloc::vec![1]), ..ok }.validate(2).is_ok());
    }
}
