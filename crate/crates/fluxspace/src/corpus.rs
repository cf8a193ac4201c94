//! Corpus directories: `manifest.txt`, `corpus.json` and one PPM per sample.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use fluxspace_core::synth::{self, Attributes, Color, CorpusEntry, Shape};
use fluxspace_core::trainer::{CorpusConfig, TrainItem};
use serde::{Deserialize, Serialize};

use crate::ppm::{self, PpmError};

pub const MANIFEST: &str = "manifest.txt";
pub const DESCRIPTION: &str = "corpus.json";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("{path}: {source}")]
    Image { path: String, source: PpmError },
    #[error("bad corpus description: {0}")]
    Description(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// What `corpus.json` records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Description {
    pub image_size: usize,
    pub corpus: CorpusConfig,
}

pub fn sample_file(index: usize) -> String {
    format!("sample_{index:05}.ppm")
}

/// `<index> <seed> <color> <shape>` per line.
pub fn manifest_text(plan: &[CorpusEntry]) -> String {
    let mut out = String::new();
    for e in plan {
        let _ = writeln!(out, "{} {} {} {}", e.index, e.seed, e.attributes.color.name(), e.attributes.shape.name());
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<CorpusEntry>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |message: String| CorpusError::Manifest { line: i + 1, message };
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let [index, seed, color, shape] = f[..] else {
            return Err(bad(format!("expected 4 fields, found {}", f.len())));
        };
        out.push(CorpusEntry {
            index: index.parse().map_err(|_| bad(format!("bad index {index:?}")))?,
            seed: seed.parse().map_err(|_| bad(format!("bad seed {seed:?}")))?,
            attributes: Attributes {
                color: Color::parse(color).ok_or_else(|| bad(format!("unknown color {color:?}")))?,
                shape: Shape::parse(shape).ok_or_else(|| bad(format!("unknown shape {shape:?}")))?,
            },
        });
    }
    Ok(out)
}

pub fn write_corpus(dir: &Path, config: &CorpusConfig, image_size: usize) -> Result<Vec<CorpusEntry>, CorpusError> {
    fs::create_dir_all(dir)?;
    let plan = synth::corpus_plan(config.size, config.seed);
    for e in &plan {
        let s = synth::generate_sample(e.seed, e.attributes, &config.jitter, image_size);
        let path = dir.join(sample_file(e.index));
        ppm::write_image(&path, &s.image).map_err(|source| CorpusError::Image { path: path.display().to_string(), source })?;
    }
    fs::write(dir.join(MANIFEST), manifest_text(&plan))?;
    let desc = Description { image_size, corpus: config.clone() };
    fs::write(dir.join(DESCRIPTION), serde_json::to_string_pretty(&desc)? + "\n")?;
    Ok(plan)
}

/// Loads every manifest entry with its stored image.
pub fn read_corpus(dir: &Path) -> Result<Vec<TrainItem>, CorpusError> {
    let plan = parse_manifest(&fs::read_to_string(dir.join(MANIFEST))?)?;
    plan.iter()
        .map(|e| {
            let path = dir.join(sample_file(e.index));
            let image = ppm::read_image(&path).map_err(|source| CorpusError::Image { path: path.display().to_string(), source })?;
            Ok(TrainItem { image, caption: e.attributes.caption() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let plan = synth::corpus_plan(13, 4);
        let text = manifest_text(&plan);
        assert_eq!(text.lines().count(), 13);
        assert!(text.lines().next().unwrap().ends_with(" red circle"));
        assert_eq!(parse_manifest(&text).unwrap(), plan);
        assert!(matches!(parse_manifest("0 1 red"), Err(CorpusError::Manifest { line: 1, .. })));
        assert!(matches!(parse_manifest("0 1 red circle\n1 x red circle"), Err(CorpusError::Manifest { line: 2, .. })));
        assert!(parse_manifest("0 1 purple circle").is_err());
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CorpusConfig { size: 7, ..Default::default() };
        write_corpus(dir.path(), &cfg, 16).unwrap();
        let items = read_corpus(dir.path()).unwrap();
        assert_eq!(items.len(), 7);
        assert_eq!(items[1].caption, "red square");
        let plan = synth::corpus_plan(7, 0);
        let s = synth::generate_sample(plan[1].seed, plan[1].attributes, &cfg.jitter, 16);
        assert_eq!(synth::quantize(&items[1].image), synth::quantize(&s.image));
    }
}
