//! Audio I/O, JSON Lines manifests and the synthetic corpus generator.

mod manifest;
mod synth;
mod wav;

pub use manifest::{Manifest, Record, Split};
pub use synth::{
    build_synthetic_corpus, render_placements, split_counts, synth_utterance, Placement, SynthSpec,
    SynthUtterance, WordSignature, WordSpan,
};
pub use wav::{decode_wav, encode_wav, quantize, read_wav, write_wav};

use std::path::Path;

use thiserror::Error;

/// Mono audio at a fixed sample rate, samples nominally in `[-1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Audio {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("wav format: {field}: {detail}")]
    WavFormat { field: &'static str, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },
    #[error("manifest record {record} (`{id}`): {detail}")]
    Invalid { record: usize, id: String, detail: String },
    #[error("unknown intent {intent} (inventory has {n_intents})")]
    UnknownIntent { intent: usize, n_intents: usize },
    #[error("{0}")]
    Config(String),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
