use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::corpus::{read_wav, Manifest, Record};
use crate::dsp::{read_features, write_features, DspConfig, LogMelExtractor};
use crate::ndnum::{Real, Tensor};
use crate::nn::Target;

use super::TrainError;

/// Inputs with labels, ids and per-item sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<I> {
    pub ids: Vec<String>,
    pub inputs: Vec<I>,
    pub labels: Vec<usize>,
    /// Audio seconds per item (zero for text).
    pub durations: Vec<f64>,
    /// Sequence length per item, used for bucketing.
    pub lengths: Vec<usize>,
}

impl<I> Dataset<I> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn check_labels(&self, n_classes: usize) -> Result<(), TrainError> {
        match self.labels.iter().position(|&l| l >= n_classes) {
            Some(i) => Err(TrainError::ClassMismatch {
                id: self.ids[i].clone(),
                label: self.labels[i],
                n_classes,
            }),
            None => Ok(()),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Self
    where
        I: Clone,
    {
        Dataset {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            durations: idx.iter().map(|&i| self.durations[i]).collect(),
            lengths: idx.iter().map(|&i| self.lengths[i]).collect(),
        }
    }
}

pub fn label_of(rec: &Record, target: Target) -> usize {
    match target {
        Target::Domain => rec.domain_label,
        Target::Intent => rec.intent_label,
    }
}

/// Cache file of a record's features.
pub fn feature_path(feature_dir: &Path, id: &str) -> PathBuf {
    feature_dir.join(format!("{id}.feat"))
}

/// Extracts and caches log-mel features for every record. Returns the ids
/// that failed with their error messages.
pub fn featurize_manifest(
    manifest: &Manifest,
    base_dir: &Path,
    feature_dir: &Path,
    cfg: &DspConfig,
) -> Result<Vec<(String, String)>, TrainError> {
    let ex = LogMelExtractor::new(cfg)?;
    let failures: Vec<(String, String)> = manifest
        .records
        .par_iter()
        .filter_map(|rec| {
            let run = || -> Result<(), String> {
                let path = Manifest::audio_file(base_dir, rec).ok_or("record has no audio_path")?;
                let audio = read_wav(&path).map_err(|e| e.to_string())?;
                let feats = ex.extract(&audio.samples, audio.sample_rate).map_err(|e| e.to_string())?;
                write_features(&feature_path(feature_dir, &rec.id), &feats).map_err(|e| e.to_string())
            };
            run().err().map(|e| (rec.id.clone(), e))
        })
        .collect();
    Ok(failures)
}

/// Loads cached features for every record of `manifest`.
pub fn load_feature_dataset<T: Real>(
    manifest: &Manifest,
    feature_dir: &Path,
    target: Target,
) -> Result<Dataset<Tensor<T>>, TrainError> {
    let feats: Vec<(Tensor<T>, f64)> = manifest
        .records
        .par_iter()
        .map(|rec| {
            let path = feature_path(feature_dir, &rec.id);
            let f = read_features(&path).map_err(|e| TrainError::Features {
                id: rec.id.clone(),
                detail: e.to_string(),
            })?;
            let secs = f.n_frames() as f64 / f.frame_rate();
            Ok((f.to_tensor(), secs))
        })
        .collect::<Result<_, TrainError>>()?;
    let lengths = feats.iter().map(|(t, _)| t.rows()).collect();
    let durations = feats.iter().map(|(_, s)| *s).collect();
    Ok(Dataset {
        ids: manifest.records.iter().map(|r| r.id.clone()).collect(),
        inputs: feats.into_iter().map(|(t, _)| t).collect(),
        labels: manifest.records.iter().map(|r| label_of(r, target)).collect(),
        durations,
        lengths,
    })
}
