use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::ndnum::{Real, Tensor};
use crate::nn::Network;

use super::{Dataset, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceResult {
    pub id: String,
    pub label: usize,
    pub predicted: usize,
    pub audio_seconds: f64,
    pub inference_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub n_utterances: usize,
    pub total_audio_seconds: f64,
    pub total_inference_seconds: f64,
    pub rtf: f64,
    pub utterances: Vec<UtteranceResult>,
}

impl EvalReport {
    pub fn from_results(n_classes: usize, utterances: Vec<UtteranceResult>) -> Self {
        let mut confusion = vec![vec![0usize; n_classes]; n_classes];
        for u in &utterances {
            confusion[u.label][u.predicted] += 1;
        }
        let n = utterances.len();
        let correct: usize = (0..n_classes).map(|k| confusion[k][k]).sum();
        let audio: f64 = utterances.iter().map(|u| u.audio_seconds).sum();
        let infer: f64 = utterances.iter().map(|u| u.inference_seconds).sum();
        EvalReport {
            accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
            confusion,
            n_utterances: n,
            total_audio_seconds: audio,
            total_inference_seconds: infer,
            rtf: if audio > 0.0 { infer / audio } else { 0.0 },
            utterances,
        }
    }

    /// Equality of everything except wall-clock measurements.
    pub fn same_outcome(&self, other: &EvalReport) -> bool {
        self.accuracy == other.accuracy
            && self.confusion == other.confusion
            && self.n_utterances == other.n_utterances
            && self.total_audio_seconds == other.total_audio_seconds
            && self.utterances.len() == other.utterances.len()
            && self
                .utterances
                .iter()
                .zip(&other.utterances)
                .all(|(a, b)| a.id == b.id && a.label == b.label && a.predicted == b.predicted)
    }

    /// Flat `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "accuracy={:.6}", self.accuracy).unwrap();
        writeln!(s, "n_utterances={}", self.n_utterances).unwrap();
        writeln!(s, "n_classes={}", self.confusion.len()).unwrap();
        writeln!(s, "total_audio_seconds={:.6}", self.total_audio_seconds).unwrap();
        writeln!(s, "total_inference_seconds={:.6}", self.total_inference_seconds).unwrap();
        writeln!(s, "rtf={:.6}", self.rtf).unwrap();
        s
    }

    /// Rows are true classes, columns predicted classes.
    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.len();
        let mut s = String::from("true\\predicted");
        for j in 0..k {
            write!(s, ",{j}").unwrap();
        }
        s.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            write!(s, "{i}").unwrap();
            for v in row {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn utterances_csv(&self) -> String {
        let mut s = String::from("id,label,predicted,audio_seconds,inference_seconds\n");
        for u in &self.utterances {
            writeln!(
                s,
                "{},{},{},{:.6},{:.9}",
                u.id, u.label, u.predicted, u.audio_seconds, u.inference_seconds
            )
            .unwrap();
        }
        s
    }
}

pub(crate) fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Posterior argmax and forward time of every item, each run alone.
pub fn predict<T: Real, N: Network<T>>(net: &N, inputs: &[N::Input]) -> Result<Vec<(usize, f64)>, TrainError>
where
    N::Input: Sized,
{
    inputs
        .par_iter()
        .map(|x| {
            let start = Instant::now();
            let p: Tensor<T> = net.posteriors(&[x])?;
            let secs = start.elapsed().as_secs_f64();
            Ok((argmax(p.row(0)), secs))
        })
        .collect()
}

/// Inference-mode accuracy, confusion and real-time factor.
pub fn evaluate<T: Real, N: Network<T>>(net: &N, data: &Dataset<N::Input>) -> Result<EvalReport, TrainError>
where
    N::Input: Sized,
{
    let k = net.n_classes();
    data.check_labels(k)?;
    let preds = predict(net, &data.inputs)?;
    let utterances = preds
        .into_iter()
        .enumerate()
        .map(|(i, (predicted, secs))| UtteranceResult {
            id: data.ids[i].clone(),
            label: data.labels[i],
            predicted,
            audio_seconds: data.durations[i],
            inference_seconds: secs,
        })
        .collect();
    Ok(EvalReport::from_results(k, utterances))
}
