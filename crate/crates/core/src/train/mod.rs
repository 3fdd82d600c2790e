//! Mini-batch training with Adam, early stopping on validation accuracy,
//! and evaluation with real-time-factor accounting.

mod adam;
mod batch;
mod data;
mod eval;

pub use adam::{adam_step, adam_step_slots, AdamConfig, AdamSlot, AdamState};
pub use batch::{make_batches, pad_and_batch, PaddedBatch};
pub use data::{feature_path, featurize_manifest, label_of, load_feature_dataset, Dataset};
pub use eval::{evaluate, predict, EvalReport, UtteranceResult};

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::CorpusError;
use crate::dsp::DspError;
use crate::ndnum::{NumError, Precision, Real, Tape, Tensor};
use crate::nn::{bind_params, Checkpoint, Mode, Network, NnError};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset: {0}")]
    Empty(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("class mismatch: `{id}` has label {label}, model has {n_classes} classes")]
    ClassMismatch { id: String, label: usize, n_classes: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        /// Model state before the offending batch.
        last_good: Box<Checkpoint>,
    },
    #[error("non-finite gradient in `{tensor}` at index {index} ({value})")]
    NonFiniteGradient { tensor: String, index: usize, value: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unreadable features for `{id}`: {detail}")]
    Features { id: String, detail: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub precision: Precision,
    pub bucketing: bool,
    pub adam: AdamConfig,
    /// Global gradient-norm clip; off by default.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 50,
            patience: 10,
            seed: 1,
            precision: Precision::F32,
            bucketing: true,
            adam: AdamConfig::default(),
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, batch_norm: bool) -> Result<(), TrainError> {
        if self.batch_size == 0 || (batch_norm && self.batch_size < 2) {
            return Err(TrainError::Config(format!(
                "batch_size {} (batch norm needs at least 2)",
                self.batch_size
            )));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::Config("max_epochs must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(TrainError::Config(format!("learning rate {} must be positive", self.adam.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_accuracy: f64,
    pub wall_seconds: f64,
}

impl EpochLog {
    /// One tab-separated log line (without newline).
    pub fn line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.3}",
            self.epoch, self.train_loss, self.valid_accuracy, self.wall_seconds
        )
    }
}

pub struct TrainOutcome<N> {
    /// Parameters of the epoch with the best validation accuracy.
    pub best: N,
    pub last: N,
    pub best_epoch: usize,
    pub best_valid_accuracy: f64,
    pub log: Vec<EpochLog>,
}

/// Files written by [`train_model`] under its output directory.
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.ckpt";
pub const TRAIN_LOG: &str = "train.log";

fn has_batch_norm<T: Real, N: Network<T>>(net: &N) -> bool {
    net.named_params().iter().any(|(n, _)| n.contains(".bn."))
}

/// Model checkpoint extended with the optimizer moments.
pub fn checkpoint_with_optimizer<T: Real, N: Network<T>>(net: &N, state: &AdamState<T>) -> Checkpoint {
    let mut ck = net.to_checkpoint();
    ck.insert_meta("adam.t", &[state.t as f64]);
    for ((name, _), slot) in net.named_params().into_iter().zip(&state.slots) {
        ck.insert(format!("adam.m.{name}"), &slot.m);
        ck.insert(format!("adam.v.{name}"), &slot.v);
    }
    ck
}

/// Optimizer state stored by [`checkpoint_with_optimizer`].
pub fn optimizer_from_checkpoint<T: Real, N: Network<T>>(net: &N, ck: &Checkpoint) -> Result<AdamState<T>, TrainError> {
    let t = ck.meta("adam.t", 1)?[0] as u64;
    let slots = net
        .named_params()
        .into_iter()
        .map(|(name, _)| {
            Ok(AdamSlot {
                m: ck.tensor(&format!("adam.m.{name}"))?,
                v: ck.tensor(&format!("adam.v.{name}"))?,
            })
        })
        .collect::<Result<_, NnError>>()?;
    Ok(AdamState { slots, t })
}

/// Mean cross-entropy and batch-norm statistics of one training batch,
/// with the parameter gradients.
fn batch_gradients<T: Real, N: Network<T>>(
    net: &N,
    data: &Dataset<N::Input>,
    idx: &[usize],
) -> Result<(f64, Vec<Tensor<T>>, Option<(Vec<T>, Vec<T>)>), TrainError>
where
    N::Input: Sized,
{
    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, net);
    let inputs: Vec<&N::Input> = idx.iter().map(|&i| &data.inputs[i]).collect();
    let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
    let fwd = net.forward(&mut tape, &vars, &inputs, Mode::Train, false)?;
    let loss = tape.softmax_xent(fwd.logits, &labels)?;
    let lv = tape.value(loss).item().as_f64();
    if !lv.is_finite() {
        return Ok((lv, Vec::new(), None));
    }
    let mut g = tape.backward(loss)?;
    let grads = vars.iter().map(|&v| g.take(v)).collect();
    Ok((lv, grads, fwd.bn_stats))
}

fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Mean training-mode cross-entropy over the batches of epoch `epoch`'s
/// shuffle, without updating anything.
pub fn epoch_loss<T: Real, N: Network<T>>(
    net: &N,
    data: &Dataset<N::Input>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64, TrainError>
where
    N::Input: Sized,
{
    let bn = has_batch_norm(net);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("epoch/{epoch}")));
    let batches = make_batches(&data.lengths, cfg.batch_size, cfg.bucketing, bn, &mut rng);
    let mut total = 0.0;
    for b in &batches {
        let mut tape = Tape::new();
        let vars: Vec<_> = net.named_params().into_iter().map(|(_, t)| tape.constant(t.clone())).collect();
        let inputs: Vec<&N::Input> = b.iter().map(|&i| &data.inputs[i]).collect();
        let labels: Vec<usize> = b.iter().map(|&i| data.labels[i]).collect();
        let fwd = net.forward(&mut tape, &vars, &inputs, Mode::Train, false)?;
        let loss = tape.softmax_xent(fwd.logits, &labels)?;
        total += tape.value(loss).item().as_f64() * b.len() as f64;
    }
    Ok(total / data.len() as f64)
}

fn accuracy(preds: &[(usize, f64)], labels: &[usize]) -> f64 {
    let correct = preds.iter().zip(labels).filter(|((p, _), l)| p == *l).count();
    correct as f64 / labels.len() as f64
}

/// Trains `net` on `train`, selecting the epoch with the best accuracy on
/// `valid`. With `out_dir`, writes the best and last checkpoints and the
/// per-epoch log there.
pub fn train_model<T: Real, N: Network<T>>(
    mut net: N,
    train: &Dataset<N::Input>,
    valid: &Dataset<N::Input>,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome<N>, TrainError>
where
    N::Input: Sized,
{
    if train.is_empty() {
        return Err(TrainError::Empty("training set".into()));
    }
    if valid.is_empty() {
        return Err(TrainError::Empty("validation set".into()));
    }
    let bn = has_batch_norm(&net);
    cfg.validate(bn)?;
    if bn && train.len() < 2 {
        return Err(TrainError::Config("batch norm needs at least 2 training items".into()));
    }
    let k = net.n_classes();
    train.check_labels(k)?;
    valid.check_labels(k)?;

    let names: Vec<String> = net.named_params().into_iter().map(|(n, _)| n).collect();
    let mut state = AdamState::new(net.named_params().into_iter().map(|(_, t)| t));
    let mut log_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
            let p = dir.join(TRAIN_LOG);
            Some((fs::File::create(&p).map_err(|e| TrainError::io(&p, e))?, p))
        }
        None => None,
    };
    let save = |ck: &Checkpoint, name: &str| -> Result<(), TrainError> {
        if let Some(dir) = out_dir {
            ck.save(&dir.join(name))?;
        }
        Ok(())
    };

    let mut log = Vec::new();
    let mut best = net.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let started = Instant::now();
    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("epoch/{epoch}")));
        let batches = make_batches(&train.lengths, cfg.batch_size, cfg.bucketing, bn, &mut rng);
        let mut total = 0.0;
        for (bi, b) in batches.iter().enumerate() {
            let (loss, mut grads, stats) = batch_gradients(&net, train, b)?;
            if !loss.is_finite() {
                let last_good = checkpoint_with_optimizer(&net, &state);
                save(&last_good, LAST_GOOD_CHECKPOINT)?;
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    last_good: Box::new(last_good),
                });
            }
            if let Some(c) = cfg.grad_clip {
                clip_global_norm(&mut grads, c);
            }
            adam_step(&mut net.params_mut(), &grads, &names, &mut state, &cfg.adam)?;
            if let Some((m, v)) = stats {
                net.commit_batch_stats(&m, &v);
            }
            total += loss * b.len() as f64;
        }
        let preds = predict(&net, &valid.inputs)?;
        let acc = accuracy(&preds, &valid.labels);
        let entry = EpochLog {
            epoch,
            train_loss: total / train.len() as f64,
            valid_accuracy: acc,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        if let Some((f, p)) = &mut log_file {
            writeln!(f, "{}", entry.line()).map_err(|e| TrainError::io(p, e))?;
        }
        log.push(entry);
        save(&checkpoint_with_optimizer(&net, &state), LAST_CHECKPOINT)?;
        if acc > best_acc {
            best_acc = acc;
            best_epoch = epoch;
            best = net.clone();
            since_best = 0;
            save(&best.to_checkpoint(), BEST_CHECKPOINT)?;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        best,
        last: net,
        best_epoch,
        best_valid_accuracy: best_acc,
        log,
    })
}
