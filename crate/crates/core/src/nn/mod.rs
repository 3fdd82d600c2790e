//! Pyramidal bidirectional GRU encoder with a pooled, batch-normalized
//! feed-forward classifier.

mod checkpoint;

pub use checkpoint::{Checkpoint, Entry, CHECKPOINT_MAGIC};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ndnum::{gru_scan_forward, NumError, Real, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("batch norm inference requested before any running-statistics update")]
    NoRunningStats,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl NnError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        NnError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Which manifest label a classifier predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Domain,
    Intent,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Domain => "domain",
            Target::Intent => "intent",
        }
    }

    fn code(self) -> f64 {
        match self {
            Target::Domain => 0.0,
            Target::Intent => 1.0,
        }
    }

    fn from_code(c: f64) -> Result<Self, NnError> {
        match c as i64 {
            0 => Ok(Target::Domain),
            1 => Ok(Target::Intent),
            _ => Err(NnError::Checkpoint(format!("unknown target code {c}"))),
        }
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "domain" => Ok(Target::Domain),
            "intent" => Ok(Target::Intent),
            o => Err(format!("unknown target `{o}` (expected domain or intent)")),
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the encoder sequence becomes one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    MaxPool,
    /// Final forward state concatenated with the backward state at t=0.
    LastStep,
}

impl FromStr for Readout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "maxpool" | "max_pool" => Ok(Readout::MaxPool),
            "last" | "last_step" => Ok(Readout::LastStep),
            o => Err(format!("unknown readout `{o}` (expected maxpool or last)")),
        }
    }
}

impl fmt::Display for Readout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Readout::MaxPool => "maxpool",
            Readout::LastStep => "last",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub hidden: usize,
    pub stride: usize,
    pub input_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_layers: 4,
            hidden: 256,
            stride: 2,
            input_dim: 40,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.n_layers == 0 || self.hidden == 0 || self.stride == 0 || self.input_dim == 0 {
            return Err(NnError::Config(format!(
                "encoder needs n_layers, hidden, stride and input_dim ≥ 1, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    /// Encoder output length for `t` input frames.
    pub fn output_len(&self, t: usize) -> usize {
        (0..self.n_layers).fold(t, |t, _| t.div_ceil(self.stride))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub ff_hidden: usize,
    pub n_classes: usize,
    pub batch_norm: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            ff_hidden: 1024,
            n_classes: 5,
            batch_norm: true,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.ff_hidden == 0 || self.n_classes < 2 {
            return Err(NnError::Config(format!(
                "decoder needs ff_hidden ≥ 1 and n_classes ≥ 2, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub readout: Readout,
    pub target: Target,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            readout: Readout::MaxPool,
            target: Target::Domain,
        }
    }
}

/// One scan direction: `W` (3H×I), `U` (3H×H), `b` (3H), gates (z, r, n).
#[derive(Debug, Clone, PartialEq)]
pub struct GruDirParams<T: Real = f64> {
    pub w: Tensor<T>,
    pub u: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> GruDirParams<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruDirParams {
            w: Tensor::zeros(&[3 * hidden, input]),
            u: Tensor::zeros(&[3 * hidden, hidden]),
            b: Tensor::zeros(&[3 * hidden]),
        }
    }

    pub fn random(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = 1.0 / (hidden as f64).sqrt();
        GruDirParams {
            w: uniform(rng, &[3 * hidden, input], a),
            u: uniform(rng, &[3 * hidden, hidden], a),
            b: uniform(rng, &[3 * hidden], a),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.cols()
    }

    pub fn input(&self) -> usize {
        self.w.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruLayerParams<T: Real = f64> {
    pub fwd: GruDirParams<T>,
    pub bwd: GruDirParams<T>,
}

impl<T: Real> GruLayerParams<T> {
    pub fn random(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        GruLayerParams {
            fwd: GruDirParams::random(input, hidden, rng),
            bwd: GruDirParams::random(input, hidden, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T: Real = f64> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    /// Number of running-statistics updates so far.
    pub updates: u64,
}

impl<T: Real> BatchNormParams<T> {
    pub fn new(dim: usize) -> Self {
        BatchNormParams {
            gamma: Tensor::full(&[dim], T::one()),
            beta: Tensor::zeros(&[dim]),
            running_mean: vec![T::zero(); dim],
            running_var: vec![T::one(); dim],
            momentum: 0.9,
            eps: 1e-5,
            updates: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// `running ← momentum·running + (1−momentum)·batch`.
    pub fn update(&mut self, mean: &[T], var: &[T]) {
        let m = T::of(self.momentum);
        let one_m = T::of(1.0 - self.momentum);
        for (r, &b) in self.running_mean.iter_mut().zip(mean) {
            *r = m * *r + one_m * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(var) {
            *r = m * *r + one_m * b;
        }
        self.updates += 1;
    }

    /// Overwrites the running statistics and marks them as available.
    pub fn set_running(&mut self, mean: Vec<T>, var: Vec<T>) {
        self.running_mean = mean;
        self.running_var = var;
        self.updates = self.updates.max(1);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Infer,
}

/// Recorded forward pass of a batch.
pub struct Forward<T: Real> {
    /// B×K logits.
    pub logits: Var,
    /// Per-item input variables (leaves when input gradients were requested).
    pub inputs: Vec<Var>,
    /// Batch-norm statistics of this batch (train mode only).
    pub bn_stats: Option<(Vec<T>, Vec<T>)>,
}

/// Interface shared by the acoustic and text classifiers.
pub trait Network<T: Real>: Clone + Send + Sync {
    type Input: Sync + ?Sized;

    fn n_classes(&self) -> usize;
    fn target(&self) -> Target;
    /// Parameter tensors in a fixed order with stable names.
    fn named_params(&self) -> Vec<(String, &Tensor<T>)>;
    /// Same order as [`Network::named_params`].
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;
    /// Records the logits of `inputs` on `tape`; `params` are the variables
    /// returned by [`bind_params`] for this network.
    fn forward(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        inputs: &[&Self::Input],
        mode: Mode,
        input_grad: bool,
    ) -> Result<Forward<T>, NnError>;
    fn commit_batch_stats(&mut self, _mean: &[T], _var: &[T]) {}
    fn to_checkpoint(&self) -> Checkpoint;
    fn from_checkpoint(ck: &Checkpoint) -> Result<Self, NnError>;

    fn count_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Inference-mode posteriors, one row per input.
    fn posteriors(&self, inputs: &[&Self::Input]) -> Result<Tensor<T>, NnError> {
        let mut tape = Tape::new();
        let params = bind_constants(&mut tape, self);
        let fwd = self.forward(&mut tape, &params, inputs, Mode::Infer, false)?;
        let p = tape.softmax(fwd.logits)?;
        Ok(tape.value(p).clone())
    }
}

/// Registers every parameter of `net` as a differentiable leaf.
pub fn bind_params<T: Real, N: Network<T>>(tape: &mut Tape<T>, net: &N) -> Vec<Var> {
    net.named_params().into_iter().map(|(_, t)| tape.leaf(t.clone())).collect()
}

fn bind_constants<T: Real, N: Network<T>>(tape: &mut Tape<T>, net: &N) -> Vec<Var> {
    net.named_params().into_iter().map(|(_, t)| tape.constant(t.clone())).collect()
}

pub fn uniform<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], a: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.gen_range(-a..=a))).collect();
    Tensor::from_vec(shape, data).expect("shape matches data")
}

/// Glorot-uniform `fan_in × fan_out` matrix.
pub fn xavier<T: Real>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    uniform(rng, &[fan_in, fan_out], (6.0 / (fan_in + fan_out) as f64).sqrt())
}

/// Tape handles of one scan direction.
#[derive(Debug, Clone, Copy)]
pub struct GruDirVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct GruLayerVars {
    pub fwd: GruDirVars,
    pub bwd: GruDirVars,
}

impl GruLayerVars {
    /// Six consecutive variables in (fwd w, u, b, bwd w, u, b) order.
    pub fn from_slice(v: &[Var]) -> Self {
        GruLayerVars {
            fwd: GruDirVars {
                w: v[0],
                u: v[1],
                b: v[2],
            },
            bwd: GruDirVars {
                w: v[3],
                u: v[4],
                b: v[5],
            },
        }
    }
}

/// One GRU step built from tape primitives; `x` is 1×I, `h` is 1×H.
pub fn gru_cell_on_tape<T: Real>(tape: &mut Tape<T>, x: Var, h: Var, p: GruDirVars) -> Result<Var, NnError> {
    let hid = tape.value(p.u).cols();
    let wt = tape.transpose(p.w)?;
    let ut = tape.transpose(p.u)?;
    let gx = tape.matmul(x, wt)?;
    let gx = tape.add_bias(gx, p.b)?;
    let uz_r = tape.slice_cols(ut, 0, 2 * hid)?;
    let un = tape.slice_cols(ut, 2 * hid, hid)?;
    let gh = tape.matmul(h, uz_r)?;
    let gx_zr = tape.slice_cols(gx, 0, 2 * hid)?;
    let zr = tape.add(gx_zr, gh)?;
    let zr = tape.sigmoid(zr)?;
    let z = tape.slice_cols(zr, 0, hid)?;
    let r = tape.slice_cols(zr, hid, hid)?;
    let rh = tape.mul(r, h)?;
    let nh = tape.matmul(rh, un)?;
    let gx_n = tape.slice_cols(gx, 2 * hid, hid)?;
    let n = tape.add(gx_n, nh)?;
    let n = tape.tanh(n)?;
    // h' = h + z⊙(n − h)
    let d = tape.sub(n, h)?;
    let zd = tape.mul(z, d)?;
    Ok(tape.add(h, zd)?)
}

fn as_row<T: Real>(t: &Tensor<T>) -> Result<Tensor<T>, NumError> {
    t.clone().reshape(&[1, t.len()])
}

/// `h' = (1−z)⊙h + z⊙ñ` for a single frame, with gates (z, r, ñ).
pub fn gru_cell_step<T: Real>(x: &Tensor<T>, h_prev: &Tensor<T>, p: &GruDirParams<T>) -> Result<Tensor<T>, NnError> {
    if x.len() != p.input() || h_prev.len() != p.hidden() {
        return Err(NumError::Dimension {
            op: "gru_cell_step",
            left: vec![x.len(), h_prev.len()],
            right: vec![p.input(), p.hidden()],
        }
        .into());
    }
    let mut tape = Tape::new();
    let xv = tape.constant(as_row(x)?);
    let hv = tape.constant(as_row(h_prev)?);
    let vars = GruDirVars {
        w: tape.constant(p.w.clone()),
        u: tape.constant(p.u.clone()),
        b: tape.constant(p.b.clone()),
    };
    let out = gru_cell_on_tape(&mut tape, xv, hv, vars)?;
    Ok(tape.value(out).clone().reshape(&[p.hidden()])?)
}

/// Output of one bidirectional layer on the tape.
#[derive(Debug, Clone, Copy)]
pub struct BidirVars {
    /// Subsampled T'×2H output.
    pub out: Var,
    /// Forward states before subsampling, T×H.
    pub fwd: Var,
    /// Backward states before subsampling, T×H (row t = state after frame t).
    pub bwd: Var,
}

fn stride_rows(t: usize, stride: usize) -> Vec<usize> {
    (0..t).step_by(stride).collect()
}

pub fn bidir_on_tape<T: Real>(tape: &mut Tape<T>, x: Var, l: GruLayerVars, stride: usize) -> Result<BidirVars, NnError> {
    let fwd = tape.gru_scan(x, l.fwd.w, l.fwd.u, l.fwd.b, false)?;
    let bwd = tape.gru_scan(x, l.bwd.w, l.bwd.u, l.bwd.b, true)?;
    let cat = tape.concat_cols(fwd, bwd)?;
    let t = tape.value(cat).rows();
    let out = if stride > 1 {
        tape.select_rows(cat, &stride_rows(t, stride))?
    } else {
        cat
    };
    Ok(BidirVars { out, fwd, bwd })
}

/// Result of [`bidir_layer_forward`].
#[derive(Debug, Clone)]
pub struct BidirOutput<T: Real> {
    pub output: Tensor<T>,
    pub fwd_states: Tensor<T>,
    pub bwd_states: Tensor<T>,
}

pub fn bidir_layer_forward<T: Real>(
    seq: &Tensor<T>,
    params: &GruLayerParams<T>,
    stride: usize,
) -> Result<BidirOutput<T>, NnError> {
    if seq.is_empty() {
        return Err(NumError::Empty("bidir_layer_forward").into());
    }
    if stride == 0 {
        return Err(NnError::Config("stride must be ≥ 1".into()));
    }
    let f = gru_scan_forward(seq, &params.fwd.w, &params.fwd.u, &params.fwd.b, false)?.hs;
    let b = gru_scan_forward(seq, &params.bwd.w, &params.bwd.u, &params.bwd.b, true)?.hs;
    let (t, h) = f.dims2();
    let keep = stride_rows(t, stride);
    let mut data = Vec::with_capacity(keep.len() * 2 * h);
    for &i in &keep {
        data.extend_from_slice(f.row(i));
        data.extend_from_slice(b.row(i));
    }
    Ok(BidirOutput {
        output: Tensor::from_vec(&[keep.len(), 2 * h], data)?,
        fwd_states: f,
        bwd_states: b,
    })
}

/// Stacks bidirectional layers, each subsampled by `stride`.
pub fn encoder_forward<T: Real>(
    features: &Tensor<T>,
    layers: &[GruLayerParams<T>],
    stride: usize,
) -> Result<Tensor<T>, NnError> {
    if features.is_empty() {
        return Err(NumError::Empty("encoder_forward").into());
    }
    let mut x = features.clone();
    for l in layers {
        x = bidir_layer_forward(&x, l, stride)?.output;
    }
    Ok(x)
}

/// Column-wise maximum over time.
pub fn max_pool_time<T: Real>(enc: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if enc.is_empty() {
        return Err(NumError::Empty("max_pool_time").into());
    }
    let (t, d) = enc.dims2();
    let mut best = enc.row(0).to_vec();
    for i in 1..t {
        for (b, &v) in best.iter_mut().zip(enc.row(i)) {
            if v > *b {
                *b = v;
            }
        }
    }
    Ok(Tensor::from_vec(&[d], best)?)
}

pub fn last_step_readout<T: Real>(fwd_last: &Tensor<T>, bwd_first: &Tensor<T>) -> Tensor<T> {
    let mut v = fwd_last.data().to_vec();
    v.extend_from_slice(bwd_first.data());
    Tensor::vector(v)
}

/// Batch normalization of a B×D matrix. Train mode uses (and folds into the
/// running statistics) the batch mean and biased variance.
pub fn batch_norm<T: Real>(x: &Tensor<T>, params: &mut BatchNormParams<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(params.gamma.clone());
    let b = tape.constant(params.beta.clone());
    let eps = T::of(params.eps);
    let out = match mode {
        Mode::Train => {
            let (out, mean, var) = tape.batch_norm_train(xv, g, b, eps)?;
            params.update(&mean, &var);
            out
        }
        Mode::Infer => {
            if params.updates == 0 {
                return Err(NnError::NoRunningStats);
            }
            tape.batch_norm_infer(xv, g, b, &params.running_mean, &params.running_var, eps)?
        }
    };
    Ok(tape.value(out).clone())
}

/// Scalar parameters of one GRU direction: `3·(I·H + H·H + H)`.
pub fn gru_direction_params(input: usize, hidden: usize) -> usize {
    3 * (input * hidden + hidden * hidden + hidden)
}

/// Scalar parameters of the decoder: two affine layers plus optional γ, β.
pub fn decoder_params(input: usize, ff: usize, classes: usize, batch_norm: bool) -> usize {
    input * ff + ff + if batch_norm { 2 * ff } else { 0 } + ff * classes + classes
}

/// The end-to-end acoustic classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct SluModel<T: Real = f32> {
    pub cfg: ModelConfig,
    pub layers: Vec<GruLayerParams<T>>,
    /// D×ff
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub bn: Option<BatchNormParams<T>>,
    /// ff×K
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

impl<T: Real> SluModel<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, NnError> {
        cfg.encoder.validate()?;
        cfg.decoder.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = cfg.encoder;
        let layers = (0..e.n_layers)
            .map(|l| {
                let input = if l == 0 { e.input_dim } else { 2 * e.hidden };
                GruLayerParams::random(input, e.hidden, &mut rng)
            })
            .collect();
        let d = e.output_dim();
        let (ff, k) = (cfg.decoder.ff_hidden, cfg.decoder.n_classes);
        Ok(SluModel {
            cfg,
            layers,
            w1: xavier(&mut rng, d, ff),
            b1: Tensor::zeros(&[ff]),
            bn: cfg.decoder.batch_norm.then(|| BatchNormParams::new(ff)),
            w2: xavier(&mut rng, ff, k),
            b2: Tensor::zeros(&[k]),
        })
    }

    /// Every parameter tensor set to zero (β included, γ kept at one).
    pub fn zeroed(mut self) -> Self {
        for p in self.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        if let Some(bn) = &mut self.bn {
            bn.gamma = Tensor::full(&[bn.dim()], T::one());
        }
        self
    }

    pub fn cast<U: Real>(&self) -> SluModel<U> {
        let dir = |p: &GruDirParams<T>| GruDirParams {
            w: p.w.cast(),
            u: p.u.cast(),
            b: p.b.cast(),
        };
        SluModel {
            cfg: self.cfg,
            layers: self
                .layers
                .iter()
                .map(|l| GruLayerParams {
                    fwd: dir(&l.fwd),
                    bwd: dir(&l.bwd),
                })
                .collect(),
            w1: self.w1.cast(),
            b1: self.b1.cast(),
            bn: self.bn.as_ref().map(|bn| BatchNormParams {
                gamma: bn.gamma.cast(),
                beta: bn.beta.cast(),
                running_mean: bn.running_mean.iter().map(|v| U::of(v.as_f64())).collect(),
                running_var: bn.running_var.iter().map(|v| U::of(v.as_f64())).collect(),
                momentum: bn.momentum,
                eps: bn.eps,
                updates: bn.updates,
            }),
            w2: self.w2.cast(),
            b2: self.b2.cast(),
        }
    }

    /// Encoder output of one utterance on the tape, followed by the readout.
    fn encode_item(&self, tape: &mut Tape<T>, params: &[Var], x: Var) -> Result<Var, NnError> {
        let mut h = x;
        let mut last = None;
        for l in 0..self.layers.len() {
            let lv = GruLayerVars::from_slice(&params[6 * l..6 * l + 6]);
            let out = bidir_on_tape(tape, h, lv, self.cfg.encoder.stride)?;
            h = out.out;
            last = Some(out);
        }
        let last = last.expect("at least one layer");
        Ok(match self.cfg.readout {
            Readout::MaxPool => tape.max_pool_rows(h)?,
            Readout::LastStep => {
                let t = tape.value(last.fwd).rows();
                let f = tape.select_rows(last.fwd, &[t - 1])?;
                let b = tape.select_rows(last.bwd, &[0])?;
                tape.concat_cols(f, b)?
            }
        })
    }

    /// Decoder on a B×D matrix of pooled vectors.
    fn decode(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        pooled: Var,
        mode: Mode,
    ) -> Result<(Var, Option<(Vec<T>, Vec<T>)>), NnError> {
        let p = &params[6 * self.layers.len()..];
        let a = tape.matmul(pooled, p[0])?;
        let mut a = tape.add_bias(a, p[1])?;
        let mut stats = None;
        let mut rest = &p[2..];
        if let Some(bn) = &self.bn {
            let eps = T::of(bn.eps);
            a = match mode {
                Mode::Train => {
                    let (out, mean, var) = tape.batch_norm_train(a, rest[0], rest[1], eps)?;
                    stats = Some((mean, var));
                    out
                }
                Mode::Infer => {
                    if bn.updates == 0 {
                        return Err(NnError::NoRunningStats);
                    }
                    tape.batch_norm_infer(a, rest[0], rest[1], &bn.running_mean, &bn.running_var, eps)?
                }
            };
            rest = &rest[2..];
        }
        let t = tape.tanh(a)?;
        let o = tape.matmul(t, rest[0])?;
        Ok((tape.add_bias(o, rest[1])?, stats))
    }

    /// Posterior for pooled encoder vectors (D or B×D) in inference mode.
    pub fn decoder_forward(&self, pooled: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut tape = Tape::new();
        let params = bind_constants(&mut tape, self);
        let x = if pooled.ndim() == 1 {
            as_row(pooled)?
        } else {
            pooled.clone()
        };
        let x = tape.constant(x);
        let (logits, _) = self.decode(&mut tape, &params, x, Mode::Infer)?;
        let p = tape.softmax(logits)?;
        Ok(tape.value(p).clone())
    }

    /// Encoder output (T_e×2H) for one feature matrix.
    pub fn encode(&self, features: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        encoder_forward(features, &self.layers, self.cfg.encoder.stride)
    }

    /// Pooled encoder vector (length 2H) that feeds the decoder.
    pub fn readout(&self, features: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut tape = Tape::new();
        let params = bind_constants(&mut tape, self);
        let x = tape.constant(features.clone());
        let v = self.encode_item(&mut tape, &params, x)?;
        Ok(tape.value(v).clone().reshape(&[self.cfg.encoder.output_dim()])?)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

const KIND_AUDIO: f64 = 0.0;

impl<T: Real> Network<T> for SluModel<T> {
    type Input = Tensor<T>;

    fn n_classes(&self) -> usize {
        self.cfg.decoder.n_classes
    }

    fn target(&self) -> Target {
        self.cfg.target
    }

    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for (dir, p) in [("fwd", &l.fwd), ("bwd", &l.bwd)] {
                out.push((format!("enc.l{i}.{dir}.w"), &p.w));
                out.push((format!("enc.l{i}.{dir}.u"), &p.u));
                out.push((format!("enc.l{i}.{dir}.b"), &p.b));
            }
        }
        out.push(("dec.fc1.w".into(), &self.w1));
        out.push(("dec.fc1.b".into(), &self.b1));
        if let Some(bn) = &self.bn {
            out.push(("dec.bn.gamma".into(), &bn.gamma));
            out.push(("dec.bn.beta".into(), &bn.beta));
        }
        out.push(("dec.fc2.w".into(), &self.w2));
        out.push(("dec.fc2.b".into(), &self.b2));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            for p in [&mut l.fwd, &mut l.bwd] {
                out.push(&mut p.w);
                out.push(&mut p.u);
                out.push(&mut p.b);
            }
        }
        out.push(&mut self.w1);
        out.push(&mut self.b1);
        if let Some(bn) = &mut self.bn {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out.push(&mut self.w2);
        out.push(&mut self.b2);
        out
    }

    fn forward(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        inputs: &[&Tensor<T>],
        mode: Mode,
        input_grad: bool,
    ) -> Result<Forward<T>, NnError> {
        if inputs.is_empty() {
            return Err(NumError::Empty("forward").into());
        }
        let mut vars = Vec::with_capacity(inputs.len());
        let mut pooled = Vec::with_capacity(inputs.len());
        for x in inputs {
            if x.is_empty() {
                return Err(NumError::Empty("encoder input").into());
            }
            if x.cols() != self.cfg.encoder.input_dim {
                return Err(NumError::Dimension {
                    op: "encoder input",
                    left: x.shape().to_vec(),
                    right: vec![self.cfg.encoder.input_dim],
                }
                .into());
            }
            let v = if input_grad {
                tape.leaf((*x).clone())
            } else {
                tape.constant((*x).clone())
            };
            vars.push(v);
            pooled.push(self.encode_item(tape, params, v)?);
        }
        let h = tape.concat_rows(&pooled)?;
        let (logits, bn_stats) = self.decode(tape, params, h, mode)?;
        Ok(Forward {
            logits,
            inputs: vars,
            bn_stats,
        })
    }

    fn commit_batch_stats(&mut self, mean: &[T], var: &[T]) {
        if let Some(bn) = &mut self.bn {
            bn.update(mean, var);
        }
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        let e = self.cfg.encoder;
        let d = self.cfg.decoder;
        ck.insert_meta("meta.kind", &[KIND_AUDIO]);
        ck.insert_meta(
            "meta.encoder",
            &[e.n_layers as f64, e.hidden as f64, e.stride as f64, e.input_dim as f64],
        );
        ck.insert_meta(
            "meta.decoder",
            &[
                d.ff_hidden as f64,
                d.n_classes as f64,
                d.batch_norm as u8 as f64,
                (self.cfg.readout == Readout::LastStep) as u8 as f64,
                self.cfg.target.code(),
            ],
        );
        for (name, t) in self.named_params() {
            ck.insert(name, t);
        }
        if let Some(bn) = &self.bn {
            ck.insert("dec.bn.running_mean", &Tensor::vector(bn.running_mean.clone()));
            ck.insert("dec.bn.running_var", &Tensor::vector(bn.running_var.clone()));
            ck.insert_meta("meta.bn", &[bn.momentum, bn.eps, bn.updates as f64]);
        }
        ck
    }

    fn from_checkpoint(ck: &Checkpoint) -> Result<Self, NnError> {
        if ck.meta("meta.kind", 1)?[0] != KIND_AUDIO {
            return Err(NnError::Checkpoint("not an acoustic model checkpoint".into()));
        }
        let e = ck.meta("meta.encoder", 4)?;
        let d = ck.meta("meta.decoder", 5)?;
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                n_layers: e[0] as usize,
                hidden: e[1] as usize,
                stride: e[2] as usize,
                input_dim: e[3] as usize,
            },
            decoder: DecoderConfig {
                ff_hidden: d[0] as usize,
                n_classes: d[1] as usize,
                batch_norm: d[2] != 0.0,
            },
            readout: if d[3] != 0.0 { Readout::LastStep } else { Readout::MaxPool },
            target: Target::from_code(d[4])?,
        };
        let mut model = SluModel::<T>::new(cfg, 0)?;
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(model.params_mut()) {
            let t: Tensor<T> = ck.tensor(name)?;
            if t.shape() != slot.shape() {
                return Err(NnError::Checkpoint(format!(
                    "`{name}` has shape {:?}, config implies {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        if let Some(bn) = &mut model.bn {
            let m = ck.meta("meta.bn", 3)?;
            bn.momentum = m[0];
            bn.eps = m[1];
            bn.updates = m[2] as u64;
            bn.running_mean = ck.tensor::<T>("dec.bn.running_mean")?.into_data();
            bn.running_var = ck.tensor::<T>("dec.bn.running_var")?.into_data();
        }
        Ok(model)
    }
}
