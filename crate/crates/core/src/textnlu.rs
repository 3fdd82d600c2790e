//! Text-input intent/domain classifier and a word-error emulator.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::Manifest;
use crate::ndnum::{NumError, Real, Tape, Tensor, Var};
use crate::nn::{
    bidir_on_tape, uniform, xavier, Checkpoint, Forward, GruLayerParams, GruLayerVars, Mode, Network, NnError, Target,
};
use crate::train::{label_of, Dataset};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("empty corpus: no tokens to build a vocabulary from")]
    EmptyCorpus,
    #[error("empty token sequence")]
    EmptyInput,
    #[error("invalid word error rate {0} (must lie in [0, 1])")]
    InvalidRate(f64),
    #[error("cell type `{0}` is reserved and not implemented")]
    UnsupportedCell(String),
    #[error("vocab file line {line}: {detail}")]
    VocabFormat { line: usize, detail: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io(path: &Path, source: std::io::Error) -> TextError {
    TextError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Token inventory; index 0 is padding, 1 is unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i + 2)).collect();
        Vocab { tokens, index }
    }

    /// Counts tokens over `texts`, keeps those seen at least `min_count`
    /// times, ordered by count (descending) then token.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Result<Self, TextError> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in texts {
            for tok in tokenize(t) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(TextError::EmptyCorpus);
        }
        let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_tokens(kept.into_iter().map(|(t, _)| t).collect()))
    }

    /// Size including the two reserved indices.
    pub fn len(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Included tokens in index order (index = position + 2).
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.get(t).unwrap_or(UNK)).collect()
    }

    /// One token per line; line `n` (from 0) holds index `n + 2`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            writeln!(s, "{t}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TextError> {
        let mut tokens = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.chars().any(char::is_whitespace) {
                return Err(TextError::VocabFormat {
                    line: i + 1,
                    detail: "expected exactly one token".into(),
                });
            }
            if !seen.insert(line) {
                return Err(TextError::VocabFormat {
                    line: i + 1,
                    detail: format!("duplicate token `{line}`"),
                });
            }
            tokens.push(line.to_string());
        }
        Ok(Self::from_tokens(tokens))
    }

    pub fn save(&self, path: &Path) -> Result<(), TextError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        }
        fs::write(path, self.to_text()).map_err(|e| io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        Self::from_text(&fs::read_to_string(path).map_err(|e| io(path, e))?)
    }
}

pub fn build_vocab(manifest: &Manifest, min_count: usize) -> Result<Vocab, TextError> {
    Vocab::build(manifest.records.iter().map(|r| r.transcript.as_str()), min_count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellType {
    Gru,
    /// Reserved.
    Lstm,
}

impl FromStr for CellType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gru" => Ok(CellType::Gru),
            "lstm" => Ok(CellType::Lstm),
            o => Err(format!("unknown cell type `{o}` (expected gru or lstm)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextModelConfig {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub hidden: usize,
    pub n_layers: usize,
    pub n_classes: usize,
    pub cell: CellType,
    pub target: Target,
}

impl TextModelConfig {
    pub fn new(vocab_size: usize, n_classes: usize, target: Target) -> Self {
        TextModelConfig {
            vocab_size,
            embedding_dim: 128,
            hidden: 256,
            n_layers: 2,
            n_classes,
            cell: CellType::Gru,
            target,
        }
    }

    pub fn validate(&self) -> Result<(), TextError> {
        if self.cell == CellType::Lstm {
            return Err(TextError::UnsupportedCell("lstm".into()));
        }
        if self.vocab_size < 3 || self.embedding_dim == 0 || self.hidden == 0 || self.n_layers == 0 {
            return Err(NnError::Config(format!("text model dimensions must be positive: {self:?}")).into());
        }
        if self.n_classes < 2 {
            return Err(NnError::Config(format!("n_classes {} < 2", self.n_classes)).into());
        }
        Ok(())
    }
}

/// Embedding, stacked bidirectional GRU, last-step readout and one
/// fully-connected softmax layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TextModel<T: Real = f32> {
    pub cfg: TextModelConfig,
    /// |V|×E
    pub embedding: Tensor<T>,
    pub layers: Vec<GruLayerParams<T>>,
    /// 2H×K
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> TextModel<T> {
    pub fn new(cfg: TextModelConfig, seed: u64) -> Result<Self, TextError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = uniform(&mut rng, &[cfg.vocab_size, cfg.embedding_dim], 0.1);
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let input = if l == 0 { cfg.embedding_dim } else { 2 * cfg.hidden };
                GruLayerParams::random(input, cfg.hidden, &mut rng)
            })
            .collect();
        Ok(TextModel {
            cfg,
            embedding,
            layers,
            w: xavier(&mut rng, 2 * cfg.hidden, cfg.n_classes),
            b: Tensor::zeros(&[cfg.n_classes]),
        })
    }

    pub fn zeroed(mut self) -> Self {
        for p in self.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        self
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Scalar parameters of the text model.
pub fn count_params_text(cfg: &TextModelConfig) -> usize {
    let (e, h) = (cfg.embedding_dim, cfg.hidden);
    let rec: usize = (0..cfg.n_layers)
        .map(|l| 2 * crate::nn::gru_direction_params(if l == 0 { e } else { 2 * h }, h))
        .sum();
    cfg.vocab_size * e + rec + 2 * h * cfg.n_classes + cfg.n_classes
}

const KIND_TEXT: f64 = 1.0;

impl<T: Real> Network<T> for TextModel<T> {
    type Input = Vec<usize>;

    fn n_classes(&self) -> usize {
        self.cfg.n_classes
    }

    fn target(&self) -> Target {
        self.cfg.target
    }

    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("emb".to_string(), &self.embedding)];
        for (i, l) in self.layers.iter().enumerate() {
            for (dir, p) in [("fwd", &l.fwd), ("bwd", &l.bwd)] {
                out.push((format!("enc.l{i}.{dir}.w"), &p.w));
                out.push((format!("enc.l{i}.{dir}.u"), &p.u));
                out.push((format!("enc.l{i}.{dir}.b"), &p.b));
            }
        }
        out.push(("cls.w".into(), &self.w));
        out.push(("cls.b".into(), &self.b));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.embedding];
        for l in &mut self.layers {
            for p in [&mut l.fwd, &mut l.bwd] {
                out.push(&mut p.w);
                out.push(&mut p.u);
                out.push(&mut p.b);
            }
        }
        out.push(&mut self.w);
        out.push(&mut self.b);
        out
    }

    fn forward(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        inputs: &[&Vec<usize>],
        _mode: Mode,
        _input_grad: bool,
    ) -> Result<Forward<T>, NnError> {
        if inputs.is_empty() {
            return Err(NumError::Empty("forward").into());
        }
        let emb = params[0];
        let mut pooled = Vec::with_capacity(inputs.len());
        let mut vars = Vec::with_capacity(inputs.len());
        for ids in inputs {
            if ids.is_empty() {
                return Err(NumError::Empty("token sequence").into());
            }
            let x = tape.select_rows(emb, ids)?;
            vars.push(x);
            let mut h = x;
            let mut last = None;
            for l in 0..self.layers.len() {
                let lv = GruLayerVars::from_slice(&params[1 + 6 * l..7 + 6 * l]);
                let out = bidir_on_tape(tape, h, lv, 1)?;
                h = out.out;
                last = Some(out);
            }
            let last = last.expect("at least one layer");
            let t = ids.len();
            let f = tape.select_rows(last.fwd, &[t - 1])?;
            let b = tape.select_rows(last.bwd, &[0])?;
            pooled.push(tape.concat_cols(f, b)?);
        }
        let n = params.len();
        let h = tape.concat_rows(&pooled)?;
        let o = tape.matmul(h, params[n - 2])?;
        let logits = tape.add_bias(o, params[n - 1])?;
        Ok(Forward {
            logits,
            inputs: vars,
            bn_stats: None,
        })
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let c = self.cfg;
        let mut ck = Checkpoint::new();
        ck.insert_meta("meta.kind", &[KIND_TEXT]);
        ck.insert_meta(
            "meta.text",
            &[
                c.vocab_size as f64,
                c.embedding_dim as f64,
                c.hidden as f64,
                c.n_layers as f64,
                c.n_classes as f64,
                match c.target {
                    Target::Domain => 0.0,
                    Target::Intent => 1.0,
                },
            ],
        );
        for (name, t) in self.named_params() {
            ck.insert(name, t);
        }
        ck
    }

    fn from_checkpoint(ck: &Checkpoint) -> Result<Self, NnError> {
        if ck.meta("meta.kind", 1)?[0] != KIND_TEXT {
            return Err(NnError::Checkpoint("not a text model checkpoint".into()));
        }
        let m = ck.meta("meta.text", 6)?;
        let cfg = TextModelConfig {
            vocab_size: m[0] as usize,
            embedding_dim: m[1] as usize,
            hidden: m[2] as usize,
            n_layers: m[3] as usize,
            n_classes: m[4] as usize,
            cell: CellType::Gru,
            target: if m[5] == 0.0 { Target::Domain } else { Target::Intent },
        };
        let mut model = TextModel::<T>::new(cfg, 0).map_err(|e| NnError::Checkpoint(e.to_string()))?;
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
        Ok(model)
    }
}

/// Posterior over classes for a token sequence.
pub fn text_classify<T: Real>(tokens: &[String], vocab: &Vocab, model: &TextModel<T>) -> Result<Tensor<T>, TextError> {
    if tokens.is_empty() {
        return Err(TextError::EmptyInput);
    }
    let ids = vocab.encode(tokens);
    let p = model.posteriors(&[&ids])?;
    Ok(p.reshape(&[model.cfg.n_classes]).map_err(NnError::from)?)
}

/// Relative weights of substitutions, deletions and insertions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMix {
    pub sub: f64,
    pub del: f64,
    pub ins: f64,
}

impl Default for ErrorMix {
    fn default() -> Self {
        ErrorMix {
            sub: 6.0,
            del: 2.0,
            ins: 2.0,
        }
    }
}

/// Emulates recognition errors at a target word error rate. Each token is
/// substituted, deleted or followed by an inserted token with probabilities
/// in the ratio of `mix`, summing to `target_wer`.
pub fn corrupt_words(
    tokens: &[String],
    target_wer: f64,
    vocab: &[String],
    mix: ErrorMix,
    seed: u64,
) -> Result<Vec<String>, TextError> {
    if !(0.0..=1.0).contains(&target_wer) {
        return Err(TextError::InvalidRate(target_wer));
    }
    let total = mix.sub + mix.del + mix.ins;
    if !(total > 0.0) || mix.sub < 0.0 || mix.del < 0.0 || mix.ins < 0.0 {
        return Err(TextError::InvalidRate(target_wer));
    }
    if target_wer == 0.0 {
        return Ok(tokens.to_vec());
    }
    let p_sub = target_wer * mix.sub / total;
    let p_del = target_wer * mix.del / total;
    let p_ins = target_wer * mix.ins / total;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_word = |rng: &mut ChaCha8Rng, avoid: Option<&str>| -> String {
        if vocab.is_empty() {
            return "<unk>".to_string();
        }
        loop {
            let w = &vocab[rng.gen_range(0..vocab.len())];
            if Some(w.as_str()) != avoid || vocab.len() == 1 {
                return w.clone();
            }
        }
    };
    let mut out = Vec::with_capacity(tokens.len());
    for tok in tokens {
        let u: f64 = rng.gen();
        if u < p_sub {
            out.push(random_word(&mut rng, Some(tok)));
        } else if u < p_sub + p_del {
        } else if u < p_sub + p_del + p_ins {
            out.push(tok.clone());
            out.push(random_word(&mut rng, None));
        } else {
            out.push(tok.clone());
        }
    }
    Ok(out)
}

/// Token-id dataset from manifest transcripts, optionally corrupted per
/// record at `wer` (seeded by record id).
pub fn text_dataset(
    manifest: &Manifest,
    vocab: &Vocab,
    target: Target,
    corruption: Option<(f64, u64)>,
) -> Result<Dataset<Vec<usize>>, TextError> {
    let mut ds = Dataset {
        ids: Vec::new(),
        inputs: Vec::new(),
        labels: Vec::new(),
        durations: Vec::new(),
        lengths: Vec::new(),
    };
    for rec in &manifest.records {
        let mut toks = tokenize(&rec.transcript);
        if let Some((wer, seed)) = corruption {
            toks = corrupt_words(
                &toks,
                wer,
                vocab.tokens(),
                ErrorMix::default(),
                crate::seed::derive_seed(seed, &rec.id),
            )?;
        }
        if toks.is_empty() {
            toks.push("<unk>".into());
        }
        let ids = vocab.encode(&toks);
        ds.ids.push(rec.id.clone());
        ds.lengths.push(ids.len());
        ds.inputs.push(ids);
        ds.labels.push(label_of(rec, target));
        ds.durations.push(0.0);
    }
    Ok(ds)
}
