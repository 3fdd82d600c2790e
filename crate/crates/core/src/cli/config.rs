//! INI run configuration.
//!
//! Grammar: one item per line. Blank lines and lines starting with `#` or
//! `;` are ignored. `[name]` opens a section; `key = value` sets a key of the
//! current section. Keys outside a section, unknown sections, unknown keys and
//! repeated keys are errors. Booleans are `true`/`false`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::{split_counts, SynthSpec};
use crate::dsp::DspConfig;
use crate::ndnum::Precision;
use crate::nn::{DecoderConfig, EncoderConfig, ModelConfig, Readout, Target};
use crate::textnlu::{CellType, TextModelConfig};
use crate::train::TrainConfig;

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSettings {
    /// Directory of RIR wavs; synthetic pool when unset.
    pub rir_dir: Option<PathBuf>,
    /// Directory of noise wavs; synthetic pool when unset.
    pub noise_dir: Option<PathBuf>,
    pub snr_min: f64,
    pub snr_max: f64,
    pub copies: usize,
    pub save_components: bool,
    pub synthetic_rirs: usize,
    pub synthetic_noises: usize,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        AugmentSettings {
            rir_dir: None,
            noise_dir: None,
            snr_min: 0.0,
            snr_max: 20.0,
            copies: 2,
            save_components: false,
            synthetic_rirs: 8,
            synthetic_noises: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSettings {
    pub spec: SynthSpec,
    pub n_per_intent: usize,
    pub fractions: [f64; 3],
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            spec: SynthSpec::default(),
            n_per_intent: 20,
            fractions: [0.6, 0.2, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextSettings {
    pub embedding_dim: usize,
    pub hidden: usize,
    pub n_layers: usize,
    pub cell: CellType,
    pub min_count: usize,
    /// Word error rate emulated on the evaluated transcripts.
    pub eval_wer: f64,
}

impl Default for TextSettings {
    fn default() -> Self {
        TextSettings {
            embedding_dim: 128,
            hidden: 256,
            n_layers: 2,
            cell: CellType::Gru,
            min_count: 1,
            eval_wer: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub seed: u64,
    pub dsp: DspConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    /// Explicit class count; derived from the synth inventory when unset.
    pub n_classes: Option<usize>,
    pub readout: Readout,
    pub target: Target,
    pub train: TrainConfig,
    pub augment: AugmentSettings,
    pub synth: SynthSettings,
    pub text: TextSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            threads: 0,
            seed: 1,
            dsp: DspConfig::default(),
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            n_classes: None,
            readout: Readout::MaxPool,
            target: Target::Domain,
            train: TrainConfig::default(),
            augment: AugmentSettings::default(),
            synth: SynthSettings::default(),
            text: TextSettings::default(),
        }
    }
}

fn parse<T: FromStr>(v: &str, what: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("invalid value `{v}` for {what}"))
}

fn parse_with<T, E: std::fmt::Display>(v: &str, f: impl Fn(&str) -> Result<T, E>) -> Result<T, String> {
    f(v).map_err(|e| e.to_string())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |m: String| ConfigError(format!("line {}: {m}", i + 1));
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| err(format!("malformed section header `{line}`")))?;
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let sec = section.as_deref().ok_or_else(|| err(format!("key `{k}` outside any section")))?;
            if !seen.insert(format!("{sec}.{k}")) {
                return Err(err(format!("duplicate key `{k}` in [{sec}]")));
            }
            cfg.set(sec, k, v).map_err(err)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, sec: &str, k: &str, v: &str) -> Result<(), String> {
        let what = format!("[{sec}] {k}");
        let w = what.as_str();
        match (sec, k) {
            ("run", "threads") => self.threads = parse(v, w)?,
            ("run", "seed") => self.seed = parse(v, w)?,

            ("dsp", "sample_rate") => self.dsp.sample_rate = parse(v, w)?,
            ("dsp", "frame_length") => self.dsp.frame_length = parse(v, w)?,
            ("dsp", "frame_hop") => self.dsp.frame_hop = parse(v, w)?,
            ("dsp", "fft_size") => self.dsp.fft_size = parse(v, w)?,
            ("dsp", "n_mels") => self.dsp.n_mels = parse(v, w)?,
            ("dsp", "fmin") => self.dsp.fmin = parse(v, w)?,
            ("dsp", "fmax") => self.dsp.fmax = if v == "nyquist" { None } else { Some(parse(v, w)?) },
            ("dsp", "log_floor") => self.dsp.log_floor = parse(v, w)?,

            ("encoder", "n_layers") => self.encoder.n_layers = parse(v, w)?,
            ("encoder", "hidden") => self.encoder.hidden = parse(v, w)?,
            ("encoder", "stride") => self.encoder.stride = parse(v, w)?,

            ("decoder", "ff_hidden") => self.decoder.ff_hidden = parse(v, w)?,
            ("decoder", "batch_norm") => self.decoder.batch_norm = parse(v, w)?,
            ("decoder", "n_classes") => self.n_classes = Some(parse(v, w)?),
            ("decoder", "readout") => self.readout = parse_with(v, Readout::from_str)?,
            ("decoder", "target") => self.target = parse_with(v, Target::from_str)?,

            ("train", "batch_size") => self.train.batch_size = parse(v, w)?,
            ("train", "max_epochs") => self.train.max_epochs = parse(v, w)?,
            ("train", "patience") => self.train.patience = parse(v, w)?,
            ("train", "precision") => self.train.precision = parse_with(v, Precision::from_str)?,
            ("train", "bucketing") => self.train.bucketing = parse(v, w)?,
            ("train", "lr") => self.train.adam.lr = parse(v, w)?,
            ("train", "beta1") => self.train.adam.beta1 = parse(v, w)?,
            ("train", "beta2") => self.train.adam.beta2 = parse(v, w)?,
            ("train", "eps") => self.train.adam.eps = parse(v, w)?,
            ("train", "grad_clip") => self.train.grad_clip = if v == "none" { None } else { Some(parse(v, w)?) },

            ("augment", "rir_dir") => self.augment.rir_dir = Some(PathBuf::from(v)),
            ("augment", "noise_dir") => self.augment.noise_dir = Some(PathBuf::from(v)),
            ("augment", "snr_min") => self.augment.snr_min = parse(v, w)?,
            ("augment", "snr_max") => self.augment.snr_max = parse(v, w)?,
            ("augment", "copies") => self.augment.copies = parse(v, w)?,
            ("augment", "save_components") => self.augment.save_components = parse(v, w)?,
            ("augment", "synthetic_rirs") => self.augment.synthetic_rirs = parse(v, w)?,
            ("augment", "synthetic_noises") => self.augment.synthetic_noises = parse(v, w)?,

            ("synth", "n_domains") => self.synth.spec.n_domains = parse(v, w)?,
            ("synth", "intents_per_domain") => self.synth.spec.intents_per_domain = parse(v, w)?,
            ("synth", "filler_words") => self.synth.spec.filler_words = parse(v, w)?,
            ("synth", "filler_prob") => self.synth.spec.filler_prob = parse(v, w)?,
            ("synth", "sample_rate") => self.synth.spec.sample_rate = parse(v, w)?,
            ("synth", "min_duration") => self.synth.spec.min_duration = parse(v, w)?,
            ("synth", "max_duration") => self.synth.spec.max_duration = parse(v, w)?,
            ("synth", "gain_jitter_db") => self.synth.spec.gain_jitter_db = parse(v, w)?,
            ("synth", "pitch_jitter") => self.synth.spec.pitch_jitter = parse(v, w)?,
            ("synth", "dither") => self.synth.spec.dither = parse(v, w)?,
            ("synth", "n_per_intent") => self.synth.n_per_intent = parse(v, w)?,
            ("synth", "train_fraction") => self.synth.fractions[0] = parse(v, w)?,
            ("synth", "valid_fraction") => self.synth.fractions[1] = parse(v, w)?,
            ("synth", "eval_fraction") => self.synth.fractions[2] = parse(v, w)?,

            ("text", "embedding_dim") => self.text.embedding_dim = parse(v, w)?,
            ("text", "hidden") => self.text.hidden = parse(v, w)?,
            ("text", "n_layers") => self.text.n_layers = parse(v, w)?,
            ("text", "cell") => self.text.cell = parse_with(v, CellType::from_str)?,
            ("text", "min_count") => self.text.min_count = parse(v, w)?,
            ("text", "eval_wer") => self.text.eval_wer = parse(v, w)?,

            _ => return Err(format!("unknown key `{k}` in [{sec}]")),
        }
        Ok(())
    }

    /// Class count for the configured target.
    pub fn n_classes(&self) -> usize {
        self.n_classes.unwrap_or(match self.target {
            Target::Domain => self.synth.spec.n_domains,
            Target::Intent => self.synth.spec.n_intents(),
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                input_dim: self.dsp.n_mels,
                ..self.encoder
            },
            decoder: DecoderConfig {
                n_classes: self.n_classes(),
                ..self.decoder
            },
            readout: self.readout,
            target: self.target,
        }
    }

    pub fn text_config(&self, vocab_size: usize) -> TextModelConfig {
        TextModelConfig {
            vocab_size,
            embedding_dim: self.text.embedding_dim,
            hidden: self.text.hidden,
            n_layers: self.text.n_layers,
            n_classes: self.n_classes(),
            cell: self.text.cell,
            target: self.target,
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            seed: self.seed,
            ..self.synth.spec.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Checks every section against its owning module's rules.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = |sec: &str, m: String| ConfigError(format!("[{sec}] {m}"));
        self.dsp.validate().map_err(|x| e("dsp", x.to_string()))?;
        let mc = self.model_config();
        mc.encoder.validate().map_err(|x| e("encoder", x.to_string()))?;
        mc.decoder.validate().map_err(|x| e("decoder", x.to_string()))?;
        self.train
            .validate(self.decoder.batch_norm)
            .map_err(|x| e("train", x.to_string()))?;
        let a = &self.augment;
        if !(a.snr_min.is_finite() && a.snr_max.is_finite() && a.snr_min <= a.snr_max) {
            return Err(e("augment", format!("snr range [{}, {}] is empty", a.snr_min, a.snr_max)));
        }
        if a.copies == 0 {
            return Err(e("augment", "copies must be ≥ 1".into()));
        }
        if (a.rir_dir.is_none() && a.synthetic_rirs == 0) || (a.noise_dir.is_none() && a.synthetic_noises == 0) {
            return Err(e("augment", "synthetic pools need at least one file each".into()));
        }
        self.synth.spec.validate().map_err(|x| e("synth", x.to_string()))?;
        if self.synth.n_per_intent == 0 {
            return Err(e("synth", "n_per_intent must be ≥ 1".into()));
        }
        split_counts(self.synth.n_per_intent, self.synth.fractions).map_err(|x| e("synth", x.to_string()))?;
        if self.synth.spec.sample_rate != self.dsp.sample_rate {
            return Err(e(
                "synth",
                format!(
                    "sample_rate {} differs from [dsp] sample_rate {}",
                    self.synth.spec.sample_rate, self.dsp.sample_rate
                ),
            ));
        }
        self.text_config(3).validate().map_err(|x| e("text", x.to_string()))?;
        if !(0.0..=1.0).contains(&self.text.eval_wer) {
            return Err(e("text", format!("eval_wer {} outside [0, 1]", self.text.eval_wer)));
        }
        Ok(())
    }

    /// Renders every key; parsing the result gives back an equal config.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let b = |x: bool| if x { "true" } else { "false" };
        let d = &self.dsp;
        let t = &self.train;
        let a = &self.augment;
        let y = &self.synth;
        let x = &self.text;
        let _ = writeln!(s, "[run]\nthreads = {}\nseed = {}\n", self.threads, self.seed);
        let _ = writeln!(
            s,
            "[dsp]\nsample_rate = {}\nframe_length = {}\nframe_hop = {}\nfft_size = {}\nn_mels = {}\nfmin = {}\nfmax = {}\nlog_floor = {:e}\n",
            d.sample_rate,
            d.frame_length,
            d.frame_hop,
            d.fft_size,
            d.n_mels,
            d.fmin,
            d.fmax.map_or("nyquist".to_string(), |f| f.to_string()),
            d.log_floor
        );
        let _ = writeln!(
            s,
            "[encoder]\nn_layers = {}\nhidden = {}\nstride = {}\n",
            self.encoder.n_layers, self.encoder.hidden, self.encoder.stride
        );
        let _ = write!(
            s,
            "[decoder]\nff_hidden = {}\nbatch_norm = {}\nreadout = {}\ntarget = {}\n",
            self.decoder.ff_hidden,
            b(self.decoder.batch_norm),
            self.readout,
            self.target
        );
        if let Some(k) = self.n_classes {
            let _ = writeln!(s, "n_classes = {k}");
        }
        let _ = writeln!(
            s,
            "\n[train]\nbatch_size = {}\nmax_epochs = {}\npatience = {}\nprecision = {}\nbucketing = {}\nlr = {}\nbeta1 = {}\nbeta2 = {}\neps = {:e}\ngrad_clip = {}\n",
            t.batch_size,
            t.max_epochs,
            t.patience,
            match t.precision {
                Precision::F32 => "f32",
                Precision::F64 => "f64",
            },
            b(t.bucketing),
            t.adam.lr,
            t.adam.beta1,
            t.adam.beta2,
            t.adam.eps,
            t.grad_clip.map_or("none".to_string(), |g| g.to_string())
        );
        let _ = writeln!(s, "[augment]");
        if let Some(p) = &a.rir_dir {
            let _ = writeln!(s, "rir_dir = {}", p.display());
        }
        if let Some(p) = &a.noise_dir {
            let _ = writeln!(s, "noise_dir = {}", p.display());
        }
        let _ = writeln!(
            s,
            "snr_min = {}\nsnr_max = {}\ncopies = {}\nsave_components = {}\nsynthetic_rirs = {}\nsynthetic_noises = {}\n",
            a.snr_min,
            a.snr_max,
            a.copies,
            b(a.save_components),
            a.synthetic_rirs,
            a.synthetic_noises
        );
        let p = &y.spec;
        let _ = writeln!(
            s,
            "[synth]\nn_domains = {}\nintents_per_domain = {}\nfiller_words = {}\nfiller_prob = {}\nsample_rate = {}\nmin_duration = {}\nmax_duration = {}\ngain_jitter_db = {}\npitch_jitter = {}\ndither = {}\nn_per_intent = {}\ntrain_fraction = {}\nvalid_fraction = {}\neval_fraction = {}\n",
            p.n_domains,
            p.intents_per_domain,
            p.filler_words,
            p.filler_prob,
            p.sample_rate,
            p.min_duration,
            p.max_duration,
            p.gain_jitter_db,
            p.pitch_jitter,
            p.dither,
            y.n_per_intent,
            y.fractions[0],
            y.fractions[1],
            y.fractions[2]
        );
        let _ = writeln!(
            s,
            "[text]\nembedding_dim = {}\nhidden = {}\nn_layers = {}\ncell = {}\nmin_count = {}\neval_wer = {}",
            x.embedding_dim,
            x.hidden,
            x.n_layers,
            match x.cell {
                CellType::Gru => "gru",
                CellType::Lstm => "lstm",
            },
            x.min_count,
            x.eval_wer
        );
        s
    }
}

const SECTIONS: [&str; 8] = ["run", "dsp", "encoder", "decoder", "train", "augment", "synth", "text"];
