//! Command-line driver: one subcommand per pipeline stage.

mod config;

pub use config::{AugmentSettings, ConfigError, RunConfig, SynthSettings, TextSettings};

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::augment::{augment_corpus, write_synthetic_pools, AugmentError, AugmentSpec};
use crate::corpus::{build_synthetic_corpus, CorpusError, Manifest, Split};
use crate::dsp::read_features;
use crate::ndnum::{Precision, Real};
use crate::nn::{decoder_params, gru_direction_params, Checkpoint, Network, NnError, SluModel, Target};
use crate::saliency::{make_saliency, render_saliency, SaliencyTarget};
use crate::seed::derive_seed;
use crate::textnlu::{build_vocab, text_dataset, TextError, TextModel, Vocab};
use crate::train::{
    evaluate, feature_path, featurize_manifest, load_feature_dataset, train_model, Dataset, EvalReport, TrainError,
    BEST_CHECKPOINT,
};

pub const MANIFEST: &str = "manifest.jsonl";
pub const VOCAB: &str = "vocab.txt";
pub const CONFIG_ECHO: &str = "config.ini";

#[derive(Parser, Debug)]
#[command(name = "slu", about = "Spoken language understanding pipeline", disable_version_flag = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// INI run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModelKind {
    Audio,
    Text,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic tone-word corpus.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract and cache log-mel features for a corpus.
    Featurize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a reverberated, noise-corrupted copy of a corpus.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier on the train split, selecting on the valid split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        /// Feature cache (audio models).
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "audio")]
        model: ModelKind,
    },
    /// Score a trained model on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long, default_value = "eval")]
        split: String,
        /// Directory for report.txt, confusion.csv and utterances.csv.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Render the input-gradient saliency of one utterance.
    Saliency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        id: String,
        /// Class index or `predicted`.
        #[arg(long, default_value = "predicted")]
        target: String,
        /// Output path prefix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print parameter counts and the effective configuration.
    Info {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth { common, .. }
            | Command::Featurize { common, .. }
            | Command::Augment { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Saliency { common, .. }
            | Command::Info { common, .. } => common,
        }
    }
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Mismatch(String),
    Exists(PathBuf),
    Runtime(&'static str, String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(..) => 1,
            _ => 3,
        }
    }

    fn line(&self) -> String {
        match self {
            CliError::Config(d) => format!("error: config: {d}"),
            CliError::Mismatch(d) => format!("error: mismatch: {d}"),
            CliError::Exists(p) => format!("error: exists: {} (use --force to overwrite)", p.display()),
            CliError::Runtime(c, d) => format!("error: {c}: {}", d.replace('\n', " ")),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::ClassMismatch { .. } => CliError::Mismatch(e.to_string()),
            TrainError::Config(d) => CliError::Config(d),
            TrainError::Nn(n) => n.into(),
            TrainError::Corpus(c) => c.into(),
            TrainError::Io { .. } => CliError::Runtime("io", e.to_string()),
            TrainError::Features { .. } | TrainError::Empty(_) => CliError::Runtime("data", e.to_string()),
            other => CliError::Runtime("train", other.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Config(d) => CliError::Config(d),
            NnError::Io { .. } => CliError::Runtime("io", e.to_string()),
            other => CliError::Runtime("model", other.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Config(d) => CliError::Config(d),
            CorpusError::Io { .. } => CliError::Runtime("io", e.to_string()),
            other => CliError::Runtime("data", other.to_string()),
        }
    }
}

impl From<AugmentError> for CliError {
    fn from(e: AugmentError) -> Self {
        match e {
            AugmentError::Spec(d) => CliError::Config(d),
            AugmentError::Corpus(c) => c.into(),
            other => CliError::Runtime("augment", other.to_string()),
        }
    }
}

impl From<TextError> for CliError {
    fn from(e: TextError) -> Self {
        match e {
            TextError::UnsupportedCell(_) | TextError::InvalidRate(_) => CliError::Config(e.to_string()),
            TextError::Nn(n) => n.into(),
            TextError::Io { .. } => CliError::Runtime("io", e.to_string()),
            other => CliError::Runtime("data", other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime("io", format!("{}: {e}", path.display()))
}

/// Parses `argv` (without the program name), runs the subcommand and returns
/// the process exit code.
pub fn run<S: AsRef<str>>(argv: &[S]) -> i32 {
    let args = std::iter::once("slu").chain(argv.iter().map(AsRef::as_ref));
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    print!("{}", e.render());
                    if e.kind() == ErrorKind::DisplayHelp {
                        0
                    } else {
                        2
                    }
                }
                _ => {
                    eprint!("{}", e.render());
                    2
                }
            };
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            RunConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn thread_count(cfg: &RunConfig) -> Result<usize, CliError> {
    match std::env::var("SLU_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("SLU_THREADS=`{v}` is not a thread count"))),
        Err(_) => Ok(cfg.threads),
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    let cfg = load_config(cmd.common().config.as_deref())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(&cfg)?)
        .build()
        .map_err(|e| CliError::Runtime("runtime", e.to_string()))?;
    pool.install(|| execute(cmd, &cfg))
}

fn refuse_existing(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::Exists(path.to_path_buf()));
    }
    Ok(())
}

fn read_manifest(corpus: &Path) -> Result<Manifest, CliError> {
    Ok(Manifest::read(&corpus.join(MANIFEST))?)
}

fn parse_split(s: &str) -> Result<Split, CliError> {
    match s {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "eval" => Ok(Split::Eval),
        o => Err(CliError::Config(format!("unknown split `{o}` (expected train, valid or eval)"))),
    }
}

fn execute(cmd: Command, cfg: &RunConfig) -> Result<(), CliError> {
    match cmd {
        Command::Synth { common, out } => {
            refuse_existing(&out.join(MANIFEST), common.force)?;
            let m = build_synthetic_corpus(&cfg.synth_spec(), cfg.synth.n_per_intent, cfg.synth.fractions, &out)?;
            println!("records={}", m.len());
            Ok(())
        }
        Command::Featurize { common, corpus, out } => {
            let manifest = read_manifest(&corpus)?;
            if let Some(first) = manifest.records.first() {
                refuse_existing(&feature_path(&out, &first.id), common.force)?;
            }
            let failures = featurize_manifest(&manifest, &corpus, &out, &cfg.dsp)?;
            report_failures("data", manifest.len(), &failures)?;
            println!("featurized={}", manifest.len());
            Ok(())
        }
        Command::Augment { common, corpus, out } => {
            refuse_existing(&out.join(MANIFEST), common.force)?;
            let manifest = read_manifest(&corpus)?;
            let spec = augment_spec(cfg, &out)?;
            let (m, report) = augment_corpus(&manifest, &corpus, &spec, &out)?;
            report_failures("augment", manifest.len() * spec.copies, &report.failures)?;
            println!("records={}", m.len());
            Ok(())
        }
        Command::Train {
            common,
            corpus,
            features,
            out,
            model,
        } => {
            refuse_existing(&out.join(BEST_CHECKPOINT), common.force)?;
            let manifest = read_manifest(&corpus)?;
            let train = manifest.split(Split::Train);
            let valid = manifest.split(Split::Valid);
            fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
            let echo = out.join(CONFIG_ECHO);
            fs::write(&echo, cfg.to_ini()).map_err(|e| io_err(&echo, e))?;
            let (epoch, acc) = match model {
                ModelKind::Audio => {
                    let features = features
                        .ok_or_else(|| CliError::Config("audio training needs --features".into()))?;
                    match cfg.train.precision {
                        Precision::F32 => train_audio::<f32>(cfg, &train, &valid, &features, &out)?,
                        Precision::F64 => train_audio::<f64>(cfg, &train, &valid, &features, &out)?,
                    }
                }
                ModelKind::Text => {
                    let vocab = build_vocab(&train, cfg.text.min_count)?;
                    vocab.save(&out.join(VOCAB))?;
                    match cfg.train.precision {
                        Precision::F32 => train_text::<f32>(cfg, &vocab, &train, &valid, &out)?,
                        Precision::F64 => train_text::<f64>(cfg, &vocab, &train, &valid, &out)?,
                    }
                }
            };
            println!("best_epoch={epoch} best_valid_accuracy={acc:.3}");
            Ok(())
        }
        Command::Eval {
            common,
            corpus,
            features,
            model_dir,
            split,
            report,
        } => {
            if let Some(dir) = &report {
                refuse_existing(&dir.join("report.txt"), common.force)?;
            }
            let split = parse_split(&split)?;
            let manifest = read_manifest(&corpus)?.split(split);
            let r = eval_model(cfg, &manifest, features.as_deref(), &model_dir)?;
            println!("accuracy={:.3} rtf={:.6}", r.accuracy, r.rtf);
            if let Some(dir) = report {
                fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
                for (name, body) in [
                    ("report.txt", r.to_kv()),
                    ("confusion.csv", r.confusion_csv()),
                    ("utterances.csv", r.utterances_csv()),
                ] {
                    let p = dir.join(name);
                    fs::write(&p, body).map_err(|e| io_err(&p, e))?;
                }
            }
            Ok(())
        }
        Command::Saliency {
            common,
            features,
            model_dir,
            id,
            target,
            out,
        } => {
            let mut pgm = out.as_os_str().to_owned();
            pgm.push(".saliency.pgm");
            refuse_existing(Path::new(&pgm), common.force)?;
            let target: SaliencyTarget = target.parse().map_err(CliError::Config)?;
            let model = SluModel::<f64>::from_checkpoint(&load_checkpoint(&model_dir, 0.0)?)?;
            check_classes(cfg, model.n_classes(), model.target())?;
            let feats = read_features(&feature_path(&features, &id))
                .map_err(|e| CliError::Runtime("data", format!("features of `{id}`: {e}")))?;
            let x = feats.to_tensor::<f64>();
            let s = make_saliency(&model, &x, target).map_err(saliency_err)?;
            render_saliency(&s, &x, &out).map_err(saliency_err)?;
            println!("target_class={}", s.target_class);
            Ok(())
        }
        Command::Info { model_dir, .. } => {
            let mc = cfg.model_config();
            let enc: usize = (0..mc.encoder.n_layers)
                .map(|l| {
                    let input = if l == 0 { mc.encoder.input_dim } else { mc.encoder.output_dim() };
                    2 * gru_direction_params(input, mc.encoder.hidden)
                })
                .sum();
            let dec = decoder_params(
                mc.encoder.output_dim(),
                mc.decoder.ff_hidden,
                mc.decoder.n_classes,
                mc.decoder.batch_norm,
            );
            println!("encoder_params={enc}");
            println!("decoder_params={dec}");
            println!("total_params={}", enc + dec);
            if let Some(dir) = model_dir {
                let ck = Checkpoint::load(&dir.join(BEST_CHECKPOINT))?;
                let n = if ck.meta("meta.kind", 1)?[0] == 0.0 {
                    SluModel::<f64>::from_checkpoint(&ck)?.count_params()
                } else {
                    TextModel::<f64>::from_checkpoint(&ck)?.count_params()
                };
                println!("checkpoint_params={n}");
            }
            println!();
            print!("{}", cfg.to_ini());
            Ok(())
        }
    }
}

fn saliency_err(e: crate::saliency::SaliencyError) -> CliError {
    use crate::saliency::SaliencyError as S;
    match e {
        S::ClassOutOfRange { .. } => CliError::Mismatch(e.to_string()),
        S::Nn(n) => n.into(),
        other => CliError::Runtime("saliency", other.to_string()),
    }
}

fn report_failures(category: &'static str, total: usize, failures: &[(String, String)]) -> Result<(), CliError> {
    for (id, msg) in failures {
        eprintln!("warning: {id}: {msg}");
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(
            category,
            format!("{} of {total} items failed (first: {})", failures.len(), failures[0].0),
        ))
    }
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "wav"))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(CliError::Config(format!("{}: no .wav files", dir.display())));
    }
    Ok(out)
}

fn augment_spec(cfg: &RunConfig, out: &Path) -> Result<AugmentSpec, CliError> {
    let a = &cfg.augment;
    let (mut rir_pool, mut noise_pool) = (Vec::new(), Vec::new());
    if a.rir_dir.is_none() || a.noise_dir.is_none() {
        let (r, n) = write_synthetic_pools(
            &out.join("pools"),
            a.synthetic_rirs,
            a.synthetic_noises,
            cfg.dsp.sample_rate,
            derive_seed(cfg.seed, "pools"),
        )?;
        rir_pool = r;
        noise_pool = n;
    }
    if let Some(d) = &a.rir_dir {
        rir_pool = wav_files(d)?;
    }
    if let Some(d) = &a.noise_dir {
        noise_pool = wav_files(d)?;
    }
    Ok(AugmentSpec {
        rir_pool,
        noise_pool,
        snr_range: (a.snr_min, a.snr_max),
        copies: a.copies,
        seed: derive_seed(cfg.seed, "augment"),
        save_components: a.save_components,
    })
}

fn train_audio<T: Real>(
    cfg: &RunConfig,
    train: &Manifest,
    valid: &Manifest,
    features: &Path,
    out: &Path,
) -> Result<(usize, f64), CliError> {
    let tr: Dataset<_> = load_feature_dataset::<T>(train, features, cfg.target)?;
    let va = load_feature_dataset::<T>(valid, features, cfg.target)?;
    if let Some(x) = tr.inputs.first() {
        if x.cols() != cfg.dsp.n_mels {
            return Err(CliError::Mismatch(format!(
                "features have {} mel bins, config expects {}",
                x.cols(),
                cfg.dsp.n_mels
            )));
        }
    }
    let net = SluModel::<T>::new(cfg.model_config(), derive_seed(cfg.seed, "init"))?;
    let o = train_model(net, &tr, &va, &cfg.train_config(), Some(out))?;
    Ok((o.best_epoch, o.best_valid_accuracy))
}

fn train_text<T: Real>(
    cfg: &RunConfig,
    vocab: &Vocab,
    train: &Manifest,
    valid: &Manifest,
    out: &Path,
) -> Result<(usize, f64), CliError> {
    let tr = text_dataset(train, vocab, cfg.target, None)?;
    let va = text_dataset(valid, vocab, cfg.target, None)?;
    let net = TextModel::<T>::new(cfg.text_config(vocab.len()), derive_seed(cfg.seed, "init"))?;
    let o = train_model(net, &tr, &va, &cfg.train_config(), Some(out))?;
    Ok((o.best_epoch, o.best_valid_accuracy))
}

/// Loads the best checkpoint and checks its kind (0 audio, 1 text).
fn load_checkpoint(dir: &Path, kind: f64) -> Result<Checkpoint, CliError> {
    let ck = Checkpoint::load(&dir.join(BEST_CHECKPOINT))?;
    if ck.meta("meta.kind", 1)?[0] != kind {
        return Err(CliError::Mismatch(format!(
            "{} holds a {} model",
            dir.join(BEST_CHECKPOINT).display(),
            if kind == 0.0 { "text" } else { "audio" }
        )));
    }
    Ok(ck)
}

fn check_classes(cfg: &RunConfig, n: usize, target: Target) -> Result<(), CliError> {
    if n != cfg.n_classes() || target != cfg.target {
        return Err(CliError::Mismatch(format!(
            "checkpoint predicts {n} {target} classes, config expects {} {} classes",
            cfg.n_classes(),
            cfg.target
        )));
    }
    Ok(())
}

fn eval_with<T: Real, N: Network<T>>(cfg: &RunConfig, net: &N, data: &Dataset<N::Input>) -> Result<EvalReport, CliError>
where
    N::Input: Sized,
{
    check_classes(cfg, net.n_classes(), net.target())?;
    data.check_labels(net.n_classes())?;
    if data.is_empty() {
        return Err(CliError::Runtime("data", "evaluation split is empty".into()));
    }
    Ok(evaluate(net, data)?)
}

fn eval_model(
    cfg: &RunConfig,
    manifest: &Manifest,
    features: Option<&Path>,
    model_dir: &Path,
) -> Result<EvalReport, CliError> {
    let ck = Checkpoint::load(&model_dir.join(BEST_CHECKPOINT))?;
    let audio = ck.meta("meta.kind", 1)?[0] == 0.0;
    let bits = ck
        .precision_bits(if audio { "dec.fc1.w" } else { "cls.w" })
        .ok_or_else(|| CliError::Runtime("model", "checkpoint holds no classifier weights".into()))?;
    if audio {
        let features = features.ok_or_else(|| CliError::Config("audio evaluation needs --features".into()))?;
        match bits {
            32 => {
                let net = SluModel::<f32>::from_checkpoint(&ck)?;
                eval_with(cfg, &net, &load_feature_dataset::<f32>(manifest, features, cfg.target)?)
            }
            _ => {
                let net = SluModel::<f64>::from_checkpoint(&ck)?;
                eval_with(cfg, &net, &load_feature_dataset::<f64>(manifest, features, cfg.target)?)
            }
        }
    } else {
        let vocab = Vocab::load(&model_dir.join(VOCAB))?;
        let corruption = (cfg.text.eval_wer > 0.0).then(|| (cfg.text.eval_wer, derive_seed(cfg.seed, "wer")));
        let data = text_dataset(manifest, &vocab, cfg.target, corruption)?;
        match bits {
            32 => eval_with(cfg, &TextModel::<f32>::from_checkpoint(&ck)?, &data),
            _ => eval_with(cfg, &TextModel::<f64>::from_checkpoint(&ck)?, &data),
        }
    }
}
