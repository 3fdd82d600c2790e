//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails. Positional arguments select criteria by number.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use slu::augment::{augment_corpus, convolve_truncated, mix_noise_at_snr, write_synthetic_pools, AugmentSpec};
use slu::corpus::{build_synthetic_corpus, Audio, Manifest, Split, SynthSpec};
use slu::dsp::{extract_logmel, fft_in_place, DspConfig, LogMelExtractor};
use slu::ndnum::{Precision, Tensor};
use slu::nn::{DecoderConfig, EncoderConfig, Mode, ModelConfig, Network, Readout, SluModel, Target};
use slu::saliency::{make_saliency, SaliencyTarget};
use slu::textnlu::{CellType, TextModel, TextModelConfig};
use slu::train::{
    evaluate, featurize_manifest, load_feature_dataset, train_model, AdamConfig, Dataset, EvalReport, TrainConfig,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn model_cfg(layers: usize, hidden: usize, input: usize, ff: usize, k: usize, readout: Readout) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            n_layers: layers,
            hidden,
            stride: 2,
            input_dim: input,
        },
        decoder: DecoderConfig {
            ff_hidden: ff,
            n_classes: k,
            batch_norm: true,
        },
        readout,
        target: Target::Intent,
    }
}

fn train_cfg(batch: usize, epochs: usize, patience: usize, lr: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: batch,
        max_epochs: epochs,
        patience,
        seed,
        precision: Precision::F32,
        bucketing: true,
        adam: AdamConfig {
            lr,
            ..AdamConfig::default()
        },
        grad_clip: None,
    }
}

fn fit_and_eval(
    cfg: ModelConfig,
    tcfg: &TrainConfig,
    train: &Dataset<Tensor<f32>>,
    valid: &Dataset<Tensor<f32>>,
    eval: &Dataset<Tensor<f32>>,
) -> (SluModel<f32>, EvalReport) {
    let net = SluModel::<f32>::new(cfg, tcfg.seed.wrapping_mul(31).wrapping_add(5)).unwrap();
    let out = train_model(net, train, valid, tcfg, None).unwrap();
    let report = evaluate(&out.best, eval).unwrap();
    (out.best, report)
}

fn gradient_integrity() -> Outcome {
    let mut r = rng(101);
    let cfg = ModelConfig {
        target: Target::Domain,
        ..model_cfg(2, 3, 5, 4, 3, Readout::MaxPool)
    };
    let net = SluModel::<f64>::new(cfg, 102).unwrap();
    let xs: Vec<Tensor<f64>> = (0..3).map(|_| random_tensor(&mut r, &[12, 5], 1.0)).collect();
    let refs: Vec<&Tensor<f64>> = xs.iter().collect();
    let labels = [0, 2, 1];
    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    for (name, e) in network_param_gradcheck(&net, &refs, &labels, Mode::Train, 1e-4) {
        if e > worst {
            worst = e;
            worst_name = name;
        }
    }
    let input = network_input_gradcheck(&net, &xs, &labels, Mode::Train, 1e-4);
    let text = TextModel::<f64>::new(
        TextModelConfig {
            vocab_size: 10,
            embedding_dim: 4,
            hidden: 3,
            n_layers: 2,
            n_classes: 3,
            cell: CellType::Gru,
            target: Target::Intent,
        },
        103,
    )
    .unwrap();
    let tokens = vec![2usize, 7, 1, 9];
    let text_worst = network_param_gradcheck(&text, &[&tokens], &[1], Mode::Train, 1e-4)
        .into_iter()
        .map(|(_, e)| e)
        .fold(0.0, f64::max);
    let all = worst.max(input).max(text_worst);
    check(
        all < 1e-4,
        format!("max rel err: audio params {worst:.1e} ({worst_name}), input {input:.1e}, text {text_worst:.1e}"),
    )
}

fn dsp_oracles() -> Outcome {
    let mut r = rng(201);
    let mut fft_err = 0.0f64;
    for _ in 0..100 {
        let x: Vec<f64> = (0..512).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mut buf: Vec<_> = x.iter().map(|&v| num_complex::Complex64::new(v, 0.0)).collect();
        fft_in_place(&mut buf, false).unwrap();
        for (a, (re, im)) in buf.iter().zip(naive_dft(&x, 512)) {
            fft_err = fft_err.max((a.re - re).abs()).max((a.im - im).abs());
        }
    }
    let cfg = DspConfig::default();
    let (frame, hop) = (cfg.frame_samples(), cfg.hop_samples());
    let mut framing_bad = 0;
    for _ in 0..1000 {
        let n = r.gen_range(0..40_000);
        // count frames by sliding a window
        let mut count = 0;
        let mut start = 0;
        while start + frame <= n {
            count += 1;
            start += hop;
        }
        if cfg.num_frames(n) != count {
            framing_bad += 1;
        }
        if n >= frame && n < 6000 {
            let f = extract_logmel(&vec![0.01; n], 16000, &cfg).unwrap();
            if f.n_frames() != count {
                framing_bad += 1;
            }
        }
    }
    let ex = LogMelExtractor::new(&cfg).unwrap();
    let mut sine_bad = Vec::new();
    for j in 2..cfg.n_mels - 1 {
        let fc = ex.filterbank().centers_hz()[j];
        let s: Vec<f64> = (0..4000)
            .map(|n| 0.5 * (2.0 * std::f64::consts::PI * fc * n as f64 / 16000.0).sin())
            .collect();
        let f = ex.extract(&s, 16000).unwrap();
        let mean: Vec<f64> = (0..cfg.n_mels)
            .map(|m| (0..f.n_frames()).map(|t| f.frame(t)[m]).sum::<f64>())
            .collect();
        let arg = (0..cfg.n_mels).fold(0, |b, m| if mean[m] > mean[b] { m } else { b });
        if arg != j {
            sine_bad.push(j);
        }
    }
    check(
        fft_err < 1e-9 && framing_bad == 0 && sine_bad.is_empty(),
        format!(
            "fft max abs err {fft_err:.1e}, framing mismatches {framing_bad}, sine-at-center misses {sine_bad:?} of {} filters",
            cfg.n_mels - 3
        ),
    )
}

fn shape_laws() -> Outcome {
    let cfg = ModelConfig {
        target: Target::Domain,
        ..model_cfg(4, 2, 3, 4, 5, Readout::MaxPool)
    };
    let mut net = SluModel::<f64>::new(cfg, 301).unwrap();
    net.bn.as_mut().unwrap().set_running(vec![0.1; 4], vec![0.5; 4]);
    let mut r = rng(302);
    let mut len_bad = Vec::new();
    for t in 1..=1000usize {
        let expect = (0..4).fold(t, |t, _| t.div_ceil(2));
        let x = random_tensor(&mut r, &[t, 3], 1.0);
        let enc = net.encode(&x).unwrap();
        if enc.rows() != expect || enc.cols() != 4 {
            len_bad.push(t);
        }
    }
    let len_1000 = net.encode(&Tensor::zeros(&[1000, 3])).unwrap().rows();
    let mut post_bad = 0;
    for _ in 0..1000 {
        let t = r.gen_range(1..40);
        let x = random_tensor(&mut r, &[t, 3], 3.0);
        let p = net.posteriors(&[&x]).unwrap();
        let s: f64 = p.data().iter().sum();
        if (s - 1.0).abs() > 1e-9 || p.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            post_bad += 1;
        }
    }
    check(
        len_bad.is_empty() && len_1000 == 63 && post_bad == 0,
        format!(
            "length law violations {} (1000 -> {len_1000}), invalid posteriors {post_bad}/1000",
            len_bad.len()
        ),
    )
}

fn random_audio(r: &mut ChaCha8Rng, n: usize) -> Audio {
    Audio {
        samples: (0..n).map(|_| r.gen_range(-0.5..0.5)).collect(),
        sample_rate: 16000,
    }
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn augmentation_fidelity() -> Outcome {
    let mut r = rng(401);
    let mut snr_err = 0.0f64;
    for target in [0.0, 5.0, 15.0, 25.0] {
        for _ in 0..50 {
            let n = r.gen_range(2000..8000);
            let s = random_audio(&mut r, n);
            let nn = r.gen_range(500..10_000);
            let noise = random_audio(&mut r, nn);
            let off = r.gen_range(0..nn);
            let m = mix_noise_at_snr(&s, &noise, target, off).unwrap();
            let added: Vec<f64> = m.mixed.samples.iter().zip(&s.samples).map(|(a, b)| a - b).collect();
            let snr = 10.0 * (energy(&s.samples) / energy(&added)).log10();
            snr_err = snr_err.max((snr - target).abs());
        }
    }
    let mut conv_err = 0.0f64;
    for (n, m) in [(300, 40), (5000, 900), (1000, 1)] {
        let x = random_audio(&mut r, n).samples;
        let h = random_audio(&mut r, m).samples;
        let got = convolve_truncated(&x, &h);
        let want = naive_convolve(&x, &h);
        conv_err = conv_err.max(got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }

    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_domains: 2,
        intents_per_domain: 2,
        seed: 402,
        ..SynthSpec::default()
    };
    let clean = build_synthetic_corpus(&spec, 5, [0.6, 0.2, 0.2], &dir.path().join("clean")).unwrap();
    let (rirs, noises) = write_synthetic_pools(&dir.path().join("pools"), 3, 3, 16000, 403).unwrap();
    let aspec = AugmentSpec {
        rir_pool: rirs,
        noise_pool: noises,
        snr_range: (0.0, 20.0),
        copies: 2,
        seed: 404,
        save_components: false,
    };
    let (aug, report) = augment_corpus(&clean, &dir.path().join("clean"), &aspec, &dir.path().join("aug")).unwrap();
    let mut labels_ok = report.failures.is_empty();
    for rec in &aug.records {
        let src = clean.records.iter().find(|c| Some(&c.id) == rec.source_id.as_ref());
        labels_ok &= src.is_some_and(|c| {
            c.domain_label == rec.domain_label && c.intent_label == rec.intent_label && c.split == rec.split
        });
    }
    check(
        snr_err < 0.1 && conv_err < 1e-9 && aug.len() == 2 * clean.len() && labels_ok,
        format!(
            "max snr err {snr_err:.2e} dB, conv max err {conv_err:.1e}, records {} -> {}, labels preserved {labels_ok}",
            clean.len(),
            aug.len()
        ),
    )
}

struct Corpus {
    train: Dataset<Tensor<f32>>,
    valid: Dataset<Tensor<f32>>,
    eval: Dataset<Tensor<f32>>,
}

fn load_splits(manifest: &Manifest, feats: &Path, target: Target) -> Corpus {
    let load = |s| load_feature_dataset::<f32>(&manifest.split(s), feats, target).unwrap();
    Corpus {
        train: load(Split::Train),
        valid: load(Split::Valid),
        eval: load(Split::Eval),
    }
}

fn end_to_end_learning() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("corpus");
    let spec = SynthSpec {
        seed: 501,
        ..SynthSpec::default()
    };
    let manifest = build_synthetic_corpus(&spec, 20, [0.6, 0.2, 0.2], &base).unwrap();
    let feats = dir.path().join("feats");
    let dsp = DspConfig::default();
    assert!(featurize_manifest(&manifest, &base, &feats, &dsp).unwrap().is_empty());
    let mut details = vec![format!("{} records", manifest.len())];
    let mut ok = true;
    for (target, k, threshold) in [(Target::Domain, 5, 0.95), (Target::Intent, 35, 0.90)] {
        let c = load_splits(&manifest, &feats, target);
        let cfg = ModelConfig {
            target,
            ..model_cfg(2, 32, dsp.n_mels, 128, k, Readout::MaxPool)
        };
        let (_, rep) = fit_and_eval(cfg, &train_cfg(16, 50, 10, 3e-3, 502), &c.train, &c.valid, &c.eval);
        ok &= rep.accuracy >= threshold;
        details.push(format!("{target} eval accuracy {:.3} (need {threshold})", rep.accuracy));
    }
    check(ok, details.join(", "))
}

/// Utterances of white noise with one class-specific tone burst at a uniformly
/// random position. Returns features and the burst's frame range.
fn tone_position_set(
    n: usize,
    seconds: f64,
    burst: f64,
    freqs: &[f64],
    dsp: &DspConfig,
    seed: u64,
) -> (Dataset<Tensor<f32>>, Vec<(usize, usize)>) {
    let mut r = rng(seed);
    let sr = dsp.sample_rate as f64;
    let ex = LogMelExtractor::new(dsp).unwrap();
    let mut ds = Dataset {
        ids: vec![],
        inputs: vec![],
        labels: vec![],
        durations: vec![],
        lengths: vec![],
    };
    let mut regions = Vec::new();
    for i in 0..n {
        let label = i % freqs.len();
        let len = (seconds * sr) as usize;
        let mut x: Vec<f64> = (0..len).map(|_| r.gen_range(-0.05..0.05)).collect();
        let start = r.gen_range(0..len - (burst * sr) as usize);
        let tone = tone(freqs[label], burst, dsp.sample_rate, 0.0, &mut r);
        for (k, v) in tone.iter().enumerate() {
            x[start + k] += v;
        }
        let f = ex.extract(&x, dsp.sample_rate).unwrap();
        let (hop, frame) = (dsp.hop_samples(), dsp.frame_samples());
        let a = (start + frame / 2).saturating_sub(frame) / hop;
        let b = ((start + tone.len()) / hop).min(f.n_frames() - 1);
        regions.push((a, b));
        ds.ids.push(format!("u{i:03}"));
        ds.lengths.push(f.n_frames());
        ds.durations.push(seconds);
        ds.inputs.push(f.to_tensor());
        ds.labels.push(label);
    }
    (ds, regions)
}

fn small_dsp() -> DspConfig {
    DspConfig {
        n_mels: 20,
        ..DspConfig::default()
    }
}

fn readout_ablation() -> Outcome {
    let dsp = small_dsp();
    let freqs = [700.0, 1300.0, 2500.0];
    let mut max_acc = Vec::new();
    let mut last_acc = Vec::new();
    for seed in 0..3u64 {
        let s = 600 + 10 * seed;
        let (train, _) = tone_position_set(30, 10.0, 0.4, &freqs, &dsp, s);
        let (valid, _) = tone_position_set(9, 10.0, 0.4, &freqs, &dsp, s + 1);
        let (eval, _) = tone_position_set(24, 10.0, 0.4, &freqs, &dsp, s + 2);
        for (readout, acc) in [(Readout::MaxPool, &mut max_acc), (Readout::LastStep, &mut last_acc)] {
            let cfg = model_cfg(2, 16, dsp.n_mels, 32, freqs.len(), readout);
            let (_, rep) = fit_and_eval(cfg, &train_cfg(10, 15, 15, 5e-3, s + 3), &train, &valid, &eval);
            acc.push(rep.accuracy);
        }
    }
    let (m, l) = (median(max_acc.clone()), median(last_acc.clone()));
    check(
        m >= l,
        format!("median eval accuracy max-pool {m:.3} vs last-step {l:.3} (per seed {max_acc:.3?} / {last_acc:.3?})"),
    )
}

fn noise_degradation() -> Outcome {
    let dsp = DspConfig::default();
    let (mut cc, mut cn, mut nn) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..3u64 {
        let s = 700 + 10 * seed;
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let spec = SynthSpec {
            n_domains: 2,
            intents_per_domain: 3,
            seed: s,
            ..SynthSpec::default()
        };
        let clean = build_synthetic_corpus(&spec, 16, [0.5, 0.25, 0.25], &d.join("clean")).unwrap();
        let (rirs, noises) = write_synthetic_pools(&d.join("pools"), 4, 8, dsp.sample_rate, s + 1).unwrap();
        let aspec = AugmentSpec {
            rir_pool: rirs,
            noise_pool: noises,
            snr_range: (0.0, 20.0),
            copies: 2,
            seed: s + 2,
            save_components: false,
        };
        let (noisy, rep) = augment_corpus(&clean, &d.join("clean"), &aspec, &d.join("noisy")).unwrap();
        assert!(rep.failures.is_empty());
        let feats = d.join("feats");
        assert!(featurize_manifest(&clean, &d.join("clean"), &feats, &dsp).unwrap().is_empty());
        assert!(featurize_manifest(&noisy, &d.join("noisy"), &feats, &dsp).unwrap().is_empty());
        let c = load_splits(&clean, &feats, Target::Intent);
        let n = load_splits(&noisy, &feats, Target::Intent);
        let cfg = model_cfg(2, 24, dsp.n_mels, 64, spec.n_intents(), Readout::MaxPool);
        let tcfg = train_cfg(8, 20, 8, 3e-3, s + 3);

        let (clean_model, clean_rep) = fit_and_eval(cfg, &tcfg, &c.train, &c.valid, &c.eval);
        cc.push(clean_rep.accuracy);
        cn.push(evaluate(&clean_model, &n.eval).unwrap().accuracy);

        let mut mixed = c.train.clone();
        mixed.ids.extend(n.train.ids.iter().cloned());
        mixed.inputs.extend(n.train.inputs.iter().cloned());
        mixed.labels.extend(n.train.labels.iter().copied());
        mixed.durations.extend(n.train.durations.iter().copied());
        mixed.lengths.extend(n.train.lengths.iter().copied());
        let (_, noisy_rep) = fit_and_eval(cfg, &tcfg, &mixed, &n.valid, &n.eval);
        nn.push(noisy_rep.accuracy);
    }
    let (a, b, c) = (median(cc.clone()), median(cn.clone()), median(nn.clone()));
    let gap = a - b;
    check(
        gap > 0.0 && c - b >= 0.5 * gap,
        format!(
            "median accuracy: clean model on clean {a:.3}, on noisy {b:.3}; noise-trained on noisy {c:.3} (recovers {:.0}% of gap)",
            if gap > 0.0 { 100.0 * (c - b) / gap } else { 0.0 }
        ),
    )
}

fn saliency_localization() -> Outcome {
    let dsp = small_dsp();
    let freqs = [600.0, 1500.0];
    let (train, _) = tone_position_set(40, 3.0, 0.4, &freqs, &dsp, 801);
    let (valid, _) = tone_position_set(10, 3.0, 0.4, &freqs, &dsp, 802);
    let (test, regions) = tone_position_set(50, 3.0, 0.4, &freqs, &dsp, 803);
    let cfg = model_cfg(2, 16, dsp.n_mels, 32, 2, Readout::MaxPool);
    let (model, rep) = fit_and_eval(cfg, &train_cfg(10, 20, 20, 5e-3, 804), &train, &valid, &test);
    let model = model.cast::<f64>();
    let mut mass = Vec::new();
    let mut share = Vec::new();
    for (x, &(a, b)) in test.inputs.iter().zip(&regions) {
        let x = x.cast::<f64>();
        let s = make_saliency(&model, &x, SaliencyTarget::Predicted).unwrap();
        mass.push(s.mass_in(a, b));
        share.push((b - a + 1) as f64 / x.rows() as f64);
    }
    let (m, sh) = (median(mass), median(share));

    let mut zeroed = model.clone();
    let layer = &mut zeroed.layers[0];
    for dir in [&mut layer.fwd, &mut layer.bwd] {
        dir.w = Tensor::zeros(dir.w.shape());
    }
    let s0 = make_saliency(&zeroed, &test.inputs[0].cast::<f64>(), SaliencyTarget::Predicted).unwrap();
    let all_zero = s0.values.data().iter().all(|&v| v == 0.0);
    check(
        m > sh && all_zero,
        format!(
            "median in-region mass {m:.3} vs region share {sh:.3} (model eval accuracy {:.3}); zero-weight saliency all zero: {all_zero}",
            rep.accuracy
        ),
    )
}

fn real_time_factor() -> Outcome {
    let dsp = DspConfig::default();
    let cfg = model_cfg(2, 32, dsp.n_mels, 128, 35, Readout::MaxPool);
    let mut net = SluModel::<f32>::new(cfg, 901).unwrap();
    net.bn.as_mut().unwrap().set_running(vec![0.0; 128], vec![1.0; 128]);
    let mut r = rng(902);
    let ex = LogMelExtractor::new(&dsp).unwrap();
    let mut ds = Dataset {
        ids: vec![],
        inputs: vec![],
        labels: vec![],
        durations: vec![],
        lengths: vec![],
    };
    for i in 0..5 {
        let x = random_audio(&mut r, 160_000).samples;
        let f = ex.extract(&x, 16000).unwrap();
        ds.ids.push(format!("long{i}"));
        ds.lengths.push(f.n_frames());
        ds.durations.push(f.n_frames() as f64 / f.frame_rate());
        ds.inputs.push(f.to_tensor());
        ds.labels.push(i % 35);
    }
    let rep = evaluate(&net, &ds).unwrap();
    check(
        rep.rtf < 0.1,
        format!(
            "rtf {:.5} over {:.1} s of audio (reference target 0.002)",
            rep.rtf, rep.total_audio_seconds
        ),
    )
}

const PIPELINE_CONFIG: &str = "\
[run]
seed = 11

[dsp]
n_mels = 24

[encoder]
n_layers = 2
hidden = 12

[decoder]
ff_hidden = 24
target = intent

[train]
batch_size = 6
max_epochs = 6
patience = 6
lr = 0.005

[synth]
n_domains = 2
intents_per_domain = 2
n_per_intent = 10
";

fn pipeline_run(root: &Path) -> Result<(Vec<u8>, Vec<u8>, String), String> {
    let cfg = root.join("run.ini");
    std::fs::write(&cfg, PIPELINE_CONFIG).unwrap();
    let p = |x: &str| root.join(x).display().to_string();
    let c = cfg.display().to_string();
    let stages: [Vec<String>; 4] = [
        vec!["synth".into(), "--config".into(), c.clone(), "--out".into(), p("corpus")],
        vec!["featurize".into(), "--config".into(), c.clone(), "--corpus".into(), p("corpus"), "--out".into(), p("feats")],
        vec![
            "train".into(),
            "--config".into(),
            c.clone(),
            "--corpus".into(),
            p("corpus"),
            "--features".into(),
            p("feats"),
            "--out".into(),
            p("model"),
        ],
        vec![
            "eval".into(),
            "--config".into(),
            c,
            "--corpus".into(),
            p("corpus"),
            "--features".into(),
            p("feats"),
            "--model-dir".into(),
            p("model"),
            "--report".into(),
            p("report"),
        ],
    ];
    for s in &stages {
        let code = slu::cli::run(s);
        if code != 0 {
            return Err(format!("`{}` exited {code}", s[0]));
        }
    }
    let read = |x: &str| std::fs::read(root.join(x)).unwrap();
    let report = String::from_utf8(read("report/report.txt")).unwrap();
    let stable: String = report
        .lines()
        .filter(|l| !l.starts_with("total_inference_seconds") && !l.starts_with("rtf"))
        .collect::<Vec<_>>()
        .join("\n");
    let preds: String = String::from_utf8(read("report/utterances.csv"))
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect::<Vec<_>>()
        .join("\n");
    Ok((read("model/best.ckpt"), read("report/confusion.csv"), format!("{stable}\n{preds}")))
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = pipeline_run(a.path())?;
    let rb = pipeline_run(b.path())?;
    let acc = ra.2.lines().next().unwrap_or_default().to_string();
    check(
        ra == rb,
        format!(
            "checkpoints equal {}, confusion equal {}, reports equal {} ({acc})",
            ra.0 == rb.0,
            ra.1 == rb.1,
            ra.2 == rb.2
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient integrity", gradient_integrity),
        ("dsp oracles", dsp_oracles),
        ("architecture shape laws", shape_laws),
        ("augmentation fidelity", augmentation_fidelity),
        ("end-to-end learning", end_to_end_learning),
        ("readout ablation direction", readout_ablation),
        ("noise degradation direction", noise_degradation),
        ("saliency localization", saliency_localization),
        ("real-time factor", real_time_factor),
        ("pipeline determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2} {name}: {tag} [{secs:.1} s] {detail}");
    }
    println!("acceptance: {}/{ran} passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
