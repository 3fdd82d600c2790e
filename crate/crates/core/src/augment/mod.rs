//! Reverberation and additive-noise corruption of a corpus.
//!
//! Each corrupted copy convolves the clean utterance with a room impulse
//! response, peak-normalizes it back to the clean peak, then adds background
//! noise scaled to a target SNR measured over the whole mixed extent.

mod noise;

pub use noise::{synth_noise, synth_rir, NoiseKind};

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{read_wav, write_wav, Audio, CorpusError, Manifest, Record};
use crate::dsp::fft_in_place;
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("invalid augmentation spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Full linear convolution of `x` with `h`, truncated to `x.len()` samples.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = h.len().min(n);
    if n == 0 || m == 0 {
        return vec![0.0; n];
    }
    if m <= 64 || (n as u64) * (m as u64) <= 1 << 18 {
        let mut y = vec![0.0; n];
        for (k, &hk) in h[..m].iter().enumerate() {
            if hk == 0.0 {
                continue;
            }
            for (yv, &xv) in y[k..].iter_mut().zip(x) {
                *yv += hk * xv;
            }
        }
        return y;
    }
    let size = (n + m - 1).next_power_of_two();
    let mut a: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    a.resize(size, Complex64::new(0.0, 0.0));
    let mut b: Vec<Complex64> = h[..m].iter().map(|&v| Complex64::new(v, 0.0)).collect();
    b.resize(size, Complex64::new(0.0, 0.0));
    fft_in_place(&mut a, false).expect("power-of-two size");
    fft_in_place(&mut b, false).expect("power-of-two size");
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    fft_in_place(&mut a, true).expect("power-of-two size");
    a.truncate(n);
    a.into_iter().map(|c| c.re).collect()
}

/// Reverberates `signal` with `rir`, keeping the input length and peak.
pub fn convolve_rir(signal: &Audio, rir: &Audio) -> Result<Audio, AugmentError> {
    if signal.sample_rate != rir.sample_rate {
        return Err(AugmentError::SampleRateMismatch(signal.sample_rate, rir.sample_rate));
    }
    if signal.samples.is_empty() || rir.samples.is_empty() {
        return Err(AugmentError::Degenerate("empty signal or impulse response"));
    }
    let mut y = convolve_truncated(&signal.samples, &rir.samples);
    let peak_in = signal.peak();
    let peak_out = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak_out > 0.0 && peak_out != peak_in {
        let g = peak_in / peak_out;
        y.iter_mut().for_each(|v| *v *= g);
    }
    Ok(Audio {
        samples: y,
        sample_rate: signal.sample_rate,
    })
}

/// Result of [`mix_noise_at_snr`].
#[derive(Debug, Clone)]
pub struct Mix {
    pub mixed: Audio,
    /// `g · noise_segment`, exactly what was added to the signal.
    pub scaled_noise: Vec<f64>,
    pub gain: f64,
}

/// `signal + g·noise_segment` with `g = sqrt(P_s / (P_n·10^(snr/10)))`.
///
/// The noise segment starts at `offset` and wraps cyclically when the noise
/// is shorter than the signal.
pub fn mix_noise_at_snr(signal: &Audio, noise: &Audio, snr_db: f64, offset: usize) -> Result<Mix, AugmentError> {
    if signal.sample_rate != noise.sample_rate {
        return Err(AugmentError::SampleRateMismatch(signal.sample_rate, noise.sample_rate));
    }
    if noise.samples.is_empty() {
        return Err(AugmentError::Degenerate("empty noise"));
    }
    let n = signal.samples.len();
    let segment: Vec<f64> = (0..n)
        .map(|i| noise.samples[(offset + i) % noise.samples.len()])
        .collect();
    let p_s = signal.power();
    let p_n = if n == 0 {
        0.0
    } else {
        segment.iter().map(|v| v * v).sum::<f64>() / n as f64
    };
    if p_n == 0.0 {
        return Err(AugmentError::Degenerate("noise has zero power"));
    }
    if p_s == 0.0 {
        return Err(AugmentError::Degenerate("signal has zero power; SNR undefined"));
    }
    let gain = (p_s / (p_n * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled_noise: Vec<f64> = segment.iter().map(|v| gain * v).collect();
    let mixed = signal
        .samples
        .iter()
        .zip(&scaled_noise)
        .map(|(s, v)| s + v)
        .collect();
    Ok(Mix {
        mixed: Audio {
            samples: mixed,
            sample_rate: signal.sample_rate,
        },
        scaled_noise,
        gain,
    })
}

/// SNR in dB between two component signals.
pub fn measured_snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    let p = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    10.0 * (p(signal) / p(noise)).log10()
}

#[derive(Debug, Clone)]
pub struct AugmentSpec {
    pub rir_pool: Vec<PathBuf>,
    pub noise_pool: Vec<PathBuf>,
    /// `[lo, hi]` in dB
    pub snr_range: (f64, f64),
    pub copies: usize,
    pub seed: u64,
    /// Also write the reverberated clean part and the scaled noise next to
    /// each mixture (`<id>.clean.wav`, `<id>.noise.wav`).
    pub save_components: bool,
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let (lo, hi) = self.snr_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(AugmentError::Spec(format!("snr range [{lo}, {hi}] is not ordered")));
        }
        if self.copies == 0 {
            return Err(AugmentError::Spec("copies must be at least 1".into()));
        }
        if self.rir_pool.is_empty() || self.noise_pool.is_empty() {
            return Err(AugmentError::Spec("rir_pool and noise_pool must be non-empty".into()));
        }
        Ok(())
    }
}

/// Per-record failures collected while the run continues.
#[derive(Debug, Clone, Default)]
pub struct AugmentReport {
    pub failures: Vec<(String, String)>,
}

fn pool_id(p: &Path) -> String {
    p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Sampled corruption parameters for one output copy.
#[derive(Debug, Clone, PartialEq)]
pub struct Corruption {
    pub rir: usize,
    pub noise: usize,
    pub snr_db: f64,
    pub offset: usize,
}

fn sample_corruption(spec: &AugmentSpec, id: &str, copy: usize, noise_lens: &[usize]) -> Corruption {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("{id}/{copy}")));
    let rir = rng.gen_range(0..spec.rir_pool.len());
    let noise = rng.gen_range(0..spec.noise_pool.len());
    let (lo, hi) = spec.snr_range;
    let snr_db = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let offset = rng.gen_range(0..noise_lens[noise].max(1));
    Corruption {
        rir,
        noise,
        snr_db,
        offset,
    }
}

/// Applies one corruption: reverberate first, then mix noise. Returns the
/// mixture and its two components, jointly rescaled if the mixture would clip.
pub fn corrupt(clean: &Audio, rir: &Audio, noise: &Audio, c: &Corruption) -> Result<(Audio, Audio, Audio), AugmentError> {
    let reverberant = convolve_rir(clean, rir)?;
    let mix = mix_noise_at_snr(&reverberant, noise, c.snr_db, c.offset)?;
    let mut parts = (mix.mixed, reverberant, Audio {
        samples: mix.scaled_noise,
        sample_rate: clean.sample_rate,
    });
    let peak = parts.0.peak();
    if peak > 0.99 {
        let g = 0.99 / peak;
        for a in [&mut parts.0, &mut parts.1, &mut parts.2] {
            a.samples.iter_mut().for_each(|v| *v *= g);
        }
    }
    Ok(parts)
}

/// Produces `copies` corrupted versions of every record. Output audio goes
/// to `out_dir/audio/<split>/<id>.wav`; the manifest (also written to
/// `out_dir/manifest.jsonl`) keeps input order and labels and records the
/// sampled `(rir, noise, snr)` triple.
pub fn augment_corpus(
    manifest: &Manifest,
    base_dir: &Path,
    spec: &AugmentSpec,
    out_dir: &Path,
) -> Result<(Manifest, AugmentReport), AugmentError> {
    spec.validate()?;
    let rirs: Vec<Audio> = spec.rir_pool.iter().map(|p| read_wav(p)).collect::<Result<_, _>>()?;
    let noises: Vec<Audio> = spec.noise_pool.iter().map(|p| read_wav(p)).collect::<Result<_, _>>()?;
    let noise_lens: Vec<usize> = noises.iter().map(|n| n.samples.len()).collect();

    let jobs: Vec<(&Record, usize)> = manifest
        .records
        .iter()
        .flat_map(|r| (0..spec.copies).map(move |c| (r, c)))
        .collect();

    let results: Vec<Result<Record, (String, String)>> = jobs
        .par_iter()
        .map(|&(rec, copy)| {
            let fail = |e: String| (rec.id.clone(), e);
            let path = Manifest::audio_file(base_dir, rec)
                .ok_or_else(|| fail("record has no audio_path".into()))?;
            let clean = read_wav(&path).map_err(|e| fail(e.to_string()))?;
            let c = sample_corruption(spec, &rec.id, copy, &noise_lens);
            let (mixed, clean_part, noise_part) =
                corrupt(&clean, &rirs[c.rir], &noises[c.noise], &c).map_err(|e| fail(e.to_string()))?;
            let id = format!("{}_aug{copy}", rec.id);
            let rel = format!("audio/{}/{id}.wav", rec.split.as_str());
            write_wav(&out_dir.join(&rel), &mixed).map_err(|e| fail(e.to_string()))?;
            if spec.save_components {
                let comp = |suffix: &str| out_dir.join(format!("audio/{}/{id}.{suffix}.wav", rec.split.as_str()));
                write_wav(&comp("clean"), &clean_part).map_err(|e| fail(e.to_string()))?;
                write_wav(&comp("noise"), &noise_part).map_err(|e| fail(e.to_string()))?;
            }
            Ok(Record {
                id,
                audio_path: Some(rel),
                inline_audio: false,
                transcript: rec.transcript.clone(),
                domain_label: rec.domain_label,
                intent_label: rec.intent_label,
                split: rec.split,
                source_id: Some(rec.id.clone()),
                rir_id: Some(pool_id(&spec.rir_pool[c.rir])),
                noise_id: Some(pool_id(&spec.noise_pool[c.noise])),
                snr_db: Some(c.snr_db),
            })
        })
        .collect();

    let mut records = Vec::with_capacity(results.len());
    let mut report = AugmentReport::default();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => report.failures.push(f),
        }
    }
    let out = Manifest::new(records);
    out.write(&out_dir.join("manifest.jsonl"))?;
    Ok((out, report))
}

/// Writes `n_rirs` synthetic impulse responses (T60 spread over 0.2–1.0 s)
/// and `n_noises` synthetic noises under `dir`, returning both pools.
pub fn write_synthetic_pools(
    dir: &Path,
    n_rirs: usize,
    n_noises: usize,
    sample_rate: u32,
    seed: u64,
) -> Result<(Vec<PathBuf>, Vec<PathBuf>), AugmentError> {
    let mut rir_pool = Vec::new();
    for k in 0..n_rirs {
        let t60 = if n_rirs == 1 {
            0.6
        } else {
            0.2 + 0.8 * k as f64 / (n_rirs - 1) as f64
        };
        let rir = synth_rir(t60, sample_rate, derive_seed(seed, &format!("rir/{k}")));
        let p = dir.join(format!("rir/rir{k:02}.wav"));
        write_wav(&p, &rir)?;
        rir_pool.push(p);
    }
    let mut noise_pool = Vec::new();
    for k in 0..n_noises {
        let kind = NoiseKind::ALL[k % NoiseKind::ALL.len()];
        let noise = synth_noise(kind, 10 * sample_rate as usize, sample_rate, derive_seed(seed, &format!("noise/{k}")));
        let p = dir.join(format!("noise/{}{k:02}.wav", kind.name()));
        write_wav(&p, &noise)?;
        noise_pool.push(p);
    }
    Ok((rir_pool, noise_pool))
}
