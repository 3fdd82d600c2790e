//! Log-Mel filterbank front end: framing, Hann window, radix-2 FFT, HTK mel
//! filterbank and natural-log compression with an absolute floor.

mod cache;
mod fft;

pub use cache::{read_features, write_features, FEATURE_MAGIC};
pub use fft::{compute_fft, fft_in_place, power_spectrum};

use thiserror::Error;

use crate::ndnum::{Real, Tensor};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("invalid dsp configuration: {0}")]
    InvalidConfig(String),
    #[error("negative frequency {0} Hz")]
    NegativeFrequency(f64),
    #[error("fft size {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("mel filter {index} has no FFT bin support; lower n_mels or raise fft_size")]
    EmptyFilter { index: usize },
    #[error("input of {samples} samples is shorter than one frame ({frame} samples)")]
    TooShort { samples: usize, frame: usize },
    #[error("sample rate mismatch: config expects {expected} Hz, audio is {got} Hz")]
    SampleRateMismatch { expected: u32, got: u32 },
    #[error("feature file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DspConfig {
    pub sample_rate: u32,
    /// seconds
    pub frame_length: f64,
    /// seconds
    pub frame_hop: f64,
    pub fft_size: usize,
    pub n_mels: usize,
    pub fmin: f64,
    /// `None` means Nyquist.
    pub fmax: Option<f64>,
    pub log_floor: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig {
            sample_rate: 16000,
            frame_length: 0.025,
            frame_hop: 0.010,
            fft_size: 512,
            n_mels: 40,
            fmin: 0.0,
            fmax: None,
            log_floor: 1e-10,
        }
    }
}

impl DspConfig {
    pub fn fmax_hz(&self) -> f64 {
        self.fmax.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    pub fn frame_samples(&self) -> usize {
        (self.frame_length * self.sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.frame_hop * self.sample_rate as f64).round() as usize
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop_samples() as f64
    }

    pub fn validate(&self) -> Result<(), DspError> {
        let bad = |m: String| Err(DspError::InvalidConfig(m));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if !(self.frame_hop > 0.0 && self.frame_hop <= self.frame_length) {
            return bad(format!(
                "need 0 < frame_hop ({}) <= frame_length ({})",
                self.frame_hop, self.frame_length
            ));
        }
        if self.hop_samples() == 0 {
            return bad("frame_hop is shorter than one sample".into());
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        let fmax = self.fmax_hz();
        if !(self.fmin >= 0.0 && self.fmin < fmax && fmax <= nyquist) {
            return bad(format!(
                "need 0 <= fmin ({}) < fmax ({fmax}) <= sample_rate/2 ({nyquist})",
                self.fmin
            ));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(DspError::NotPowerOfTwo(self.fft_size));
        }
        if self.fft_size < self.frame_samples() {
            return bad(format!(
                "fft_size {} is smaller than a frame ({} samples)",
                self.fft_size,
                self.frame_samples()
            ));
        }
        if self.n_mels < 2 {
            return bad(format!("n_mels must be at least 2, got {}", self.n_mels));
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive".into());
        }
        Ok(())
    }

    /// Frames produced for `n` samples: `1 + floor((n − frame)/hop)`.
    pub fn num_frames(&self, n: usize) -> usize {
        let frame = self.frame_samples();
        if n < frame {
            0
        } else {
            1 + (n - frame) / self.hop_samples()
        }
    }
}

/// HTK mel scale: `2595·log10(1 + f/700)`.
pub fn hz_to_mel(f: f64) -> Result<f64, DspError> {
    if f < 0.0 {
        return Err(DspError::NegativeFrequency(f));
    }
    Ok(2595.0 * (1.0 + f / 700.0).log10())
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over the one-sided FFT bins.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    weights: Vec<f64>,
    n_mels: usize,
    n_bins: usize,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Filter outputs for one power spectrum.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            *o = self.row(m).iter().zip(power).map(|(w, p)| w * p).sum();
        }
    }
}

pub fn build_mel_filterbank(cfg: &DspConfig) -> Result<MelFilterbank, DspError> {
    cfg.validate()?;
    let n_bins = cfg.fft_size / 2 + 1;
    let lo = hz_to_mel(cfg.fmin)?;
    let hi = hz_to_mel(cfg.fmax_hz())?;
    let step = (hi - lo) / (cfg.n_mels + 1) as f64;
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + step * i as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
    let mut weights = vec![0.0; cfg.n_mels * n_bins];
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let up = (f - left) / (center - left);
            let down = (right - f) / (right - center);
            *w = up.min(down).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(DspError::EmptyFilter { index: m });
        }
    }
    Ok(MelFilterbank {
        weights,
        n_mels: cfg.n_mels,
        n_bins,
        centers_hz: edges[1..=cfg.n_mels].to_vec(),
    })
}

/// T×F log-Mel features at the configured frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n_frames: usize,
    n_mels: usize,
    frame_rate: f64,
}

impl FeatureMatrix {
    pub fn new(n_frames: usize, n_mels: usize, frame_rate: f64, data: Vec<f64>) -> Result<Self, DspError> {
        if n_frames == 0 || n_mels == 0 || data.len() != n_frames * n_mels {
            return Err(DspError::Format(format!(
                "{n_frames}×{n_mels} feature matrix with {} values",
                data.len()
            )));
        }
        Ok(FeatureMatrix {
            data,
            n_frames,
            n_mels,
            frame_rate,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &[self.n_frames, self.n_mels],
            self.data.iter().map(|&v| T::of(v)).collect(),
        )
        .expect("feature matrix shape")
    }
}

/// Reusable front end: Hann window and filterbank are built once.
#[derive(Debug, Clone)]
pub struct LogMelExtractor {
    cfg: DspConfig,
    window: Vec<f64>,
    bank: MelFilterbank,
}

impl LogMelExtractor {
    pub fn new(cfg: &DspConfig) -> Result<Self, DspError> {
        let bank = build_mel_filterbank(cfg)?;
        let n = cfg.frame_samples();
        // periodic Hann
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        Ok(LogMelExtractor {
            cfg: cfg.clone(),
            window,
            bank,
        })
    }

    pub fn config(&self) -> &DspConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    pub fn extract(&self, samples: &[f64], sample_rate: u32) -> Result<FeatureMatrix, DspError> {
        let cfg = &self.cfg;
        if sample_rate != cfg.sample_rate {
            return Err(DspError::SampleRateMismatch {
                expected: cfg.sample_rate,
                got: sample_rate,
            });
        }
        let frame = cfg.frame_samples();
        let hop = cfg.hop_samples();
        let n_frames = cfg.num_frames(samples.len());
        if n_frames == 0 {
            return Err(DspError::TooShort {
                samples: samples.len(),
                frame,
            });
        }
        let floor = cfg.log_floor;
        let mut data = vec![0.0; n_frames * cfg.n_mels];
        let mut windowed = vec![0.0; frame];
        for t in 0..n_frames {
            let chunk = &samples[t * hop..t * hop + frame];
            for ((w, &x), &h) in windowed.iter_mut().zip(chunk).zip(&self.window) {
                *w = x * h;
            }
            let power = power_spectrum(&windowed, cfg.fft_size)?;
            let out = &mut data[t * cfg.n_mels..(t + 1) * cfg.n_mels];
            self.bank.apply(&power, out);
            out.iter_mut().for_each(|v| *v = v.max(floor).ln());
        }
        FeatureMatrix::new(n_frames, cfg.n_mels, cfg.frame_rate(), data)
    }
}

/// One-shot convenience wrapper around [`LogMelExtractor`].
pub fn extract_logmel(samples: &[f64], sample_rate: u32, cfg: &DspConfig) -> Result<FeatureMatrix, DspError> {
    LogMelExtractor::new(cfg)?.extract(samples, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_reference_points() {
        assert_eq!(hz_to_mel(0.0).unwrap(), 0.0);
        assert!((hz_to_mel(700.0).unwrap() - 781.1728).abs() < 1e-3);
        assert!(hz_to_mel(-1.0).is_err());
        assert!((mel_to_hz(hz_to_mel(1234.5).unwrap()) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn one_second_gives_98_frames() {
        let cfg = DspConfig::default();
        assert_eq!(cfg.num_frames(16000), 98);
        let feats = extract_logmel(&vec![0.0; 16000], 16000, &cfg).unwrap();
        assert_eq!(feats.n_frames(), 98);
        assert_eq!(feats.n_mels(), 40);
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = DspConfig::default();
        let feats = extract_logmel(&vec![0.0; 4000], 16000, &cfg).unwrap();
        let floor = 1e-10f64.ln();
        assert!(feats.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn errors() {
        let cfg = DspConfig::default();
        assert!(matches!(
            extract_logmel(&[0.0; 100], 16000, &cfg),
            Err(DspError::TooShort { samples: 100, frame: 400 })
        ));
        assert!(matches!(
            extract_logmel(&[0.0; 1000], 8000, &cfg),
            Err(DspError::SampleRateMismatch { .. })
        ));
        let tight = DspConfig {
            n_mels: 200,
            fft_size: 512,
            ..DspConfig::default()
        };
        assert!(matches!(build_mel_filterbank(&tight), Err(DspError::EmptyFilter { .. })));
        let bad = DspConfig {
            frame_hop: 0.03,
            ..DspConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
