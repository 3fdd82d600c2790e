use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Audio;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Pink,
    Brown,
    Babble,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 4] = [NoiseKind::White, NoiseKind::Pink, NoiseKind::Brown, NoiseKind::Babble];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Brown => "brown",
            NoiseKind::Babble => "babble",
        }
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

/// Exponentially decaying Gaussian tail behind a unit direct path.
pub fn synth_rir(t60: f64, sample_rate: u32, seed: u64) -> Audio {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let len = ((t60 * sr).ceil() as usize).max(1);
    let pre = (0.002 * sr).round() as usize;
    // amplitude falls 60 dB over t60
    let decay = 6.9078 / t60;
    let mut h = vec![0.0; len];
    h[0] = 1.0;
    for (i, v) in h.iter_mut().enumerate().skip(pre.max(1)) {
        *v = 0.3 * gauss(&mut rng) * (-decay * i as f64 / sr).exp();
    }
    normalize_peak(&mut h, 0.9);
    Audio {
        samples: h,
        sample_rate,
    }
}

/// Stationary noise of the given colour, peak-normalized to 0.5.
pub fn synth_noise(kind: NoiseKind, len: usize, sample_rate: u32, seed: u64) -> Audio {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; len];
    match kind {
        NoiseKind::White => x.iter_mut().for_each(|v| *v = gauss(&mut rng)),
        NoiseKind::Pink => {
            // Paul Kellet's filter
            let mut b = [0.0f64; 7];
            for v in x.iter_mut() {
                let w = gauss(&mut rng);
                b[0] = 0.99886 * b[0] + w * 0.0555179;
                b[1] = 0.99332 * b[1] + w * 0.0750759;
                b[2] = 0.96900 * b[2] + w * 0.1538520;
                b[3] = 0.86650 * b[3] + w * 0.3104856;
                b[4] = 0.55000 * b[4] + w * 0.5329522;
                b[5] = -0.7616 * b[5] - w * 0.0168980;
                *v = b.iter().sum::<f64>() + w * 0.5362;
                b[6] = w * 0.115926;
            }
        }
        NoiseKind::Brown => {
            let mut acc = 0.0;
            for v in x.iter_mut() {
                acc = 0.995 * acc + gauss(&mut rng);
                *v = acc;
            }
        }
        NoiseKind::Babble => {
            // sum of amplitude-modulated harmonic voices
            let sr = sample_rate as f64;
            for _ in 0..6 {
                let f0 = rng.gen_range(90.0..260.0);
                let rate = rng.gen_range(2.0..6.0);
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                for (i, v) in x.iter_mut().enumerate() {
                    let t = i as f64 / sr;
                    let env = 0.5 + 0.5 * (std::f64::consts::TAU * rate * t + phase).sin();
                    let mut s = 0.0;
                    for k in 1..=4 {
                        s += (std::f64::consts::TAU * f0 * k as f64 * t).sin() / k as f64;
                    }
                    *v += env * s;
                }
            }
            x.iter_mut().for_each(|v| *v += 0.05 * gauss(&mut rng));
        }
    }
    normalize_peak(&mut x, 0.5);
    Audio {
        samples: x,
        sample_rate,
    }
}
