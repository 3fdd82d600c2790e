//! Synthetic "tonal command language".
//!
//! Every word is a fixed tone signature (base frequency, chirp, amplitude
//! modulation, duration). An intent is the phrase `<domain word> <action
//! word>`, optionally preceded or followed by a filler word, so domains share
//! action words and intents share domain words.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_wav, Audio, CorpusError, Manifest, Record, Split};
use crate::seed::derive_seed;

const DOMAIN_NAMES: [&str; 5] = ["music", "weather", "news", "sports", "optin"];
const ACTION_NAMES: [&str; 7] = ["play", "stop", "check", "next", "tell", "show", "set"];
const FILLER_NAMES: [&str; 3] = ["please", "now", "okay"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_domains: usize,
    pub intents_per_domain: usize,
    pub filler_words: usize,
    /// Probability that an utterance carries a filler word.
    pub filler_prob: f64,
    pub sample_rate: u32,
    /// seconds
    pub min_duration: f64,
    /// seconds
    pub max_duration: f64,
    pub gain_jitter_db: f64,
    /// Relative pitch jitter, e.g. 0.02 = ±2 %.
    pub pitch_jitter: f64,
    /// Peak amplitude of the uniform background dither.
    pub dither: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_domains: 5,
            intents_per_domain: 7,
            filler_words: 2,
            filler_prob: 0.5,
            sample_rate: 16000,
            min_duration: 1.0,
            max_duration: 1.6,
            gain_jitter_db: 3.0,
            pitch_jitter: 0.02,
            dither: 1e-3,
            seed: 1,
        }
    }
}

/// Acoustic identity of one synthetic word.
#[derive(Debug, Clone, PartialEq)]
pub struct WordSignature {
    pub name: String,
    pub base_hz: f64,
    /// Relative frequency sweep across the word (positive = rising).
    pub chirp: f64,
    pub am_hz: f64,
    /// seconds
    pub duration: f64,
}

/// Sample range `[start, end)` occupied by a rendered word.
#[derive(Debug, Clone, PartialEq)]
pub struct WordSpan {
    pub word: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub audio: Audio,
    pub transcript: String,
    pub domain: usize,
    pub intent: usize,
    pub spans: Vec<WordSpan>,
}

/// A word placed at an explicit time offset.
#[derive(Debug, Clone, Copy)]
pub struct Placement {
    pub word: usize,
    /// seconds from the start of the utterance
    pub start: f64,
}

impl SynthSpec {
    pub fn n_intents(&self) -> usize {
        self.n_domains * self.intents_per_domain
    }

    pub fn n_words(&self) -> usize {
        self.n_domains + self.intents_per_domain + self.filler_words
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::Config(m));
        if self.n_domains == 0 || self.intents_per_domain == 0 {
            return bad("n_domains and intents_per_domain must be positive".into());
        }
        if self.n_domains * self.intents_per_domain < 2 {
            return bad("need at least 2 intents".into());
        }
        if !(0.0..=1.0).contains(&self.filler_prob) {
            return bad(format!("filler_prob {} outside [0, 1]", self.filler_prob));
        }
        if self.filler_prob > 0.0 && self.filler_words == 0 {
            return bad("filler_prob > 0 needs filler_words > 0".into());
        }
        if self.sample_rate < 8000 {
            return bad(format!("sample_rate {} below 8000 Hz", self.sample_rate));
        }
        if !(self.min_duration > 0.0 && self.min_duration <= self.max_duration) {
            return bad(format!(
                "need 0 < min_duration ({}) <= max_duration ({})",
                self.min_duration, self.max_duration
            ));
        }
        let longest = 3.0 * self.signatures().iter().map(|s| s.duration).fold(0.0, f64::max) * 1.1;
        if self.max_duration < longest {
            return bad(format!(
                "max_duration {} cannot hold a three-word phrase ({longest:.2} s)",
                self.max_duration
            ));
        }
        Ok(())
    }

    pub fn word_name(&self, word: usize) -> String {
        let nd = self.n_domains;
        let na = self.intents_per_domain;
        if word < nd {
            DOMAIN_NAMES.get(word).map_or_else(|| format!("domain{word}"), |s| s.to_string())
        } else if word < nd + na {
            let i = word - nd;
            ACTION_NAMES.get(i).map_or_else(|| format!("action{i}"), |s| s.to_string())
        } else {
            let i = word - nd - na;
            FILLER_NAMES.get(i).map_or_else(|| format!("filler{i}"), |s| s.to_string())
        }
    }

    /// Distinct signatures, base frequencies log-spaced over 250–3500 Hz
    /// (scaled down for low sample rates).
    pub fn signatures(&self) -> Vec<WordSignature> {
        let n = self.n_words();
        let top = 3500f64.min(0.4 * self.sample_rate as f64);
        let (lo, hi) = (250f64, top);
        (0..n)
            .map(|k| {
                let frac = if n == 1 { 0.0 } else { k as f64 / (n - 1) as f64 };
                WordSignature {
                    name: self.word_name(k),
                    base_hz: lo * (hi / lo).powf(frac),
                    chirp: if k % 2 == 0 { 0.08 } else { -0.08 },
                    am_hz: 3.0 + ((k * 5) % 9) as f64,
                    duration: 0.18 + 0.04 * (k % 4) as f64,
                }
            })
            .collect()
    }

    pub fn domain_of(&self, intent: usize) -> usize {
        intent / self.intents_per_domain
    }

    /// Word indices of the intent's phrase (without filler).
    pub fn phrase(&self, intent: usize) -> Result<[usize; 2], CorpusError> {
        if intent >= self.n_intents() {
            return Err(CorpusError::UnknownIntent {
                intent,
                n_intents: self.n_intents(),
            });
        }
        let domain = self.domain_of(intent);
        let action = intent % self.intents_per_domain;
        Ok([domain, self.n_domains + action])
    }
}

/// Renders one word with the given gain and pitch factor.
fn render_word(sig: &WordSignature, sr: f64, gain: f64, pitch: f64, dur_scale: f64, out: &mut [f64]) {
    let n = out.len();
    let dur = sig.duration * dur_scale;
    let ramp = (0.01 * sr) as usize;
    let mut phase = 0.0;
    for (i, o) in out.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let f = sig.base_hz * pitch * (1.0 + sig.chirp * (t / dur - 0.5));
        phase += 2.0 * PI * f / sr;
        let mut env = 0.75 + 0.25 * (2.0 * PI * sig.am_hz * t).cos();
        if i < ramp {
            env *= 0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos();
        }
        if n - i <= ramp {
            env *= 0.5 - 0.5 * (PI * (n - i) as f64 / ramp as f64).cos();
        }
        *o += gain * env * (phase.sin() + 0.3 * (2.0 * phase).sin());
    }
}

/// Renders words at explicit offsets into a `total` second clip with
/// background dither. Per-word gain and pitch jitter come from `rng`.
pub fn render_placements(
    spec: &SynthSpec,
    placements: &[Placement],
    total: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Audio, Vec<WordSpan>), CorpusError> {
    let sr = spec.sample_rate as f64;
    let sigs = spec.signatures();
    let len = (total * sr).round() as usize;
    let mut samples: Vec<f64> = (0..len)
        .map(|_| if spec.dither > 0.0 { rng.gen_range(-spec.dither..spec.dither) } else { 0.0 })
        .collect();
    let mut spans = Vec::with_capacity(placements.len());
    for p in placements {
        let sig = sigs.get(p.word).ok_or_else(|| {
            CorpusError::Config(format!("word {} outside vocabulary of {}", p.word, sigs.len()))
        })?;
        let gain_db = if spec.gain_jitter_db > 0.0 {
            rng.gen_range(-spec.gain_jitter_db..spec.gain_jitter_db)
        } else {
            0.0
        };
        let pitch = 1.0
            + if spec.pitch_jitter > 0.0 {
                rng.gen_range(-spec.pitch_jitter..spec.pitch_jitter)
            } else {
                0.0
            };
        let dur_scale = 1.0 + rng.gen_range(-0.1..0.1);
        let start = (p.start * sr).round() as usize;
        let n = (sig.duration * dur_scale * sr).round() as usize;
        let end = (start + n).min(len);
        if start >= end {
            return Err(CorpusError::Config(format!(
                "word {} at {:.3} s falls outside the {total:.3} s clip",
                p.word, p.start
            )));
        }
        let gain = 0.25 * 10f64.powf(gain_db / 20.0);
        render_word(sig, sr, gain, pitch, dur_scale, &mut samples[start..end]);
        spans.push(WordSpan {
            word: p.word,
            start,
            end,
        });
    }
    Ok((
        Audio {
            samples,
            sample_rate: spec.sample_rate,
        },
        spans,
    ))
}

/// One utterance of `intent`, fully determined by `(spec, intent, seed)`.
pub fn synth_utterance(intent: usize, spec: &SynthSpec, seed: u64) -> Result<SynthUtterance, CorpusError> {
    let phrase = spec.phrase(intent)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words = phrase.to_vec();
    if spec.filler_words > 0 && rng.gen_bool(spec.filler_prob) {
        let filler = spec.n_domains + spec.intents_per_domain + rng.gen_range(0..spec.filler_words);
        if rng.gen_bool(0.5) {
            words.insert(0, filler);
        } else {
            words.push(filler);
        }
    }
    let sigs = spec.signatures();
    // nominal word time plus 10 % duration jitter headroom
    let speech: f64 = words.iter().map(|&w| sigs[w].duration * 1.1).sum();
    let min_total = spec.min_duration.max(speech + 0.05);
    let total = if spec.max_duration > min_total {
        rng.gen_range(min_total..spec.max_duration)
    } else {
        min_total
    };
    // silence budget spread over the gaps by random weights
    let gaps: Vec<f64> = (0..=words.len()).map(|_| rng.gen_range(0.2..1.0)).collect();
    let gap_sum: f64 = gaps.iter().sum();
    let budget = total - speech;
    let mut t = 0.0;
    let mut placements = Vec::with_capacity(words.len());
    for (i, &w) in words.iter().enumerate() {
        t += budget * gaps[i] / gap_sum;
        placements.push(Placement { word: w, start: t });
        t += sigs[w].duration * 1.1;
    }
    let (audio, spans) = render_placements(spec, &placements, total, &mut rng)?;
    let transcript = words
        .iter()
        .map(|&w| spec.word_name(w))
        .collect::<Vec<_>>()
        .join(" ");
    Ok(SynthUtterance {
        audio,
        transcript,
        domain: spec.domain_of(intent),
        intent,
        spans,
    })
}

/// Per-split item counts for `n` items, each non-zero fraction getting at
/// least one item when possible.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> Result<[usize; 3], CorpusError> {
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| f < 0.0) {
        return Err(CorpusError::Config(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let mut counts = [0usize; 3];
    counts[1] = (n as f64 * fractions[1]).round() as usize;
    counts[2] = (n as f64 * fractions[2]).round() as usize;
    counts[0] = n.saturating_sub(counts[1] + counts[2]);
    for k in 0..3 {
        if fractions[k] > 0.0 && counts[k] == 0 {
            let donor = (0..3).max_by_key(|&j| counts[j]).unwrap();
            if counts[donor] > 1 {
                counts[donor] -= 1;
                counts[k] += 1;
            }
        }
    }
    Ok(counts)
}

/// Generates `n_per_intent` utterances per intent, splits them stratified by
/// intent, and writes `audio/<split>/<id>.wav` plus `manifest.jsonl` under
/// `out_dir`.
pub fn build_synthetic_corpus(
    spec: &SynthSpec,
    n_per_intent: usize,
    fractions: [f64; 3],
    out_dir: &Path,
) -> Result<Manifest, CorpusError> {
    spec.validate()?;
    let counts = split_counts(n_per_intent, fractions)?;
    let mut records = Vec::with_capacity(spec.n_intents() * n_per_intent);
    for intent in 0..spec.n_intents() {
        let mut order: Vec<usize> = (0..n_per_intent).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("split/{intent}")));
        order.shuffle(&mut rng);
        let mut assign = vec![Split::Train; n_per_intent];
        for (pos, &k) in order.iter().enumerate() {
            assign[k] = if pos < counts[0] {
                Split::Train
            } else if pos < counts[0] + counts[1] {
                Split::Valid
            } else {
                Split::Eval
            };
        }
        for (k, &split) in assign.iter().enumerate() {
            let id = format!("i{intent:02}_{k:04}");
            let utt = synth_utterance(intent, spec, derive_seed(spec.seed, &id))?;
            let rel = format!("audio/{}/{id}.wav", split.as_str());
            write_wav(&out_dir.join(&rel), &utt.audio)?;
            records.push(Record {
                id,
                audio_path: Some(rel),
                inline_audio: false,
                transcript: utt.transcript,
                domain_label: utt.domain,
                intent_label: intent,
                split,
                source_id: None,
                rir_id: None,
                noise_id: None,
                snr_db: None,
            });
        }
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let manifest = Manifest::new(records);
    manifest.write(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_inventory_is_5_by_7() {
        let s = SynthSpec::default();
        assert_eq!(s.n_intents(), 35);
        s.validate().unwrap();
        let sigs = s.signatures();
        for i in 0..sigs.len() {
            for j in i + 1..sigs.len() {
                assert_ne!(sigs[i].base_hz, sigs[j].base_hz);
            }
        }
    }

    #[test]
    fn unknown_intent() {
        assert!(matches!(
            synth_utterance(35, &SynthSpec::default(), 1),
            Err(CorpusError::UnknownIntent { intent: 35, .. })
        ));
    }

    #[test]
    fn split_counts_cover_every_split() {
        assert_eq!(split_counts(20, [0.7, 0.15, 0.15]).unwrap(), [14, 3, 3]);
        assert_eq!(split_counts(10, [0.8, 0.1, 0.1]).unwrap(), [8, 1, 1]);
        assert!(split_counts(10, [0.5, 0.5, 0.5]).is_err());
    }
}
