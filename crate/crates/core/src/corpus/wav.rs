//! 16-bit PCM mono RIFF/WAVE reader and writer.

use std::fs;
use std::path::Path;

use super::{Audio, CorpusError};

fn format_err(field: &'static str, detail: impl Into<String>) -> CorpusError {
    CorpusError::WavFormat {
        field,
        detail: detail.into(),
    }
}

pub fn decode_wav(bytes: &[u8]) -> Result<Audio, CorpusError> {
    if bytes.len() < 12 {
        return Err(format_err("riff", "file shorter than the RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(format_err("riff", "missing RIFF tag"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(format_err("wave", "missing WAVE tag"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start + size;
        if body_end > bytes.len() {
            let name = String::from_utf8_lossy(id).into_owned();
            return Err(format_err(
                "chunk_size",
                format!("chunk `{name}` declares {size} bytes but the file is truncated"),
            ));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(format_err("fmt", format!("fmt chunk of {size} bytes")));
                }
                let u16_at = |o: usize| u16::from_le_bytes(body[o..o + 2].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                fmt = Some((u16_at(0), u16_at(2), rate, u16_at(14)));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or_else(|| format_err("fmt", "no fmt chunk"))?;
    if format != 1 {
        return Err(format_err("audio_format", format!("{format} (only PCM = 1 is supported)")));
    }
    if channels != 1 {
        return Err(format_err("num_channels", format!("{channels} (only mono is supported)")));
    }
    if bits != 16 {
        return Err(format_err("bits_per_sample", format!("{bits} (only 16 is supported)")));
    }
    if rate == 0 {
        return Err(format_err("sample_rate", "0"));
    }
    let data = data.ok_or_else(|| format_err("data", "no data chunk"))?;
    if data.len() % 2 != 0 {
        return Err(format_err("data", "odd number of payload bytes"));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Ok(Audio {
        samples,
        sample_rate: rate,
    })
}

pub fn encode_wav(audio: &Audio) -> Vec<u8> {
    let n = audio.samples.len();
    let data_len = 2 * n as u32;
    let mut out = Vec::with_capacity(44 + 2 * n);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&audio.sample_rate.to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &audio.samples {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

/// `round(x·32768)` clamped to the i16 range.
pub fn quantize(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn read_wav(path: &Path) -> Result<Audio, CorpusError> {
    let bytes = fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    decode_wav(&bytes).map_err(|e| match e {
        CorpusError::WavFormat { field, detail } => CorpusError::WavFormat {
            field,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    })
}

pub fn write_wav(path: &Path, audio: &Audio) -> Result<(), CorpusError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    }
    fs::write(path, encode_wav(audio)).map_err(|e| CorpusError::io(path, e))
}
