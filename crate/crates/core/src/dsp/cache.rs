//! Binary feature cache.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "SLUFEAT1" | n_frames | n_mels | frame_rate (millihertz) | precision bits (32)
//! n_frames·n_mels little-endian f32 values, row-major
//! ```

use std::fs;
use std::path::Path;

use super::{DspError, FeatureMatrix};

pub const FEATURE_MAGIC: &[u8; 8] = b"SLUFEAT1";
const HEADER_LEN: usize = 8 + 4 * 4;

pub fn encode_features(feats: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * feats.data().len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(feats.n_frames() as u32).to_le_bytes());
    out.extend_from_slice(&(feats.n_mels() as u32).to_le_bytes());
    out.extend_from_slice(&((feats.frame_rate() * 1000.0).round() as u32).to_le_bytes());
    out.extend_from_slice(&32u32.to_le_bytes());
    for &v in feats.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix, DspError> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != FEATURE_MAGIC {
        return Err(DspError::Format("missing SLUFEAT1 magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    let (n_frames, n_mels, rate_mhz, bits) = (word(0) as usize, word(1) as usize, word(2), word(3));
    if bits != 32 {
        return Err(DspError::Format(format!("unsupported precision tag {bits}")));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * n_frames * n_mels {
        return Err(DspError::Format(format!(
            "expected {} payload bytes for {n_frames}×{n_mels}, found {}",
            4 * n_frames * n_mels,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FeatureMatrix::new(n_frames, n_mels, rate_mhz as f64 / 1000.0, data)
}

pub fn write_features(path: &Path, feats: &FeatureMatrix) -> Result<(), DspError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_features(feats))?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix, DspError> {
    decode_features(&fs::read(path)?)
}
