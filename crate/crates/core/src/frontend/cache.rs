//! On-disk feature cache: `TRLFEAT`, version byte, `n_frames` and `n_mels`
//! as little-endian u32, then row-major little-endian f32 frames.

use std::path::Path;

use super::ClipFeatures;
use crate::error::{Error, Result};

const MAGIC: &[u8; 7] = b"TRLFEAT";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 7 + 1 + 4 + 4;

pub fn encode_features(features: &ClipFeatures) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + features.frames.len() * 4);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(features.n_frames as u32).to_le_bytes());
    out.extend_from_slice(&(features.n_mels as u32).to_le_bytes());
    for v in &features.frames {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], clip_id: &str) -> Result<ClipFeatures> {
    if bytes.len() < 8 || &bytes[..7] != MAGIC {
        return Err(Error::Format("feature cache: bad magic".into()));
    }
    if bytes[7] != VERSION {
        return Err(Error::Format(format!(
            "feature cache: unsupported version {}",
            bytes[7]
        )));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corruption {
            offset: bytes.len() as u64,
            detail: "feature cache header truncated".into(),
        });
    }
    let n_frames = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let n_mels = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let need = HEADER_LEN + n_frames * n_mels * 4;
    if bytes.len() < need {
        return Err(Error::Corruption {
            offset: bytes.len() as u64,
            detail: format!("feature cache truncated; expected {} bytes", need),
        });
    }
    let frames = bytes[HEADER_LEN..need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(ClipFeatures {
        clip_id: clip_id.to_string(),
        n_frames,
        n_mels,
        frames,
    })
}

pub fn write_features(path: impl AsRef<Path>, features: &ClipFeatures) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_features(features)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>, clip_id: &str) -> Result<ClipFeatures> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, clip_id)
}
