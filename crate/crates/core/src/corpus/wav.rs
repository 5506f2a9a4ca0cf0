//! RIFF/WAVE PCM 16-bit reader and writer.

use std::path::Path;

use crate::error::{Error, Result};

/// Canonical sample rate every waveform is converted to on ingest.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio with amplitudes in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Validation("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::Validation(format!(
                "sample {} is {} (must be finite and within [-1, 1])",
                i, samples[i]
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn parse_err(chunk: &str, detail: impl Into<String>) -> Error {
    Error::WavParse {
        chunk: chunk.to_string(),
        detail: detail.into(),
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes an in-memory WAV file, averaging stereo to mono and resampling to
/// [`SAMPLE_RATE`].
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(parse_err("RIFF", "missing RIFF signature"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(parse_err("RIFF", "form type is not WAVE"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = String::from_utf8_lossy(&bytes[at..at + 4]).into_owned();
        let size = u32_at(bytes, at + 4) as usize;
        let body_start = at + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| parse_err(&id, format!("declared size {} overruns file", size)))?;
        let body = &bytes[body_start..body_end];
        match id.as_str() {
            "fmt " => {
                if body.len() < 16 {
                    return Err(parse_err("fmt ", format!("chunk is {} bytes, need 16", body.len())));
                }
                fmt = Some((u16_at(body, 0), u16_at(body, 2), u32_at(body, 4), u16_at(body, 14)));
            }
            "data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        at = body_end + (size & 1);
    }

    let (format, channels, rate, bits) = fmt.ok_or_else(|| parse_err("fmt ", "chunk not found"))?;
    if format != 1 {
        return Err(Error::UnsupportedFormat(format!("format tag {} (only PCM = 1)", format)));
    }
    if bits != 16 {
        return Err(Error::UnsupportedFormat(format!("{}-bit samples (only 16-bit)", bits)));
    }
    if !(channels == 1 || channels == 2) {
        return Err(Error::UnsupportedFormat(format!("{} channels (mono or stereo only)", channels)));
    }
    if rate == 0 {
        return Err(parse_err("fmt ", "sample rate is zero"));
    }
    let data = data.ok_or_else(|| parse_err("data", "chunk not found"))?;
    let frame_bytes = 2 * channels as usize;
    if data.len() % frame_bytes != 0 {
        return Err(parse_err(
            "data",
            format!("{} bytes is not a whole number of {}-byte frames", data.len(), frame_bytes),
        ));
    }

    let samples: Vec<f32> = data
        .chunks_exact(frame_bytes)
        .map(|frame| {
            let sum: f32 = frame
                .chunks_exact(2)
                .map(|s| i16::from_le_bytes([s[0], s[1]]) as f32 / 32768.0)
                .sum();
            sum / channels as f32
        })
        .collect();

    Waveform::new(resample_linear(&samples, rate, SAMPLE_RATE), SAMPLE_RATE)
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

/// Linear-interpolation resampling. Lossy: no anti-alias filtering is applied.
pub fn resample_linear(samples: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || samples.is_empty() {
        return samples.to_vec();
    }
    let out_len = ((samples.len() as u64 * to as u64) / from as u64).max(1) as usize;
    let ratio = from as f64 / to as f64;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let lo = pos.floor() as usize;
            let frac = (pos - lo as f64) as f32;
            let a = samples[lo.min(samples.len() - 1)];
            let b = samples[(lo + 1).min(samples.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}

fn quantize(s: f32) -> i16 {
    (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Encodes a mono waveform as 16-bit PCM.
pub fn encode_wav(wave: &Waveform) -> Vec<u8> {
    let data_len = wave.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&wave.sample_rate.to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &wave.samples {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_wav(wave)).map_err(|e| Error::io(path, e))
}
