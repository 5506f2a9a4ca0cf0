//! Log-mel spectrogram context windows.

mod cache;
mod mel;

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub use cache::{decode_features, encode_features, read_features, write_features};
pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank};

use crate::corpus::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FrontendConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
    /// F, the number of mel bands.
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_offset: f64,
    /// T, frames per context window.
    pub context_frames: usize,
    pub context_hop_frames: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            window_ms: 25.0,
            hop_ms: 10.0,
            fft_size: 512,
            n_mels: 64,
            fmin_hz: 125.0,
            fmax_hz: 7500.0,
            log_offset: 0.01,
            context_frames: 96,
            context_hop_frames: 96,
        }
    }
}

impl FrontendConfig {
    /// Half-overlapping windows, used when embedding clips for evaluation.
    pub fn for_evaluation() -> Self {
        let base = Self::default();
        Self {
            context_hop_frames: base.context_frames / 2,
            ..base
        }
    }

    pub fn window_samples(&self) -> usize {
        (self.window_ms * SAMPLE_RATE as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * SAMPLE_RATE as f64 / 1000.0).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        let problems: Vec<String> = [
            (!(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist))
                .then(|| format!("need 0 <= fmin < fmax <= {}", nyquist)),
            (self.window_samples() == 0 || self.fft_size < self.window_samples())
                .then(|| "fft_size must cover the analysis window".to_string()),
            (self.hop_samples() == 0).then(|| "hop must be at least one sample".to_string()),
            (self.n_mels == 0).then(|| "n_mels must be at least 1".to_string()),
            (self.context_frames == 0).then(|| "context_frames must be at least 1".to_string()),
            (self.context_hop_frames == 0).then(|| "context_hop_frames must be at least 1".to_string()),
            (!(self.log_offset > 0.0)).then(|| "log_offset must be positive".to_string()),
        ]
        .into_iter()
        .flatten()
        .collect();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Per-frame log-mel values of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipFeatures {
    pub clip_id: String,
    pub n_frames: usize,
    pub n_mels: usize,
    /// Row-major `n_frames × n_mels`.
    pub frames: Vec<f64>,
}

impl ClipFeatures {
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.frames[i * self.n_mels..(i + 1) * self.n_mels]
    }
}

/// An `F × T` patch: row `f` holds band `f` across `T` consecutive frames.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextWindow {
    pub clip_id: String,
    pub start_frame: usize,
    pub n_mels: usize,
    pub n_frames: usize,
    pub values: Vec<f64>,
}

/// Reusable STFT + filterbank state for one configuration.
pub struct Frontend {
    config: FrontendConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    bank: MelFilterbank,
}

impl std::fmt::Debug for Frontend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Frontend").field("config", &self.config).finish()
    }
}

impl Frontend {
    pub fn new(config: FrontendConfig) -> Result<Self> {
        config.validate()?;
        let n = config.window_samples();
        // periodic Hann
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        let bank = MelFilterbank::new(
            config.n_mels,
            config.fft_size,
            SAMPLE_RATE as f64,
            config.fmin_hz,
            config.fmax_hz,
        );
        Ok(Self {
            config,
            window,
            fft,
            bank,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    /// Number of STFT frames for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        let win = self.config.window_samples();
        if len < win {
            0
        } else {
            1 + (len - win) / self.config.hop_samples()
        }
    }

    pub fn stft_logmel(&self, wave: &Waveform, clip_id: &str) -> Result<ClipFeatures> {
        if wave.sample_rate != SAMPLE_RATE {
            return Err(Error::Validation(format!(
                "waveform is {} Hz; the frontend expects {} Hz",
                wave.sample_rate, SAMPLE_RATE
            )));
        }
        let win = self.config.window_samples();
        let hop = self.config.hop_samples();
        let n_frames = self.frame_count(wave.len());
        if n_frames == 0 {
            return Err(Error::TooShort {
                required: win,
                actual: wave.len(),
                unit: "samples",
            });
        }
        let f = self.config.n_mels;
        let n_bins = self.config.fft_size / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); self.config.fft_size];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_bins];
        let mut frames = vec![0.0; n_frames * f];
        for i in 0..n_frames {
            let seg = &wave.samples[i * hop..i * hop + win];
            for (slot, (s, w)) in buf.iter_mut().zip(seg.iter().zip(&self.window)) {
                *slot = Complex::new(*s as f64 * w, 0.0);
            }
            buf[win..].fill(Complex::new(0.0, 0.0));
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let out = &mut frames[i * f..(i + 1) * f];
            self.bank.apply(&power, out);
            for v in out.iter_mut() {
                *v = (*v + self.config.log_offset).ln();
            }
        }
        Ok(ClipFeatures {
            clip_id: clip_id.to_string(),
            n_frames,
            n_mels: f,
            frames,
        })
    }

    pub fn context_windows(&self, features: &ClipFeatures) -> Result<Vec<ContextWindow>> {
        frame_context_windows(features, &self.config)
    }
}

/// Convenience wrapper building a [`Frontend`] for a single call.
pub fn stft_logmel(wave: &Waveform, config: &FrontendConfig) -> Result<ClipFeatures> {
    Frontend::new(config.clone())?.stft_logmel(wave, "")
}

/// Slices `T`-frame windows starting every `context_hop_frames` frames.
pub fn frame_context_windows(
    features: &ClipFeatures,
    config: &FrontendConfig,
) -> Result<Vec<ContextWindow>> {
    let t = config.context_frames;
    if config.context_hop_frames == 0 {
        return Err(Error::Config("context_hop_frames must be at least 1".into()));
    }
    if features.n_frames < t {
        return Err(Error::TooShort {
            required: t,
            actual: features.n_frames,
            unit: "frames",
        });
    }
    let f = features.n_mels;
    let windows = (0..=features.n_frames - t)
        .step_by(config.context_hop_frames)
        .map(|start| {
            let mut values = vec![0.0; f * t];
            for dt in 0..t {
                let frame = features.frame(start + dt);
                for (band, v) in frame.iter().enumerate() {
                    values[band * t + dt] = *v;
                }
            }
            ContextWindow {
                clip_id: features.clip_id.clone(),
                start_frame: start,
                n_mels: f,
                n_frames: t,
                values,
            }
        })
        .collect();
    Ok(windows)
}
