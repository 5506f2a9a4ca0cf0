use std::path::PathBuf;

use crate::dataset::par_map;
use crate::encoder::{build_encoder, load_checkpoint, EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::frontend::{frame_context_windows, ClipFeatures, FrontendConfig};

#[derive(Clone, Debug, PartialEq)]
pub enum RepresentationKind {
    /// A trained encoder read from a checkpoint, pooled at `tap`.
    Encoder { checkpoint: PathBuf, tap: String },
    /// Per-band log-mel mean and standard deviation (width `2F`).
    LogmelStats,
    /// An untrained encoder built from `config` (its seed included).
    RandomEncoder { config: EncoderConfig, tap: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationSpec {
    pub kind: RepresentationKind,
    pub speaker_l2_norm: bool,
}

impl RepresentationSpec {
    /// Resolves the spec, loading or building the encoder as needed.
    pub fn load(&self) -> Result<Representation> {
        match &self.kind {
            RepresentationKind::Encoder { checkpoint, tap } => {
                let model = load_checkpoint(checkpoint)?;
                let name = format!(
                    "trill:{}:{}",
                    checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("model"),
                    tap
                );
                Representation::encoder(name, model, tap)
            }
            RepresentationKind::LogmelStats => Ok(Representation::LogmelStats),
            RepresentationKind::RandomEncoder { config, tap } => Representation::encoder(
                format!("random:{}:{}", config.seed, tap),
                build_encoder(config)?,
                tap,
            ),
        }
    }
}

/// A ready-to-use clip featurizer.
#[derive(Clone, Debug)]
pub enum Representation {
    Encoder {
        name: String,
        model: EncoderModel,
        tap: String,
    },
    LogmelStats,
}

impl Representation {
    pub fn encoder(name: impl Into<String>, model: EncoderModel, tap: &str) -> Result<Self> {
        model.config.tap_width(tap)?;
        Ok(Representation::Encoder {
            name: name.into(),
            model,
            tap: tap.to_string(),
        })
    }

    pub fn name(&self) -> &str {
        match self {
            Representation::Encoder { name, .. } => name,
            Representation::LogmelStats => "logmel-stats",
        }
    }

    pub fn width(&self, n_mels: usize) -> usize {
        match self {
            Representation::Encoder { model, tap, .. } => {
                model.config.tap_width(tap).expect("validated tap")
            }
            Representation::LogmelStats => 2 * n_mels,
        }
    }

    /// Mean over the clip's context windows (encoder kinds) or log-mel
    /// statistics over its frames.
    pub fn clip_vector(&self, features: &ClipFeatures, frontend: &FrontendConfig) -> Result<Vec<f64>> {
        match self {
            Representation::Encoder { model, tap, .. } => {
                let windows = frame_context_windows(features, frontend)?;
                let emb = model.embed(&windows, tap)?;
                let mut mean = vec![0.0; emb.dim];
                for i in 0..emb.len() {
                    for (m, v) in mean.iter_mut().zip(emb.row(i)) {
                        *m += v;
                    }
                }
                let n = emb.len() as f64;
                mean.iter_mut().for_each(|m| *m /= n);
                Ok(mean)
            }
            Representation::LogmelStats => logmel_stats(features),
        }
    }

    /// Clip vectors for every clip, in input order.
    pub fn clip_vectors(
        &self,
        features: &[ClipFeatures],
        frontend: &FrontendConfig,
        jobs: usize,
    ) -> Result<Vec<Vec<f64>>> {
        par_map(features, jobs, |f| self.clip_vector(f, frontend))
    }
}

/// Concatenated per-band mean and population standard deviation.
pub fn logmel_stats(features: &ClipFeatures) -> Result<Vec<f64>> {
    if features.n_frames == 0 {
        return Err(Error::TooShort {
            required: 1,
            actual: 0,
            unit: "frames",
        });
    }
    let f = features.n_mels;
    let n = features.n_frames as f64;
    let mut mean = vec![0.0; f];
    for i in 0..features.n_frames {
        for (m, v) in mean.iter_mut().zip(features.frame(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; f];
    for i in 0..features.n_frames {
        for ((s, v), m) in var.iter_mut().zip(features.frame(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    mean.extend(var.into_iter().map(|s| (s / n).sqrt()));
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::BlockSpec;
    use crate::frontend::ContextWindow;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_model() -> EncoderModel {
        build_encoder(&EncoderConfig {
            stem_channels: 2,
            blocks: vec![BlockSpec::new(4, 1, true), BlockSpec::new(6, 1, true)],
            embedding_dim: 5,
            l2_normalize_output: true,
            seed: 9,
        })
        .unwrap()
    }

    fn frontend() -> FrontendConfig {
        FrontendConfig {
            n_mels: 8,
            context_frames: 10,
            context_hop_frames: 10,
            ..FrontendConfig::default()
        }
    }

    fn features(frames: Vec<f64>) -> ClipFeatures {
        ClipFeatures {
            clip_id: "c".into(),
            n_frames: frames.len() / 8,
            n_mels: 8,
            frames,
        }
    }

    #[test]
    fn identical_windows_give_window_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frame: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..0.0)).collect();
        let feats = features(frame.repeat(30));
        let rep = Representation::encoder("m", small_model(), "final").unwrap();
        let v = rep.clip_vector(&feats, &frontend()).unwrap();
        let w = &frame_context_windows(&feats, &frontend()).unwrap()[0];
        let single = small_model().embed(std::slice::from_ref(w), "final").unwrap();
        for (a, b) in v.iter().zip(single.row(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_window_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let feats = features((0..20 * 8).map(|_| rng.random_range(-3.0..0.0)).collect());
        let model = small_model();
        let rep = Representation::encoder("m", model.clone(), "block1").unwrap();
        let v = rep.clip_vector(&feats, &frontend()).unwrap();
        let windows: Vec<ContextWindow> = frame_context_windows(&feats, &frontend()).unwrap();
        assert_eq!(windows.len(), 2);
        let e = model.embed(&windows, "block1").unwrap();
        for j in 0..4 {
            assert!((v[j] - (e.row(0)[j] + e.row(1)[j]) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn logmel_stats_of_constant_frames() {
        let frame: Vec<f64> = (0..8).map(|i| i as f64 * -0.5).collect();
        let v = logmel_stats(&features(frame.repeat(12))).unwrap();
        assert_eq!(v.len(), 16);
        assert_eq!(&v[..8], frame.as_slice());
        assert!(v[8..].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn unknown_tap_rejected() {
        let err = Representation::encoder("m", small_model(), "block7").unwrap_err();
        assert!(matches!(err, Error::UnknownTap { .. }));
    }

    #[test]
    fn random_encoder_width() {
        let spec = RepresentationSpec {
            kind: RepresentationKind::RandomEncoder {
                config: small_model().config,
                tap: "block2".into(),
            },
            speaker_l2_norm: false,
        };
        let rep = spec.load().unwrap();
        assert_eq!(rep.width(8), 6);
        assert_eq!(Representation::LogmelStats.width(64), 128);
    }
}
