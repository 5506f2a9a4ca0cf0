use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng;

use super::mining::Triple;
use crate::error::{Error, Result};
use crate::frontend::ContextWindow;

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    /// Anchor/positive time scale in seconds.
    pub tau_seconds: f64,
    pub clips_per_batch: usize,
    pub windows_per_clip: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            tau_seconds: 10.0,
            clips_per_batch: 8,
            windows_per_clip: 2,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clips_per_batch < 2 || self.windows_per_clip < 2 {
            return Err(Error::Config(
                "clips_per_batch and windows_per_clip must both be at least 2".into(),
            ));
        }
        if !(self.tau_seconds > 0.0) {
            return Err(Error::Config("tau_seconds must be positive".into()));
        }
        Ok(())
    }
}

/// A clip's context windows plus the timing needed to place them.
#[derive(Clone, Debug)]
pub struct TrainingClip {
    pub clip_id: String,
    pub duration_seconds: f64,
    /// Seconds between consecutive STFT frames.
    pub frame_hop_seconds: f64,
    pub windows: Vec<ContextWindow>,
}

impl TrainingClip {
    /// Temporal group of window `i`: the clip itself when it fits inside
    /// `tau`, otherwise the `tau`-second segment containing the window start.
    pub fn group_of(&self, i: usize, tau_seconds: f64) -> String {
        if self.duration_seconds <= tau_seconds {
            self.clip_id.clone()
        } else {
            let start = self.windows[i].start_frame as f64 * self.frame_hop_seconds;
            format!("{}@{}", self.clip_id, (start / tau_seconds).floor() as usize)
        }
    }
}

/// Windows of one training batch, their temporal groups and mined triples.
#[derive(Clone, Debug)]
pub struct TripletBatch {
    pub windows: Vec<ContextWindow>,
    /// Dense group index per window.
    pub groups: Vec<usize>,
    /// Group names indexed by group index.
    pub group_names: Vec<String>,
    pub triples: Vec<Triple>,
}

/// Draws `clips_per_batch` distinct clips and `windows_per_clip` distinct
/// windows from each. Triples are left empty for the miner to fill.
pub fn sample_batch<R: Rng>(
    clips: &[TrainingClip],
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<TripletBatch> {
    config.validate()?;
    let eligible: Vec<&TrainingClip> = clips
        .iter()
        .filter(|c| c.windows.len() >= config.windows_per_clip)
        .collect();
    if eligible.len() < config.clips_per_batch {
        return Err(Error::Sampling(format!(
            "need {} clips with at least {} windows each, found {}",
            config.clips_per_batch,
            config.windows_per_clip,
            eligible.len()
        )));
    }
    let mut windows = Vec::with_capacity(config.clips_per_batch * config.windows_per_clip);
    let mut groups = Vec::with_capacity(windows.capacity());
    let mut group_names: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for ci in sample(rng, eligible.len(), config.clips_per_batch).into_iter() {
        let clip = eligible[ci];
        let mut picks = sample(rng, clip.windows.len(), config.windows_per_clip).into_vec();
        picks.sort_unstable();
        for wi in picks {
            let name = clip.group_of(wi, config.tau_seconds);
            let g = *index.entry(name.clone()).or_insert_with(|| {
                group_names.push(name);
                group_names.len() - 1
            });
            groups.push(g);
            windows.push(clip.windows[wi].clone());
        }
    }
    Ok(TripletBatch {
        windows,
        groups,
        group_names,
        triples: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn clip(id: &str, seconds: f64, n_windows: usize, hop_frames: usize) -> TrainingClip {
        TrainingClip {
            clip_id: id.into(),
            duration_seconds: seconds,
            frame_hop_seconds: 0.01,
            windows: (0..n_windows)
                .map(|i| ContextWindow {
                    clip_id: id.into(),
                    start_frame: i * hop_frames,
                    n_mels: 1,
                    n_frames: 1,
                    values: vec![i as f64],
                })
                .collect(),
        }
    }

    #[test]
    fn two_by_two_batch() {
        let clips = vec![clip("a", 2.0, 3, 96), clip("b", 2.0, 3, 96), clip("c", 2.0, 3, 96)];
        let cfg = SamplerConfig {
            clips_per_batch: 2,
            windows_per_clip: 2,
            ..SamplerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = sample_batch(&clips, &cfg, &mut rng).unwrap();
        assert_eq!(b.windows.len(), 4);
        assert_eq!(b.group_names.len(), 2);
        assert_eq!(b.groups[0], b.groups[1]);
        assert_eq!(b.groups[2], b.groups[3]);
        assert_ne!(b.groups[0], b.groups[2]);
        // short clips: the group is the clip
        for (w, g) in b.windows.iter().zip(&b.groups) {
            assert_eq!(w.clip_id, b.group_names[*g]);
        }
    }

    #[test]
    fn long_clip_splits_at_tau() {
        // 25 s clip with a window every 0.96 s
        let c = clip("long", 25.0, 25, 96);
        let groups: Vec<String> = (0..c.windows.len()).map(|i| c.group_of(i, 10.0)).collect();
        let mut distinct = groups.clone();
        distinct.dedup();
        assert_eq!(distinct, vec!["long@0", "long@1", "long@2"]);
        for (i, g) in groups.iter().enumerate() {
            let start = i as f64 * 0.96;
            let expected = if start < 10.0 { 0 } else if start < 20.0 { 1 } else { 2 };
            assert_eq!(g, &format!("long@{}", expected));
        }
    }

    #[test]
    fn insufficient_material_is_reported() {
        let clips = vec![clip("a", 2.0, 3, 96), clip("b", 2.0, 1, 96)];
        let cfg = SamplerConfig {
            clips_per_batch: 2,
            windows_per_clip: 2,
            ..SamplerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(sample_batch(&clips, &cfg, &mut rng), Err(Error::Sampling(_))));
        let bad = SamplerConfig {
            clips_per_batch: 1,
            ..cfg
        };
        assert!(bad.validate().is_err());
    }
}
