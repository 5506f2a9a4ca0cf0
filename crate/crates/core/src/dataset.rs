//! Glue between manifests, the frontend and the trainers: batch
//! featurization with a bounded worker pool and an optional on-disk cache.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::corpus::{read_wav, Manifest};
use crate::error::{Error, Result};
use crate::frontend::{
    frame_context_windows, read_features, write_features, ClipFeatures, Frontend, FrontendConfig,
};
use crate::triplet::TrainingClip;

/// Maps `f` over `items` with at most `jobs` workers. Output order and
/// values never depend on `jobs`; the first failing item (in input order)
/// determines the error.
pub fn par_map<T, U, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {}", jobs, e)))?;
    let results: Vec<Result<U>> = pool.install(|| items.par_iter().map(&f).collect());
    results.into_iter().collect()
}

/// Cache file for one clip inside `dir`.
pub fn feature_cache_path(dir: impl AsRef<Path>, clip_id: &str) -> PathBuf {
    dir.as_ref().join(format!("{}.feat", clip_id))
}

/// Reads and featurizes every clip, in manifest order.
pub fn featurize_manifest(
    manifest: &Manifest,
    config: &FrontendConfig,
    jobs: usize,
) -> Result<Vec<ClipFeatures>> {
    let frontend = Frontend::new(config.clone())?;
    par_map(&manifest.entries, jobs, |e| {
        frontend.stft_logmel(&read_wav(&e.path)?, &e.clip_id)
    })
}

/// Writes one cache file per clip into `dir` (created if missing).
pub fn write_feature_cache(dir: impl AsRef<Path>, features: &[ClipFeatures]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    features
        .iter()
        .try_for_each(|f| write_features(feature_cache_path(dir, &f.clip_id), f))
}

/// Loads features from `cache_dir` when given, otherwise featurizes audio.
pub fn load_features(
    manifest: &Manifest,
    config: &FrontendConfig,
    cache_dir: Option<&Path>,
    jobs: usize,
) -> Result<Vec<ClipFeatures>> {
    match cache_dir {
        Some(dir) => {
            let feats = par_map(&manifest.entries, jobs, |e| {
                read_features(feature_cache_path(dir, &e.clip_id), &e.clip_id)
            })?;
            if let Some(f) = feats.iter().find(|f| f.n_mels != config.n_mels) {
                return Err(Error::Validation(format!(
                    "cached features for `{}` have {} bands, config expects {}",
                    f.clip_id, f.n_mels, config.n_mels
                )));
            }
            Ok(feats)
        }
        None => featurize_manifest(manifest, config, jobs),
    }
}

/// Approximate clip duration recovered from its frame count.
pub fn duration_from_frames(n_frames: usize, config: &FrontendConfig) -> f64 {
    let hop = config.hop_samples() as f64;
    let win = config.window_samples() as f64;
    ((n_frames.max(1) - 1) as f64 * hop + win) / crate::corpus::SAMPLE_RATE as f64
}

/// Slices every clip into windows with the given hop for triplet sampling.
/// Clips shorter than one window are skipped.
pub fn training_clips(
    features: &[ClipFeatures],
    config: &FrontendConfig,
    context_hop_frames: usize,
) -> Result<Vec<TrainingClip>> {
    let cfg = FrontendConfig {
        context_hop_frames,
        ..config.clone()
    };
    let frame_hop_seconds = config.hop_samples() as f64 / crate::corpus::SAMPLE_RATE as f64;
    let mut out = Vec::with_capacity(features.len());
    for f in features {
        let windows = match frame_context_windows(f, &cfg) {
            Ok(w) => w,
            Err(Error::TooShort { .. }) => continue,
            Err(e) => return Err(e),
        };
        out.push(TrainingClip {
            clip_id: f.clip_id.clone(),
            duration_seconds: duration_from_frames(f.n_frames, config),
            frame_hop_seconds,
            windows,
        });
    }
    Ok(out)
}
