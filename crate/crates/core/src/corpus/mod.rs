//! Audio ingestion, labeled manifests and the synthetic corpus.

mod manifest;
mod synth;
mod wav;

pub use manifest::{load_manifest, Manifest, ManifestEntry, MANIFEST_HEADER};
pub use synth::{class_name, speaker_name, synth_clip, synth_corpus, SynthSpec};
pub use wav::{decode_wav, encode_wav, read_wav, resample_linear, write_wav, Waveform, SAMPLE_RATE};
