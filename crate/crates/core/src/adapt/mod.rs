//! Teacher-student distillation and supervised fine-tuning.

mod distill;
mod finetune;

pub use distill::{distill, distill_from, DistillConfig, DistillReport};
pub use finetune::{
    finetune, finetune_per_speaker, finetune_split, frozen_probe_accuracy, FinetuneConfig,
    Finetuned, PerSpeakerReport, SpeakerFinetune, ThreeWaySplit,
};

use crate::error::Error;

pub(crate) fn nonfinite_to_divergence(e: Error, step: usize, learning_rate: f64) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Divergence { step, learning_rate },
        e => e,
    }
}
