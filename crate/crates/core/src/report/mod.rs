//! Cross-task analysis of probe accuracies.

mod regression;

pub use regression::{model_effect_regression, AccuracyRow, AccuracyTable, EffectReport};
