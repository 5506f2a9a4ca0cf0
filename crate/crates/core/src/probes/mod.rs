//! Shallow-probe evaluation of clip-level representations.

mod classifier;
mod normalize;
mod protocol;
mod representation;

pub use classifier::{fit_lda, fit_logreg, LinearClassifier, LogRegConfig, ProbeConfig};
pub use normalize::speaker_l2_normalize;
pub use protocol::{
    eval_inter, eval_intra, inter_split, EvalOptions, EvalReport, ProbeSpec, Split, SplitAccuracy,
};
pub use representation::{logmel_stats, Representation, RepresentationKind, RepresentationSpec};
