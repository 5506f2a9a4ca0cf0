//! Temporal-proximity triplet training.

mod loss;
mod mining;
mod sampler;
mod train;

pub use loss::{triplet_loss, LossConfig};
pub use mining::{mine_triples, pairwise_sqdist, Mining, Triple};
pub use sampler::{sample_batch, SamplerConfig, TrainingClip, TripletBatch};
pub use train::{train, train_with, LossTrace, TrainConfig};

/// Semi-hard mining, the default strategy.
pub fn mine_semihard(
    dist: &[f64],
    groups: &[usize],
) -> crate::Result<Vec<Triple>> {
    mine_triples(dist, groups, Mining::SemiHard)
}
