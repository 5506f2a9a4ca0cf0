use super::mining::{Mining, Triple};
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Margin δ.
    pub margin: f64,
    pub mining: Mining,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            mining: Mining::SemiHard,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return Err(Error::Config(format!("margin must be >= 0, got {}", self.margin)));
        }
        Ok(())
    }
}

/// Mean over `triples` of `[D(a,p) - D(a,n) + margin]_+`, recorded on the
/// tape so that `backward` reaches the embeddings.
pub fn triplet_loss(
    tape: &mut Tape,
    embeddings: NodeId,
    triples: &[Triple],
    margin: f64,
) -> Result<NodeId> {
    if triples.is_empty() {
        return Err(Error::Contract("triplet loss needs at least one triple".into()));
    }
    let n = match tape.value(embeddings).shape() {
        [n, _] => *n,
        other => {
            return Err(Error::Shape {
                op: "triplet_loss",
                detail: format!("embeddings must be rank 2, got {:?}", other),
            })
        }
    };
    if let Some(t) = triples
        .iter()
        .find(|t| t.anchor >= n || t.positive >= n || t.negative >= n)
    {
        return Err(Error::Contract(format!("triple {:?} out of range for {} rows", t, n)));
    }
    let dist = tape.pairwise_sqdist(embeddings)?;
    let ap = tape.gather(dist, triples.iter().map(|t| t.anchor * n + t.positive).collect())?;
    let an = tape.gather(dist, triples.iter().map(|t| t.anchor * n + t.negative).collect())?;
    let diff = tape.sub(ap, an)?;
    let shifted = tape.add_scalar(diff, margin)?;
    let per_triple = tape.hinge(shifted)?;
    tape.mean(per_triple)
}
