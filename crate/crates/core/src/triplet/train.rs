use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{triplet_loss, LossConfig};
use super::mining::mine_triples;
use super::sampler::{sample_batch, SamplerConfig, TrainingClip};
use crate::autodiff::{Tape, Tensor};
use crate::encoder::{windows_tensor, EncoderModel};
use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerState};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 0.05,
            optimizer: Optimizer::Momentum(0.9),
            log_every: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Recorded `(step, loss)` pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub entries: Vec<(usize, f64)>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (step, loss) in &self.entries {
            out.push_str(&format!("{},{:.17e}\n", step, loss));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Mean loss over entries `[from, to)`.
    pub fn mean(&self, from: usize, to: usize) -> f64 {
        let slice = &self.entries[from.min(self.entries.len())..to.min(self.entries.len())];
        slice.iter().map(|(_, l)| l).sum::<f64>() / slice.len().max(1) as f64
    }
}

/// Runs the triplet objective on `model` and returns the trained copy.
/// Batches are drawn from a generator seeded with `sampler.seed`.
pub fn train(
    model: &EncoderModel,
    clips: &[TrainingClip],
    sampler: &SamplerConfig,
    loss: &LossConfig,
    config: &TrainConfig,
) -> Result<(EncoderModel, LossTrace)> {
    train_with(model, clips, sampler, loss, config, |_, _| {})
}

/// [`train`] with a callback invoked after every step with `(step, loss)`.
pub fn train_with(
    model: &EncoderModel,
    clips: &[TrainingClip],
    sampler: &SamplerConfig,
    loss: &LossConfig,
    config: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<(EncoderModel, LossTrace)> {
    sampler.validate()?;
    loss.validate()?;
    config.validate()?;
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let mut opt = {
        let refs: Vec<&Tensor> = model.params.iter().map(|(_, t)| t).collect();
        OptimizerState::new(config.optimizer, config.learning_rate, &refs)
    };
    let diverged = |step| Error::Divergence {
        step,
        learning_rate: config.learning_rate,
    };
    let mut trace = LossTrace::default();
    for step in 0..config.steps {
        let mut batch = sample_batch(clips, sampler, &mut rng)?;
        let mut tape = Tape::new();
        let ids = model.bind(&mut tape);
        let input = tape.constant(windows_tensor(&batch.windows)?);
        let pass = model
            .forward(&mut tape, &ids, input, None)
            .map_err(|e| match e {
                Error::NonFinite { .. } => diverged(step),
                e => e,
            })?;
        let emb = pass.output.expect("full pass");
        let (n, d) = (batch.windows.len(), tape.value(emb).shape()[1]);
        let dist = super::mining::pairwise_sqdist(tape.value(emb).data(), n, d);
        batch.triples = mine_triples(&dist, &batch.groups, loss.mining)?;
        let l = triplet_loss(&mut tape, emb, &batch.triples, loss.margin).map_err(|e| match e {
            Error::NonFinite { .. } => diverged(step),
            e => e,
        })?;
        let value = tape.value(l).item();
        if !value.is_finite() {
            return Err(diverged(step));
        }
        let mut grads = tape.backward(l)?;
        let grads: Vec<Tensor> = ids
            .iter()
            .map(|&id| grads.take(id).unwrap_or_else(|| Tensor::zeros(tape.value(id).shape())))
            .collect();
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(diverged(step));
        }
        let mut params: Vec<&mut Tensor> = model.params.iter_mut().map(|(_, t)| t).collect();
        opt.step(&mut params, &grads);
        if params.iter().any(|p| !p.all_finite()) {
            return Err(diverged(step));
        }
        if step % config.log_every == 0 {
            trace.entries.push((step, value));
        }
        on_step(step, value);
    }
    Ok((model, trace))
}
