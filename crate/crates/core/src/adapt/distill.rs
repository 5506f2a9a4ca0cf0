use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::encoder::{build_encoder, windows_tensor, EncoderConfig, EncoderModel, FINAL_TAP};
use crate::error::{Error, Result};
use crate::frontend::ContextWindow;
use crate::optim::{Optimizer, OptimizerState};
use crate::triplet::{LossTrace, TrainingClip};

use super::nonfinite_to_divergence;

#[derive(Clone, Debug, PartialEq)]
pub struct DistillConfig {
    pub teacher_tap: String,
    pub student: EncoderConfig,
    /// Insert a trailing dense layer when widths differ.
    pub adapter: bool,
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    /// Fraction of clips held out for the reported metrics.
    pub heldout_fraction: f64,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            teacher_tap: FINAL_TAP.to_string(),
            student: EncoderConfig::default().narrowed(2),
            adapter: false,
            steps: 4000,
            learning_rate: 5.0,
            optimizer: Optimizer::Momentum(0.9),
            batch_size: 16,
            heldout_fraction: 0.1,
            log_every: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DistillReport {
    pub student: EncoderModel,
    /// Held-out mean squared error per element, before and after training.
    pub initial_mse: f64,
    pub heldout_mse: f64,
    /// Held-out mean cosine similarity between student and teacher rows.
    pub heldout_cosine: f64,
    /// Teacher parameters divided by student parameters.
    pub compression: f64,
    pub trace: LossTrace,
}

/// Trains a fresh student built from `config.student`.
pub fn distill(teacher: &EncoderModel, clips: &[TrainingClip], config: &DistillConfig) -> Result<DistillReport> {
    let student = build_encoder(&config.student)?;
    distill_from(teacher, student, clips, config)
}

struct Adapter {
    w: Tensor,
    b: Tensor,
}

/// Distills into an already-initialised student.
pub fn distill_from(
    teacher: &EncoderModel,
    mut student: EncoderModel,
    clips: &[TrainingClip],
    config: &DistillConfig,
) -> Result<DistillReport> {
    if config.steps == 0 || config.batch_size == 0 || config.log_every == 0 {
        return Err(Error::Config("steps, batch_size and log_every must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&config.heldout_fraction) {
        return Err(Error::Config("heldout_fraction must lie in [0, 1)".into()));
    }
    let target_dim = teacher.config.tap_width(&config.teacher_tap)?;
    let student_dim = student.config.embedding_dim;
    let mut adapter = if student_dim == target_dim {
        None
    } else if !config.adapter {
        return Err(Error::Config(format!(
            "student width {} differs from teacher tap `{}` width {}; enable the adapter",
            student_dim, config.teacher_tap, target_dim
        )));
    } else if student.config.l2_normalize_output {
        return Err(Error::Config(
            "an adapter cannot follow a normalized student output; disable l2_normalize_output".into(),
        ));
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xada7);
        let limit = (6.0 / student_dim as f64).sqrt();
        let w = (0..student_dim * target_dim).map(|_| rng.random_range(-limit..limit)).collect();
        Some(Adapter {
            w: Tensor::matrix(student_dim, target_dim, w)?,
            b: Tensor::zeros(&[target_dim]),
        })
    };

    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    order.shuffle(&mut rng);
    let n_held = (config.heldout_fraction * clips.len() as f64).round() as usize;
    let (held_idx, train_idx) = order.split_at(n_held);
    let collect = |idx: &[usize]| -> Vec<ContextWindow> {
        let mut sorted = idx.to_vec();
        sorted.sort_unstable();
        sorted.iter().flat_map(|&i| clips[i].windows.iter().cloned()).collect()
    };
    let train_windows = collect(train_idx);
    let held_windows = collect(held_idx);
    if train_windows.is_empty() {
        return Err(Error::Sampling("no training windows left for distillation".into()));
    }
    let train_targets = teacher.embed(&train_windows, &config.teacher_tap)?.rows;
    let held_targets = if held_windows.is_empty() {
        Vec::new()
    } else {
        teacher.embed(&held_windows, &config.teacher_tap)?.rows
    };

    let initial = evaluate(&student, adapter.as_ref(), &held_windows, &held_targets, target_dim)?;

    let mut opt = {
        let mut refs: Vec<&Tensor> = student.params.iter().map(|(_, t)| t).collect();
        if let Some(a) = &adapter {
            refs.push(&a.w);
            refs.push(&a.b);
        }
        OptimizerState::new(config.optimizer, config.learning_rate, &refs)
    };
    let mut trace = LossTrace::default();
    let batch = config.batch_size.min(train_windows.len());
    for step in 0..config.steps {
        let picks = rand::seq::index::sample(&mut rng, train_windows.len(), batch).into_vec();
        let windows: Vec<ContextWindow> = picks.iter().map(|&i| train_windows[i].clone()).collect();
        let targets: Vec<f64> = picks
            .iter()
            .flat_map(|&i| train_targets[i * target_dim..(i + 1) * target_dim].iter().copied())
            .collect();
        let mut tape = Tape::new();
        let ids = student.bind(&mut tape);
        let adapter_ids = adapter.as_ref().map(|a| (tape.param(a.w.clone()), tape.param(a.b.clone())));
        let result = (|| {
            let out = student_output(&student, &mut tape, &ids, adapter_ids, &windows)?;
            let target = tape.constant(Tensor::matrix(batch, target_dim, targets)?);
            let diff = tape.sub(out, target)?;
            let sq = tape.square(diff)?;
            tape.mean(sq)
        })();
        let loss = result.map_err(|e| nonfinite_to_divergence(e, step, config.learning_rate))?;
        let value = tape.value(loss).item();
        let diverged = Error::Divergence {
            step,
            learning_rate: config.learning_rate,
        };
        if !value.is_finite() {
            return Err(diverged);
        }
        let mut grads = tape.backward(loss)?;
        let mut all_ids = ids.clone();
        if let Some((w, b)) = adapter_ids {
            all_ids.extend([w, b]);
        }
        let grads: Vec<Tensor> = all_ids
            .iter()
            .map(|&id| grads.take(id).unwrap_or_else(|| Tensor::zeros(tape.value(id).shape())))
            .collect();
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(diverged);
        }
        let mut params: Vec<&mut Tensor> = student.params.iter_mut().map(|(_, t)| t).collect();
        if let Some(a) = adapter.as_mut() {
            params.push(&mut a.w);
            params.push(&mut a.b);
        }
        opt.step(&mut params, &grads);
        if params.iter().any(|p| !p.all_finite()) {
            return Err(diverged);
        }
        if step % config.log_every == 0 {
            trace.entries.push((step, value));
        }
    }

    let (heldout_mse, heldout_cosine) =
        evaluate(&student, adapter.as_ref(), &held_windows, &held_targets, target_dim)?;
    if !heldout_mse.is_finite() || !heldout_cosine.is_finite() {
        return Err(Error::Divergence {
            step: config.steps - 1,
            learning_rate: config.learning_rate,
        });
    }
    if let Some(a) = adapter {
        fold_adapter(&mut student, &a)?;
    }
    Ok(DistillReport {
        compression: teacher.parameter_count() as f64 / student.parameter_count() as f64,
        student,
        initial_mse: initial.0,
        heldout_mse,
        heldout_cosine,
        trace,
    })
}

fn student_output(
    student: &EncoderModel,
    tape: &mut Tape,
    ids: &[NodeId],
    adapter: Option<(NodeId, NodeId)>,
    windows: &[ContextWindow],
) -> Result<NodeId> {
    let input = tape.constant(windows_tensor(windows)?);
    let out = student.forward_tap(tape, ids, input, FINAL_TAP)?;
    match adapter {
        Some((w, b)) => tape.dense(out, w, b),
        None => Ok(out),
    }
}

/// Held-out `(mse, mean cosine)`; zeros when nothing is held out.
fn evaluate(
    student: &EncoderModel,
    adapter: Option<&Adapter>,
    windows: &[ContextWindow],
    targets: &[f64],
    dim: usize,
) -> Result<(f64, f64)> {
    if windows.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut rows = student.embed(windows, FINAL_TAP)?.rows;
    if let Some(a) = adapter {
        rows = apply_dense(&rows, student.config.embedding_dim, a.w.data(), a.b.data(), dim);
    }
    let mut se = 0.0;
    let mut cos = 0.0;
    for (s, t) in rows.chunks(dim).zip(targets.chunks(dim)) {
        let (mut dot, mut ns, mut nt) = (0.0, 0.0, 0.0);
        for (a, b) in s.iter().zip(t) {
            se += (a - b) * (a - b);
            dot += a * b;
            ns += a * a;
            nt += b * b;
        }
        let denom = (ns * nt).sqrt();
        cos += if denom > 0.0 { dot / denom } else { 0.0 };
    }
    Ok((se / targets.len() as f64, cos / windows.len() as f64))
}

fn apply_dense(rows: &[f64], din: usize, w: &[f64], b: &[f64], dout: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() / din * dout);
    for r in rows.chunks(din) {
        let mut o = b.to_vec();
        for (x, wrow) in r.iter().zip(w.chunks(dout)) {
            for (acc, wv) in o.iter_mut().zip(wrow) {
                *acc += x * wv;
            }
        }
        out.extend(o);
    }
    out
}

/// Composes the adapter into the head so the student stays a plain encoder.
fn fold_adapter(student: &mut EncoderModel, adapter: &Adapter) -> Result<()> {
    let d = student.config.embedding_dim;
    let dout = adapter.b.len();
    let head_w = student.param("head.w").expect("head").clone();
    let head_b = student.param("head.b").expect("head").clone();
    let cin = head_w.shape()[0];
    let w = apply_dense(head_w.data(), d, adapter.w.data(), &vec![0.0; dout], dout);
    let b = apply_dense(head_b.data(), d, adapter.w.data(), adapter.b.data(), dout);
    student.config.embedding_dim = dout;
    for (name, t) in student.params.iter_mut() {
        match name.as_str() {
            "head.w" => *t = Tensor::matrix(cin, dout, w.clone())?,
            "head.b" => *t = Tensor::vector(b.clone()),
            _ => {}
        }
    }
    Ok(())
}
