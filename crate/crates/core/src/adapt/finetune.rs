use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::corpus::Manifest;
use crate::dataset::par_map;
use crate::encoder::{windows_tensor, EncoderModel, FINAL_TAP};
use crate::error::{Error, Result};
use crate::frontend::{frame_context_windows, ClipFeatures, ContextWindow, FrontendConfig};
use crate::optim::{Optimizer, OptimizerState};
use crate::probes::{LinearClassifier, ProbeSpec};

use super::nonfinite_to_divergence;

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub train_fraction: f64,
    pub dev_fraction: f64,
    pub test_fraction: f64,
    /// Evaluations without dev improvement before stopping.
    pub patience: usize,
    pub steps_per_eval: usize,
    /// Hard cap on optimisation steps.
    pub max_steps: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub seed: u64,
    /// Frontend windows used for both training and clip scoring.
    pub frontend: FrontendConfig,
    pub jobs: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            dev_fraction: 0.1,
            test_fraction: 0.1,
            patience: 5,
            steps_per_eval: 20,
            max_steps: 400,
            learning_rate: 0.01,
            optimizer: Optimizer::Momentum(0.9),
            batch_size: 16,
            seed: 0,
            frontend: FrontendConfig::for_evaluation(),
            jobs: 1,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        let sum = self.train_fraction + self.dev_fraction + self.test_fraction;
        if (sum - 1.0).abs() > 1e-9 || [self.train_fraction, self.dev_fraction, self.test_fraction].iter().any(|f| !(*f > 0.0)) {
            return Err(Error::Config(format!(
                "train/dev/test fractions must be positive and sum to 1, got {}",
                sum
            )));
        }
        if self.patience == 0 || self.steps_per_eval == 0 || self.batch_size == 0 {
            return Err(Error::Config("patience, steps_per_eval and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Manifest indices of a train/dev/test partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThreeWaySplit {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits `indices` (labels `labels[i]`) per class: dev and test each take
/// `max(1, round(f · n_c))` members. Classes with fewer than 3 members stay
/// in train.
fn stratified_three_way(
    indices: &[usize],
    labels: &[usize],
    config: &FinetuneConfig,
    rng: &mut ChaCha8Rng,
) -> ThreeWaySplit {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        by_class.entry(labels[i]).or_default().push(i);
    }
    let mut split = ThreeWaySplit {
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    for (_, mut members) in by_class {
        members.shuffle(rng);
        let n = members.len();
        if n < 3 {
            split.train.extend(members);
            continue;
        }
        let n_test = ((config.test_fraction * n as f64).round() as usize).max(1);
        let n_dev = ((config.dev_fraction * n as f64).round() as usize).max(1);
        let (n_test, n_dev) = if n_test + n_dev >= n { (1, 1) } else { (n_test, n_dev) };
        split.test.extend_from_slice(&members[..n_test]);
        split.dev.extend_from_slice(&members[n_test..n_test + n_dev]);
        split.train.extend_from_slice(&members[n_test + n_dev..]);
    }
    split.train.sort_unstable();
    split.dev.sort_unstable();
    split.test.sort_unstable();
    split
}

fn label_indices(manifest: &Manifest) -> (Vec<usize>, usize) {
    let names = manifest.labels();
    let labels = manifest
        .entries
        .iter()
        .map(|e| names.binary_search(&e.label).expect("label listed"))
        .collect();
    (labels, names.len())
}

/// The fixed 80/10/10 partition used by [`finetune`].
pub fn finetune_split(manifest: &Manifest, config: &FinetuneConfig) -> Result<ThreeWaySplit> {
    config.validate()?;
    manifest.check_classification()?;
    let (labels, _) = label_indices(manifest);
    let all: Vec<usize> = (0..manifest.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let split = stratified_three_way(&all, &labels, config, &mut rng);
    let present = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<std::collections::BTreeSet<_>>();
    if present(&split.dev) != present(&split.train) || split.test.is_empty() {
        return Err(Error::Protocol(
            "every class needs at least 3 clips for a train/dev/test split".into(),
        ));
    }
    Ok(split)
}

/// Per-clip windows in manifest order.
fn clip_windows(features: &[ClipFeatures], frontend: &FrontendConfig, jobs: usize) -> Result<Vec<Vec<ContextWindow>>> {
    par_map(features, jobs, |f| frame_context_windows(f, frontend))
}

/// Mean final-tap embedding per clip.
fn clip_embeddings(model: &EncoderModel, windows: &[Vec<ContextWindow>], idx: &[usize]) -> Result<Vec<Vec<f64>>> {
    let flat: Vec<ContextWindow> = idx.iter().flat_map(|&i| windows[i].iter().cloned()).collect();
    if flat.is_empty() {
        return Ok(Vec::new());
    }
    let emb = model.embed(&flat, FINAL_TAP)?;
    let mut out = Vec::with_capacity(idx.len());
    let mut row = 0;
    for &i in idx {
        let n = windows[i].len();
        let mut mean = vec![0.0; emb.dim];
        for r in row..row + n {
            for (m, v) in mean.iter_mut().zip(emb.row(r)) {
                *m += v / n as f64;
            }
        }
        row += n;
        out.push(mean);
    }
    Ok(out)
}

fn clip_accuracy(
    model: &EncoderModel,
    head: &LinearClassifier,
    windows: &[Vec<ContextWindow>],
    labels: &[usize],
    idx: &[usize],
) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let vecs = clip_embeddings(model, windows, idx)?;
    let hits = vecs.iter().zip(idx).filter(|(v, &i)| head.predict(v) == labels[i]).count();
    Ok(hits as f64 / idx.len() as f64)
}

/// A fine-tuned encoder with its classification head.
#[derive(Clone, Debug)]
pub struct Finetuned {
    pub model: EncoderModel,
    pub head: LinearClassifier,
    /// Test accuracy of the returned (best-dev) parameters.
    pub test_accuracy: f64,
    /// Test accuracy of the frozen encoder with the initial head.
    pub frozen_test_accuracy: f64,
    /// `(step, dev accuracy)` at every evaluation.
    pub dev_trace: Vec<(usize, f64)>,
    pub best_step: usize,
    pub split: ThreeWaySplit,
}

struct Stage<'a> {
    windows: &'a [Vec<ContextWindow>],
    labels: &'a [usize],
    train: &'a [usize],
    dev: &'a [usize],
}

struct StageResult {
    model: EncoderModel,
    head: LinearClassifier,
    dev_trace: Vec<(usize, f64)>,
    best_step: usize,
}

/// Cross-entropy training of encoder and head with dev-accuracy early
/// stopping; returns the best-dev parameters.
fn run_stage(
    model: &EncoderModel,
    head: &LinearClassifier,
    stage: &Stage,
    config: &FinetuneConfig,
    seed: u64,
) -> Result<StageResult> {
    let pool: Vec<(usize, usize)> = stage
        .train
        .iter()
        .flat_map(|&c| (0..stage.windows[c].len()).map(move |w| (c, w)))
        .collect();
    if pool.is_empty() {
        return Err(Error::Sampling("no training windows for fine-tuning".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = model.clone();
    let mut head_w = Tensor::matrix(head.dim, head.n_classes, head.weights.clone())?;
    let mut head_b = Tensor::vector(head.bias.clone());
    let mut opt = {
        let mut refs: Vec<&Tensor> = model.params.iter().map(|(_, t)| t).collect();
        refs.extend([&head_w, &head_b]);
        OptimizerState::new(config.optimizer, config.learning_rate, &refs)
    };
    let as_head = |w: &Tensor, b: &Tensor| LinearClassifier {
        weights: w.data().to_vec(),
        bias: b.data().to_vec(),
        dim: head.dim,
        n_classes: head.n_classes,
    };

    let mut best = (
        clip_accuracy(&model, head, stage.windows, stage.labels, stage.dev)?,
        model.clone(),
        head.clone(),
        0,
    );
    let mut dev_trace = vec![(0, best.0)];
    let mut stale = 0;
    let batch = config.batch_size.min(pool.len());
    let mut step = 0;
    while step < config.max_steps && stale < config.patience {
        for _ in 0..config.steps_per_eval {
            let picks = rand::seq::index::sample(&mut rng, pool.len(), batch).into_vec();
            let windows: Vec<ContextWindow> =
                picks.iter().map(|&p| stage.windows[pool[p].0][pool[p].1].clone()).collect();
            let targets: Vec<usize> = picks.iter().map(|&p| stage.labels[pool[p].0]).collect();
            let mut tape = Tape::new();
            let ids = model.bind(&mut tape);
            let (w_id, b_id) = (tape.param(head_w.clone()), tape.param(head_b.clone()));
            let loss = (|| {
                let input = tape.constant(windows_tensor(&windows)?);
                let emb = model.forward_tap(&mut tape, &ids, input, FINAL_TAP)?;
                let logits = tape.dense(emb, w_id, b_id)?;
                tape.softmax_cross_entropy(logits, &targets)
            })()
            .map_err(|e| nonfinite_to_divergence(e, step, config.learning_rate))?;
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = ids
                .iter()
                .chain([&w_id, &b_id])
                .map(|&id| grads.take(id).unwrap_or_else(|| Tensor::zeros(tape.value(id).shape())))
                .collect();
            if grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::Divergence {
                    step,
                    learning_rate: config.learning_rate,
                });
            }
            let mut params: Vec<&mut Tensor> = model.params.iter_mut().map(|(_, t)| t).collect();
            params.push(&mut head_w);
            params.push(&mut head_b);
            opt.step(&mut params, &grads);
            step += 1;
        }
        let current = as_head(&head_w, &head_b);
        let acc = clip_accuracy(&model, &current, stage.windows, stage.labels, stage.dev)?;
        dev_trace.push((step, acc));
        if acc > best.0 {
            best = (acc, model.clone(), current, step);
            stale = 0;
        } else {
            stale += 1;
        }
    }
    Ok(StageResult {
        model: best.1,
        head: best.2,
        dev_trace,
        best_step: best.3,
    })
}

/// Fits the initial head as a frozen-encoder probe on the training clips.
fn initial_head(
    model: &EncoderModel,
    windows: &[Vec<ContextWindow>],
    labels: &[usize],
    n_classes: usize,
    train: &[usize],
    seed: u64,
) -> Result<LinearClassifier> {
    let x = clip_embeddings(model, windows, train)?.concat();
    let y: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ProbeSpec::logreg().fit(&x, &y, n_classes, &mut rng)
}

/// Frozen-encoder probe accuracy on the test side of `split`, with the
/// same head fit that seeds [`finetune`].
pub fn frozen_probe_accuracy(
    model: &EncoderModel,
    manifest: &Manifest,
    features: &[ClipFeatures],
    split: &ThreeWaySplit,
    config: &FinetuneConfig,
) -> Result<f64> {
    let windows = clip_windows(features, &config.frontend, config.jobs)?;
    let (labels, n_classes) = label_indices(manifest);
    let head = initial_head(model, &windows, &labels, n_classes, &split.train, config.seed)?;
    clip_accuracy(model, &head, &windows, &labels, &split.test)
}

/// End-to-end fine-tuning of `model` plus a softmax head on the manifest's
/// labels. The head starts from a frozen-encoder logistic-regression probe.
pub fn finetune(
    model: &EncoderModel,
    manifest: &Manifest,
    features: &[ClipFeatures],
    config: &FinetuneConfig,
) -> Result<Finetuned> {
    check_features(manifest, features)?;
    let split = finetune_split(manifest, config)?;
    let windows = clip_windows(features, &config.frontend, config.jobs)?;
    let (labels, n_classes) = label_indices(manifest);
    let head = initial_head(model, &windows, &labels, n_classes, &split.train, config.seed)?;
    let frozen_test_accuracy = clip_accuracy(model, &head, &windows, &labels, &split.test)?;
    let stage = Stage {
        windows: &windows,
        labels: &labels,
        train: &split.train,
        dev: &split.dev,
    };
    let r = run_stage(model, &head, &stage, config, config.seed)?;
    let test_accuracy = clip_accuracy(&r.model, &r.head, &windows, &labels, &split.test)?;
    Ok(Finetuned {
        model: r.model,
        head: r.head,
        test_accuracy,
        frozen_test_accuracy,
        dev_trace: r.dev_trace,
        best_step: r.best_step,
        split,
    })
}

fn check_features(manifest: &Manifest, features: &[ClipFeatures]) -> Result<()> {
    if features.len() != manifest.len()
        || features.iter().zip(&manifest.entries).any(|(f, e)| f.clip_id != e.clip_id)
    {
        return Err(Error::Validation("features must follow manifest order".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerFinetune {
    pub speaker: String,
    pub stage1_accuracy: f64,
    pub stage2_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerSpeakerReport {
    pub rows: Vec<SpeakerFinetune>,
    /// Speakers without train, dev and test material.
    pub excluded: Vec<String>,
}

impl PerSpeakerReport {
    pub fn stage1_mean(&self) -> f64 {
        self.rows.iter().map(|r| r.stage1_accuracy).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn stage2_mean(&self) -> f64 {
        self.rows.iter().map(|r| r.stage2_accuracy).sum::<f64>() / self.rows.len().max(1) as f64
    }

    /// `(improved, unchanged, degraded)` speaker counts.
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for r in &self.rows {
            match r.stage2_accuracy.partial_cmp(&r.stage1_accuracy) {
                Some(std::cmp::Ordering::Greater) => c.0 += 1,
                Some(std::cmp::Ordering::Less) => c.2 += 1,
                _ => c.1 += 1,
            }
        }
        c
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("speaker,stage1_acc,stage2_acc,delta\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.speaker,
                r.stage1_accuracy,
                r.stage2_accuracy,
                r.stage2_accuracy - r.stage1_accuracy
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Two-stage protocol: fine-tune on every speaker's training partition,
/// then continue separately per speaker with that speaker's dev set.
pub fn finetune_per_speaker(
    model: &EncoderModel,
    manifest: &Manifest,
    features: &[ClipFeatures],
    config: &FinetuneConfig,
) -> Result<PerSpeakerReport> {
    config.validate()?;
    manifest.check_classification()?;
    check_features(manifest, features)?;
    let windows = clip_windows(features, &config.frontend, config.jobs)?;
    let (labels, n_classes) = label_indices(manifest);

    let mut parts: Vec<(String, ThreeWaySplit)> = Vec::new();
    let mut excluded = Vec::new();
    for (k, (speaker, clips)) in manifest.by_speaker().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(k as u64 + 1);
        let split = speaker_split(&clips, config, &mut rng);
        match split {
            Some(s) => parts.push((speaker, s)),
            None => excluded.push(speaker),
        }
    }
    if parts.is_empty() {
        return Err(Error::Protocol("no speaker has train, dev and test material".into()));
    }
    let union = |f: fn(&ThreeWaySplit) -> &Vec<usize>| -> Vec<usize> {
        let mut v: Vec<usize> = parts.iter().flat_map(|(_, s)| f(s).iter().copied()).collect();
        v.sort_unstable();
        v
    };
    let (train, dev) = (union(|s| &s.train), union(|s| &s.dev));
    let head = initial_head(model, &windows, &labels, n_classes, &train, config.seed)?;
    let stage1 = run_stage(
        model,
        &head,
        &Stage {
            windows: &windows,
            labels: &labels,
            train: &train,
            dev: &dev,
        },
        config,
        config.seed,
    )?;

    let rows = par_map(&parts, config.jobs, |(speaker, split)| {
        let stage1_accuracy = clip_accuracy(&stage1.model, &stage1.head, &windows, &labels, &split.test)?;
        let seed = config.seed ^ fnv1a(speaker.as_bytes());
        let stage2 = run_stage(
            &stage1.model,
            &stage1.head,
            &Stage {
                windows: &windows,
                labels: &labels,
                train: &split.train,
                dev: &split.dev,
            },
            config,
            seed,
        )?;
        Ok(SpeakerFinetune {
            speaker: speaker.clone(),
            stage1_accuracy,
            stage2_accuracy: clip_accuracy(&stage2.model, &stage2.head, &windows, &labels, &split.test)?,
        })
    })?;
    Ok(PerSpeakerReport { rows, excluded })
}

/// Shuffled 80/10/10 cut of one speaker's clips, or `None` when any side
/// would be empty.
fn speaker_split(clips: &[usize], config: &FinetuneConfig, rng: &mut ChaCha8Rng) -> Option<ThreeWaySplit> {
    let n = clips.len();
    if n < 3 {
        return None;
    }
    let mut order = clips.to_vec();
    order.shuffle(rng);
    let n_test = ((config.test_fraction * n as f64).round() as usize).max(1);
    let n_dev = ((config.dev_fraction * n as f64).round() as usize).max(1);
    if n_test + n_dev >= n {
        return None;
    }
    let mut s = ThreeWaySplit {
        test: order[..n_test].to_vec(),
        dev: order[n_test..n_test + n_dev].to_vec(),
        train: order[n_test + n_dev..].to_vec(),
    };
    s.train.sort_unstable();
    s.dev.sort_unstable();
    s.test.sort_unstable();
    Some(s)
}

/// Stable 64-bit FNV-1a, used to derive per-speaker seeds.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325, |h, &b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}
