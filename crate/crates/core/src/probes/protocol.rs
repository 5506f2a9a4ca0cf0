use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::classifier::{LinearClassifier, LogRegConfig, ProbeConfig};
use super::normalize::normalize_split;
use crate::corpus::Manifest;
use crate::dataset::par_map;
use crate::error::{Error, Result};

const MAX_SPLIT_ATTEMPTS: usize = 100;

/// A probe family with the hyperparameter grid searched on a validation
/// fifth of each training partition.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSpec {
    pub name: String,
    pub candidates: Vec<ProbeConfig>,
}

impl ProbeSpec {
    pub fn logreg() -> Self {
        Self {
            name: "logreg".into(),
            candidates: [1e-4, 1e-2]
                .into_iter()
                .map(|l2_lambda| {
                    ProbeConfig::LogReg(LogRegConfig {
                        l2_lambda,
                        ..LogRegConfig::default()
                    })
                })
                .collect(),
        }
    }

    pub fn lda() -> Self {
        Self {
            name: "lda".into(),
            candidates: [0.1, 0.5]
                .into_iter()
                .map(|shrinkage| ProbeConfig::Lda { shrinkage })
                .collect(),
        }
    }

    /// A single configuration, no search.
    pub fn fixed(config: ProbeConfig) -> Self {
        Self {
            name: config.family().into(),
            candidates: vec![config],
        }
    }

    /// Fits on `(x, y)`, selecting among candidates by validation accuracy
    /// (first candidate wins ties).
    pub fn fit(
        &self,
        x: &[f64],
        y: &[usize],
        n_classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<LinearClassifier> {
        let Some(first) = self.candidates.first() else {
            return Err(Error::Config(format!("probe `{}` has no candidates", self.name)));
        };
        if self.candidates.len() == 1 {
            return first.fit(x, y, n_classes);
        }
        let dim = x.len() / y.len().max(1);
        let val = stratified_holdout(y, 0.2, false, rng);
        let is_val: BTreeSet<usize> = val.iter().copied().collect();
        let fit_idx: Vec<usize> = (0..y.len()).filter(|i| !is_val.contains(i)).collect();
        let mut best: Option<(f64, &ProbeConfig)> = None;
        if !val.is_empty() {
            let (xf, yf) = gather(x, y, dim, &fit_idx);
            let (xv, yv) = gather(x, y, dim, &val);
            for cand in &self.candidates {
                let Ok(clf) = cand.fit(&xf, &yf, n_classes) else {
                    continue;
                };
                let acc = clf.accuracy(&xv, &yv);
                if best.is_none_or(|(b, _)| acc > b) {
                    best = Some((acc, cand));
                }
            }
        }
        match best {
            Some((_, cand)) => cand.fit(x, y, n_classes),
            None => {
                let mut last = None;
                for cand in &self.candidates {
                    match cand.fit(x, y, n_classes) {
                        Ok(c) => return Ok(c),
                        Err(e) => last = Some(e),
                    }
                }
                Err(last.expect("non-empty candidates"))
            }
        }
    }
}

impl std::str::FromStr for ProbeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logreg" => Ok(ProbeSpec::logreg()),
            "lda" => Ok(ProbeSpec::lda()),
            other => Err(Error::Config(format!("unknown probe `{}` (logreg, lda)", other))),
        }
    }
}

fn gather(x: &[f64], y: &[usize], dim: usize, idx: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let mut xs = Vec::with_capacity(idx.len() * dim);
    let mut ys = Vec::with_capacity(idx.len());
    for &i in idx {
        xs.extend_from_slice(&x[i * dim..(i + 1) * dim]);
        ys.push(y[i]);
    }
    (xs, ys)
}

/// Per class, moves `round(fraction · n_c)` shuffled members to the holdout.
/// With `keep_one_each_side`, classes of two or more always contribute at
/// least one holdout member and keep at least one training member.
fn stratified_holdout(
    y: &[usize],
    fraction: f64,
    keep_one_each_side: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in y.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut out = Vec::new();
    for (_, mut members) in by_class {
        members.shuffle(rng);
        let n = members.len();
        let mut k = (fraction * n as f64).round() as usize;
        if keep_one_each_side && n >= 2 {
            k = k.clamp(1, n - 1);
        }
        out.extend_from_slice(&members[..k.min(n)]);
    }
    out.sort_unstable();
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub n_splits: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub speaker_l2_norm: bool,
    pub jobs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_splits: 5,
            test_fraction: 0.2,
            seed: 0,
            speaker_l2_norm: true,
            jobs: 1,
        }
    }
}

impl EvalOptions {
    fn validate(&self) -> Result<()> {
        if self.n_splits == 0 {
            return Err(Error::Config("n_splits must be >= 1".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// Clip indices on each side of one split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn split_rng(seed: u64, split: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(split as u64));
    rng.set_stream(stream);
    rng
}

fn split_is_usable(labels: &[usize], split: &Split) -> bool {
    let train: BTreeSet<usize> = split.train.iter().map(|&i| labels[i]).collect();
    !split.test.is_empty()
        && train.len() >= 2
        && split.test.iter().all(|&i| train.contains(&labels[i]))
}

/// Train/test partition for split `index` of the inter-speaker protocol.
pub fn inter_split(manifest: &Manifest, opts: &EvalOptions, index: usize) -> Result<Split> {
    let (labels, _) = label_indices(manifest);
    let mut rng = split_rng(opts.seed, index, 0);
    for _ in 0..MAX_SPLIT_ATTEMPTS {
        let test = if manifest.speaker_independent {
            let groups = manifest.by_speaker();
            let mut speakers: Vec<&String> = groups.keys().collect();
            speakers.shuffle(&mut rng);
            let target = ((opts.test_fraction * manifest.len() as f64).round() as usize).max(1);
            let mut test = Vec::new();
            for s in speakers {
                if test.len() >= target {
                    break;
                }
                test.extend_from_slice(&groups[s]);
            }
            test.sort_unstable();
            test
        } else {
            stratified_holdout(&labels, opts.test_fraction, true, &mut rng)
        };
        let is_test: BTreeSet<usize> = test.iter().copied().collect();
        let split = Split {
            train: (0..manifest.len()).filter(|i| !is_test.contains(i)).collect(),
            test,
        };
        if split_is_usable(&labels, &split) {
            return Ok(split);
        }
    }
    Err(Error::Protocol(format!(
        "no usable split after {} attempts: a test class is always missing from train",
        MAX_SPLIT_ATTEMPTS
    )))
}

fn label_indices(manifest: &Manifest) -> (Vec<usize>, usize) {
    let names = manifest.labels();
    let index: BTreeMap<&str, usize> =
        names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let labels = manifest.entries.iter().map(|e| index[e.label.as_str()]).collect();
    (labels, names.len())
}

/// One accuracy cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitAccuracy {
    pub split: usize,
    /// `None` for pooled inter-speaker splits.
    pub speaker: Option<String>,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub task: String,
    pub representation: String,
    pub probe: String,
    pub cells: Vec<SplitAccuracy>,
    /// Inter: accuracy per split. Intra: mean over speakers per split.
    pub split_accuracies: Vec<f64>,
    /// Intra only: mean accuracy per speaker, sorted by speaker.
    pub per_speaker: Vec<(String, f64)>,
    /// Intra only: speakers without enough material.
    pub skipped_speakers: Vec<String>,
    pub mean: f64,
    /// Sample standard deviation of the values averaged into `mean`.
    pub stddev: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "task,rep,probe,split,speaker,accuracy";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        let prefix = format!("{},{},{}", self.task, self.representation, self.probe);
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                prefix,
                c.split,
                c.speaker.as_deref().unwrap_or("all"),
                c.accuracy
            );
        }
        for (s, acc) in &self.per_speaker {
            let _ = writeln!(out, "{},mean,{},{}", prefix, s, acc);
        }
        let _ = writeln!(out, "{},mean,all,{}", prefix, self.mean);
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Human-readable summary.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "task {}  rep {}  probe {}", self.task, self.representation, self.probe);
        for (i, a) in self.split_accuracies.iter().enumerate() {
            let _ = writeln!(out, "  split {:<3} {:>7.2}%", i, 100.0 * a);
        }
        for (s, a) in &self.per_speaker {
            let _ = writeln!(out, "  {:<10} {:>7.2}%", s, 100.0 * a);
        }
        if !self.skipped_speakers.is_empty() {
            let _ = writeln!(out, "  skipped: {}", self.skipped_speakers.join(", "));
        }
        let _ = writeln!(out, "  mean       {:>7.2}% ± {:.2}", 100.0 * self.mean, 100.0 * self.stddev);
        out
    }
}

fn check_vectors(manifest: &Manifest, vectors: &[Vec<f64>]) -> Result<usize> {
    if vectors.len() != manifest.len() {
        return Err(Error::Shape {
            op: "eval",
            detail: format!("{} clip vectors for {} manifest entries", vectors.len(), manifest.len()),
        });
    }
    let dim = vectors.first().map_or(0, Vec::len);
    if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Shape {
            op: "eval",
            detail: "clip vectors must share one non-zero width".into(),
        });
    }
    Ok(dim)
}

/// Fits on `train`, scores `test`; optional per-speaker normalization uses
/// training statistics where the speaker has training clips.
#[allow(clippy::too_many_arguments)]
fn fit_and_score(
    vectors: &[Vec<f64>],
    speakers: &[&str],
    labels: &[usize],
    n_classes: usize,
    split: &Split,
    probe: &ProbeSpec,
    normalize: bool,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<&str>, Vec<usize>) {
        (
            idx.iter().map(|&i| vectors[i].clone()).collect(),
            idx.iter().map(|&i| speakers[i]).collect(),
            idx.iter().map(|&i| labels[i]).collect(),
        )
    };
    let (mut xtr, str_, ytr) = pick(&split.train);
    let (mut xte, ste, yte) = pick(&split.test);
    if normalize {
        normalize_split(&mut xtr, &str_, &mut xte, &ste);
    }
    let clf = probe.fit(&xtr.concat(), &ytr, n_classes, rng)?;
    Ok(clf.accuracy(&xte.concat(), &yte))
}

/// Inter-speaker protocol over precomputed clip vectors (manifest order).
pub fn eval_inter(
    manifest: &Manifest,
    vectors: &[Vec<f64>],
    representation: &str,
    probe: &ProbeSpec,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    opts.validate()?;
    manifest.check_classification()?;
    check_vectors(manifest, vectors)?;
    let (labels, n_classes) = label_indices(manifest);
    let speakers: Vec<&str> = manifest.entries.iter().map(|e| e.speaker_id.as_str()).collect();
    let splits: Vec<usize> = (0..opts.n_splits).collect();
    let accs = par_map(&splits, opts.jobs, |&s| {
        let split = inter_split(manifest, opts, s)?;
        let mut rng = split_rng(opts.seed, s, 1);
        fit_and_score(
            vectors,
            &speakers,
            &labels,
            n_classes,
            &split,
            probe,
            opts.speaker_l2_norm,
            &mut rng,
        )
    })?;
    let (mean, stddev) = mean_std(&accs);
    Ok(EvalReport {
        task: manifest.task_name.clone(),
        representation: representation.to_string(),
        probe: probe.name.clone(),
        cells: accs
            .iter()
            .enumerate()
            .map(|(split, &accuracy)| SplitAccuracy {
                split,
                speaker: None,
                accuracy,
            })
            .collect(),
        split_accuracies: accs,
        per_speaker: Vec::new(),
        skipped_speakers: Vec::new(),
        mean,
        stddev,
    })
}

/// Intra-speaker protocol: per eligible speaker, `n_splits` stratified
/// splits of that speaker's clips; the report mean weights speakers equally.
pub fn eval_intra(
    manifest: &Manifest,
    vectors: &[Vec<f64>],
    representation: &str,
    probe: &ProbeSpec,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    opts.validate()?;
    check_vectors(manifest, vectors)?;
    let (labels, n_classes) = label_indices(manifest);
    let speakers: Vec<&str> = manifest.entries.iter().map(|e| e.speaker_id.as_str()).collect();

    let mut eligible: Vec<(String, Vec<usize>)> = Vec::new();
    let mut skipped = Vec::new();
    for (speaker, clips) in manifest.by_speaker() {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        clips.iter().for_each(|&i| *counts.entry(labels[i]).or_default() += 1);
        let usable: Vec<usize> = clips.into_iter().filter(|&i| counts[&labels[i]] >= 2).collect();
        let classes: BTreeSet<usize> = usable.iter().map(|&i| labels[i]).collect();
        if classes.len() >= 2 {
            eligible.push((speaker, usable));
        } else {
            skipped.push(speaker);
        }
    }
    if eligible.is_empty() {
        return Err(Error::Protocol(
            "no speaker has at least 2 classes with at least 2 clips each".into(),
        ));
    }

    let jobs: Vec<(usize, usize)> = (0..eligible.len())
        .flat_map(|k| (0..opts.n_splits).map(move |s| (k, s)))
        .collect();
    let accs = par_map(&jobs, opts.jobs, |&(k, s)| {
        let clips = &eligible[k].1;
        let local: Vec<usize> = clips.iter().map(|&i| labels[i]).collect();
        let mut rng = split_rng(opts.seed, s, 2 + k as u64);
        let test_local = stratified_holdout(&local, opts.test_fraction, true, &mut rng);
        let is_test: BTreeSet<usize> = test_local.iter().copied().collect();
        let split = Split {
            train: (0..clips.len()).filter(|i| !is_test.contains(i)).map(|i| clips[i]).collect(),
            test: test_local.iter().map(|&i| clips[i]).collect(),
        };
        fit_and_score(
            vectors,
            &speakers,
            &labels,
            n_classes,
            &split,
            probe,
            opts.speaker_l2_norm,
            &mut rng,
        )
    })?;

    let mut cells = Vec::with_capacity(accs.len());
    let mut per_speaker = Vec::with_capacity(eligible.len());
    let mut split_sums = vec![0.0; opts.n_splits];
    for (k, (speaker, _)) in eligible.iter().enumerate() {
        let row = &accs[k * opts.n_splits..(k + 1) * opts.n_splits];
        for (s, &accuracy) in row.iter().enumerate() {
            split_sums[s] += accuracy;
            cells.push(SplitAccuracy {
                split: s,
                speaker: Some(speaker.clone()),
                accuracy,
            });
        }
        per_speaker.push((speaker.clone(), row.iter().sum::<f64>() / opts.n_splits as f64));
    }
    let speaker_means: Vec<f64> = per_speaker.iter().map(|(_, a)| *a).collect();
    let (mean, stddev) = mean_std(&speaker_means);
    Ok(EvalReport {
        task: manifest.task_name.clone(),
        representation: representation.to_string(),
        probe: probe.name.clone(),
        cells,
        split_accuracies: split_sums.iter().map(|s| s / eligible.len() as f64).collect(),
        per_speaker,
        skipped_speakers: skipped,
        mean,
        stddev,
    })
}
