//! Command-line front end: `trill <subcommand> [--config FILE] [flags]`.
//!
//! The optional config file is TOML with one table per subcommand, e.g.
//! `[train]` or `[synth-data]`, plus an optional top-level `jobs`. Keys
//! use the flag names with `_` in place of `-`. Flags win over the file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use trill::adapt::{distill, finetune, finetune_per_speaker, DistillConfig, FinetuneConfig};
use trill::corpus::{load_manifest, synth_corpus, Manifest, SynthSpec};
use trill::dataset::{load_features, training_clips, write_feature_cache, featurize_manifest};
use trill::encoder::{build_encoder, BlockSpec, load_checkpoint, save_checkpoint, EncoderConfig, EncoderModel, FINAL_TAP};
use trill::frontend::{ClipFeatures, FrontendConfig};
use trill::probes::{
    eval_inter, eval_intra, EvalOptions, EvalReport, ProbeSpec, Representation, RepresentationKind,
    RepresentationSpec,
};
use trill::report::{model_effect_regression, AccuracyRow, AccuracyTable};
use trill::triplet::{train_with, LossConfig, SamplerConfig, TrainConfig};
use trill::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "trill", version, about = "Triplet-loss audio representations and probe evaluation")]
struct Cli {
    /// TOML config file with a table per subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for featurization and evaluation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic corpus and its manifest.
    SynthData(SynthArgs),
    /// Compute log-mel features for a manifest into a cache directory.
    Featurize(FeaturizeArgs),
    /// Train an encoder with the temporal-proximity triplet loss.
    Train(TrainArgs),
    /// Write clip-level embeddings as CSV.
    Embed(EmbedArgs),
    /// Evaluate a representation with a linear probe.
    Eval(EvalArgs),
    /// Distill an encoder into a narrower student.
    Distill(DistillArgs),
    /// Fine-tune an encoder end to end on the manifest labels.
    Finetune(FinetuneArgs),
    /// Regress accuracies on model and task.
    Report(ReportArgs),
}

#[derive(Deserialize, Default, Debug)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    jobs: Option<usize>,
    #[serde(rename = "synth-data")]
    synth_data: Option<SynthArgs>,
    featurize: Option<FeaturizeArgs>,
    train: Option<TrainArgs>,
    embed: Option<EmbedArgs>,
    eval: Option<EvalArgs>,
    distill: Option<DistillArgs>,
    finetune: Option<FinetuneArgs>,
    report: Option<ReportArgs>,
}

/// Defines a flag/file argument struct whose fields are all optional, plus
/// `overlay`, which keeps flag values and fills the rest from the file.
macro_rules! layered_args {
    ($name:ident { $($(#[$meta:meta])* $field:ident: $ty:ty,)* }) => {
        #[derive(Args, Deserialize, Default, Debug)]
        #[serde(deny_unknown_fields)]
        struct $name {
            $($(#[$meta])* #[arg(long)] $field: Option<$ty>,)*
        }

        impl $name {
            fn overlay(self, file: Option<Self>) -> Self {
                let file = file.unwrap_or_default();
                Self { $($field: self.$field.or(file.$field),)* }
            }
        }
    };
}

layered_args!(SynthArgs {
    /// Output directory for `wav/` and `manifest.csv`.
    out: PathBuf,
    n_speakers: usize,
    clips_per_speaker: usize,
    clip_seconds: f64,
    n_classes: usize,
    seed: u64,
});

layered_args!(FeaturizeArgs {
    manifest: PathBuf,
    /// Cache directory receiving one `<clip_id>.feat` per clip.
    out: PathBuf,
});

layered_args!(TrainArgs {
    manifest: PathBuf,
    /// Feature cache directory; audio is featurized when absent.
    features: PathBuf,
    /// Checkpoint path to write.
    out: PathBuf,
    /// Loss trace CSV (`step,loss`).
    trace: PathBuf,
    steps: usize,
    learning_rate: f64,
    /// `sgd` or `momentum`.
    optimizer: String,
    tau_seconds: f64,
    clips_per_batch: usize,
    windows_per_clip: usize,
    margin: f64,
    /// `semi-hard`, `hard` or `all-valid`.
    mining: String,
    /// Frames between consecutive training windows.
    context_hop_frames: usize,
    /// Comma-separated block widths, e.g. `8,16,32`.
    channels: String,
    stem_channels: usize,
    embedding_dim: usize,
    /// Divide every channel count by this factor.
    width_divisor: usize,
    /// Print the loss every N steps (0 disables).
    log_every: usize,
    seed: u64,
});

layered_args!(EmbedArgs {
    checkpoint: PathBuf,
    manifest: PathBuf,
    features: PathBuf,
    tap: String,
    /// Output CSV: `clip_id,speaker_id,label,e0,...`.
    out: PathBuf,
});

layered_args!(EvalArgs {
    manifest: PathBuf,
    features: PathBuf,
    /// `trill`, `random` or `logmel-stats`.
    representation: String,
    checkpoint: PathBuf,
    /// A tap name, or `all` for every tap.
    tap: String,
    /// `logreg` or `lda`; hyperparameters are grid-searched.
    probe: String,
    /// `inter` or `intra`.
    protocol: String,
    /// `label` (manifest labels) or `speaker` (speaker identification).
    task: String,
    n_splits: usize,
    test_fraction: f64,
    speaker_l2_norm: bool,
    /// Seed of the untrained encoder for `random`.
    random_seed: u64,
    seed: u64,
    /// Report CSV path.
    out: PathBuf,
});

layered_args!(DistillArgs {
    teacher: PathBuf,
    manifest: PathBuf,
    features: PathBuf,
    /// Student checkpoint path.
    out: PathBuf,
    teacher_tap: String,
    width_divisor: usize,
    /// Student output width; defaults to the teacher tap width.
    embedding_dim: usize,
    adapter: bool,
    steps: usize,
    learning_rate: f64,
    optimizer: String,
    batch_size: usize,
    heldout_fraction: f64,
    context_hop_frames: usize,
    log_every: usize,
    trace: PathBuf,
    /// Metrics CSV (`metric,value`).
    report: PathBuf,
    seed: u64,
});

layered_args!(FinetuneArgs {
    checkpoint: PathBuf,
    manifest: PathBuf,
    features: PathBuf,
    /// `global` or `per-speaker`.
    mode: String,
    out: PathBuf,
    /// Where to save the fine-tuned encoder (global mode).
    save: PathBuf,
    train_fraction: f64,
    dev_fraction: f64,
    test_fraction: f64,
    patience: usize,
    steps_per_eval: usize,
    max_steps: usize,
    learning_rate: f64,
    optimizer: String,
    batch_size: usize,
    seed: u64,
});

#[derive(Args, Deserialize, Default, Debug)]
#[serde(deny_unknown_fields)]
struct ReportArgs {
    /// Evaluation report CSVs; their overall means become table cells.
    #[arg(long, num_args = 1..)]
    inputs: Option<Vec<PathBuf>>,
    /// A `model,task,accuracy` CSV.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Regression CSV (`term,level,coefficient`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ReportArgs {
    fn overlay(self, file: Option<Self>) -> Self {
        let file = file.unwrap_or_default();
        Self {
            inputs: self.inputs.or(file.inputs),
            table: self.table.or(file.table),
            out: self.out.or(file.out),
        }
    }
}

fn required<T>(value: Option<T>, key: &str, section: &str) -> Result<T> {
    value.ok_or_else(|| {
        Error::Usage(format!(
            "missing --{} (or `{}` in the [{}] config table)",
            key.replace('_', "-"),
            key,
            section
        ))
    })
}

fn parse<T: std::str::FromStr<Err = Error>>(value: Option<String>, default: T) -> Result<T> {
    value.map_or(Ok(default), |v| v.parse())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn features_for(
    manifest: &Manifest,
    cache: Option<&PathBuf>,
    frontend: &FrontendConfig,
    jobs: usize,
) -> Result<Vec<ClipFeatures>> {
    load_features(manifest, frontend, cache.map(PathBuf::as_path), jobs)
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        n_speakers: a.n_speakers.unwrap_or(d.n_speakers),
        clips_per_speaker: a.clips_per_speaker.unwrap_or(d.clips_per_speaker),
        clip_seconds: a.clip_seconds.unwrap_or(d.clip_seconds),
        n_classes: a.n_classes.unwrap_or(d.n_classes),
        seed: a.seed.unwrap_or(d.seed),
    };
    let out = required(a.out, "out", "synth-data")?;
    let m = synth_corpus(&spec, &out)?;
    println!("wrote {} clips to {}", m.len(), out.join("manifest.csv").display());
    Ok(())
}

fn run_featurize(a: FeaturizeArgs, jobs: usize) -> Result<()> {
    let manifest = load_manifest(required(a.manifest, "manifest", "featurize")?)?;
    let out = required(a.out, "out", "featurize")?;
    let feats = featurize_manifest(&manifest, &FrontendConfig::default(), jobs)?;
    write_feature_cache(&out, &feats)?;
    println!("cached features for {} clips in {}", feats.len(), out.display());
    Ok(())
}

fn run_train(a: TrainArgs, jobs: usize) -> Result<()> {
    let manifest = load_manifest(required(a.manifest, "manifest", "train")?)?;
    let out = required(a.out, "out", "train")?;
    let seed = a.seed.unwrap_or(0);
    let frontend = FrontendConfig::default();
    let feats = features_for(&manifest, a.features.as_ref(), &frontend, jobs)?;
    let clips = training_clips(
        &feats,
        &frontend,
        a.context_hop_frames.unwrap_or(frontend.context_frames / 4),
    )?;

    let mut base = EncoderConfig { seed, ..EncoderConfig::default() };
    if let Some(list) = &a.channels {
        base.blocks = list
            .split(',')
            .map(|c| {
                c.trim()
                    .parse()
                    .map(|ch| BlockSpec::new(ch, 2, true))
                    .map_err(|_| Error::Usage(format!("bad channel count `{}` in --channels", c)))
            })
            .collect::<Result<_>>()?;
    }
    if let Some(c) = a.stem_channels {
        base.stem_channels = c;
    }
    let mut enc = base.narrowed(a.width_divisor.unwrap_or(1));
    if let Some(d) = a.embedding_dim {
        enc.embedding_dim = d;
    }
    let model = build_encoder(&enc)?;
    let sd = SamplerConfig::default();
    let sampler = SamplerConfig {
        tau_seconds: a.tau_seconds.unwrap_or(sd.tau_seconds),
        clips_per_batch: a.clips_per_batch.unwrap_or(sd.clips_per_batch),
        windows_per_clip: a.windows_per_clip.unwrap_or(sd.windows_per_clip),
        seed,
    };
    let ld = LossConfig::default();
    let loss = LossConfig {
        margin: a.margin.unwrap_or(ld.margin),
        mining: parse(a.mining, ld.mining)?,
    };
    let td = TrainConfig::default();
    let config = TrainConfig {
        steps: a.steps.unwrap_or(td.steps),
        learning_rate: a.learning_rate.unwrap_or(td.learning_rate),
        optimizer: parse(a.optimizer, td.optimizer)?,
        seed,
        ..td
    };
    let log_every = a.log_every.unwrap_or(0);
    let (trained, trace) = train_with(&model, &clips, &sampler, &loss, &config, |step, value| {
        if log_every > 0 && step % log_every == 0 {
            eprintln!("step {:>6}  loss {:.6}", step, value);
        }
    })?;
    save_checkpoint(&trained, &out)?;
    if let Some(path) = a.trace {
        write_text(&path, &trace.to_csv())?;
    }
    println!("trained {} steps; checkpoint {}", config.steps, out.display());
    Ok(())
}

fn format_floats(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn run_embed(a: EmbedArgs, jobs: usize) -> Result<()> {
    let model = load_checkpoint(required(a.checkpoint, "checkpoint", "embed")?)?;
    let manifest = load_manifest(required(a.manifest, "manifest", "embed")?)?;
    let out = required(a.out, "out", "embed")?;
    let tap = a.tap.unwrap_or_else(|| FINAL_TAP.to_string());
    let frontend = FrontendConfig::for_evaluation();
    let feats = features_for(&manifest, a.features.as_ref(), &frontend, jobs)?;
    let rep = Representation::encoder(tap.clone(), model, &tap)?;
    let vectors = rep.clip_vectors(&feats, &frontend, jobs)?;
    let width = vectors.first().map_or(0, Vec::len);
    let mut text = String::from("clip_id,speaker_id,label");
    for i in 0..width {
        text.push_str(&format!(",e{}", i));
    }
    text.push('\n');
    for (e, v) in manifest.entries.iter().zip(&vectors) {
        text.push_str(&format!("{},{},{},{}\n", e.clip_id, e.speaker_id, e.label, format_floats(v)));
    }
    write_text(&out, &text)?;
    println!("wrote {} x {} embeddings to {}", vectors.len(), width, out.display());
    Ok(())
}

fn run_eval(a: EvalArgs, jobs: usize) -> Result<()> {
    let manifest = load_manifest(required(a.manifest, "manifest", "eval")?)?;
    let speaker_task = match a.task.as_deref().unwrap_or("label") {
        "label" => false,
        "speaker" => true,
        other => return Err(Error::Usage(format!("unknown task `{}`; use label or speaker", other))),
    };
    let manifest = if speaker_task { manifest.speaker_id_task() } else { manifest };
    let probe: ProbeSpec = parse(a.probe, ProbeSpec::logreg())?;
    let intra = match a.protocol.as_deref().unwrap_or("inter") {
        "inter" => false,
        "intra" => true,
        other => return Err(Error::Usage(format!("unknown protocol `{}`; use inter or intra", other))),
    };
    let opts = EvalOptions {
        n_splits: a.n_splits.unwrap_or(5),
        test_fraction: a.test_fraction.unwrap_or(0.2),
        seed: a.seed.unwrap_or(0),
        // centering per speaker would erase the speaker identity being probed
        speaker_l2_norm: a.speaker_l2_norm.unwrap_or(!speaker_task),
        jobs,
    };

    let rep_kind = a.representation.as_deref().unwrap_or("trill");
    let tap = a.tap.unwrap_or_else(|| FINAL_TAP.to_string());
    let kinds: Vec<RepresentationKind> = match rep_kind {
        "logmel-stats" => vec![RepresentationKind::LogmelStats],
        "trill" | "random" => {
            let (checkpoint, config) = if rep_kind == "trill" {
                let path = required(a.checkpoint, "checkpoint", "eval")?;
                let config = load_checkpoint(&path)?.config;
                (Some(path), config)
            } else {
                let config = EncoderConfig { seed: a.random_seed.unwrap_or(0), ..EncoderConfig::default() };
                (None, config)
            };
            let taps = if tap == "all" { config.tap_names() } else { vec![tap] };
            taps.into_iter()
                .map(|tap| match &checkpoint {
                    Some(p) => RepresentationKind::Encoder { checkpoint: p.clone(), tap },
                    None => RepresentationKind::RandomEncoder { config: config.clone(), tap },
                })
                .collect()
        }
        other => {
            return Err(Error::Usage(format!(
                "unknown representation `{}`; use trill, random or logmel-stats",
                other
            )))
        }
    };

    let frontend = FrontendConfig::for_evaluation();
    let feats = features_for(&manifest, a.features.as_ref(), &frontend, jobs)?;
    let mut reports: Vec<EvalReport> = Vec::new();
    for kind in kinds {
        let rep = RepresentationSpec { kind, speaker_l2_norm: opts.speaker_l2_norm }.load()?;
        let vectors = rep.clip_vectors(&feats, &frontend, jobs)?;
        let report = if intra {
            eval_intra(&manifest, &vectors, rep.name(), &probe, &opts)?
        } else {
            eval_inter(&manifest, &vectors, rep.name(), &probe, &opts)?
        };
        print!("{}", report.table());
        reports.push(report);
    }
    if let Some(out) = a.out {
        let mut text = String::new();
        for (i, r) in reports.iter().enumerate() {
            let csv = r.to_csv();
            let body = if i == 0 { csv.as_str() } else { csv.split_once('\n').map_or("", |(_, b)| b) };
            text.push_str(body);
        }
        write_text(&out, &text)?;
    }
    Ok(())
}

fn run_distill(a: DistillArgs, jobs: usize) -> Result<()> {
    let teacher = load_checkpoint(required(a.teacher, "teacher", "distill")?)?;
    let manifest = load_manifest(required(a.manifest, "manifest", "distill")?)?;
    let out = required(a.out, "out", "distill")?;
    let seed = a.seed.unwrap_or(0);
    let d = DistillConfig::default();
    let teacher_tap = a.teacher_tap.unwrap_or(d.teacher_tap);
    let target_dim = teacher.config.tap_width(&teacher_tap)?;
    let mut student = EncoderConfig { seed, ..teacher.config.narrowed(a.width_divisor.unwrap_or(2)) };
    student.embedding_dim = a.embedding_dim.unwrap_or(target_dim);
    student.l2_normalize_output = teacher_tap == FINAL_TAP
        && teacher.config.l2_normalize_output
        && student.embedding_dim == target_dim;
    let config = DistillConfig {
        teacher_tap,
        student,
        adapter: a.adapter.unwrap_or(d.adapter),
        steps: a.steps.unwrap_or(d.steps),
        learning_rate: a.learning_rate.unwrap_or(d.learning_rate),
        optimizer: parse(a.optimizer, d.optimizer)?,
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        heldout_fraction: a.heldout_fraction.unwrap_or(d.heldout_fraction),
        log_every: a.log_every.unwrap_or(d.log_every),
        seed,
    };
    let frontend = FrontendConfig::default();
    let feats = features_for(&manifest, a.features.as_ref(), &frontend, jobs)?;
    let clips = training_clips(&feats, &frontend, a.context_hop_frames.unwrap_or(frontend.context_frames / 2))?;
    let report = distill(&teacher, &clips, &config)?;
    save_checkpoint(&report.student, &out)?;
    if let Some(path) = a.trace {
        write_text(&path, &report.trace.to_csv())?;
    }
    let metrics = format!(
        "metric,value\ninitial_mse,{}\nheldout_mse,{}\nheldout_cosine,{}\ncompression,{}\n",
        report.initial_mse, report.heldout_mse, report.heldout_cosine, report.compression
    );
    if let Some(path) = a.report {
        write_text(&path, &metrics)?;
    }
    println!(
        "student {} params ({:.2}x smaller); held-out mse {:.6}, cosine {:.4}",
        report.student.parameter_count(),
        report.compression,
        report.heldout_mse,
        report.heldout_cosine
    );
    Ok(())
}

fn run_finetune(a: FinetuneArgs, jobs: usize) -> Result<()> {
    let model: EncoderModel = load_checkpoint(required(a.checkpoint, "checkpoint", "finetune")?)?;
    let manifest = load_manifest(required(a.manifest, "manifest", "finetune")?)?;
    let d = FinetuneConfig::default();
    let config = FinetuneConfig {
        train_fraction: a.train_fraction.unwrap_or(d.train_fraction),
        dev_fraction: a.dev_fraction.unwrap_or(d.dev_fraction),
        test_fraction: a.test_fraction.unwrap_or(d.test_fraction),
        patience: a.patience.unwrap_or(d.patience),
        steps_per_eval: a.steps_per_eval.unwrap_or(d.steps_per_eval),
        max_steps: a.max_steps.unwrap_or(d.max_steps),
        learning_rate: a.learning_rate.unwrap_or(d.learning_rate),
        optimizer: parse(a.optimizer, d.optimizer)?,
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        seed: a.seed.unwrap_or(d.seed),
        jobs,
        ..d
    };
    let feats = features_for(&manifest, a.features.as_ref(), &config.frontend, jobs)?;
    match a.mode.as_deref().unwrap_or("global") {
        "global" => {
            let r = finetune(&model, &manifest, &feats, &config)?;
            let csv = format!(
                "frozen_acc,finetuned_acc,best_step\n{},{},{}\n",
                r.frozen_test_accuracy, r.test_accuracy, r.best_step
            );
            if let Some(out) = a.out {
                write_text(&out, &csv)?;
            }
            if let Some(path) = a.save {
                save_checkpoint(&r.model, &path)?;
            }
            println!(
                "frozen probe {:.4} -> fine-tuned {:.4} (best step {})",
                r.frozen_test_accuracy, r.test_accuracy, r.best_step
            );
        }
        "per-speaker" => {
            let r = finetune_per_speaker(&model, &manifest, &feats, &config)?;
            if let Some(out) = a.out {
                r.write_csv(&out)?;
            }
            let (up, same, down) = r.counts();
            println!(
                "stage 1 mean {:.4}, stage 2 mean {:.4}; improved {}, unchanged {}, degraded {}, excluded {}",
                r.stage1_mean(),
                r.stage2_mean(),
                up,
                same,
                down,
                r.excluded.len()
            );
        }
        other => return Err(Error::Usage(format!("unknown mode `{}`; use global or per-speaker", other))),
    }
    Ok(())
}

fn run_report(a: ReportArgs) -> Result<()> {
    let mut rows: Vec<AccuracyRow> = Vec::new();
    if let Some(path) = &a.table {
        rows.extend(AccuracyTable::read_csv(path)?.rows);
    }
    for path in a.inputs.iter().flatten() {
        let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        rows.extend(AccuracyTable::from_eval_csv(&text)?.rows);
    }
    if rows.is_empty() {
        return Err(Error::Usage("report needs --inputs or --table".into()));
    }
    let effects = model_effect_regression(&AccuracyTable::new(rows)?)?;
    print!("{}", effects.table());
    if let Some(out) = a.out {
        write_text(&out, &effects.to_csv())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let file: ConfigFile = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?
        }
        None => ConfigFile::default(),
    };
    let jobs = cli.jobs.or(file.jobs).unwrap_or(1);
    if jobs == 0 {
        return Err(Error::Usage("--jobs must be at least 1".into()));
    }
    match cli.command {
        Command::SynthData(a) => run_synth(a.overlay(file.synth_data)),
        Command::Featurize(a) => run_featurize(a.overlay(file.featurize), jobs),
        Command::Train(a) => run_train(a.overlay(file.train), jobs),
        Command::Embed(a) => run_embed(a.overlay(file.embed), jobs),
        Command::Eval(a) => run_eval(a.overlay(file.eval), jobs),
        Command::Distill(a) => run_distill(a.overlay(file.distill), jobs),
        Command::Finetune(a) => run_finetune(a.overlay(file.finetune), jobs),
        Command::Report(a) => run_report(a.overlay(file.report)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{}", e);
                return ExitCode::SUCCESS;
            }
            eprint!("{}", e.render());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
