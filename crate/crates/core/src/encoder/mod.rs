//! The embedding network: stem conv, residual blocks, global average pool,
//! dense embedding head, with per-block taps.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, read_container, write_container, Container};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::frontend::ContextWindow;

pub const FINAL_TAP: &str = "final";
const NORM_EPS: f64 = 1e-12;
const EMBED_CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub channels: usize,
    pub n_conv_layers: usize,
    pub downsample: bool,
}

impl BlockSpec {
    pub fn new(channels: usize, n_conv_layers: usize, downsample: bool) -> Self {
        Self {
            channels,
            n_conv_layers,
            downsample,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub stem_channels: usize,
    pub blocks: Vec<BlockSpec>,
    pub embedding_dim: usize,
    pub l2_normalize_output: bool,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            stem_channels: 8,
            blocks: vec![
                BlockSpec::new(8, 2, true),
                BlockSpec::new(16, 2, true),
                BlockSpec::new(32, 2, true),
            ],
            embedding_dim: 64,
            l2_normalize_output: true,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config("encoder needs at least one block".into()));
        }
        if self.stem_channels == 0 || self.embedding_dim == 0 {
            return Err(Error::Config("stem channels and embedding dim must be positive".into()));
        }
        if let Some(b) = self.blocks.iter().find(|b| b.channels == 0 || b.n_conv_layers == 0) {
            return Err(Error::Config(format!(
                "block {:?} needs positive channels and conv layers",
                b
            )));
        }
        Ok(())
    }

    /// Same layout with every channel count divided by `factor` (at least 1).
    pub fn narrowed(&self, factor: usize) -> Self {
        let f = factor.max(1);
        Self {
            stem_channels: (self.stem_channels / f).max(1),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockSpec {
                    channels: (b.channels / f).max(1),
                    ..*b
                })
                .collect(),
            ..self.clone()
        }
    }

    /// Tap names in network order; the last is always [`FINAL_TAP`].
    pub fn tap_names(&self) -> Vec<String> {
        (1..=self.blocks.len())
            .map(|i| format!("block{}", i))
            .chain(std::iter::once(FINAL_TAP.to_string()))
            .collect()
    }

    /// Width of a tap's pooled output.
    pub fn tap_width(&self, tap: &str) -> Result<usize> {
        if tap == FINAL_TAP {
            return Ok(self.embedding_dim);
        }
        self.tap_names()
            .iter()
            .position(|t| t == tap)
            .filter(|&i| i < self.blocks.len())
            .map(|i| self.blocks[i].channels)
            .ok_or_else(|| Error::UnknownTap {
                requested: tap.to_string(),
                valid: self.tap_names(),
            })
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![
            ("stem.w".to_string(), vec![self.stem_channels, 1, 3, 3]),
            ("stem.b".to_string(), vec![self.stem_channels]),
        ];
        let mut cin = self.stem_channels;
        for (i, b) in self.blocks.iter().enumerate() {
            let name = format!("block{}", i + 1);
            let mut c = cin;
            for l in 0..b.n_conv_layers {
                out.push((format!("{}.conv{}.w", name, l + 1), vec![b.channels, c, 3, 3]));
                out.push((format!("{}.conv{}.b", name, l + 1), vec![b.channels]));
                c = b.channels;
            }
            if b.downsample || cin != b.channels {
                out.push((format!("{}.shortcut.w", name), vec![b.channels, cin, 1, 1]));
                out.push((format!("{}.shortcut.b", name), vec![b.channels]));
            }
            cin = b.channels;
        }
        out.push(("head.w".to_string(), vec![cin, self.embedding_dim]));
        out.push(("head.b".to_string(), vec![self.embedding_dim]));
        out
    }
}

/// A configured network and its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub params: Vec<(String, Tensor)>,
}

/// Node ids produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Pre-relu block outputs, `[N, C, H, W]`, one per block reached.
    pub blocks: Vec<NodeId>,
    /// `[N, d]` embedding, present when the pass ran to the end.
    pub output: Option<NodeId>,
}

fn he_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-limit..limit)).collect())
        .expect("shape")
}

/// Builds a freshly initialised encoder (He-uniform weights, zero biases).
pub fn build_encoder(config: &EncoderConfig) -> Result<EncoderModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = config
        .parameter_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let t = if name.ends_with(".b") {
                Tensor::zeros(&shape)
            } else {
                let fan_in = if shape.len() == 4 {
                    shape[1] * shape[2] * shape[3]
                } else {
                    shape[0]
                };
                he_uniform(&mut rng, &shape, fan_in)
            };
            (name, t)
        })
        .collect();
    Ok(EncoderModel {
        config: config.clone(),
        params,
    })
}

impl EncoderModel {
    pub fn tap_names(&self) -> Vec<String> {
        self.config.tap_names()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Records every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.params.iter().map(|(_, t)| tape.param(t.clone())).collect()
    }

    /// Records every parameter as a constant (no gradients).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.params.iter().map(|(_, t)| tape.constant(t.clone())).collect()
    }

    /// Runs the network on `input` (`[N, 1, F, T]`) up to block `stop_after`
    /// (0-based) or to the embedding head when `None`. The final embedding is
    /// row-normalised iff the config asks for it.
    pub fn forward(
        &self,
        tape: &mut Tape,
        ids: &[NodeId],
        input: NodeId,
        stop_after: Option<usize>,
    ) -> Result<ForwardPass> {
        let mut next = ids.iter().copied();
        let mut take = || next.next().expect("parameter ids match config");
        let (w, b) = (take(), take());
        let stem = tape.conv2d(input, w, b, 1)?;
        let mut h = tape.relu(stem)?;
        let mut cin = self.config.stem_channels;
        let mut blocks = Vec::new();
        for (i, spec) in self.config.blocks.iter().enumerate() {
            let mut branch = h;
            for l in 0..spec.n_conv_layers {
                let stride = if l == 0 && spec.downsample { 2 } else { 1 };
                let (w, b) = (take(), take());
                branch = tape.conv2d(branch, w, b, stride)?;
                if l + 1 < spec.n_conv_layers {
                    branch = tape.relu(branch)?;
                }
            }
            let shortcut = if spec.downsample || cin != spec.channels {
                let (w, b) = (take(), take());
                tape.conv2d(h, w, b, if spec.downsample { 2 } else { 1 })?
            } else {
                h
            };
            let pre = tape.add(branch, shortcut)?;
            blocks.push(pre);
            if stop_after == Some(i) {
                return Ok(ForwardPass {
                    blocks,
                    output: None,
                });
            }
            h = tape.relu(pre)?;
            cin = spec.channels;
        }
        let pooled = tape.global_avg_pool2d(h)?;
        let (w, b) = (take(), take());
        let mut out = tape.dense(pooled, w, b)?;
        if self.config.l2_normalize_output {
            out = tape.l2_normalize(out, NORM_EPS)?;
        }
        Ok(ForwardPass {
            blocks,
            output: Some(out),
        })
    }

    /// Forward pass for a tap, returning the pooled `[N, width]` node.
    pub fn forward_tap(
        &self,
        tape: &mut Tape,
        ids: &[NodeId],
        input: NodeId,
        tap: &str,
    ) -> Result<NodeId> {
        self.config.tap_width(tap)?;
        if tap == FINAL_TAP {
            let pass = self.forward(tape, ids, input, None)?;
            return Ok(pass.output.expect("full pass"));
        }
        let index: usize = tap["block".len()..].parse::<usize>().expect("validated") - 1;
        let pass = self.forward(tape, ids, input, Some(index))?;
        tape.global_avg_pool2d(pass.blocks[index])
    }

    /// Embeds windows at `tap`. Windows are processed independently, so a
    /// row never depends on what else shares its batch.
    pub fn embed(&self, windows: &[ContextWindow], tap: &str) -> Result<EmbeddingSet> {
        let dim = self.config.tap_width(tap)?;
        let mut rows = Vec::with_capacity(windows.len() * dim);
        for chunk in windows.chunks(EMBED_CHUNK) {
            let mut tape = Tape::new();
            let ids = self.bind_frozen(&mut tape);
            let input = tape.constant(windows_tensor(chunk)?);
            let out = self.forward_tap(&mut tape, &ids, input, tap)?;
            rows.extend_from_slice(tape.value(out).data());
        }
        Ok(EmbeddingSet {
            rows,
            dim,
            tap: tap.to_string(),
            clip_ids: windows.iter().map(|w| w.clip_id.clone()).collect(),
            speaker_ids: vec![String::new(); windows.len()],
            labels: vec![String::new(); windows.len()],
        })
    }

    /// Overwrites parameters in storage order; shapes must match.
    pub fn set_params(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for ((name, slot), v) in self.params.iter_mut().zip(values) {
            if slot.shape() != v.shape() {
                return Err(Error::Shape {
                    op: "set_params",
                    detail: format!("{}: {:?} vs {:?}", name, slot.shape(), v.shape()),
                });
            }
            *slot = v;
        }
        Ok(())
    }
}

/// Stacks windows into an `[N, 1, F, T]` tensor.
pub fn windows_tensor(windows: &[ContextWindow]) -> Result<Tensor> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Contract("no windows to embed".into()))?;
    let (f, t) = (first.n_mels, first.n_frames);
    let mut data = Vec::with_capacity(windows.len() * f * t);
    for w in windows {
        if (w.n_mels, w.n_frames) != (f, t) || w.values.len() != f * t {
            return Err(Error::Shape {
                op: "windows_tensor",
                detail: format!("window {}x{} among {}x{}", w.n_mels, w.n_frames, f, t),
            });
        }
        data.extend_from_slice(&w.values);
    }
    Tensor::new(vec![windows.len(), 1, f, t], data)
}

/// Per-window embeddings with their provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    /// Row-major `n × dim`.
    pub rows: Vec<f64>,
    pub dim: usize,
    pub tap: String,
    pub clip_ids: Vec<String>,
    pub speaker_ids: Vec<String>,
    pub labels: Vec<String>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.clip_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clip_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Fills speaker and label columns from a manifest, keyed by clip id.
    pub fn with_provenance(mut self, manifest: &crate::corpus::Manifest) -> Result<Self> {
        let lookup: std::collections::HashMap<&str, &crate::corpus::ManifestEntry> =
            manifest.entries.iter().map(|e| (e.clip_id.as_str(), e)).collect();
        for (i, id) in self.clip_ids.iter().enumerate() {
            let e = lookup
                .get(id.as_str())
                .ok_or_else(|| Error::Validation(format!("clip `{}` not in manifest", id)))?;
            self.speaker_ids[i] = e.speaker_id.clone();
            self.labels[i] = e.label.clone();
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests;
