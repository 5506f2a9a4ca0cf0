//! Checkpoint container: `TRLM`, version byte, u32 header length, a
//! `key=value` header (one `tensor=<name> <d0,d1,..>` line per tensor, in
//! storage order), then each tensor as little-endian f32.

use std::path::Path;

use super::{BlockSpec, EncoderConfig, EncoderModel};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TRLM";
const VERSION: u8 = 1;

/// Metadata plus named tensors, the unit stored in a checkpoint file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Format(format!("checkpoint header lacks `{}`", key)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        for (k, v) in &self.meta {
            header.push_str(&format!("{}={}\n", k, v));
        }
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            header.push_str(&format!("tensor={} {}\n", name, dims.join(",")));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint: bad magic".into()));
        }
        let truncated = |what: &str| Error::Corruption {
            offset: bytes.len() as u64,
            detail: format!("file ends inside {}", what),
        };
        let version = *bytes.get(4).ok_or_else(|| truncated("the version byte"))?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", version)));
        }
        let len_bytes = bytes.get(5..9).ok_or_else(|| truncated("the header length"))?;
        let header_len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
        let header = bytes
            .get(9..9 + header_len)
            .ok_or_else(|| truncated("the header"))?;
        let header = std::str::from_utf8(header)
            .map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;

        let mut meta = Vec::new();
        let mut shapes = Vec::new();
        for line in header.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header line `{}`", line)))?;
            if k == "tensor" {
                let (name, dims) = v
                    .split_once(' ')
                    .ok_or_else(|| Error::Format(format!("bad tensor line `{}`", line)))?;
                let dims = if dims.is_empty() {
                    vec![]
                } else {
                    dims.split(',')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| Error::Format(format!("bad tensor shape `{}`", dims)))?
                };
                shapes.push((name.to_string(), dims));
            } else {
                meta.push((k.to_string(), v.to_string()));
            }
        }

        let mut at = 9 + header_len;
        let mut tensors = Vec::with_capacity(shapes.len());
        for (name, shape) in shapes {
            let n: usize = shape.iter().product();
            let end = at + 4 * n;
            if end > bytes.len() {
                return Err(Error::Corruption {
                    offset: bytes.len() as u64,
                    detail: format!("tensor `{}` needs bytes {}..{}", name, at, end),
                });
            }
            let data = bytes[at..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
            at = end;
        }
        if at != bytes.len() {
            return Err(Error::Corruption {
                offset: at as u64,
                detail: format!("{} trailing bytes", bytes.len() - at),
            });
        }
        Ok(Self { meta, tensors })
    }
}

pub fn write_container(path: impl AsRef<Path>, c: &Container) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, c.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Container::from_bytes(&bytes)
}

fn encode_blocks(blocks: &[BlockSpec]) -> String {
    blocks
        .iter()
        .map(|b| format!("{}:{}:{}", b.channels, b.n_conv_layers, if b.downsample { "down" } else { "same" }))
        .collect::<Vec<_>>()
        .join(",")
}

/// Parses `channels:layers:down|same` triples separated by commas.
pub(crate) fn parse_blocks(text: &str) -> Result<Vec<BlockSpec>> {
    text.split(',')
        .map(|part| {
            let fields: Vec<&str> = part.trim().split(':').collect();
            let bad = || Error::Config(format!("bad block spec `{}` (want channels:layers:down|same)", part));
            if fields.len() != 3 {
                return Err(bad());
            }
            Ok(BlockSpec {
                channels: fields[0].parse().map_err(|_| bad())?,
                n_conv_layers: fields[1].parse().map_err(|_| bad())?,
                downsample: match fields[2] {
                    "down" => true,
                    "same" => false,
                    _ => return Err(bad()),
                },
            })
        })
        .collect()
}

impl EncoderModel {
    pub fn to_container(&self) -> Container {
        let c = &self.config;
        Container {
            meta: vec![
                ("kind".into(), "encoder".into()),
                ("stem_channels".into(), c.stem_channels.to_string()),
                ("blocks".into(), encode_blocks(&c.blocks)),
                ("embedding_dim".into(), c.embedding_dim.to_string()),
                ("l2_normalize_output".into(), c.l2_normalize_output.to_string()),
                ("seed".into(), c.seed.to_string()),
            ],
            tensors: self.params.clone(),
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.get("kind") != Some("encoder") {
            return Err(Error::Format("checkpoint does not hold an encoder".into()));
        }
        let num = |key: &str| -> Result<usize> {
            c.require(key)?
                .parse()
                .map_err(|_| Error::Format(format!("`{}` is not an integer", key)))
        };
        let config = EncoderConfig {
            stem_channels: num("stem_channels")?,
            blocks: parse_blocks(c.require("blocks")?)
                .map_err(|e| Error::Format(e.to_string()))?,
            embedding_dim: num("embedding_dim")?,
            l2_normalize_output: c
                .require("l2_normalize_output")?
                .parse()
                .map_err(|_| Error::Format("`l2_normalize_output` is not a bool".into()))?,
            seed: c
                .require("seed")?
                .parse()
                .map_err(|_| Error::Format("`seed` is not an integer".into()))?,
        };
        config.validate().map_err(|e| Error::Format(e.to_string()))?;
        let expected = config.parameter_shapes();
        let got: Vec<(String, Vec<usize>)> = c
            .tensors
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect();
        if expected != got {
            return Err(Error::Format(
                "checkpoint tensors do not match the declared architecture".into(),
            ));
        }
        Ok(Self {
            config,
            params: c.tensors.clone(),
        })
    }
}

pub fn save_checkpoint(model: &EncoderModel, path: impl AsRef<Path>) -> Result<()> {
    write_container(path, &model.to_container())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<EncoderModel> {
    EncoderModel::from_container(&read_container(path)?)
}
