//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"CDGAN\0" version:u8
//! count:u32
//! count × { name_len:u16 name:[u8] rank:u8 dims:[u32; rank] values:[f32; prod(dims)] }
//! meta_len:u32 meta:[u8]   // UTF-8 "key=value\n" lines
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cdgan_tensor::Tensor;
use thiserror::Error;

use crate::nets::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::params::ParamSet;
use crate::training::{AdamState, HistoryRow, OptimizerStates, TrainState};

pub const MAGIC: &[u8; 6] = b"CDGAN\0";
pub const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u8),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),
    #[error("tensor `{name}`: {detail}")]
    BadTensor { name: String, detail: String },
    #[error("malformed metadata: {0}")]
    BadMeta(String),
    #[error("{0} trailing bytes after metadata")]
    TrailingBytes(usize),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("missing or invalid metadata key `{0}`")]
    MissingMeta(String),
    #[error("cannot encode: {0}")]
    Unencodable(String),
}

type Result<T> = std::result::Result<T, CheckpointError>;

/// A named tensor table plus string metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&u32::try_from(self.tensors.len()).map_err(|_| CheckpointError::Unencodable("too many tensors".into()))?.to_le_bytes());
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len()).map_err(|_| CheckpointError::Unencodable(format!("name `{name}` too long")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(t.shape().len()).map_err(|_| CheckpointError::Unencodable(format!("`{name}` rank")))?;
            out.push(rank);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| CheckpointError::Unencodable(format!("`{name}` dim {d}")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut meta = String::new();
        for (k, v) in &self.meta {
            if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
                return Err(CheckpointError::Unencodable(format!("metadata entry `{k}`")));
            }
            meta.push_str(&format!("{k}={v}\n"));
        }
        let len = u32::try_from(meta.len()).map_err(|_| CheckpointError::Unencodable("metadata too large".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        Ok(out)
    }

    /// Parses a complete checkpoint, validating each tensor's header before
    /// reading its values.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(MAGIC.len() + 1, "header").map_err(|_| CheckpointError::BadMagic)?;
        if &magic[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if magic[MAGIC.len()] != VERSION {
            return Err(CheckpointError::UnsupportedVersion(magic[MAGIC.len()]));
        }
        let count = r.u32("tensor count")? as usize;
        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        for i in 0..count {
            let what = format!("tensor #{i} name");
            let len = r.u16(&what)? as usize;
            let name = std::str::from_utf8(r.take(len, &what)?)
                .map_err(|_| CheckpointError::BadTensor {
                    name: format!("#{i}"),
                    detail: "name is not UTF-8".into(),
                })?
                .to_string();
            let bad = |detail: String| CheckpointError::BadTensor { name: name.clone(), detail };
            if tensors.iter().any(|(n, _)| *n == name) {
                return Err(bad("duplicate name".into()));
            }
            let rank = r.take(1, &name)?[0] as usize;
            if rank == 0 {
                return Err(bad("rank 0".into()));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32(&name)? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| if d == 0 { None } else { acc.checked_mul(d) })
                .ok_or_else(|| bad(format!("invalid shape {shape:?}")))?;
            let nbytes = numel.checked_mul(4).ok_or_else(|| bad(format!("invalid shape {shape:?}")))?;
            if r.remaining() < nbytes {
                return Err(CheckpointError::Truncated(format!("tensor `{name}` values")));
            }
            let data = r
                .take(nbytes, &name)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?;
            tensors.push((name, t));
        }
        let len = r.u32("metadata length")? as usize;
        let text = std::str::from_utf8(r.take(len, "metadata")?).map_err(|_| CheckpointError::BadMeta("not UTF-8".into()))?;
        let mut meta = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CheckpointError::BadMeta(format!("line `{line}` has no `=`")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        if r.remaining() != 0 {
            return Err(CheckpointError::TrailingBytes(r.remaining()));
        }
        Ok(Self { tensors, meta })
    }

    /// Writes to a sibling temporary file and renames it into place, so an
    /// interrupted save never clobbers an existing checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
        drop(f);
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::decode(&bytes)
    }

    fn push_params(&mut self, prefix: &str, params: &ParamSet) {
        for p in params.iter() {
            self.tensors.push((format!("{prefix}.{}", p.name), p.value.clone()));
        }
    }

    fn push_adam(&mut self, prefix: &str, params: &ParamSet, state: &AdamState) {
        for (p, m) in params.iter().zip(&state.m) {
            self.tensors.push((format!("adam.{prefix}.m.{}", p.name), m.clone()));
        }
        for (p, v) in params.iter().zip(&state.v) {
            self.tensors.push((format!("adam.{prefix}.v.{}", p.name), v.clone()));
        }
        self.meta.insert(format!("adam.{prefix}.t"), state.t.to_string());
    }

    fn read_params(&self, prefix: &str, params: &mut ParamSet) -> Result<()> {
        let mut fresh = Vec::with_capacity(params.len());
        for p in params.iter() {
            fresh.push(self.expect(&format!("{prefix}.{}", p.name), p.value.shape())?);
        }
        for (p, t) in params.iter_mut().zip(fresh) {
            p.value = t;
            p.grad = None;
        }
        Ok(())
    }

    fn read_adam(&self, prefix: &str, params: &ParamSet) -> Result<AdamState> {
        let mut m = Vec::new();
        let mut v = Vec::new();
        for p in params.iter() {
            m.push(self.expect(&format!("adam.{prefix}.m.{}", p.name), p.value.shape())?);
            v.push(self.expect(&format!("adam.{prefix}.v.{}", p.name), p.value.shape())?);
        }
        let t = self.meta_parse(&format!("adam.{prefix}.t"))?;
        Ok(AdamState { m, v, t })
    }

    fn expect(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = self.tensor(name).ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
        if t.shape() != shape {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t.clone())
    }

    fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.meta
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CheckpointError::MissingMeta(key.to_string()))
    }

    pub fn has_generator(&self) -> bool {
        self.meta.contains_key("gen.channels")
    }

    /// Generator weights only.
    pub fn from_generator(gen: &Generator) -> Self {
        let mut ck = Self::default();
        ck.push_params("gen", gen.params());
        ck.meta.insert("gen.channels".into(), gen.config().base_channels.to_string());
        ck.meta.insert("gen.dropout".into(), gen.config().dropout.to_string());
        ck
    }

    pub fn generator(&self) -> Result<Generator> {
        let config = GeneratorConfig {
            base_channels: self.meta_parse("gen.channels")?,
            dropout: self.meta_parse("gen.dropout")?,
        };
        let mut gen = Generator::new(config, 0).map_err(|e| CheckpointError::BadMeta(e.to_string()))?;
        self.read_params("gen", gen.params_mut())?;
        Ok(gen)
    }

    pub fn discriminator(&self) -> Result<Discriminator> {
        let config = DiscriminatorConfig {
            base_channels: self.meta_parse("disc.channels")?,
        };
        let mut disc = Discriminator::new(config, 0).map_err(|e| CheckpointError::BadMeta(e.to_string()))?;
        self.read_params("disc", disc.params_mut())?;
        Ok(disc)
    }

    /// Full training state: both networks, both optimizers, epoch counter,
    /// best validation IoU and history.
    pub fn from_train_state(state: &TrainState) -> Self {
        let mut ck = Self::from_generator(&state.gen);
        ck.push_params("disc", state.disc.params());
        ck.meta.insert("disc.channels".into(), state.disc.config().base_channels.to_string());
        ck.push_adam("gen", state.gen.params(), &state.opt.gen);
        ck.push_adam("disc", state.disc.params(), &state.opt.disc);
        ck.meta.insert("epoch".into(), state.epoch.to_string());
        if let Some(b) = state.best_val_iou {
            ck.meta.insert("best_val_iou".into(), b.to_string());
        }
        for row in &state.history {
            ck.meta.insert(format!("history.{:06}", row.epoch), row.to_tsv());
        }
        ck
    }

    pub fn train_state(&self) -> Result<TrainState> {
        let gen = self.generator()?;
        let disc = self.discriminator()?;
        let opt = OptimizerStates {
            gen: self.read_adam("gen", gen.params())?,
            disc: self.read_adam("disc", disc.params())?,
        };
        let epoch = self.meta_parse("epoch")?;
        let best_val_iou = match self.meta.get("best_val_iou") {
            Some(_) => Some(self.meta_parse("best_val_iou")?),
            None => None,
        };
        let history = self
            .meta
            .iter()
            .filter(|(k, _)| k.starts_with("history."))
            .map(|(k, v)| HistoryRow::parse(v).map_err(|_| CheckpointError::MissingMeta(k.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainState {
            gen,
            disc,
            opt,
            epoch,
            history,
            best_val_iou,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(CheckpointError::Truncated(what.to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
