//! Binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` LE format version, `u64` LE manifest length,
//! JSON manifest, then every tensor as row-major little-endian `f64` in
//! manifest order. The manifest records each tensor's name, shape and
//! element offset.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::diffmath::Tensor;
use crate::error::{Error, Result};
use crate::metaloop::{MetaParams, OptimizerState, OuterOptimizer, Trainer};

pub const MAGIC: &[u8; 8] = b"ARMLCKPT";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub iteration: u64,
    pub phi: MetaParams,
    pub optimizer: OptimizerState,
    pub rng: ChaCha8Rng,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    kind: OuterOptimizer,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: String,
    iteration: u64,
    rng: RngState,
    optimizer: OptimizerMeta,
    tensors: Vec<TensorEntry>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

impl Checkpoint {
    pub fn from_trainer(config: &ExperimentConfig, trainer: &Trainer) -> Self {
        Checkpoint {
            config: ExperimentConfig {
                train: trainer.config.clone(),
                ..config.clone()
            },
            iteration: trainer.iteration,
            phi: trainer.phi.clone(),
            optimizer: trainer.optimizer.clone(),
            rng: trainer.rng.clone(),
        }
    }

    pub fn into_trainer(self) -> Trainer {
        Trainer {
            config: self.config.train,
            phi: self.phi,
            optimizer: self.optimizer,
            rng: self.rng,
            iteration: self.iteration,
        }
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self.phi.iter().collect();
        let names = self.phi.names();
        for (n, t) in names.iter().zip(&self.optimizer.m) {
            out.push((format!("optimizer.m.{n}"), t));
        }
        for (n, t) in names.iter().zip(&self.optimizer.v) {
            out.push((format!("optimizer.v.{n}"), t));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.optimizer.check(&self.phi)?;
        let tensors = self.named_tensors();
        let mut entries = Vec::with_capacity(tensors.len());
        let mut offset = 0;
        for (name, t) in &tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: [t.rows(), t.cols()],
                offset,
            });
            offset += t.len();
        }
        let manifest = Manifest {
            config: self.config.to_text(),
            iteration: self.iteration,
            rng: RngState {
                seed: hex(&self.rng.get_seed()),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos().to_string(),
            },
            optimizer: OptimizerMeta {
                kind: self.optimizer.kind,
                step: self.optimizer.step,
            },
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(HEADER_LEN + json.len() + 8 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Integrity(msg);
        if bytes.len() < HEADER_LEN {
            return Err(bad(format!("file is {} bytes, shorter than the header", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}, expected {FORMAT_VERSION}")));
        }
        let manifest_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let manifest_end = usize::try_from(manifest_len)
            .ok()
            .and_then(|n| n.checked_add(HEADER_LEN))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| bad("manifest extends past end of file".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..manifest_end])
            .map_err(|e| bad(format!("unreadable manifest: {e}")))?;
        let payload = &bytes[manifest_end..];

        let expected: usize = manifest.tensors.iter().map(|e| e.shape[0] * e.shape[1]).sum();
        if payload.len() != expected * 8 {
            return Err(bad(format!(
                "payload holds {} bytes, manifest describes {}",
                payload.len(),
                expected * 8
            )));
        }

        let config = ExperimentConfig::parse(&manifest.config)?;
        let layout = MetaParams::init(&config.train, &mut ChaCha8Rng::seed_from_u64(0));
        let names = layout.names();
        let n = names.len();
        if manifest.tensors.len() != 3 * n {
            return Err(bad(format!("{} tensors stored, layout needs {}", manifest.tensors.len(), 3 * n)));
        }

        let mut tensors = Vec::with_capacity(3 * n);
        let mut offset = 0;
        for (i, entry) in manifest.tensors.iter().enumerate() {
            let base = &names[i % n];
            let want_name = match i / n {
                0 => base.clone(),
                1 => format!("optimizer.m.{base}"),
                _ => format!("optimizer.v.{base}"),
            };
            let (_, like) = layout.iter().nth(i % n).expect("index in range");
            if entry.name != want_name || entry.shape != [like.rows(), like.cols()] || entry.offset != offset {
                return Err(bad(format!(
                    "tensor {i} is `{}` {:?} at {}, expected `{want_name}` {:?} at {offset}",
                    entry.name,
                    entry.shape,
                    entry.offset,
                    like.shape()
                )));
            }
            let len = entry.shape[0] * entry.shape[1];
            let data: Vec<f64> = payload[offset * 8..(offset + len) * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(Tensor::new(entry.shape[0], entry.shape[1], data)?);
            offset += len;
        }

        let mut it = tensors.into_iter();
        let phi = layout.rebuild(it.by_ref().take(n)).expect("layout checked");
        let m: Vec<Tensor> = it.by_ref().take(n).collect();
        let v: Vec<Tensor> = it.collect();
        let optimizer = OptimizerState {
            kind: manifest.optimizer.kind,
            step: manifest.optimizer.step,
            m,
            v,
        };

        let seed = unhex(&manifest.rng.seed).ok_or_else(|| bad("malformed rng seed".into()))?;
        let word_pos: u128 = manifest
            .rng
            .word_pos
            .parse()
            .map_err(|_| bad("malformed rng position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(manifest.rng.stream);
        rng.set_word_pos(word_pos);

        Ok(Checkpoint {
            config,
            iteration: manifest.iteration,
            phi,
            optimizer,
            rng,
        })
    }

    /// Writes through a temporary file so a crash never leaves a partial
    /// checkpoint at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
