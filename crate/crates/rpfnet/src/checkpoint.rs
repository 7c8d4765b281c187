//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "RPFNETCK"
//! version  u32
//! hlen     u64      length of the JSON header
//! header   hlen bytes
//! payload  f64 bit patterns of every tensor, in header order
//! check    u64      FNV-1a over everything above
//! ```
//!
//! Tensor values are stored as raw IEEE bit patterns, so a save/load cycle
//! is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use rpfnet_core::network::{Model, ModelConfig};
use rpfnet_core::optim::{Adam, AdamConfig};
use rpfnet_core::training::{TrainConfig, TrainerState};
use rpfnet_core::{Shape, Tensor};
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 8] = b"RPFNETCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: Option<TrainConfig>,
    pub tensors: Vec<(String, Tensor)>,
    pub trainer: Option<TrainerState>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
}

#[derive(Serialize, Deserialize)]
struct AdamEntry {
    config: AdamConfig,
    indices: Vec<usize>,
    t: u64,
}

#[derive(Serialize, Deserialize)]
struct TrainerEntry {
    epoch: usize,
    step: u64,
    rng_seed: [u8; 32],
    /// Decimal string; JSON numbers cannot carry a full `u128`.
    rng_word_pos: String,
    adam_a: AdamEntry,
    adam_b: AdamEntry,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    train: Option<TrainConfig>,
    trainer: Option<TrainerEntry>,
    tensors: Vec<TensorEntry>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn shape_of(s: Shape) -> [usize; 4] {
    [s.n(), s.c(), s.h(), s.w()]
}

impl Checkpoint {
    /// Weights only, for inference.
    pub fn of_model(model: &Model) -> Self {
        Checkpoint {
            model_config: model.config().clone(),
            train_config: None,
            tensors: model.named_tensors(),
            trainer: None,
        }
    }

    pub fn with_training(model: &Model, config: &TrainConfig, state: TrainerState) -> Self {
        Checkpoint { train_config: Some(config.clone()), trainer: Some(state), ..Self::of_model(model) }
    }

    /// Rebuild the model and load every stored tensor.
    pub fn model(&self) -> Result<Model> {
        let mut m = Model::new(self.model_config.clone(), 0)?;
        m.load_named(&self.tensors)?;
        Ok(m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries: Vec<TensorEntry> =
            self.tensors.iter().map(|(n, t)| TensorEntry { name: n.clone(), shape: shape_of(t.shape()) }).collect();
        let mut payload: Vec<&Tensor> = self.tensors.iter().map(|(_, t)| t).collect();
        let trainer = self.trainer.as_ref().map(|s| {
            for (tag, adam) in [("a", &s.adam_a), ("b", &s.adam_b)] {
                for (moment, list) in [("m", &adam.m), ("v", &adam.v)] {
                    for (k, t) in list.iter().enumerate() {
                        entries.push(TensorEntry { name: format!("@adam_{tag}.{moment}.{k}"), shape: shape_of(t.shape()) });
                        payload.push(t);
                    }
                }
            }
            let entry = |a: &Adam| AdamEntry { config: a.config, indices: a.indices.clone(), t: a.t };
            TrainerEntry {
                epoch: s.epoch,
                step: s.step,
                rng_seed: s.rng_seed,
                rng_word_pos: s.rng_word_pos.to_string(),
                adam_a: entry(&s.adam_a),
                adam_b: entry(&s.adam_b),
            }
        });
        let header = Header { model: self.model_config.clone(), train: self.train_config.clone(), trainer, tensors: entries };
        let json = serde_json::to_vec(&header)?;

        let mut out = Vec::with_capacity(json.len() + 32 + payload.iter().map(|t| 8 * t.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in payload {
            for v in t.data() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        let check = fnv1a(&out);
        out.extend_from_slice(&check.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        ensure!(bytes.len() >= 28, "checkpoint truncated");
        ensure!(&bytes[..8] == MAGIC, "not an rpfnet checkpoint");
        let version = u32::from_le_bytes(bytes[8..12].try_into()?);
        ensure!(version == VERSION, "unsupported checkpoint version {version}");
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        ensure!(fnv1a(body) == u64::from_le_bytes(tail.try_into()?), "checkpoint checksum mismatch");
        let hlen = usize::try_from(u64::from_le_bytes(body[12..20].try_into()?))?;
        ensure!(body.len() >= 20 + hlen, "checkpoint header truncated");
        let header: Header = serde_json::from_slice(&body[20..20 + hlen]).context("checkpoint header")?;

        let mut cursor = &body[20 + hlen..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let [n, c, h, w] = e.shape;
            let shape = Shape::new(n, c, h, w);
            let bytes_needed = 8 * shape.numel();
            ensure!(cursor.len() >= bytes_needed, "payload truncated at tensor `{}`", e.name);
            let (chunk, rest) = cursor.split_at(bytes_needed);
            let data = chunk.chunks_exact(8).map(|b| f64::from_bits(u64::from_le_bytes(b.try_into().unwrap()))).collect();
            tensors.push((e.name.clone(), Tensor::from_vec(shape, data)?));
            cursor = rest;
        }
        ensure!(cursor.is_empty(), "trailing bytes after payload");

        let split = tensors.iter().position(|(n, _)| n.starts_with('@')).unwrap_or(tensors.len());
        let mut optim = tensors.split_off(split).into_iter();
        let trainer = match header.trainer {
            None => {
                ensure!(optim.len() == 0, "optimizer tensors without trainer state");
                None
            }
            Some(te) => {
                let mut take = |entry: &AdamEntry, tag: &str| -> Result<Adam> {
                    let mut moments = [Vec::new(), Vec::new()];
                    for (moment, dst) in ["m", "v"].iter().zip(moments.iter_mut()) {
                        for k in 0..entry.indices.len() {
                            let (name, t) = optim.next().context("missing optimizer tensor")?;
                            if name != format!("@adam_{tag}.{moment}.{k}") {
                                bail!("unexpected optimizer tensor `{name}`");
                            }
                            dst.push(t);
                        }
                    }
                    let [m, v] = moments;
                    Ok(Adam { config: entry.config, indices: entry.indices.clone(), m, v, t: entry.t })
                };
                let adam_a = take(&te.adam_a, "a")?;
                let adam_b = take(&te.adam_b, "b")?;
                ensure!(optim.next().is_none(), "unexpected trailing optimizer tensors");
                Some(TrainerState {
                    epoch: te.epoch,
                    step: te.step,
                    rng_seed: te.rng_seed,
                    rng_word_pos: te.rng_word_pos.parse().context("rng word position")?,
                    adam_a,
                    adam_b,
                })
            }
        };
        Ok(Checkpoint { model_config: header.model, train_config: header.train, tensors, trainer })
    }

    /// Write through a temporary sibling and rename, so readers never see a
    /// partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("invalid checkpoint {}", path.display()))
    }
}

/// Create or replace `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| -> Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("cannot write {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rpfnet_core::synthetic::synthetic_dataset;
    use rpfnet_core::training::Trainer;

    fn tiny() -> TrainConfig {
        TrainConfig {
            batch: 2,
            crop: 12,
            model: ModelConfig { channels: 4, stages: 1, ..ModelConfig::default() },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn weights_round_trip_bit_exactly() {
        let mut m = Model::new(tiny().model, 5).unwrap();
        m.params_mut()[0].value.data_mut()[0] = f64::from_bits(0x3ff0_0000_0000_0001);
        m.params_mut()[1].value.data_mut()[0] = -0.0;
        let ck = Checkpoint::of_model(&m);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let bits = |t: &[(String, Tensor)]| -> Vec<u64> { t.iter().flat_map(|(_, x)| x.data().iter().map(|v| v.to_bits())).collect() };
        assert_eq!(bits(&back.tensors), bits(&ck.tensors));
        assert_eq!(back.model().unwrap().named_tensors(), m.named_tensors());
    }

    #[test]
    fn training_state_round_trips_and_resumes_identically() {
        let data = synthetic_dataset(2, 16, 16, 2);
        let mut a = Trainer::new(tiny()).unwrap();
        a.run_epoch(&data, |_| {}).unwrap();
        let ck = Checkpoint::with_training(&a.model, &a.config, a.state());
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let mut b = Trainer::resume(back.train_config.clone().unwrap(), back.model().unwrap(), back.trainer.unwrap()).unwrap();
        assert_eq!(a.run_epoch(&data, |_| {}).unwrap(), b.run_epoch(&data, |_| {}).unwrap());
    }

    #[test]
    fn corruption_is_detected() {
        let m = Model::new(tiny().model, 1).unwrap();
        let mut bytes = Checkpoint::of_model(&m).to_bytes().unwrap();
        let k = bytes.len() / 2;
        bytes[k] ^= 1;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        assert!(Checkpoint::from_bytes(b"RPFNETCK").is_err());
        let mut wrong = Checkpoint::of_model(&m).to_bytes().unwrap();
        wrong[8] = 9;
        assert!(Checkpoint::from_bytes(&wrong).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn atomic_save_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = Model::new(tiny().model, 1).unwrap();
        Checkpoint::of_model(&m).save(&path).unwrap();
        Checkpoint::of_model(&m).save(&path).unwrap();
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("m.ckpt")]);
        assert_eq!(Checkpoint::load(&path).unwrap(), Checkpoint::of_model(&m));
    }
}
