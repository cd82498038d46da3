//! Versioned binary checkpoints: magic, `u32` version, a JSON header, then
//! every tensor and optimiser moment as little-endian `f64`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RngState;
use crate::adapting::ProsodyStats;
use crate::config::{Stage, TrainConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::optim::{Adam, AdamConfig, AdamSlot};
use crate::params::ParamStore;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PRODUBCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subsystem {
    Acoustic,
    Prosodic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub stage: Stage,
    pub config: TrainConfig,
    pub epoch: usize,
    pub step: usize,
    pub rng: RngState,
    pub acoustic: ParamStore<T>,
    pub prosodic: Option<ParamStore<T>>,
    pub stats: Option<ProsodyStats>,
    /// State of the optimiser of the subsystem trained in `stage`.
    pub optimizer: Option<Adam<T>>,
    pub acoustic_hash: String,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn trained_subsystem(&self) -> Subsystem {
        match self.stage {
            Stage::Pretrain => Subsystem::Acoustic,
            Stage::Adapt => Subsystem::Prosodic,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    subsystem: Subsystem,
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct SlotEntry {
    index: usize,
    steps: u64,
}

#[derive(Serialize, Deserialize)]
struct OptimizerEntry {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    slots: Vec<SlotEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: String,
    stage: Stage,
    epoch: usize,
    step: usize,
    rng: RngState,
    config: TrainConfig,
    acoustic_hash: String,
    stats: Option<ProsodyStats>,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerEntry>,
    values: usize,
}

fn push_matrix<T: Scalar>(blob: &mut Vec<u8>, m: &Matrix<T>) {
    for v in m.as_slice() {
        blob.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
}

pub fn save_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut tensors = Vec::new();
    let mut blob = Vec::new();
    let mut stores = vec![(Subsystem::Acoustic, &ckpt.acoustic)];
    if let Some(p) = &ckpt.prosodic {
        stores.push((Subsystem::Prosodic, p));
    }
    for (sub, store) in &stores {
        for (_, name, m) in store.iter() {
            tensors.push(TensorEntry {
                subsystem: *sub,
                name: name.to_string(),
                rows: m.rows(),
                cols: m.cols(),
            });
            push_matrix(&mut blob, m);
        }
    }
    let optimizer = ckpt.optimizer.as_ref().map(|opt| {
        let mut slots = Vec::new();
        for (index, slot) in opt.slots.iter().enumerate() {
            if let Some(s) = slot {
                slots.push(SlotEntry { index, steps: s.steps });
                push_matrix(&mut blob, &s.m);
                push_matrix(&mut blob, &s.v);
            }
        }
        OptimizerEntry {
            lr: opt.config.lr,
            beta1: opt.config.beta1,
            beta2: opt.config.beta2,
            eps: opt.config.eps,
            slots,
        }
    });
    let header = Header {
        dtype: T::DTYPE.to_string(),
        stage: ckpt.stage,
        epoch: ckpt.epoch,
        step: ckpt.step,
        rng: ckpt.rng.clone(),
        config: ckpt.config.clone(),
        acoustic_hash: ckpt.acoustic_hash.clone(),
        stats: ckpt.stats,
        tensors,
        optimizer,
        values: blob.len() / 8,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + json.len() + blob.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        match end {
            Some(end) => {
                let s = &self.data[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!("checkpoint truncated while reading {what}"))),
        }
    }

    fn matrix<T: Scalar>(&mut self, rows: usize, cols: usize) -> Result<Matrix<T>> {
        let bytes = self.take(rows * cols * 8, "tensor data")?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        Matrix::from_vec(rows, cols, values)
    }
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { data: &data, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("{} is not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let len = u64::from_le_bytes(r.take(8, "header length")?.try_into().expect("8 bytes")) as usize;
    let header: Header =
        serde_json::from_slice(r.take(len, "header")?).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if data.len() - r.pos != header.values * 8 {
        return Err(Error::Format(format!(
            "checkpoint holds {} data bytes, header declares {}",
            data.len() - r.pos,
            header.values * 8
        )));
    }
    let mut parts: [(Vec<String>, Vec<Matrix<T>>); 2] = Default::default();
    for t in &header.tensors {
        let m = r.matrix(t.rows, t.cols)?;
        let k = match t.subsystem {
            Subsystem::Acoustic => 0,
            Subsystem::Prosodic => 1,
        };
        parts[k].0.push(t.name.clone());
        parts[k].1.push(m);
    }
    let [(an, at), (pn, pt)] = parts;
    let acoustic = ParamStore::from_parts(an, at);
    let prosodic = (!pn.is_empty()).then(|| ParamStore::from_parts(pn, pt));
    let trained_len = match header.stage {
        Stage::Pretrain => acoustic.len(),
        Stage::Adapt => prosodic.as_ref().map_or(0, ParamStore::len),
    };
    let trained = match header.stage {
        Stage::Pretrain => Some(&acoustic),
        Stage::Adapt => prosodic.as_ref(),
    };
    let optimizer = match &header.optimizer {
        None => None,
        Some(o) => {
            let mut slots: Vec<Option<AdamSlot<T>>> = vec![None; trained_len];
            for s in &o.slots {
                let shape = trained
                    .filter(|_| s.index < trained_len)
                    .map(|st| st.get(st.ids().nth(s.index).expect("index checked")).shape())
                    .ok_or_else(|| Error::Format(format!("optimiser slot {} has no parameter", s.index)))?;
                let m = r.matrix(shape.0, shape.1)?;
                let v = r.matrix(shape.0, shape.1)?;
                slots[s.index] = Some(AdamSlot { m, v, steps: s.steps });
            }
            Some(Adam {
                config: AdamConfig {
                    lr: o.lr,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    eps: o.eps,
                },
                slots,
            })
        }
    };
    if r.pos != data.len() {
        return Err(Error::Format("trailing bytes after checkpoint data".into()));
    }
    if header.dtype == T::DTYPE && acoustic.content_hash() != header.acoustic_hash {
        return Err(Error::Format(
            "acoustic parameters do not match the recorded hash".into(),
        ));
    }
    Ok(Checkpoint {
        stage: header.stage,
        config: header.config,
        epoch: header.epoch,
        step: header.step,
        rng: header.rng,
        acoustic,
        prosodic,
        stats: header.stats,
        optimizer,
        acoustic_hash: header.acoustic_hash,
    })
}
