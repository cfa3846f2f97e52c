use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, TrainConfig, TrainError};
use crate::gnn::ModelParams;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GASFMCK1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    /// Epochs completed when the value was measured.
    pub epoch: u64,
    pub iteration: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestParams {
    pub params: ModelParams,
    pub loss: f64,
    pub epoch: u64,
}

/// Full training state. The per-iteration random streams are derived from
/// `config.seed` and the iteration index, so no generator state is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub adam: AdamState,
    /// Index of the next iteration.
    pub iteration: u64,
    /// Completed epochs.
    pub epoch: u64,
    /// Iterations already run in the current epoch.
    pub step_in_epoch: u64,
    pub history: Vec<ValidationRecord>,
    pub best: Option<BestParams>,
    /// Samples trained without outliers because the requested rate could
    /// not be met.
    pub skipped_outliers: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainConfig,
    iteration: u64,
    epoch: u64,
    step_in_epoch: u64,
    adam_steps: u64,
    history: Vec<ValidationRecord>,
    best_loss: Option<f64>,
    best_epoch: Option<u64>,
    skipped_outliers: u64,
    param_count: usize,
}

fn push_f64s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f64s(bytes: &[u8], offset: &mut usize, count: usize) -> Result<Vec<f64>, TrainError> {
    let end = *offset + count * 8;
    if bytes.len() < end {
        return Err(TrainError::Checkpoint("truncated tensor data".into()));
    }
    let out = bytes[*offset..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    *offset = end;
    Ok(out)
}

fn flatten(buffers: &[Vec<f64>]) -> impl Iterator<Item = f64> + '_ {
    buffers.iter().flatten().copied()
}

fn split_like(flat: &[f64], params: &ModelParams) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(params.tensors().len());
    let mut at = 0;
    for t in params.tensors() {
        out.push(flat[at..at + t.len()].to_vec());
        at += t.len();
    }
    out
}

impl Checkpoint {
    /// `magic | u64 LE header length | JSON header | f64 LE buffers`, the
    /// buffers being parameters, Adam first and second moments and, when
    /// present, the best parameters, each in canonical order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            iteration: self.iteration,
            epoch: self.epoch,
            step_in_epoch: self.step_in_epoch,
            adam_steps: self.adam.t,
            history: self.history.clone(),
            best_loss: self.best.as_ref().map(|b| b.loss),
            best_epoch: self.best.as_ref().map(|b| b.epoch),
            skipped_outliers: self.skipped_outliers,
            param_count: self.params.param_count(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let p = self.params.param_count();
        let buffers = if self.best.is_some() { 4 } else { 3 };
        let mut out = Vec::with_capacity(16 + json.len() + buffers * p * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        push_f64s(&mut out, self.params.to_flat());
        push_f64s(&mut out, flatten(&self.adam.m));
        push_f64s(&mut out, flatten(&self.adam.v));
        if let Some(best) = &self.best {
            push_f64s(&mut out, best.params.to_flat());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(TrainError::Checkpoint("bad magic".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json_end = 16usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| TrainError::Checkpoint("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..json_end])
            .map_err(|e| TrainError::Checkpoint(format!("header: {e}")))?;
        header.config.validate()?;
        let hyper = header.config.model;
        let p = crate::gnn::param_count(&hyper)?;
        if p != header.param_count {
            return Err(TrainError::Checkpoint(format!(
                "header declares {} parameters, model has {p}",
                header.param_count
            )));
        }
        let mut at = json_end;
        let params = ModelParams::from_flat(hyper, &read_f64s(bytes, &mut at, p)?)?;
        let m = split_like(&read_f64s(bytes, &mut at, p)?, &params);
        let v = split_like(&read_f64s(bytes, &mut at, p)?, &params);
        let best = match (header.best_loss, header.best_epoch) {
            (Some(loss), Some(epoch)) => Some(BestParams {
                params: ModelParams::from_flat(hyper, &read_f64s(bytes, &mut at, p)?)?,
                loss,
                epoch,
            }),
            (None, None) => None,
            _ => return Err(TrainError::Checkpoint("incomplete best-model record".into())),
        };
        if at != bytes.len() {
            return Err(TrainError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            config: header.config,
            params,
            adam: AdamState {
                m,
                v,
                t: header.adam_steps,
            },
            iteration: header.iteration,
            epoch: header.epoch,
            step_in_epoch: header.step_in_epoch,
            history: header.history,
            best,
            skipped_outliers: header.skipped_outliers,
        })
    }

    /// The parameters to deploy: the best validated ones if any.
    pub fn deploy_params(&self) -> &ModelParams {
        self.best.as_ref().map_or(&self.params, |b| &b.params)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), TrainError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, TrainError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Checkpoint::from_bytes(&bytes)
}
