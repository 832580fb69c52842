//! JSON checkpoint container.
//!
//! ```text
//! {
//!   "format": "eagat-checkpoint",
//!   "version": 1,
//!   "config": { ...ModelConfig... },
//!   "vocabulary": ["<unk>", ...],
//!   "step": 500,
//!   "params":    [{"name": "embedding.tokens", "rows": .., "cols": .., "data": [..]}, ...],
//!   "optimizer": {"t": 500, "m": [..same layout..], "v": [..]}
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so save then load
//! reproduces every parameter bit for bit. Readers reject other formats and
//! any major version they do not know.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{AdamState, ModelConfig, ModelParams, ModelState};

pub const CHECKPOINT_FORMAT: &str = "eagat-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRecord {
    pub t: u64,
    pub m: Vec<NamedTensor>,
    pub v: Vec<NamedTensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub vocabulary: Vocabulary,
    pub step: u64,
    pub params: Vec<NamedTensor>,
    pub optimizer: OptimizerRecord,
}

fn named(names: &[String], tensors: &[&Tensor]) -> Vec<NamedTensor> {
    names
        .iter()
        .zip(tensors)
        .map(|(name, t)| NamedTensor {
            name: name.clone(),
            rows: t.rows(),
            cols: t.cols(),
            data: t.data().to_vec(),
        })
        .collect()
}

fn unpack(template: &ModelParams, list: Vec<NamedTensor>, what: &str) -> Result<Vec<Tensor>> {
    let names = template.names();
    if names.len() != list.len() {
        return Err(Error::config(format!(
            "checkpoint {what}: expected {} tensors, found {}",
            names.len(),
            list.len()
        )));
    }
    names
        .iter()
        .zip(list)
        .map(|(expected, nt)| {
            if *expected != nt.name {
                return Err(Error::config(format!(
                    "checkpoint {what}: expected {expected}, found {}",
                    nt.name
                )));
            }
            Tensor::new(nt.rows, nt.cols, nt.data)
        })
        .collect()
}

impl Checkpoint {
    pub fn from_state(state: &ModelState) -> Self {
        let names = state.params.names();
        let params: Vec<&Tensor> = state.params.named().into_iter().map(|(_, t)| t).collect();
        let m: Vec<&Tensor> = state.optimizer.m.iter().collect();
        let v: Vec<&Tensor> = state.optimizer.v.iter().collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: state.config.clone(),
            vocabulary: state.vocabulary.clone(),
            step: state.step,
            params: named(&names, &params),
            optimizer: OptimizerRecord {
                t: state.optimizer.t,
                m: named(&names, &m),
                v: named(&names, &v),
            },
        }
    }

    pub fn into_state(self) -> Result<ModelState> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::config(format!(
                "not a checkpoint: format {:?}",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint version {} (this build reads {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        // A fresh state gives the expected layout; its values are replaced.
        let template = ModelState::new(self.config.clone(), self.vocabulary.clone())?;
        let mismatch = || Error::config("checkpoint tensor shapes do not match its config");
        let params = ModelParams::with_tensors(
            &template.params,
            unpack(&template.params, self.params, "params")?,
        )
        .ok_or_else(mismatch)?;
        let m = unpack(&template.params, self.optimizer.m, "optimizer.m")?;
        let v = unpack(&template.params, self.optimizer.v, "optimizer.v")?;
        for (a, b) in params.named().iter().zip(m.iter().zip(&v)) {
            if a.1.shape() != b.0.shape() || a.1.shape() != b.1.shape() {
                return Err(mismatch());
            }
        }
        Ok(ModelState {
            config: self.config,
            vocabulary: self.vocabulary,
            params,
            optimizer: AdamState {
                m,
                v,
                t: self.optimizer.t,
            },
            step: self.step,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl ModelState {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, Checkpoint::from_state(self).to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::from_json(&std::fs::read_to_string(path)?)?.into_state()
    }
}
