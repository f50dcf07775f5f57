use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::model::{GatModel, ModelConfig, ModelParams};
use crate::data::TargetStats;
use crate::error::{Error, Result};
use crate::retrieval::RetrievalConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: ModelConfig,
    threshold: f64,
    target_stats: TargetStats,
    retrieval: RetrievalConfig,
    retrieval_enabled: bool,
    seed: u64,
    tensors: BTreeMap<String, TensorData>,
}

fn shapes(params: &ModelParams) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for l in &params.layers {
        out.push(l.weight.shape().to_vec());
        out.push(l.attn.shape().to_vec());
        out.push(l.bias.shape().to_vec());
    }
    out.push(params.cls_w.shape().to_vec());
    out.push(params.cls_b.shape().to_vec());
    out.push(params.reg_w.shape().to_vec());
    out.push(params.reg_b.shape().to_vec());
    out.push(params.fusion.w1.shape().to_vec());
    out.push(params.fusion.b1.shape().to_vec());
    out.push(params.fusion.w2.shape().to_vec());
    out.push(params.fusion.b2.shape().to_vec());
    out.push(params.alpha_reg_raw.shape().to_vec());
    out
}

impl GatModel {
    pub fn to_json_string(&self) -> Result<String> {
        let tensors = self
            .params
            .tensors()
            .into_iter()
            .zip(shapes(&self.params))
            .map(|((name, values), shape)| {
                (
                    name,
                    TensorData {
                        shape,
                        values: values.to_vec(),
                    },
                )
            })
            .collect();
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            threshold: self.threshold,
            target_stats: self.target_stats,
            retrieval: self.retrieval,
            retrieval_enabled: self.retrieval_enabled,
            seed: self.seed,
            tensors,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text).map_err(|e| Error::Corrupt(e.to_string()))?;
        let version = raw
            .get("version")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Corrupt("checkpoint has no version tag".into()))?;
        if version != CHECKPOINT_VERSION as u64 {
            return Err(Error::Version {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut file: CheckpointFile =
            serde_json::from_value(raw).map_err(|e| Error::Corrupt(e.to_string()))?;
        file.config.validate()?;
        file.target_stats.validate()?;
        let mut params = ModelParams::zeros(&file.config);
        let expected = shapes(&params);
        for ((name, slot), shape) in params.tensors_mut().into_iter().zip(expected) {
            let t = file
                .tensors
                .remove(&name)
                .ok_or_else(|| Error::Corrupt(format!("missing tensor {name}")))?;
            if t.shape != shape || t.values.len() != slot.len() {
                return Err(Error::Corrupt(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("tensor {name}")));
            }
            slot.copy_from_slice(&t.values);
        }
        if let Some(extra) = file.tensors.keys().next() {
            return Err(Error::Corrupt(format!("unexpected tensor {extra}")));
        }
        if !(file.threshold.is_finite() && (0.0..=1.0).contains(&file.threshold)) {
            return Err(Error::Corrupt("threshold outside [0, 1]".into()));
        }
        Ok(GatModel {
            config: file.config,
            params,
            threshold: file.threshold,
            target_stats: file.target_stats,
            retrieval: file.retrieval,
            retrieval_enabled: file.retrieval_enabled,
            seed: file.seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }
}
