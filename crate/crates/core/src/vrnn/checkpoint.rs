use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

use super::{expected_shapes, HyperParams, Normalizer, VrnnModel};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    hyper: HyperParams,
    normalizer: Normalizer,
    tensors: BTreeMap<String, StoredTensor>,
}

impl VrnnModel {
    pub fn to_json(&self) -> Result<String> {
        let tensors = self
            .params
            .named()
            .into_iter()
            .map(|(name, t)| {
                (
                    name,
                    StoredTensor {
                        shape: t.shape(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect();
        let ck = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            hyper: self.hyper.clone(),
            normalizer: self.normalizer.clone(),
            tensors,
        };
        Ok(serde_json::to_string(&ck)?)
    }

    /// Parses a checkpoint; `path` is used for diagnostics only.
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let fmt = |msg: String| Error::Format {
            path: path.to_path_buf(),
            line: 1,
            msg,
        };
        let probe: serde_json::Value =
            serde_json::from_str(text).map_err(|e| fmt(e.to_string()))?;
        let found = probe
            .get("format_version")
            .and_then(|v| v.as_u64())
            .unwrap_or(0) as u32;
        if found != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                expected: CHECKPOINT_FORMAT_VERSION,
                found,
            });
        }
        let mut ck: Checkpoint = serde_json::from_value(probe).map_err(|e| fmt(e.to_string()))?;
        ck.hyper.validate()?;
        let mut missing = Vec::new();
        let params =
            expected_shapes(&ck.hyper).map(|name, &[r, c]| match ck.tensors.remove(name) {
                Some(s) if s.shape == [r, c] => {
                    Tensor::new(r, c, s.data).map_err(|e| e.to_string())
                }
                Some(s) => Err(format!(
                    "{name} has shape {:?}, expected {:?}",
                    s.shape,
                    [r, c]
                )),
                None => Err(format!("missing tensor {name}")),
            });
        let params = params.map(|_, t| match t {
            Ok(t) => t.clone(),
            Err(e) => {
                missing.push(e.clone());
                Tensor::zeros(0, 0)
            }
        });
        if let Some(e) = missing.first() {
            return Err(fmt(e.clone()));
        }
        if let Some(extra) = ck.tensors.keys().next() {
            return Err(fmt(format!("unexpected tensor {extra}")));
        }
        if !params.is_finite() {
            return Err(Error::NonFinite(format!(
                "{}: checkpoint weights",
                path.display()
            )));
        }
        VrnnModel::new(ck.hyper, params, ck.normalizer)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}
