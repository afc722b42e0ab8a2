//! Plain-text JSON checkpoints.
//!
//! ```json
//! {
//!   "format": "conserve-mlp-v1",
//!   "layer_sizes": [2, 100, 1],
//!   "seed": 0,
//!   "params": [1.2345678901234567e-1, ...],
//!   "metadata": { "system": "spring_mass" }
//! }
//! ```
//!
//! `params` is the flat parameter buffer (see [`crate::autodiff`] for the
//! layout), each value written with 17 significant digits so that loading
//! restores the exact bits.

use std::collections::BTreeMap;
use std::path::Path;

use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::autodiff::{MlpParams, MlpSpec};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "conserve-mlp-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub layer_sizes: MlpSpec,
    pub seed: u64,
    #[serde(serialize_with = "serialize_17_digits")]
    pub params: Vec<f64>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

fn serialize_17_digits<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(values.len()))?;
    for v in values {
        let raw = RawValue::from_string(format!("{v:.16e}")).map_err(serde::ser::Error::custom)?;
        seq.serialize_element(&raw)?;
    }
    seq.end()
}

impl Checkpoint {
    pub fn new(params: &MlpParams, seed: u64) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            layer_sizes: params.spec().clone(),
            seed,
            params: params.as_slice().to_vec(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    pub fn to_params(&self) -> Result<MlpParams> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidInput(format!(
                "unsupported checkpoint format {:?}",
                self.format
            )));
        }
        MlpParams::from_flat(self.layer_sizes.clone(), self.params.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        if let Some(i) = self.params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("checkpoint parameter {i}")));
        }
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_string(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_json(&crate::io::read_string(path)?)
    }
}
