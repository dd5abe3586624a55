//! JSON checkpoint container shared by encoder and prompt checkpoints.
//!
//! ```json
//! {
//!   "format": "hgmp-checkpoint/1",
//!   "kind": "encoder" | "prompt",
//!   "schema_fingerprint": "…",
//!   "backbone": "gcn",
//!   "frozen": true,
//!   "meta": { … },
//!   "tensors": [ { "name": "proj.paper.weight", "shape": [16, 64], "data": [ … ] } ]
//! }
//! ```
//!
//! Tensors are row-major. Floats are written with round-trip precision, so
//! save/load is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{HgmpError, Result};

pub const FORMAT: &str = "hgmp-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, a: &Array2<f64>) -> Self {
        Self {
            name: name.into(),
            shape: [a.nrows(), a.ncols()],
            data: a.iter().copied().collect(),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.shape[0], self.shape[1]), self.data.clone())
            .map_err(|e| HgmpError::Config(format!("tensor `{}`: {e}", self.name)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub kind: String,
    pub schema_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone: Option<String>,
    pub frozen: bool,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(kind: &str, schema_fingerprint: &str) -> Self {
        Self {
            format: FORMAT.to_string(),
            kind: kind.to_string(),
            schema_fingerprint: schema_fingerprint.to_string(),
            backbone: None,
            frozen: false,
            meta: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<Array2<f64>> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| HgmpError::Config(format!("checkpoint has no tensor `{name}`")))?
            .to_array()
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .and_then(|v| v.as_u64())
            .map(|v| v as usize)
            .ok_or_else(|| HgmpError::Config(format!("checkpoint meta `{key}` missing")))
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .and_then(|v| v.as_str())
            .ok_or_else(|| HgmpError::Config(format!("checkpoint meta `{key}` missing")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s.into_bytes()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| HgmpError::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| HgmpError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HgmpError::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| HgmpError::format(path, e.line(), e.to_string()))?;
        if ck.format != FORMAT {
            return Err(HgmpError::format(path, 0, format!("unsupported checkpoint format `{}`", ck.format)));
        }
        Ok(ck)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(HgmpError::Config(format!("expected a {kind} checkpoint, found `{}`", self.kind)));
        }
        Ok(())
    }

    pub fn expect_fingerprint(&self, fingerprint: &str) -> Result<()> {
        if self.schema_fingerprint != fingerprint {
            return Err(HgmpError::SchemaMismatch(format!(
                "checkpoint schema {} does not match dataset schema {fingerprint}",
                self.schema_fingerprint
            )));
        }
        Ok(())
    }
}
