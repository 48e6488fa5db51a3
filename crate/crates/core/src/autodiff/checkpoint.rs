//! Portable parameter checkpoints: JSON with a format version, an opaque
//! header, and an ordered map `store/name -> {shape, values}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub header: serde_json::Value,
    pub params: BTreeMap<String, TensorRecord>,
}

impl Checkpoint {
    pub fn from_stores(header: serde_json::Value, stores: &[&ParamStore]) -> Self {
        let mut params = BTreeMap::new();
        for store in stores {
            for (_, name, t) in store.iter() {
                params.insert(
                    format!("{}/{}", store.tag(), name),
                    TensorRecord {
                        shape: t.shape().to_vec(),
                        values: t.values().to_vec(),
                    },
                );
            }
        }
        Self {
            format_version: CHECKPOINT_VERSION,
            header,
            params,
        }
    }

    /// Overwrites every parameter of `store` with the recorded value.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<(), AutodiffError> {
        let ids: Vec<_> = store.iter().map(|(id, n, _)| (id, n.to_string())).collect();
        for (id, name) in ids {
            let key = format!("{}/{}", store.tag(), name);
            let rec = self
                .params
                .get(&key)
                .ok_or_else(|| AutodiffError::Checkpoint(format!("missing parameter {key}")))?;
            if rec.shape != store.get(id).shape() {
                return Err(AutodiffError::Checkpoint(format!(
                    "{key}: shape {:?} in file, {:?} expected",
                    rec.shape,
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = Tensor::new(rec.shape.clone(), rec.values.clone())?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, AutodiffError> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(AutodiffError::Checkpoint(format!(
                "unsupported format version {}",
                ck.format_version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, AutodiffError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
