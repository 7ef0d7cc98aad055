//! Trained weights plus everything `evaluate` needs to reuse them.

use std::path::Path;

use anyhow::{bail, Context, Result};
use physioattn::backbones::{build_model, Model, ModelConfig};
use physioattn::harness::Standardizer;
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub standardizer: Standardizer,
    /// Every parameter and buffer by name.
    pub params: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn capture(model: &Model, standardizer: Standardizer) -> Self {
        Self {
            config: model.config().clone(),
            standardizer,
            params: model.store().iter().map(|(_, p)| (p.name.clone(), p.value.data().to_vec())).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing checkpoint {}", path.display()))
    }

    pub fn restore(&self) -> Result<Model> {
        let mut model = build_model(&self.config, 0)?;
        if model.store().len() != self.params.len() {
            bail!("checkpoint has {} tensors, model expects {}", self.params.len(), model.store().len());
        }
        let store = model.store_mut();
        for (name, values) in &self.params {
            let Some(id) = store.find(name) else {
                bail!("checkpoint tensor {name:?} does not exist in the model");
            };
            store.assign(id, values)?;
        }
        Ok(model)
    }
}
