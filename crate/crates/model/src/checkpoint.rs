//! JSON checkpoints: model config, vocabulary dump and every named parameter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vstp_core::vocab::VocabDump;
use vstp_core::Vocabulary;

use crate::error::{ModelError, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Mat;

pub const FORMAT: &str = "vstp-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub vocab: VocabDump,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn of(model: &Model) -> Self {
        let params = model
            .params
            .ids()
            .map(|id| {
                let m = model.params.get(id);
                ParamRecord { name: model.params.name(id).to_string(), rows: m.rows, cols: m.cols, data: m.data.clone() }
            })
            .collect();
        Self { format: FORMAT.to_string(), version: VERSION, config: model.config.clone(), vocab: model.vocab.to_dump(), params }
    }

    pub fn into_model(self) -> Result<Model> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        let vocab = Vocabulary::from_dump(&self.vocab)?;
        let mut model = Model::new(self.config, vocab)?;
        if self.params.len() != model.params.len() {
            return Err(ModelError::Checkpoint(format!("{} parameters stored, model has {}", self.params.len(), model.params.len())));
        }
        for rec in self.params {
            let id = model.params.find(&rec.name).ok_or_else(|| ModelError::Checkpoint(format!("unknown parameter {}", rec.name)))?;
            let slot = model.params.get_mut(id);
            if slot.shape() != (rec.rows, rec.cols) || rec.data.len() != rec.rows * rec.cols {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {} has shape {}x{}, expected {}x{}",
                    rec.name, rec.rows, rec.cols, slot.rows, slot.cols
                )));
            }
            *slot = Mat::from_vec(rec.rows, rec.cols, rec.data);
        }
        Ok(model)
    }
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let json = serde_json::to_string(&Checkpoint::of(model))?;
    fs::write(path, json).map_err(|source| ModelError::Io { path: path.display().to_string(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    let ck: Checkpoint = serde_json::from_str(&text)?;
    ck.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use vstp_core::{build_vocab, Task, VocabSpec};

    fn tiny() -> Model {
        let config = ModelConfig { d: 8, layers: 1, heads: 2, encoder_layers: 1, ..ModelConfig::default() };
        Model::new(config, build_vocab(&VocabSpec::new(Task::Spotting)).unwrap()).unwrap()
    }

    #[test]
    fn roundtrip_restores_every_parameter() {
        let mut m = tiny();
        let id = m.params.find("content.head.b").unwrap();
        m.params.get_mut(id).data[3] = 0.125;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config, m.config);
        for id in m.params.ids() {
            assert_eq!(back.params.get(id), m.params.get(id), "{}", m.params.name(id));
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut ck = Checkpoint::of(&tiny());
        ck.params[0].rows += 1;
        assert!(matches!(ck.into_model(), Err(ModelError::Checkpoint(_))));
        let mut ck = Checkpoint::of(&tiny());
        ck.version = 9;
        assert!(ck.into_model().is_err());
    }
}
