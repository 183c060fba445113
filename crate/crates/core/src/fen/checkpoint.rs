use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fen::{Adam, AdamState, FenConfig, FenModel};
use crate::scalar::Real;

/// First line of every checkpoint file.
pub const CHECKPOINT_HEADER: &str = "rigidreg-fen-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Text container: the header line followed by one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: FenConfig,
    pub tensors: Vec<Tensor>,
    /// Optimizer steps taken so far.
    pub step: u64,
    #[serde(default)]
    pub optimizer: Option<(Adam, AdamState)>,
    /// Caller-defined payload, e.g. the training configuration.
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn from_model<T: Real>(model: &FenModel<T>, step: u64) -> Self {
        Self {
            config: model.config().clone(),
            tensors: model
                .params()
                .iter()
                .map(|p| Tensor {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    values: p.value.iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
            step,
            optimizer: None,
            meta: serde_json::Value::Null,
        }
    }

    /// Rebuilds the model, checking every tensor name and shape.
    pub fn to_model<T: Real>(&self) -> Result<FenModel<T>> {
        let mut model = FenModel::allocate(self.config.clone())?;
        if model.params.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                model.params.len(),
                self.tensors.len()
            )));
        }
        for (p, t) in model.params.iter_mut().zip(&self.tensors) {
            if p.name != t.name || p.shape != t.shape || t.values.len() != p.value.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    t.name, t.shape, p.name, p.shape
                )));
            }
            for (v, &x) in p.value.iter_mut().zip(&t.values) {
                if !x.is_finite() {
                    return Err(Error::Checkpoint(format!(
                        "non-finite value in `{}`",
                        t.name
                    )));
                }
                *v = T::lit(x);
            }
        }
        Ok(model)
    }

    pub fn to_text(&self) -> Result<String> {
        Ok(format!(
            "{CHECKPOINT_HEADER}\n{}\n",
            serde_json::to_string(self)?
        ))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (header, body) = text.split_once('\n').unwrap_or((text, ""));
        if header.trim_end() != CHECKPOINT_HEADER {
            return Err(Error::Checkpoint(format!(
                "bad header `{}`, expected `{CHECKPOINT_HEADER}`",
                header.trim_end()
            )));
        }
        let de = &mut serde_json::Deserializer::from_str(body);
        serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Checkpoint(format!("{}: {}", e.path(), e.inner())))
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    fs::write(path, checkpoint.to_text()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fen::{fen_init, GraphMode};

    #[test]
    fn round_trip_is_exact() {
        let cfg = FenConfig {
            graph_mode: GraphMode::Dynamic,
            ..FenConfig::default()
        };
        let model: FenModel<f64> = fen_init(&cfg, 17).unwrap();
        let mut ck = Checkpoint::from_model(&model, 42);
        ck.optimizer = Some((Adam::default(), AdamState::new(&model)));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &ck).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("rigidreg-fen-v1\n"));
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        let restored: FenModel<f64> = back.to_model().unwrap();
        assert_eq!(restored.flat_values(), model.flat_values());
        assert_eq!(restored.config(), model.config());
    }

    #[test]
    fn rejects_bad_header_and_shapes() {
        let model: FenModel<f64> = fen_init(&FenConfig::default(), 1).unwrap();
        let ck = Checkpoint::from_model(&model, 0);
        let text = ck.to_text().unwrap().replacen("v1", "v0", 1);
        assert!(Checkpoint::from_text(&text).is_err());

        let mut bad = ck.clone();
        bad.tensors[0].shape = vec![1, 1];
        assert!(bad.to_model::<f64>().is_err());

        let mut bad = ck;
        bad.tensors.pop();
        assert!(bad.to_model::<f64>().is_err());
    }

    #[test]
    fn malformed_body_names_the_key() {
        let text = format!("{CHECKPOINT_HEADER}\n{{\"config\": {{\"in_channels\": \"x\"}}}}");
        let err = Checkpoint::from_text(&text).unwrap_err().to_string();
        assert!(err.contains("config.in_channels"), "{err}");
    }
}
