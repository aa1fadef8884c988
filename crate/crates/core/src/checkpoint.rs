//! Checkpoint directories: a JSON manifest plus one flat float file per
//! parameter and Adam moment.
//!
//! Values are stored as little-endian `f64` so that a resumed run continues
//! from exactly the same state as an uninterrupted one.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::io;
use crate::model::{ModelConfig, Psvma};
use crate::numcore::Tensor;
use crate::trainer::{Adam, TrainConfig, TrainState, Trainer};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointManifest {
    schema_version: u32,
    model: ModelConfig,
    train: TrainConfig,
    state: TrainState,
    adam_step: u64,
    params: Vec<TensorEntry>,
    adam_m: Vec<TensorEntry>,
    adam_v: Vec<TensorEntry>,
}

/// Everything needed to continue training or to run inference.
pub struct Checkpoint {
    pub model: Psvma,
    pub train: TrainConfig,
    pub adam: Adam,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn into_trainer(self) -> Result<Trainer> {
        let mut trainer = Trainer::new(self.model, self.train)?;
        trainer.adam = self.adam;
        trainer.state = self.state;
        Ok(trainer)
    }
}

fn write_tensors<'a>(
    dir: &Path,
    prefix: &str,
    items: impl Iterator<Item = (&'a str, &'a Tensor)>,
) -> Result<Vec<TensorEntry>> {
    items
        .map(|(name, t)| {
            let file = format!("{prefix}{name}.f64");
            let sha256 = io::write_bytes(&dir.join(&file), &io::encode_f64(t.data()))?;
            Ok(TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                file,
                sha256,
            })
        })
        .collect()
}

pub fn save(dir: &Path, trainer: &Trainer) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let store = trainer.model.params();
    let names: Vec<&str> = store.iter().map(|p| p.name.as_str()).collect();
    let params = write_tensors(dir, "param.", store.iter().map(|p| (p.name.as_str(), p.value())))?;
    let adam_m = write_tensors(dir, "adam_m.", names.iter().copied().zip(&trainer.adam.m))?;
    let adam_v = write_tensors(dir, "adam_v.", names.iter().copied().zip(&trainer.adam.v))?;
    let manifest = CheckpointManifest {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        model: trainer.model.config().clone(),
        train: trainer.config.clone(),
        state: trainer.state.clone(),
        adam_step: trainer.adam.step,
        params,
        adam_m,
        adam_v,
    };
    io::write_json(&dir.join(MANIFEST_FILE), &manifest)
}

/// First differing leaf between two JSON trees, as a dotted path.
fn first_difference(path: &str, a: &Value, b: &Value) -> Option<(String, String, String)> {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            keys.into_iter().find_map(|k| {
                let child = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let null = Value::Null;
                first_difference(&child, x.get(k).unwrap_or(&null), y.get(k).unwrap_or(&null))
            })
        }
        _ if a == b => None,
        _ => Some((path.to_string(), a.to_string(), b.to_string())),
    }
}

/// Rejects a checkpoint whose model config differs from `expected`, naming
/// the first differing field.
pub fn check_config(expected: &ModelConfig, found: &ModelConfig) -> Result<()> {
    let to_value = |c: &ModelConfig| serde_json::to_value(c).expect("config serializes");
    match first_difference("", &to_value(expected), &to_value(found)) {
        None => Ok(()),
        Some((field, expected, found)) => Err(Error::ConfigMismatch {
            field,
            expected,
            found,
        }),
    }
}

fn read_tensors(dir: &Path, entries: &[TensorEntry], model: &Psvma) -> Result<Vec<Tensor>> {
    let store = model.params();
    if entries.len() != store.len() {
        return Err(Error::Manifest {
            path: dir.join(MANIFEST_FILE),
            message: format!("{} tensors listed, model has {} parameters", entries.len(), store.len()),
        });
    }
    entries
        .iter()
        .zip(store.iter())
        .map(|(e, p)| {
            if e.name != p.name || e.shape != p.value().shape() {
                return Err(Error::Manifest {
                    path: dir.join(MANIFEST_FILE),
                    message: format!(
                        "entry `{}` {:?} does not match parameter `{}` {:?}",
                        e.name,
                        e.shape,
                        p.name,
                        p.value().shape()
                    ),
                });
            }
            let data = io::read_f64(&dir.join(&e.file), p.value().numel(), &e.sha256)?;
            Tensor::new(&e.shape, data)
        })
        .collect()
}

/// Loads a checkpoint. With `expected`, the stored model config must match it.
pub fn load(dir: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let m: CheckpointManifest = io::read_manifest(&dir.join(MANIFEST_FILE), CHECKPOINT_SCHEMA_VERSION)?;
    if let Some(expected) = expected {
        check_config(expected, &m.model)?;
    }
    let mut model = Psvma::new(&m.model)?;
    let params = read_tensors(dir, &m.params, &model)?;
    let adam_m = read_tensors(dir, &m.adam_m, &model)?;
    let adam_v = read_tensors(dir, &m.adam_v, &model)?;
    for (p, value) in model.params_mut().iter_mut().zip(params) {
        p.set(value)?;
    }
    Ok(Checkpoint {
        model,
        train: m.train,
        adam: Adam {
            m: adam_m,
            v: adam_v,
            step: m.adam_step,
        },
        state: m.state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsvtm::DsvtmConfig;

    #[test]
    fn difference_names_nested_field() {
        let a = ModelConfig::default();
        let b = ModelConfig {
            dsvtm: DsvtmConfig {
                loops: 3,
                ..DsvtmConfig::default()
            },
            ..ModelConfig::default()
        };
        match check_config(&a, &b) {
            Err(Error::ConfigMismatch { field, expected, found }) => {
                assert_eq!(field, "dsvtm.loops");
                assert_eq!((expected.as_str(), found.as_str()), ("2", "3"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(check_config(&a, &a).is_ok());
    }
}
