//! JSON model snapshots.
//!
//! ```json
//! {"format_version":1,"arch_name":"mlp-rnnd-16-8","seed":7,"epoch":4096,
//!  "tensors":[{"name":"denoiser.0.weight","shape":[16,128],"values":[...]}]}
//! ```
//!
//! Values are written in shortest round-trip decimal form, so loading and
//! saving again reproduces the file byte for byte.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{DecoderModel, ModelError, ModelSpec};
use crate::nn::Parameterized;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O failed: {0}")]
    Io(#[from] io::Error),
    #[error("malformed checkpoint JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint format_version {found} is not supported (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("tensor list does not match {arch}: expected {expected:?}, found {found:?}")]
    TensorNames {
        arch: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("tensor {name}: expected shape {expected:?}, found {found:?} with {values} values")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
        values: usize,
    },
    #[error("tensor {0} contains a non-finite value")]
    NonFinite(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub arch_name: String,
    pub seed: u64,
    pub epoch: u64,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &DecoderModel, seed: u64, epoch: u64) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            arch_name: model.spec().arch_name(),
            seed,
            epoch,
            tensors: model
                .named_params()
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name,
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        for t in &self.tensors {
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(CheckpointError::NonFinite(t.name.clone()));
            }
        }
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        // Read the version first so that older layouts get a version error
        // rather than a field error.
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.format_version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: header.format_version,
            });
        }
        Ok(serde_json::from_str(text)?)
    }

    /// Rebuilds the model named by `arch_name` and fills in every tensor.
    /// Nothing is returned unless every tensor matches.
    pub fn into_model(self) -> Result<DecoderModel, CheckpointError> {
        let spec: ModelSpec = self.arch_name.parse()?;
        let mut model = DecoderModel::build(spec, 0)?;
        let expected: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        let found: Vec<String> = self.tensors.iter().map(|t| t.name.clone()).collect();
        if expected != found {
            return Err(CheckpointError::TensorNames {
                arch: self.arch_name,
                expected,
                found,
            });
        }
        for (param, saved) in model.params().into_iter().zip(&self.tensors) {
            if param.shape() != saved.shape.as_slice() || param.len() != saved.values.len() {
                return Err(CheckpointError::Shape {
                    name: saved.name.clone(),
                    expected: param.shape().to_vec(),
                    found: saved.shape.clone(),
                    values: saved.values.len(),
                });
            }
            if saved.values.iter().any(|v| !v.is_finite()) {
                return Err(CheckpointError::NonFinite(saved.name.clone()));
            }
        }
        for (param, saved) in model.params_mut().into_iter().zip(self.tensors) {
            param.data_mut().copy_from_slice(&saved.values);
        }
        Ok(model)
    }
}

pub fn save_checkpoint(model: &DecoderModel, seed: u64, epoch: u64, path: &Path) -> Result<(), CheckpointError> {
    let json = Checkpoint::from_model(model, seed, epoch).to_json()?;
    fs::write(path, json)?;
    Ok(())
}

/// Loads a model together with its checkpoint header (tensors emptied).
pub fn load_checkpoint(path: &Path) -> Result<(DecoderModel, Checkpoint), CheckpointError> {
    let text = fs::read_to_string(path)?;
    let checkpoint = Checkpoint::from_json(&text)?;
    let header = Checkpoint {
        tensors: Vec::new(),
        ..checkpoint.clone()
    };
    Ok((checkpoint.into_model()?, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ARCH_NAMES;
    use crate::nn::Tensor;

    fn model(name: &str, seed: u64) -> DecoderModel {
        DecoderModel::build(ModelSpec::from_short_name(name, 16, 8).unwrap(), seed).unwrap()
    }

    #[test]
    fn round_trip_every_architecture() {
        let dir = tempfile::tempdir().unwrap();
        let y = Tensor::from_fn(&[3, 16], |i| (i as f64 * 1.3).sin());
        for name in ARCH_NAMES {
            let m = model(name, 5);
            let path = dir.path().join(format!("{name}.json"));
            save_checkpoint(&m, 5, 12, &path).unwrap();
            let (loaded, header) = load_checkpoint(&path).unwrap();
            assert_eq!(loaded, m);
            assert_eq!(header.epoch, 12);
            assert_eq!(header.seed, 5);
            assert_eq!(loaded.forward(&y).unwrap(), m.forward(&y).unwrap());

            let again = dir.path().join(format!("{name}-again.json"));
            save_checkpoint(&loaded, 5, 12, &again).unwrap();
            assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
        }
    }

    #[test]
    fn corrupted_shape_is_rejected() {
        let mut ck = Checkpoint::from_model(&model("mlp-rnnd", 0), 0, 0);
        ck.tensors[2].shape = vec![64, 128];
        let err = ck.into_model().unwrap_err();
        assert!(matches!(err, CheckpointError::Shape { ref name, .. } if name == "denoiser.2.weight"), "{err}");

        let mut ck = Checkpoint::from_model(&model("mlp-rnnd", 0), 0, 0);
        ck.tensors[0].values.pop();
        assert!(matches!(ck.into_model(), Err(CheckpointError::Shape { .. })));

        let mut ck = Checkpoint::from_model(&model("mlp-rnnd", 0), 0, 0);
        ck.tensors.pop();
        assert!(matches!(ck.into_model(), Err(CheckpointError::TensorNames { .. })));
    }

    #[test]
    fn version_mismatch_is_refused() {
        let mut ck = Checkpoint::from_model(&model("mlp-nnd", 0), 0, 0);
        ck.format_version = 2;
        let text = serde_json::to_string(&ck).unwrap();
        let err = Checkpoint::from_json(&text).unwrap_err();
        assert!(matches!(err, CheckpointError::Version { found: 2 }));
        assert!(err.to_string().contains("format_version 2"));
    }

    #[test]
    fn arch_mismatch_and_unknown_fields() {
        let mut ck = Checkpoint::from_model(&model("mlp-nnd", 0), 0, 0);
        ck.arch_name = "mlp-rnnd-16-8".into();
        assert!(matches!(ck.into_model(), Err(CheckpointError::TensorNames { .. })));

        let ck = Checkpoint::from_model(&model("rnn-rnnd", 0), 0, 0);
        let mut value = serde_json::to_value(&ck).unwrap();
        value["extra"] = serde_json::json!(1);
        assert!(matches!(
            Checkpoint::from_json(&value.to_string()),
            Err(CheckpointError::Json(_))
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_checkpoint(Path::new("/nonexistent/dir/ck.json")).unwrap_err();
        assert!(matches!(err, CheckpointError::Io(_)));
    }
}
