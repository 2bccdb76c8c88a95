//! Model checkpoints in the tensor-file layout used for embedding banks.

use std::path::Path;

use ngram_core::gradcheck::Parameters;
use ngram_core::tensor_file::{TensorFile, TensorInfo};

use crate::config::ModelConfig;
use crate::error::{config_err, Result};
use crate::model::Model;

pub const CHECKPOINT_FORMAT: &str = "ngram-toymodel";

impl Model<f32> {
    pub fn to_tensor_file(&self) -> Result<TensorFile> {
        let header = serde_json::json!({ "format": CHECKPOINT_FORMAT, "config": self.config() });
        let tensors = self
            .tensor_specs()
            .into_iter()
            .zip(self.param_slices())
            .map(|((name, shape), data)| (TensorInfo { name, shape }, data.to_vec()))
            .collect();
        Ok(TensorFile::new(header, tensors)?)
    }

    pub fn from_tensor_file(file: &TensorFile) -> Result<Self> {
        if file.header.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(ngram_core::Error::Format(format!("not an {CHECKPOINT_FORMAT} checkpoint")).into());
        }
        let config: ModelConfig = serde_json::from_value(
            file.header.get("config").cloned().ok_or_else(|| config_err("checkpoint header has no config"))?,
        )
        .map_err(ngram_core::Error::from)?;
        let mut model = Model::zeros(&config)?;
        let specs = model.tensor_specs();
        if specs.len() != file.tensors.len() {
            return Err(ngram_core::Error::Shape(format!(
                "checkpoint has {} tensors, config implies {}",
                file.tensors.len(),
                specs.len()
            ))
            .into());
        }
        for ((name, shape), (info, _)) in specs.iter().zip(&file.tensors) {
            if *name != info.name || *shape != info.shape {
                return Err(ngram_core::Error::Shape(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    info.name, info.shape, name, shape
                ))
                .into());
            }
        }
        for (dst, (_, src)) in model.param_slices_mut().into_iter().zip(&file.tensors) {
            dst.copy_from_slice(src);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(self.to_tensor_file()?.save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::read(path)?)
    }
}
