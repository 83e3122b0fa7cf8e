use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, TransformerModel};

use super::container::{load_tensors, save_tensors, DType};

/// The model config travels next to the weights as `<stem>.toml`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("toml")
}

/// Writes weights (f64) and the config sidecar.
pub fn save_checkpoint(model: &TransformerModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_tensors(path, &model.named_params(), DType::F64)?;
    let side = sidecar_path(path);
    std::fs::write(&side, model.config().to_toml()?).map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TransformerModel> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let config = ModelConfig::from_toml(&text)?;
    TransformerModel::from_named(config, &load_tensors(path)?)
}
