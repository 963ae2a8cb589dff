//! Toolkit configuration file (JSON). Every field is optional; absent fields
//! take the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iqa::ViewingConditions;
use crate::transforms::{FrostSource, Transformer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolkitConfig {
    pub viewing_conditions: ViewingConditions,
    /// Directory of PNG frost overlays; the procedural overlay is used when unset.
    pub frost_texture_dir: Option<PathBuf>,
    /// Where transformed test images are materialized; unset keeps them in memory.
    pub work_dir: Option<PathBuf>,
    pub default_r: usize,
    pub default_alpha: f64,
    pub default_q: f64,
    pub default_n: usize,
    pub default_k: usize,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        Self {
            viewing_conditions: ViewingConditions::default(),
            frost_texture_dir: None,
            work_dir: None,
            default_r: 20,
            default_alpha: 0.05,
            default_q: 0.05,
            default_n: 200,
            default_k: 50,
        }
    }
}

impl ToolkitConfig {
    /// Parses and validates; relative directories resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Schema {
            file: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for dir in [&mut cfg.frost_texture_dir, &mut cfg.work_dir].into_iter().flatten() {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.viewing_conditions.validate()?;
        for dir in [&self.frost_texture_dir, &self.work_dir].into_iter().flatten() {
            if !dir.is_dir() {
                return Err(Error::InvalidArgument(format!("directory {} does not exist", dir.display())));
            }
        }
        if self.default_r < crate::estimation::MIN_INTERVALS {
            return Err(Error::InvalidArgument(format!(
                "default_r must be at least {}",
                crate::estimation::MIN_INTERVALS
            )));
        }
        if !(self.default_alpha > 0.0 && self.default_alpha < 1.0) {
            return Err(Error::InvalidArgument("default_alpha must lie in (0, 1)".into()));
        }
        if !(self.default_q > 0.0 && self.default_q < 1.0) {
            return Err(Error::InvalidArgument("default_q must lie in (0, 1)".into()));
        }
        if self.default_n < 2 || self.default_k < 1 {
            return Err(Error::InvalidArgument("default_n must be at least 2 and default_k at least 1".into()));
        }
        Ok(())
    }

    pub fn transformer(&self) -> Result<Transformer> {
        Ok(match &self.frost_texture_dir {
            Some(dir) => Transformer::new(FrostSource::from_dir(dir)?),
            None => Transformer::default(),
        })
    }
}
