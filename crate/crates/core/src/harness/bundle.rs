use std::collections::BTreeMap;
use std::path::Path;

use super::pipeline::Preprocessor;
use crate::error::{Error, Result};
use crate::fusion::{Modality, TrainedModel};

pub const MODEL_FILE: &str = "model.dmlw";

/// A trained detector plus the preprocessing fitted with it, stored as one
/// directory: `model.dmlw` next to the preprocessing files.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub model: TrainedModel,
    pub prep: Preprocessor,
    /// Free-form manifest entries saved alongside the architecture.
    pub extra: BTreeMap<String, String>,
}

impl ModelBundle {
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.prep.save(dir)?;
        self.model.save(dir.join(MODEL_FILE), &self.extra)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.join(MODEL_FILE).is_file() {
            return Err(Error::Configuration(format!("{} is not a model bundle", dir.display())));
        }
        let prep = Preprocessor::load(dir)?;
        let (model, extra) = TrainedModel::load(dir.join(MODEL_FILE))?;
        Ok(Self { model, prep, extra })
    }

    /// True when the detector reads only permission/intent bits, which is
    /// what the black-box attack can query.
    pub fn is_tf_only(&self) -> bool {
        self.model.detector.modalities() == [Modality::Tf]
    }
}
