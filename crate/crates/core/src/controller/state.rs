use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ControllerError;

pub const SYSTEMS_DIR: &str = "systems";

/// What the CLI remembers about a deployed system between invocations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRecord {
    pub name: String,
    /// The spec document as deployed.
    pub spec_document: String,
    pub running: bool,
}

impl SystemRecord {
    pub fn path(work_root: &Path, name: &str) -> PathBuf {
        work_root.join(SYSTEMS_DIR).join(format!("{name}.json"))
    }

    pub fn save(&self, work_root: &Path) -> Result<(), ControllerError> {
        let path = Self::path(work_root, &self.name);
        fs::create_dir_all(path.parent().expect("has parent"))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(self).expect("record serializes"))?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(work_root: &Path, name: &str) -> Result<SystemRecord, ControllerError> {
        let path = Self::path(work_root, name);
        let bytes = fs::read(&path).map_err(|_| ControllerError::UnknownSystem(name.to_string()))?;
        serde_json::from_slice(&bytes).map_err(|e| ControllerError::Runtime(format!("{}: {e}", path.display())))
    }
}
