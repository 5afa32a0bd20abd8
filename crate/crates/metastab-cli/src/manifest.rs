//! Run manifests: every command writes one next to its artifacts so a run
//! can be audited and reproduced from the manifest alone.

use crate::CmdResult;
use metastab::hash::hash_bytes;
use metastab::losses::LossConstants;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Serialize)]
pub struct ConstantsEcho {
    pub mu: f64,
    pub smooth: f64,
    pub grad_bound: f64,
    pub hess_lip: f64,
    pub value_bound: f64,
}

impl From<&LossConstants> for ConstantsEcho {
    fn from(c: &LossConstants) -> Self {
        ConstantsEcho {
            mu: c.mu,
            smooth: c.smooth,
            grad_bound: c.grad_bound,
            hess_lip: c.hess_lip,
            value_bound: c.value_bound,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConstantsEcho>,
    /// Content hash of the task-collection file the run produced or consumed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collection_hash: Option<String>,
    pub wall_clock_secs: f64,
    /// Every artifact the command emitted, relative to the manifest.
    pub outputs: Vec<String>,
}

pub struct ManifestBuilder {
    command: String,
    config: BTreeMap<String, String>,
    constants: Option<ConstantsEcho>,
    collection_hash: Option<String>,
    outputs: Vec<String>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: BTreeMap<String, String>) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config,
            constants: None,
            collection_hash: None,
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn constants(&mut self, c: &LossConstants) {
        self.constants = Some(c.into());
    }

    pub fn collection_file(&mut self, path: &Path) -> CmdResult<()> {
        let bytes = std::fs::read(path)?;
        self.collection_hash = Some(hash_bytes(&bytes));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(
            path.file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
        );
    }

    pub fn write(self, dir: &Path) -> CmdResult<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            constants: self.constants,
            collection_hash: self.collection_hash,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs,
        };
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest)
            .expect("manifest serialization cannot fail");
        std::fs::write(&path, json)?;
        Ok(path)
    }
}
