//! Run manifest: everything needed to reproduce a run, plus hashes of what it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::Result;
use crate::schedule::ScheduleSpec;

pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Platform {
    pub os: String,
    pub arch: String,
    pub family: String,
    pub endian: String,
    pub pointer_width: u32,
}

impl Platform {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            family: std::env::consts::FAMILY.to_string(),
            endian: if cfg!(target_endian = "little") {
                "little"
            } else {
                "big"
            }
            .to_string(),
            pointer_width: usize::BITS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub library_version: String,
    pub platform: Platform,
    pub config: ExperimentConfig,
    /// Schedule of the scheduled KD weight; absent for modes without one.
    pub schedule: Option<ScheduleSpec>,
    /// How fractional epochs are assigned to optimizer steps.
    pub schedule_time: String,
    pub steps_per_epoch: Option<usize>,
    pub teacher_parameters: Option<usize>,
    pub student_parameters: Option<usize>,
    pub teacher_hash: Option<String>,
    pub status: RunStatus,
    pub error: Option<String>,
    /// File name to hex SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
}

pub const SCHEDULE_TIME: &str = "t_k = epochs * k / (total_steps - 1) for global step k";

impl RunManifest {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let schedule = config.train.schedule()?;
        Ok(Self {
            library_version: LIBRARY_VERSION.to_string(),
            platform: Platform::current(),
            config,
            schedule,
            schedule_time: SCHEDULE_TIME.to_string(),
            steps_per_epoch: None,
            teacher_parameters: None,
            student_parameters: None,
            teacher_hash: None,
            status: RunStatus::Failed,
            error: None,
            outputs: BTreeMap::new(),
        })
    }

    pub fn record_output(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_preserves_config() {
        let mut m = RunManifest::new(ExperimentConfig::benchmark()).unwrap();
        m.record_output("a.txt", b"abc");
        let text = serde_json::to_string(&m).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(
            m.outputs["a.txt"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
