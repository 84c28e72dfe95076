//! JSON run configuration shared by the subcommands. Every field is
//! optional; command-line flags take precedence. Relative paths resolve
//! against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use dreamplan_core::env::{EnvConfig, NoiseLevel};
use dreamplan_core::planner::PlannerConfig;
use dreamplan_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::plots::Panel;
use crate::profile::ProfileSpec;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Environment config JSON; defaults to the checkpoint's training env.
    pub env: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Planner config JSON; defaults to the table defaults for the env.
    pub planner: Option<PathBuf>,
    /// Inline training config.
    pub train: Option<TrainConfig>,
    pub episodes: Option<usize>,
    pub episode_steps: Option<usize>,
    pub noise: Option<NoiseLevel>,
    pub profile: Option<ProfileSpec>,
    pub bench_steps: Option<usize>,
    pub panels: Option<Vec<Panel>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => HarnessError::Missing(path.to_path_buf()),
            _ => HarnessError::File {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| HarnessError::invalid(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.env, &mut cfg.checkpoint, &mut cfg.planner]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.check_files()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Every referenced file must exist.
    pub fn check_files(&self) -> Result<()> {
        for p in [&self.env, &self.checkpoint, &self.planner].into_iter().flatten() {
            require_file(p)?;
        }
        Ok(())
    }

    pub fn load_env(&self) -> Result<Option<EnvConfig>> {
        self.env.as_deref().map(|p| read_json(p)).transpose()
    }

    pub fn load_planner(&self) -> Result<Option<PlannerConfig>> {
        self.planner.as_deref().map(|p| read_json(p)).transpose()
    }
}

pub fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(HarnessError::Missing(path.to_path_buf()))
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(HarnessError::file(path))?;
    serde_json::from_slice(&bytes).map_err(|e| HarnessError::invalid(path, e.to_string()))
}

/// Creates `dir` and checks that files can be written into it.
pub fn prepare_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(HarnessError::file(dir))?;
    let probe = dir.join(".write_check");
    fs::write(&probe, b"").map_err(HarnessError::file(dir))?;
    fs::remove_file(&probe).map_err(HarnessError::file(&probe))?;
    Ok(())
}
