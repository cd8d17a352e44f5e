use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::PipelineError;
use crate::agent::{AgentConfig, Role};
use crate::domain::AgeBands;

fn default_retries() -> u32 {
    2
}

fn default_demos() -> usize {
    3
}

/// Pipeline configuration as read from a JSON file. Relative paths are
/// resolved against the file's directory. A scripted backend may name its
/// completion table with `table_file` instead of inlining `table`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub demo_bank: Option<PathBuf>,
    #[serde(default)]
    pub guidelines: Option<PathBuf>,
    #[serde(default = "default_retries")]
    pub max_factcheck_retries: u32,
    #[serde(default)]
    pub demo_seed: u64,
    #[serde(default = "default_demos")]
    pub demos_per_prompt: usize,
    #[serde(default)]
    pub image_dirs: Vec<PathBuf>,
    #[serde(default)]
    pub age_bands: AgeBands,
    /// Fixes every timestamp (RFC 3339), for reproducible output.
    #[serde(default)]
    pub fixed_time: Option<String>,
}

/// The numeric knobs of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSettings {
    pub max_factcheck_retries: u32,
    pub demo_seed: u64,
    pub demos_per_prompt: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            max_factcheck_retries: default_retries(),
            demo_seed: 0,
            demos_per_prompt: default_demos(),
        }
    }
}

fn inline_tables(doc: &mut Value, base: &Path) -> Result<(), PipelineError> {
    let Some(agents) = doc.get_mut("agents").and_then(Value::as_array_mut) else {
        return Ok(());
    };
    for agent in agents {
        let Some(backend) = agent.get_mut("backend").and_then(Value::as_object_mut) else {
            continue;
        };
        if let Some(file) = backend.remove("table_file") {
            let rel = file
                .as_str()
                .ok_or_else(|| PipelineError::Config("table_file must be a string".into()))?;
            let path = base.join(rel);
            let raw = fs::read_to_string(&path)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
            let table: Value = serde_json::from_str(&raw)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
            backend.insert("table".into(), table);
        }
    }
    Ok(())
}

impl PipelineConfig {
    pub fn from_json(raw: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut doc: Value =
            serde_json::from_str(raw).map_err(|e| PipelineError::Config(e.to_string()))?;
        inline_tables(&mut doc, base_dir)?;
        let mut config: Self =
            serde_json::from_value(doc).map_err(|e| PipelineError::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        config.demo_bank.as_mut().map(resolve);
        config.guidelines.as_mut().map(resolve);
        config.image_dirs.iter_mut().for_each(resolve);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let raw = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&raw, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        for role in Role::ALL {
            let n = self.agents.iter().filter(|a| a.role == role).count();
            if n > 1 {
                return Err(PipelineError::Config(format!("{role} is configured {n} times")));
            }
            if n == 0 && role != Role::T2F {
                return Err(PipelineError::Config(format!("no {role} agent configured")));
            }
        }
        for a in &self.agents {
            a.validate()
                .map_err(|e| PipelineError::Config(format!("{} agent: {e}", a.role)))?;
        }
        if self.demos_per_prompt == 0 {
            return Err(PipelineError::Config("demos_per_prompt must be at least 1".into()));
        }
        if let Some(t) = &self.fixed_time {
            chrono::DateTime::parse_from_rfc3339(t)
                .map_err(|e| PipelineError::Config(format!("fixed_time: {e}")))?;
        }
        Ok(())
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            max_factcheck_retries: self.max_factcheck_retries,
            demo_seed: self.demo_seed,
            demos_per_prompt: self.demos_per_prompt,
        }
    }
}
