//! Per-CPU cache-level descriptions.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use flushleak::flush::FlushBehavior;
use flushleak::{PolicyConfig, PolicyKind};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CacheLevel {
    L1,
    L2,
    L3,
}

impl fmt::Display for CacheLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyName {
    #[serde(rename = "plru")]
    Plru,
    #[serde(rename = "qlru_h00_m1_r2_u1")]
    QlruNew1,
    #[serde(rename = "opaque")]
    Opaque,
}

impl From<PolicyName> for PolicyKind {
    fn from(p: PolicyName) -> PolicyKind {
        match p {
            PolicyName::Plru => PolicyKind::Plru,
            PolicyName::QlruNew1 => PolicyKind::QlruNew1,
            PolicyName::Opaque => PolicyKind::Opaque,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelConfig {
    pub level: CacheLevel,
    pub assoc: usize,
    pub policy: PolicyName,
    pub flush_preserves_control: bool,
}

impl LevelConfig {
    pub fn policy_config(&self) -> flushleak::Result<PolicyConfig> {
        PolicyConfig::new(self.policy.into(), self.assoc)
    }

    pub fn behavior(&self) -> FlushBehavior {
        FlushBehavior::from_preserves(self.flush_preserves_control)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpuConfig {
    pub name: String,
    pub microarch: String,
    pub levels: Vec<LevelConfig>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{origin}: {source}")]
    Json {
        origin: String,
        source: serde_json::Error,
    },
    #[error("{origin}: {message}")]
    Invalid { origin: String, message: String },
}

impl CpuConfig {
    fn validate(&self, origin: &str) -> Result<(), ConfigError> {
        let invalid = |message: String| ConfigError::Invalid {
            origin: origin.to_string(),
            message,
        };
        if self.name.trim().is_empty() {
            return Err(invalid("empty CPU name".into()));
        }
        if self.levels.is_empty() {
            return Err(invalid("no cache levels".into()));
        }
        let mut seen = Vec::new();
        for l in &self.levels {
            if seen.contains(&l.level) {
                return Err(invalid(format!("level {} listed twice", l.level)));
            }
            seen.push(l.level);
            l.policy_config()
                .map_err(|e| invalid(format!("level {}: {e}", l.level)))?;
        }
        Ok(())
    }
}

pub fn parse_cpu_config(text: &str, origin: &str) -> Result<CpuConfig, ConfigError> {
    let cfg: CpuConfig = serde_json::from_str(text).map_err(|source| ConfigError::Json {
        origin: origin.to_string(),
        source,
    })?;
    cfg.validate(origin)?;
    Ok(cfg)
}

pub fn load_cpu_config(path: &Path) -> Result<CpuConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_cpu_config(&text, &path.display().to_string())
}

/// Every `*.json` file in `dir`, in file-name order.
pub fn load_config_dir(dir: &Path) -> Result<Vec<CpuConfig>, ConfigError> {
    let read_err = |source| ConfigError::Read {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(read_err)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(read_err)?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    if paths.is_empty() {
        return Err(ConfigError::Invalid {
            origin: dir.display().to_string(),
            message: "no .json configs found".into(),
        });
    }
    paths.iter().map(|p| load_cpu_config(p)).collect()
}

const BUNDLED: [(&str, &str); 11] = [
    ("nehalem.json", include_str!("../bundled/nehalem.json")),
    ("westmere.json", include_str!("../bundled/westmere.json")),
    (
        "sandy_bridge.json",
        include_str!("../bundled/sandy_bridge.json"),
    ),
    (
        "ivy_bridge.json",
        include_str!("../bundled/ivy_bridge.json"),
    ),
    ("haswell.json", include_str!("../bundled/haswell.json")),
    ("broadwell.json", include_str!("../bundled/broadwell.json")),
    ("skylake.json", include_str!("../bundled/skylake.json")),
    ("kaby_lake.json", include_str!("../bundled/kaby_lake.json")),
    (
        "coffee_lake.json",
        include_str!("../bundled/coffee_lake.json"),
    ),
    (
        "cannon_lake.json",
        include_str!("../bundled/cannon_lake.json"),
    ),
    ("ice_lake.json", include_str!("../bundled/ice_lake.json")),
];

/// The eleven configurations shipped with the binary.
pub fn bundled_configs() -> Vec<CpuConfig> {
    BUNDLED
        .iter()
        .map(|(name, text)| parse_cpu_config(text, name).expect("bundled configs are valid"))
        .collect()
}

/// A single bundled config by file stem, e.g. `"skylake"`.
pub fn bundled_config(stem: &str) -> Option<CpuConfig> {
    BUNDLED
        .iter()
        .find(|(name, _)| name.strip_suffix(".json") == Some(stem))
        .map(|(name, text)| parse_cpu_config(text, name).expect("bundled configs are valid"))
}
