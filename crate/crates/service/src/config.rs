use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use ecbw_core::session_engine::EngineConfig;
use ecbw_core::{SelectionStrategy, StoreConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const PORT_ENV: &str = "ECBW_PORT";
pub const STORE_PATH_ENV: &str = "ECBW_STORE_PATH";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub store_path: PathBuf,
    pub strategy: SelectionStrategy,
    pub topic: String,
    pub instructions: String,
    pub port: u16,
    pub session_timeout_minutes: u64,
    /// One participant number per line; when set, only those may log in.
    pub allowlist_path: Option<PathBuf>,
    /// Used only when the store file does not exist yet.
    pub target_idea_count: u32,
    pub family_count: u32,
    /// Selection seed; drawn from the clock when absent.
    pub seed: Option<u64>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            store_path: PathBuf::from("ideas.jsonl"),
            strategy: SelectionStrategy::Ecbw,
            topic: String::new(),
            instructions: "Check the ideas you like, then write one new idea under each column.".into(),
            port: 8080,
            session_timeout_minutes: 60,
            allowlist_path: None,
            target_idea_count: 210,
            family_count: 12,
            seed: None,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Apply `ECBW_PORT` and `ECBW_STORE_PATH` from `lookup`.
    pub fn with_env(mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<Self, CliError> {
        if let Some(port) = lookup(PORT_ENV) {
            self.port = port
                .parse()
                .map_err(|_| CliError::Config(format!("{PORT_ENV}={port} is not a port number")))?;
        }
        if let Some(path) = lookup(STORE_PATH_ENV) {
            self.store_path = PathBuf::from(path);
        }
        Ok(self)
    }

    pub fn store_config(&self) -> StoreConfig {
        StoreConfig::with_sizes(self.target_idea_count, self.family_count)
    }

    pub fn engine_config(&self) -> EngineConfig {
        let seed = self.seed.unwrap_or_else(|| {
            SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0)
        });
        EngineConfig {
            strategy: self.strategy,
            session_timeout: Duration::from_secs(self.session_timeout_minutes * 60),
            seed,
        }
    }

    pub fn allowlist(&self) -> Result<Option<HashSet<u32>>, CliError> {
        let Some(path) = &self.allowlist_path else { return Ok(None) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                l.parse::<u32>()
                    .map_err(|_| CliError::Config(format!("{}: bad participant number {l:?}", path.display())))
            })
            .collect::<Result<HashSet<_>, _>>()
            .map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_keeps_defaults() {
        let c: ServiceConfig = serde_json::from_str(r#"{"strategy":"OBW","topic":"t","port":9000}"#).unwrap();
        assert_eq!(c.strategy, SelectionStrategy::Obw);
        assert_eq!(c.port, 9000);
        assert_eq!(c.session_timeout_minutes, 60);
        assert!(serde_json::from_str::<ServiceConfig>(r#"{"prot":1}"#).is_err());
    }

    #[test]
    fn env_overrides() {
        let env = |k: &str| match k {
            PORT_ENV => Some("1234".to_string()),
            STORE_PATH_ENV => Some("/tmp/x.jsonl".to_string()),
            _ => None,
        };
        let c = ServiceConfig::default().with_env(env).unwrap();
        assert_eq!(c.port, 1234);
        assert_eq!(c.store_path, PathBuf::from("/tmp/x.jsonl"));
        let bad = ServiceConfig::default().with_env(|_| Some("eighty".into()));
        assert!(matches!(bad, Err(CliError::Config(_))));
    }

    #[test]
    fn allowlist_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("allow.txt");
        std::fs::write(&path, "# staff\n3\n 5 \n\n").unwrap();
        let c = ServiceConfig { allowlist_path: Some(path.clone()), ..ServiceConfig::default() };
        assert_eq!(c.allowlist().unwrap().unwrap(), HashSet::from([3, 5]));
        std::fs::write(&path, "x\n").unwrap();
        assert!(matches!(c.allowlist(), Err(CliError::Config(_))));
    }
}
