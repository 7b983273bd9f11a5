use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ServiceError;

/// Environment variable naming the service config file.
pub const CONFIG_ENV: &str = "TUTOR_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    /// Index directory per corpus id.
    pub corpora: BTreeMap<String, PathBuf>,
    pub k: usize,
    /// `mock` or the base URL of a local inference server.
    pub model: String,
    pub model_id: Option<String>,
    pub model_parallelism: usize,
    pub model_timeout_secs: u64,
    pub max_tokens: usize,
    /// `reference` or the base URL of a local embedding server.
    pub embedder: String,
    pub embedder_id: Option<String>,
    pub embedder_dim: usize,
    /// Course name used in prompts; defaults to the corpus id.
    pub course: Option<String>,
    pub ui_dir: Option<PathBuf>,
    pub sessions_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            corpora: BTreeMap::new(),
            k: 2,
            model: "mock".into(),
            model_id: None,
            model_parallelism: 1,
            model_timeout_secs: 300,
            max_tokens: 256,
            embedder: "reference".into(),
            embedder_id: None,
            embedder_dim: crate::DEFAULT_DIM,
            course: None,
            ui_dir: None,
            sessions_dir: None,
        }
    }
}

impl ServiceConfig {
    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn from_file(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.corpora.is_empty() {
            return Err(ServiceError::NoCorpora);
        }
        if self.k == 0 {
            return Err(ServiceError::InvalidK);
        }
        if self.max_tokens == 0 {
            return Err(ServiceError::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("tutor.toml");
        std::fs::write(&t, "k = 1\n[corpora]\nbio = \"idx/bio\"\n").unwrap();
        let cfg = ServiceConfig::from_file(&t).unwrap();
        assert_eq!(cfg.k, 1);
        assert_eq!(cfg.corpora["bio"], PathBuf::from("idx/bio"));
        assert_eq!(cfg.model, "mock");
        cfg.validate().unwrap();

        let j = dir.path().join("tutor.json");
        std::fs::write(&j, r#"{"corpora": {"bio": "x"}, "listen": "0.0.0.0:9000"}"#).unwrap();
        assert_eq!(ServiceConfig::from_file(&j).unwrap().listen, "0.0.0.0:9000");

        std::fs::write(&j, r#"{"bogus": 1}"#).unwrap();
        assert!(ServiceConfig::from_file(&j).is_err());
        assert!(ServiceConfig::default().validate().is_err());
    }
}
