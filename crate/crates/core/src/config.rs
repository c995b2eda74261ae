//! TOML run configuration.
//!
//! Every key has a default, unknown keys are rejected, and ranges are
//! checked at load. Relative paths are resolved against the directory of the
//! config file, so re-emitting a loaded config and loading it again is the
//! identity.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tools::search::HttpSearchConfig;
use crate::types::Label;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {key} {reason}")]
    Range { key: &'static str, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Http,
    Hashing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub embed_model: String,
    pub embed_dim: usize,
    pub embedder: EmbedderKind,
    pub embed_seed: u64,
    pub max_tokens: u32,
    pub retries: u32,
    pub timeout_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            embed_model: "text-embedding-3-small".into(),
            embed_dim: 1536,
            embedder: EmbedderKind::Http,
            embed_seed: 0,
            max_tokens: 1024,
            retries: 3,
            timeout_ms: 60_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodingConfig {
    pub temperature_learn: f64,
    pub top_p_learn: f64,
    pub temperature_eval: f64,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        DecodingConfig {
            temperature_learn: 1.0,
            top_p_learn: 1.0,
            temperature_eval: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub k_reflections: usize,
    pub k_precedents_pos: usize,
    pub k_precedents_neg: usize,
    pub k_values: usize,
    pub max_steps: usize,
    /// 0 disables the cap.
    pub memory_cap: usize,
    pub seed: u64,
    pub concurrency: usize,
    pub forced_verdict: Label,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            gamma: 1.0,
            lambda: 0.1,
            k_reflections: 3,
            k_precedents_pos: 2,
            k_precedents_neg: 2,
            k_values: 3,
            max_steps: 10,
            memory_cap: 1400,
            seed: 0,
            concurrency: 4,
            forced_verdict: Label::Hallucination,
        }
    }
}

impl LearningConfig {
    pub fn cap(&self) -> Option<usize> {
        (self.memory_cap > 0).then_some(self.memory_cap)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrectionConfig {
    pub theta_corr: f64,
    pub online_memory: bool,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        CorrectionConfig {
            theta_corr: 0.0,
            online_memory: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "snake_case")]
pub enum SearchSettings {
    None,
    Fixture { path: PathBuf },
    Http(HttpSearchConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Embedding,
    Judge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToolsConfig {
    pub search: SearchSettings,
    pub search_k: usize,
    pub match_threshold: f64,
    pub match_mode: MatchMode,
    /// Executor command; the snippet is piped to its stdin. Empty disables
    /// `code_interpreter`.
    pub code_executor: Vec<String>,
    pub code_timeout_ms: u64,
    pub code_parallelism: usize,
}

impl Default for ToolsConfig {
    fn default() -> Self {
        ToolsConfig {
            search: SearchSettings::None,
            search_k: 3,
            match_threshold: 0.80,
            match_mode: MatchMode::Embedding,
            code_executor: Vec::new(),
            code_timeout_ms: 5000,
            code_parallelism: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub prompts_dir: PathBuf,
    pub memory_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            prompts_dir: "prompts".into(),
            memory_dir: "memory".into(),
            out_dir: "out".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub backend: BackendConfig,
    pub decoding: DecodingConfig,
    pub learning: LearningConfig,
    pub correction: CorrectionConfig,
    pub tools: ToolsConfig,
    pub paths: PathsConfig,
}

fn range(ok: bool, key: &'static str, reason: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Range { key, reason: reason() })
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Config {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, validates and resolves relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.paths.prompts_dir);
        resolve(base, &mut self.paths.memory_dir);
        resolve(base, &mut self.paths.out_dir);
        if let SearchSettings::Fixture { path } = &mut self.tools.search {
            resolve(base, path);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Short content hash of the effective configuration.
    /// Digest of every setting that affects results. Directory locations
    /// are left out so relocated runs hash the same.
    pub fn hash(&self) -> String {
        let c = self;
        crate::content_digest(&(&c.backend, &c.decoding, &c.learning, &c.correction, &c.tools))[..16].to_string()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let b = &self.backend;
        range(b.embed_dim >= 1, "backend.embed_dim", || "must be at least 1".into())?;
        range(b.max_tokens >= 1, "backend.max_tokens", || "must be at least 1".into())?;
        range(b.timeout_ms >= 1, "backend.timeout_ms", || "must be at least 1".into())?;
        let d = &self.decoding;
        for (key, t) in [("decoding.temperature_learn", d.temperature_learn), ("decoding.temperature_eval", d.temperature_eval)] {
            range((0.0..=2.0).contains(&t), key, || format!("{t} outside [0, 2]"))?;
        }
        range(d.top_p_learn > 0.0 && d.top_p_learn <= 1.0, "decoding.top_p_learn", || {
            format!("{} outside (0, 1]", d.top_p_learn)
        })?;
        let l = &self.learning;
        range((0.0..=1.0).contains(&l.gamma), "learning.gamma", || format!("{} outside [0, 1]", l.gamma))?;
        range(l.lambda.is_finite() && l.lambda >= 0.0, "learning.lambda", || {
            format!("{} must be a non-negative number", l.lambda)
        })?;
        for (key, k) in [
            ("learning.k_reflections", l.k_reflections),
            ("learning.k_precedents_pos", l.k_precedents_pos),
            ("learning.k_precedents_neg", l.k_precedents_neg),
            ("learning.k_values", l.k_values),
            ("learning.max_steps", l.max_steps),
            ("learning.concurrency", l.concurrency),
        ] {
            range(k >= 1, key, || "must be at least 1".into())?;
        }
        range(self.correction.theta_corr.is_finite(), "correction.theta_corr", || "must be finite".into())?;
        let t = &self.tools;
        range(t.search_k >= 1, "tools.search_k", || "must be at least 1".into())?;
        range((-1.0..=1.0).contains(&t.match_threshold), "tools.match_threshold", || {
            format!("{} outside [-1, 1]", t.match_threshold)
        })?;
        range(t.code_timeout_ms >= 1, "tools.code_timeout_ms", || "must be at least 1".into())?;
        range(t.code_parallelism >= 1, "tools.code_parallelism", || "must be at least 1".into())?;
        Ok(())
    }
}
