//! Assembles backends, prompts, toolbox and memories from a [`Config`].

use std::env;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::agents::{Agents, Decoding, PromptError, PromptSet, PromptTemplate};
use crate::backend::{BackendError, ChatBackend, Embedder, HashingEmbedder, HttpBackend, RetryPolicy, ScriptedBackend};
use crate::config::{Config, EmbedderKind, MatchMode, SearchSettings};
use crate::memory::{Memories, MemoryError};
use crate::records::RecordError;
use crate::tools::{CodeInterpreter, FixtureSearch, HttpSearch, MatchJudge, Matcher, NoSearch, SearchProvider, ToolError, Toolbox};

/// Environment variable that swaps in the scripted provider.
pub const BACKEND_ENV: &str = "LEAP_BACKEND";

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error(transparent)]
    Record(#[from] RecordError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BackendChoice {
    Configured,
    /// Scripted chat replies from a fixture file, with the hashing embedder.
    Scripted(PathBuf),
}

impl BackendChoice {
    /// Parses a `LEAP_BACKEND` value; only `scripted:<path>` is understood.
    pub fn parse(value: &str) -> Result<Self, RuntimeError> {
        match value.strip_prefix("scripted:") {
            Some(path) if !path.is_empty() => Ok(BackendChoice::Scripted(PathBuf::from(path))),
            _ => Err(RuntimeError::Config(format!(
                "{BACKEND_ENV}={value:?}: expected scripted:<fixture-path>"
            ))),
        }
    }

    pub fn from_env() -> Result<Self, RuntimeError> {
        match env::var(BACKEND_ENV) {
            Ok(v) if !v.is_empty() => Self::parse(&v),
            _ => Ok(BackendChoice::Configured),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Learn,
    Detect,
}

pub struct Runtime {
    pub config: Config,
    pub chat: Arc<dyn ChatBackend>,
    pub embedder: Arc<dyn Embedder>,
    pub prompts: Arc<PromptSet>,
    pub toolbox: Toolbox,
    pub memories: Memories,
}

pub fn search_provider(config: &Config) -> Result<Box<dyn SearchProvider>, RuntimeError> {
    Ok(match &config.tools.search {
        SearchSettings::None => Box::new(NoSearch),
        SearchSettings::Fixture { path } => Box::new(FixtureSearch::from_file(path)?),
        SearchSettings::Http(cfg) => {
            let key = cfg.api_key_env.as_ref().and_then(|name| env::var(name).ok());
            let timeout = Duration::from_millis(config.backend.timeout_ms);
            Box::new(HttpSearch::new(cfg.clone(), key, timeout).map_err(|e| RuntimeError::Config(e.to_string()))?)
        }
    })
}

pub type Providers = (Arc<dyn ChatBackend>, Arc<dyn Embedder>);

/// Chat and embedding providers for `choice`.
pub fn providers(config: &Config, choice: &BackendChoice) -> Result<Providers, RuntimeError> {
    let b = &config.backend;
    Ok(match choice {
        BackendChoice::Scripted(path) => (
            Arc::new(ScriptedBackend::from_file(path)?),
            Arc::new(HashingEmbedder::new(b.embed_dim, b.embed_seed)?),
        ),
        BackendChoice::Configured => {
            let key = env::var(&b.api_key_env).ok();
            if key.is_none() {
                tracing::warn!(var = %b.api_key_env, "API key variable not set; sending no credentials");
            }
            let retry = RetryPolicy {
                max_retries: b.retries,
                ..RetryPolicy::default()
            };
            let http = Arc::new(HttpBackend::new(
                &b.base_url,
                &b.model,
                &b.embed_model,
                b.embed_dim,
                key,
                retry,
                Duration::from_millis(b.timeout_ms),
            )?);
            let embedder: Arc<dyn Embedder> = match b.embedder {
                EmbedderKind::Http => http.clone(),
                EmbedderKind::Hashing => Arc::new(HashingEmbedder::new(b.embed_dim, b.embed_seed)?),
            };
            (http, embedder)
        }
    })
}

/// The toolbox as configured. `match_template` is required in judge mode.
pub fn build_toolbox(
    config: &Config,
    chat: Arc<dyn ChatBackend>,
    embedder: Arc<dyn Embedder>,
    search: Box<dyn SearchProvider>,
    match_template: Option<PromptTemplate>,
) -> Result<Toolbox, RuntimeError> {
    let t = &config.tools;
    let mut matcher = Matcher::embedding(embedder, t.match_threshold);
    if t.match_mode == MatchMode::Judge {
        let template = match_template
            .ok_or_else(|| RuntimeError::Config("match_mode = \"judge\" needs the match prompt".into()))?;
        matcher = matcher.with_judge(MatchJudge {
            chat,
            template,
            temperature: config.decoding.temperature_eval,
            max_tokens: 8,
        });
    }
    let code = if t.code_executor.is_empty() {
        None
    } else {
        Some(CodeInterpreter::new(
            &t.code_executor,
            Duration::from_millis(t.code_timeout_ms),
            t.code_parallelism,
        )?)
    };
    Ok(Toolbox::new(search, t.search_k, matcher, code))
}

impl Runtime {
    /// Builds everything from the config, loading memories from
    /// `paths.memory_dir` when present.
    pub fn build(config: Config, choice: &BackendChoice) -> Result<Self, RuntimeError> {
        let (chat, embedder) = providers(&config, choice)?;
        let search = search_provider(&config)?;
        let memories = Memories::open(&config.paths.memory_dir, config.backend.embed_dim, config.learning.cap())?;
        Self::from_parts(config, chat, embedder, search, memories)
    }

    /// Assembles a runtime around caller-supplied providers. Prompts are read
    /// from `paths.prompts_dir`.
    pub fn from_parts(
        config: Config,
        chat: Arc<dyn ChatBackend>,
        embedder: Arc<dyn Embedder>,
        search: Box<dyn SearchProvider>,
        memories: Memories,
    ) -> Result<Self, RuntimeError> {
        if embedder.dim() != config.backend.embed_dim {
            return Err(RuntimeError::Config(format!(
                "embedder produces {} dimensions, config says {}",
                embedder.dim(),
                config.backend.embed_dim
            )));
        }
        let prompts = Arc::new(PromptSet::load(&config.paths.prompts_dir)?);
        let toolbox = build_toolbox(&config, chat.clone(), embedder.clone(), search, Some(prompts.matcher.clone()))?;
        Ok(Runtime {
            config,
            chat,
            embedder,
            prompts,
            toolbox,
            memories,
        })
    }

    pub fn agents(&self, mode: Mode) -> Agents {
        let d = &self.config.decoding;
        let decoding = match mode {
            Mode::Learn => Decoding {
                temperature: d.temperature_learn,
                top_p: d.top_p_learn,
                max_tokens: self.config.backend.max_tokens,
            },
            Mode::Detect => Decoding {
                temperature: d.temperature_eval,
                top_p: 1.0,
                max_tokens: self.config.backend.max_tokens,
            },
        };
        Agents::new(
            self.chat.clone(),
            self.prompts.clone(),
            decoding,
            self.config.learning.max_steps,
            self.config.learning.forced_verdict,
        )
    }
}
