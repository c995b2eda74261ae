//! Search providers behind `web_search`.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::{self, RecordError};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("no fixture")]
    NoFixture,
    #[error("provider unreachable: {0}")]
    Unreachable(String),
    #[error("bad provider response: {0}")]
    Decode(String),
}

pub trait SearchProvider: Send + Sync {
    /// Observation text for `query`, at most `k` results.
    fn search(&self, query: &str, k: usize) -> Result<String, SearchError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchFixture {
    pub query: String,
    pub result: String,
}

/// Canned results keyed by exact (trimmed) query text.
#[derive(Clone, Debug, Default)]
pub struct FixtureSearch {
    results: HashMap<String, String>,
}

impl FixtureSearch {
    pub fn new(fixtures: impl IntoIterator<Item = SearchFixture>) -> Self {
        FixtureSearch {
            results: fixtures
                .into_iter()
                .map(|f| (f.query.trim().to_string(), f.result))
                .collect(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, RecordError> {
        Ok(Self::new(records::read_records::<SearchFixture>(path)?))
    }

    pub fn insert(&mut self, query: &str, result: &str) {
        self.results.insert(query.trim().to_string(), result.to_string());
    }
}

impl SearchProvider for FixtureSearch {
    fn search(&self, query: &str, _k: usize) -> Result<String, SearchError> {
        self.results
            .get(query.trim())
            .cloned()
            .ok_or(SearchError::NoFixture)
    }
}

/// Stand-in when no provider is configured; every query degrades.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoSearch;

impl SearchProvider for NoSearch {
    fn search(&self, _query: &str, _k: usize) -> Result<String, SearchError> {
        Err(SearchError::Unreachable("no search provider configured".into()))
    }
}

/// Generic JSON search endpoint: `GET {url}?{query_param}=<query>`, results
/// read from a dot-separated path, each item providing title and snippet
/// fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpSearchConfig {
    pub url: String,
    #[serde(default = "default_query_param")]
    pub query_param: String,
    #[serde(default = "default_results_path")]
    pub results_path: String,
    #[serde(default = "default_title_field")]
    pub title_field: String,
    #[serde(default = "default_snippet_field")]
    pub snippet_field: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

fn default_query_param() -> String {
    "q".into()
}
fn default_results_path() -> String {
    "results".into()
}
fn default_title_field() -> String {
    "title".into()
}
fn default_snippet_field() -> String {
    "snippet".into()
}

pub struct HttpSearch {
    cfg: HttpSearchConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpSearch {
    pub fn new(cfg: HttpSearchConfig, api_key: Option<String>, timeout: Duration) -> Result<Self, SearchError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| SearchError::Unreachable(e.to_string()))?;
        Ok(HttpSearch { cfg, api_key, client })
    }
}

/// Renders result items as `[i] title - snippet` lines.
pub fn format_results(items: &[(String, String)], k: usize) -> String {
    items
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, (title, snippet))| format!("[{}] {} - {}", i + 1, title, snippet))
        .collect::<Vec<_>>()
        .join("\n")
}

pub(crate) fn extract_results(
    body: &serde_json::Value,
    cfg: &HttpSearchConfig,
) -> Result<Vec<(String, String)>, SearchError> {
    let mut node = body;
    for part in cfg.results_path.split('.').filter(|p| !p.is_empty()) {
        node = node
            .get(part)
            .ok_or_else(|| SearchError::Decode(format!("missing `{part}` in results path")))?;
    }
    let items = node
        .as_array()
        .ok_or_else(|| SearchError::Decode(format!("`{}` is not an array", cfg.results_path)))?;
    let field = |item: &serde_json::Value, name: &str| {
        item.get(name)
            .and_then(|v| v.as_str())
            .unwrap_or("")
            .trim()
            .to_string()
    };
    Ok(items
        .iter()
        .map(|it| (field(it, &cfg.title_field), field(it, &cfg.snippet_field)))
        .collect())
}

impl SearchProvider for HttpSearch {
    fn search(&self, query: &str, k: usize) -> Result<String, SearchError> {
        let url = reqwest::Url::parse_with_params(&self.cfg.url, &[(self.cfg.query_param.as_str(), query)])
            .map_err(|e| SearchError::Unreachable(e.to_string()))?;
        let mut req = self.client.get(url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let resp = req.send().map_err(|e| SearchError::Unreachable(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| SearchError::Unreachable(e.to_string()))?;
        if !status.is_success() {
            return Err(SearchError::Unreachable(format!("HTTP {}", status.as_u16())));
        }
        let body: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| SearchError::Decode(e.to_string()))?;
        let items = extract_results(&body, &self.cfg)?;
        if items.is_empty() {
            return Err(SearchError::Decode("no results".into()));
        }
        Ok(format_results(&items, k))
    }
}
