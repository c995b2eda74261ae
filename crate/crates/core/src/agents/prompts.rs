//! Prompt templates with `{placeholder}` slots, loaded from a directory.
//!
//! A template file may start with a system section terminated by a line
//! holding only `---`; everything after it is the user message.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("cannot read prompt {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{template} template lacks required placeholder {{{name}}}")]
    MissingPlaceholder { template: &'static str, name: String },
    #[error("{template} template uses unknown placeholder {{{name}}}")]
    UnknownPlaceholder { template: &'static str, name: String },
    #[error("{template} template: placeholder {{{name}}} is unbound")]
    Unbound { template: &'static str, name: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptName {
    Planner,
    Actor,
    Critic,
    Reflector,
    Match,
}

impl PromptName {
    pub const ALL: [PromptName; 5] = [
        PromptName::Planner,
        PromptName::Actor,
        PromptName::Critic,
        PromptName::Reflector,
        PromptName::Match,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptName::Planner => "planner",
            PromptName::Actor => "actor",
            PromptName::Critic => "critic",
            PromptName::Reflector => "reflector",
            PromptName::Match => "match",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.txt", self.as_str())
    }

    pub fn required(self) -> &'static [&'static str] {
        match self {
            PromptName::Planner => &["claim", "reflections", "feedback"],
            PromptName::Actor => &[
                "claim",
                "strategy",
                "tools",
                "history",
                "positive_precedents",
                "negative_precedents",
            ],
            PromptName::Critic => &["task", "claim", "state", "exemplars"],
            PromptName::Reflector => &["task", "claim", "material"],
            PromptName::Match => &["sentence", "context"],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptTemplate {
    name: PromptName,
    system: String,
    user: String,
}

/// Placeholder names in order of appearance. A placeholder is `{` followed
/// by lowercase letters or underscores and a closing `}`; other braces are
/// literal.
fn placeholders(text: &str) -> Vec<(usize, usize, &str)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_lowercase() || bytes[j] == b'_') {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'}' {
                out.push((i, j + 1, &text[i + 1..j]));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

fn fill(template: &'static str, text: &str, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (start, end, name) in placeholders(text) {
        let value = bindings
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| PromptError::Unbound {
                template,
                name: name.to_string(),
            })?;
        out.push_str(&text[last..start]);
        out.push_str(value);
        last = end;
    }
    out.push_str(&text[last..]);
    Ok(out)
}

impl PromptTemplate {
    pub fn parse(name: PromptName, text: &str) -> Result<Self, PromptError> {
        let (system, user) = match text.split_once("\n---\n") {
            Some((s, u)) => (s.trim().to_string(), u.to_string()),
            None => (String::new(), text.to_string()),
        };
        let template = name.as_str();
        let found: BTreeSet<&str> = placeholders(&system)
            .into_iter()
            .chain(placeholders(&user))
            .map(|(_, _, n)| n)
            .collect();
        for n in &found {
            if !name.required().contains(n) {
                return Err(PromptError::UnknownPlaceholder {
                    template,
                    name: n.to_string(),
                });
            }
        }
        for r in name.required() {
            if !found.contains(r) {
                return Err(PromptError::MissingPlaceholder {
                    template,
                    name: r.to_string(),
                });
            }
        }
        Ok(PromptTemplate { name, system, user })
    }

    pub fn load(dir: &Path, name: PromptName) -> Result<Self, PromptError> {
        let path = dir.join(name.file_name());
        let text = fs::read_to_string(&path).map_err(|source| PromptError::Io { path, source })?;
        Self::parse(name, &text)
    }

    pub fn name(&self) -> PromptName {
        self.name
    }

    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<RenderedPrompt, PromptError> {
        let t = self.name.as_str();
        Ok(RenderedPrompt {
            system: fill(t, &self.system, bindings)?,
            user: fill(t, &self.user, bindings)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct PromptSet {
    pub planner: PromptTemplate,
    pub actor: PromptTemplate,
    pub critic: PromptTemplate,
    pub reflector: PromptTemplate,
    pub matcher: PromptTemplate,
}

impl PromptSet {
    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        Ok(PromptSet {
            planner: PromptTemplate::load(dir, PromptName::Planner)?,
            actor: PromptTemplate::load(dir, PromptName::Actor)?,
            critic: PromptTemplate::load(dir, PromptName::Critic)?,
            reflector: PromptTemplate::load(dir, PromptName::Reflector)?,
            matcher: PromptTemplate::load(dir, PromptName::Match)?,
        })
    }
}
