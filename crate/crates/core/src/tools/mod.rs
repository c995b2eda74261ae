//! The actor's toolbox and the dispatcher that turns an [`Action`] into an
//! observation.
//!
//! Dispatch never fails outward: a bad call, a missing search fixture or a
//! math error all come back as observation text the actor can react to.
//! Only configuration problems (missing executor, bad provider settings)
//! surface as errors, and they do so when the toolbox is built.

pub mod calculator;
pub mod code;
pub mod search;
pub mod text;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::prompts::PromptTemplate;
use crate::backend::{BackendError, ChatBackend, ChatRequest, Embedder, Message};
use crate::types::{Action, ArgValue, Label, Tool, Verdict};

pub use code::{CodeInterpreter, CodeOutcome};
pub use search::{FixtureSearch, HttpSearch, NoSearch, SearchError, SearchProvider};

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("tool configuration: {0}")]
    Config(String),
    #[error("execution failed: {0}")]
    Exec(String),
    #[error("{0}")]
    Dispatch(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArgType {
    Str,
    Int,
}

impl ArgType {
    fn name(self) -> &'static str {
        match self {
            ArgType::Str => "str",
            ArgType::Int => "int",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Param {
    pub name: &'static str,
    pub ty: ArgType,
    pub optional: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToolKind {
    Verification,
    System,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToolSignature {
    pub tool: Tool,
    pub params: &'static [Param],
    pub returns: &'static str,
    pub kind: ToolKind,
    pub description: &'static str,
}

const fn req(name: &'static str, ty: ArgType) -> Param {
    Param {
        name,
        ty,
        optional: false,
    }
}

pub const SIGNATURES: [ToolSignature; 7] = [
    ToolSignature {
        tool: Tool::WebSearch,
        params: &[req("query", ArgType::Str)],
        returns: "str",
        kind: ToolKind::Verification,
        description: "Search the web and return the top result snippets.",
    },
    ToolSignature {
        tool: Tool::Calculator,
        params: &[req("formula", ArgType::Str)],
        returns: "float",
        kind: ToolKind::Verification,
        description: "Evaluate an arithmetic formula (+ - * / % ^ and parentheses).",
    },
    ToolSignature {
        tool: Tool::CodeInterpreter,
        params: &[req("code", ArgType::Str)],
        returns: "bool",
        kind: ToolKind::Verification,
        description: "Run a code snippet; true if it exits successfully.",
    },
    ToolSignature {
        tool: Tool::WordCount,
        params: &[req("length", ArgType::Int), req("text", ArgType::Str)],
        returns: "(int, bool)",
        kind: ToolKind::Verification,
        description: "Count words in text and check the count reaches length.",
    },
    ToolSignature {
        tool: Tool::Match,
        params: &[req("sentence", ArgType::Str), req("context", ArgType::Str)],
        returns: "bool",
        kind: ToolKind::Verification,
        description: "Check whether a sentence is semantically supported by a context.",
    },
    ToolSignature {
        tool: Tool::SplitText,
        params: &[req("text", ArgType::Str)],
        returns: "list[str]",
        kind: ToolKind::System,
        description: "Split text into sentences.",
    },
    ToolSignature {
        tool: Tool::GetAnswer,
        params: &[
            req("label", ArgType::Str),
            Param {
                name: "evidence",
                ty: ArgType::Str,
                optional: true,
            },
        ],
        returns: "(str, str)",
        kind: ToolKind::System,
        description: "Finish with \"Hallucination\" or \"Not Hallucination\" and optional evidence.",
    },
];

pub fn signature(tool: Tool) -> &'static ToolSignature {
    SIGNATURES
        .iter()
        .find(|s| s.tool == tool)
        .expect("every tool has a signature")
}

impl ToolSignature {
    pub fn render(&self) -> String {
        let params: Vec<String> = self
            .params
            .iter()
            .map(|p| format!("{}{}: {}", p.name, if p.optional { "?" } else { "" }, p.ty.name()))
            .collect();
        format!("{}({}) -> {}", self.tool.name(), params.join(", "), self.returns)
    }

    fn arity_text(&self) -> String {
        let required = self.params.iter().filter(|p| !p.optional).count();
        let total = self.params.len();
        let noun = |n: usize| if n == 1 { "argument" } else { "arguments" };
        if required == total {
            format!("{required} {}", noun(required))
        } else {
            format!("{required} to {total} {}", noun(total))
        }
    }

    /// Checks arity and argument types against the table.
    pub fn check(&self, args: &[ArgValue]) -> Result<(), String> {
        let required = self.params.iter().filter(|p| !p.optional).count();
        if args.len() < required || args.len() > self.params.len() {
            return Err(format!(
                "{} expects {}: {}",
                self.tool.name(),
                self.arity_text(),
                self.render()
            ));
        }
        for (p, a) in self.params.iter().zip(args) {
            let ok = match p.ty {
                ArgType::Str => a.as_str().is_some(),
                ArgType::Int => a.as_int().is_some(),
            };
            if !ok {
                return Err(format!(
                    "{} argument `{}` must be {}: {}",
                    self.tool.name(),
                    p.name,
                    p.ty.name(),
                    self.render()
                ));
            }
        }
        Ok(())
    }
}

/// Tool listing for the actor prompt.
pub fn describe_tools() -> String {
    SIGNATURES
        .iter()
        .map(|s| format!("- {}: {}", s.render(), s.description))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub observation_text: String,
    pub success: bool,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
}

impl ToolResult {
    fn ok(text: String) -> Self {
        ToolResult {
            observation_text: text,
            success: true,
            latency_ms: 0,
            verdict: None,
        }
    }

    fn failed(text: String) -> Self {
        ToolResult {
            observation_text: text,
            success: false,
            latency_ms: 0,
            verdict: None,
        }
    }

    fn tool_error(msg: impl std::fmt::Display) -> Self {
        Self::failed(format!("TOOL_ERROR: {msg}"))
    }

    pub fn is_terminal(&self) -> bool {
        self.verdict.is_some()
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// LLM-judge settings for `match`.
pub struct MatchJudge {
    pub chat: Arc<dyn ChatBackend>,
    pub template: PromptTemplate,
    pub temperature: f64,
    pub max_tokens: u32,
}

pub struct Matcher {
    embedder: Arc<dyn Embedder>,
    threshold: f64,
    judge: Option<MatchJudge>,
}

impl Matcher {
    pub fn embedding(embedder: Arc<dyn Embedder>, threshold: f64) -> Self {
        Matcher {
            embedder,
            threshold,
            judge: None,
        }
    }

    pub fn with_judge(mut self, judge: MatchJudge) -> Self {
        self.judge = Some(judge);
        self
    }

    pub fn matches(&self, sentence: &str, context: &str) -> Result<bool, ToolError> {
        if sentence.trim().is_empty() || context.trim().is_empty() {
            return Err(ToolError::Dispatch("match needs a non-empty sentence and context".into()));
        }
        match &self.judge {
            None => {
                let a = self.embedder.embed(sentence)?;
                let b = self.embedder.embed(context)?;
                Ok(cosine(a.as_slice(), b.as_slice()) >= self.threshold)
            }
            Some(j) => {
                let prompt = j
                    .template
                    .render(&[("sentence", sentence), ("context", context)])
                    .map_err(|e| ToolError::Config(e.to_string()))?;
                let reply = j.chat.complete(&ChatRequest {
                    system_prompt: prompt.system,
                    messages: vec![Message::user(prompt.user)],
                    temperature: j.temperature,
                    top_p: 1.0,
                    max_tokens: j.max_tokens,
                    tag: None,
                })?;
                parse_yes_no(&reply)
                    .ok_or_else(|| ToolError::Dispatch(format!("match judge replied {reply:?}, expected yes/no")))
            }
        }
    }
}

fn parse_yes_no(reply: &str) -> Option<bool> {
    let t = reply.trim().trim_end_matches('.').to_ascii_lowercase();
    match t.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

pub struct Toolbox {
    search: Box<dyn SearchProvider>,
    search_k: usize,
    matcher: Matcher,
    code: Option<CodeInterpreter>,
}

impl Toolbox {
    pub fn new(
        search: Box<dyn SearchProvider>,
        search_k: usize,
        matcher: Matcher,
        code: Option<CodeInterpreter>,
    ) -> Self {
        Toolbox {
            search,
            search_k,
            matcher,
            code,
        }
    }

    pub fn dispatch(&self, action: &Action) -> ToolResult {
        let start = Instant::now();
        let mut result = match signature(action.tool).check(&action.args) {
            Err(msg) => ToolResult::tool_error(msg),
            Ok(()) => self.run(action.tool, &action.args),
        };
        result.latency_ms = start.elapsed().as_millis() as u64;
        result
    }

    // Arguments are already checked against the signature.
    fn run(&self, tool: Tool, args: &[ArgValue]) -> ToolResult {
        let s = |i: usize| args[i].as_str().unwrap_or_default();
        match tool {
            Tool::WebSearch => {
                if s(0).trim().is_empty() {
                    return ToolResult::failed("SEARCH_ERROR: empty query".into());
                }
                match self.search.search(s(0), self.search_k) {
                    Ok(text) if !text.trim().is_empty() => ToolResult::ok(text),
                    Ok(_) => ToolResult::failed("SEARCH_ERROR: empty result".into()),
                    Err(e) => ToolResult::failed(format!("SEARCH_ERROR: {e}")),
                }
            }
            Tool::Calculator => match calculator::evaluate(s(0)) {
                Ok(v) => ToolResult::ok(calculator::format_value(v)),
                Err(e) => ToolResult::tool_error(format_args!("calculator: {e}")),
            },
            Tool::CodeInterpreter => match &self.code {
                None => ToolResult::tool_error("code_interpreter has no executor configured"),
                Some(ci) => match ci.run(s(0)) {
                    Ok(CodeOutcome::Passed) => ToolResult::ok("true".into()),
                    Ok(CodeOutcome::Failed(_)) => ToolResult::ok("false".into()),
                    Ok(CodeOutcome::TimedOut) => ToolResult::failed("TIMEOUT".into()),
                    Err(e) => ToolResult::tool_error(format_args!("code_interpreter: {e}")),
                },
            },
            Tool::WordCount => {
                let length = args[0].as_int().unwrap_or_default();
                if length < 1 {
                    return ToolResult::tool_error("word_count length must be a positive integer");
                }
                let (count, meets) = text::word_count(length as u64, s(1));
                ToolResult::ok(format!("({count}, {meets})"))
            }
            Tool::Match => match self.matcher.matches(s(0), s(1)) {
                Ok(b) => ToolResult::ok(b.to_string()),
                Err(e) => ToolResult::tool_error(format_args!("match: {e}")),
            },
            Tool::SplitText => {
                let parts = text::split_text(s(0));
                ToolResult::ok(serde_json::to_string(&parts).expect("strings serialize"))
            }
            Tool::GetAnswer => match Label::parse(s(0)) {
                Ok(label) => {
                    let evidence = args.get(1).and_then(|a| a.as_str()).map(str::to_string);
                    let mut r = ToolResult::ok(label.as_str().to_string());
                    r.verdict = Some(Verdict { label, evidence });
                    r
                }
                Err(e) => ToolResult::tool_error(format_args!("get_answer: {e}")),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Embedding, HashingEmbedder};

    fn toolbox() -> Toolbox {
        let embedder: Arc<dyn Embedder> = Arc::new(HashingEmbedder::new(256, 0).unwrap());
        let mut search = FixtureSearch::default();
        search.insert("kangaroo family", "[1] Kangaroo - Macropodidae ...");
        Toolbox::new(Box::new(search), 3, Matcher::embedding(embedder, 0.8), None)
    }

    fn act(tool: Tool, args: Vec<ArgValue>) -> ToolResult {
        toolbox().dispatch(&Action::new(tool, args))
    }

    #[test]
    fn seven_tools_in_table() {
        assert_eq!(SIGNATURES.len(), 7);
        assert_eq!(signature(Tool::WebSearch).render(), "web_search(query: str) -> str");
        assert_eq!(signature(Tool::WordCount).render(), "word_count(length: int, text: str) -> (int, bool)");
        assert_eq!(
            signature(Tool::GetAnswer).render(),
            "get_answer(label: str, evidence?: str) -> (str, str)"
        );
        for t in Tool::ALL {
            assert_eq!(signature(t).tool, t);
        }
    }

    #[test]
    fn calculator_dispatch() {
        let r = act(Tool::Calculator, vec!["2+2".into()]);
        assert_eq!((r.observation_text.as_str(), r.success), ("4", true));
        let r = act(Tool::Calculator, vec!["1/0".into()]);
        assert!(!r.success);
        assert!(r.observation_text.starts_with("TOOL_ERROR: calculator"));
    }

    #[test]
    fn arity_errors_become_observations() {
        let r = act(Tool::WebSearch, vec![]);
        assert!(!r.success);
        assert!(r.observation_text.starts_with("TOOL_ERROR: web_search expects 1 argument"), "{}", r.observation_text);
        let r = act(Tool::WordCount, vec!["5".into(), "a b".into()]);
        assert!(r.observation_text.contains("`length` must be int"));
    }

    #[test]
    fn get_answer_is_terminal() {
        let r = act(Tool::GetAnswer, vec!["Hallucination".into(), "evidence...".into()]);
        assert!(r.is_terminal());
        let v = r.verdict.unwrap();
        assert_eq!(v.label, Label::Hallucination);
        assert_eq!(v.evidence.as_deref(), Some("evidence..."));
        let r = act(Tool::GetAnswer, vec!["unsure".into()]);
        assert!(!r.is_terminal());
        assert!(r.observation_text.starts_with("TOOL_ERROR"));
    }

    #[test]
    fn search_fixture_and_degradation() {
        let r = act(Tool::WebSearch, vec!["kangaroo family".into()]);
        assert_eq!(r.observation_text, "[1] Kangaroo - Macropodidae ...");
        let r = act(Tool::WebSearch, vec!["unknown".into()]);
        assert_eq!(r.observation_text, "SEARCH_ERROR: no fixture");
        assert!(!r.success);
    }

    #[test]
    fn text_tools() {
        assert_eq!(act(Tool::WordCount, vec![3i64.into(), "one two three".into()]).observation_text, "(3, true)");
        assert_eq!(act(Tool::SplitText, vec!["A. B? C!".into()]).observation_text, r#"["A.","B?","C!"]"#);
    }

    #[test]
    fn code_interpreter_without_executor() {
        let r = act(Tool::CodeInterpreter, vec!["print(1)".into()]);
        assert!(r.observation_text.starts_with("TOOL_ERROR"));
    }

    #[test]
    fn code_interpreter_dispatch() {
        let embedder: Arc<dyn Embedder> = Arc::new(HashingEmbedder::new(8, 0).unwrap());
        let ci = CodeInterpreter::new(&["sh".into()], std::time::Duration::from_secs(5), 1).unwrap();
        let tb = Toolbox::new(Box::new(FixtureSearch::default()), 3, Matcher::embedding(embedder, 0.8), Some(ci));
        assert_eq!(tb.dispatch(&Action::new(Tool::CodeInterpreter, vec!["true".into()])).observation_text, "true");
        assert_eq!(tb.dispatch(&Action::new(Tool::CodeInterpreter, vec!["false".into()])).observation_text, "false");
    }

    #[test]
    fn match_identity_and_threshold() {
        let e: Arc<dyn Embedder> = Arc::new(HashingEmbedder::new(256, 0).unwrap());
        let strict = Matcher::embedding(e.clone(), 1.0);
        assert!(strict.matches("the same sentence", "the same sentence").unwrap());
        let loose = Matcher::embedding(e, 0.5);
        assert!(loose.matches("kangaroos hop", "kangaroo hopping").unwrap());
    }

    struct Axis;
    impl Embedder for Axis {
        fn dim(&self) -> usize {
            2
        }
        fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
            Embedding::new(if text.starts_with('x') { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
        }
    }

    #[test]
    fn orthogonal_vectors_do_not_match() {
        let m = Matcher::embedding(Arc::new(Axis), 0.8);
        assert!(!m.matches("x axis", "y axis").unwrap());
        assert!(m.matches("", "y").is_err());
    }

    #[test]
    fn yes_no() {
        assert_eq!(parse_yes_no(" Yes. "), Some(true));
        assert_eq!(parse_yes_no("no"), Some(false));
        assert_eq!(parse_yes_no("perhaps"), None);
    }
}
