//! Line-oriented ReAct surface grammar.
//!
//! ```text
//! Thought: <first line>
//!  <continuation line, indented by one space>
//! Action: tool_name("string arg", 42)
//! ```
//!
//! Continuation lines are written with one extra leading space so a thought
//! can never produce a line starting with `Thought:` or `Action:`. The parser
//! strips that space back off.

use thiserror::Error;

use crate::types::{Action, ArgValue, Tool};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReactError {
    #[error("missing Thought")]
    MissingThought,
    #[error("empty Thought")]
    EmptyThought,
    #[error("missing Action")]
    MissingAction,
    #[error("expected exactly one Action line, found {0}")]
    MultipleActions(usize),
    #[error("Action line appears before the Thought")]
    ActionBeforeThought,
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("malformed action: {0}")]
    MalformedAction(String),
    #[error("line {line}: unexpected text outside a Thought/Action turn")]
    Unexpected { line: usize },
}

const THOUGHT: &str = "Thought:";
const ACTION: &str = "Action:";

/// Parses one actor turn: a Thought (possibly multi-line) and exactly one
/// Action. Text before the Thought and after the Action is ignored.
pub fn parse_react(text: &str) -> Result<(String, Action), ReactError> {
    let lines: Vec<&str> = text.lines().collect();
    let action_lines: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| l.starts_with(ACTION))
        .map(|(i, _)| i)
        .collect();
    let thought_at = lines.iter().position(|l| l.starts_with(THOUGHT));
    let thought_at = match (thought_at, action_lines.len()) {
        (None, _) => return Err(ReactError::MissingThought),
        (Some(_), 0) => return Err(ReactError::MissingAction),
        (Some(t), 1) => t,
        (Some(_), n) => return Err(ReactError::MultipleActions(n)),
    };
    let action_at = action_lines[0];
    if action_at < thought_at {
        return Err(ReactError::ActionBeforeThought);
    }
    let thought = collect_thought(&lines[thought_at..action_at])?;
    let action = parse_action_line(lines[action_at])?;
    Ok((thought, action))
}

/// Parses a whole linearized trace: zero or more consecutive turns.
pub fn parse_trace(text: &str) -> Result<Vec<(String, Action)>, ReactError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut turns = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if line.trim().is_empty() {
            i += 1;
            continue;
        }
        if !line.starts_with(THOUGHT) {
            if line.starts_with(ACTION) {
                return Err(ReactError::ActionBeforeThought);
            }
            return Err(ReactError::Unexpected { line: i + 1 });
        }
        let start = i;
        i += 1;
        while i < lines.len() && !lines[i].starts_with(ACTION) {
            i += 1;
        }
        if i == lines.len() {
            return Err(ReactError::MissingAction);
        }
        let thought = collect_thought(&lines[start..i])?;
        let action = parse_action_line(lines[i])?;
        turns.push((thought, action));
        i += 1;
    }
    Ok(turns)
}

fn collect_thought(lines: &[&str]) -> Result<String, ReactError> {
    let first = lines[0][THOUGHT.len()..].trim_start();
    let mut thought = first.to_string();
    for cont in &lines[1..] {
        thought.push('\n');
        thought.push_str(cont.strip_prefix(' ').unwrap_or(cont));
    }
    let thought = thought.trim().to_string();
    if thought.is_empty() {
        return Err(ReactError::EmptyThought);
    }
    Ok(thought)
}

fn parse_action_line(line: &str) -> Result<Action, ReactError> {
    let body = line[ACTION.len()..].trim();
    let name_len = body
        .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
        .unwrap_or(body.len());
    let name = &body[..name_len];
    if name.is_empty() {
        return Err(ReactError::MalformedAction("missing tool name".into()));
    }
    let rest = &body[name_len..];
    let inner = rest
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| ReactError::MalformedAction(format!("expected `{name}(...)`")))?;
    let tool = Tool::from_name(name).ok_or_else(|| ReactError::UnknownTool(name.to_string()))?;
    let args = parse_args(inner)?;
    Ok(Action::new(tool, args))
}

fn parse_args(src: &str) -> Result<Vec<ArgValue>, ReactError> {
    let chars: Vec<char> = src.chars().collect();
    let mut args = Vec::new();
    let mut i = 0;
    skip_ws(&chars, &mut i);
    if i == chars.len() {
        return Ok(args);
    }
    loop {
        skip_ws(&chars, &mut i);
        match chars.get(i) {
            Some('"') => {
                i += 1;
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None => return Err(ReactError::MalformedAction("unterminated string".into())),
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some('\\') => {
                            let esc = match chars.get(i + 1) {
                                Some('"') => '"',
                                Some('\\') => '\\',
                                Some('n') => '\n',
                                Some('t') => '\t',
                                Some('r') => '\r',
                                other => {
                                    return Err(ReactError::MalformedAction(format!(
                                        "bad escape \\{}",
                                        other.map(|c| c.to_string()).unwrap_or_default()
                                    )))
                                }
                            };
                            s.push(esc);
                            i += 2;
                        }
                        Some(&c) => {
                            s.push(c);
                            i += 1;
                        }
                    }
                }
                args.push(ArgValue::Str(s));
            }
            Some(c) if *c == '-' || c.is_ascii_digit() => {
                let start = i;
                i += 1;
                while chars.get(i).is_some_and(|c| c.is_ascii_digit()) {
                    i += 1;
                }
                let lit: String = chars[start..i].iter().collect();
                let n = lit
                    .parse::<i64>()
                    .map_err(|_| ReactError::MalformedAction(format!("bad integer `{lit}`")))?;
                args.push(ArgValue::Int(n));
            }
            Some(c) => {
                return Err(ReactError::MalformedAction(format!(
                    "unexpected `{c}` in arguments (strings must be double-quoted)"
                )))
            }
            None => return Err(ReactError::MalformedAction("trailing comma".into())),
        }
        skip_ws(&chars, &mut i);
        match chars.get(i) {
            None => return Ok(args),
            Some(',') => i += 1,
            Some(c) => return Err(ReactError::MalformedAction(format!("expected `,` found `{c}`"))),
        }
    }
}

fn skip_ws(chars: &[char], i: &mut usize) {
    while chars.get(*i).is_some_and(|c| c.is_whitespace()) {
        *i += 1;
    }
}

pub fn render_action(action: &Action) -> String {
    let args: Vec<String> = action
        .args
        .iter()
        .map(|a| match a {
            ArgValue::Int(n) => n.to_string(),
            ArgValue::Str(s) => quote(s),
        })
        .collect();
    format!("{}({})", action.tool.name(), args.join(", "))
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// One turn, newline-terminated.
pub fn render_turn(thought: &str, action: &Action) -> String {
    let mut out = String::new();
    let mut lines = thought.split('\n');
    out.push_str(THOUGHT);
    out.push(' ');
    out.push_str(lines.next().unwrap_or(""));
    out.push('\n');
    for line in lines {
        out.push(' ');
        out.push_str(line);
        out.push('\n');
    }
    out.push_str(ACTION);
    out.push(' ');
    out.push_str(&render_action(action));
    out.push('\n');
    out
}
