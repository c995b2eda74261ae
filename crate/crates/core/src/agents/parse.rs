//! Parsers for the structured replies of the planner, critic and reflector.
//!
//! Each returns the defect as a short message on failure; the caller turns
//! it into a reprompt or a format error.

use crate::types::VerificationStrategy;

/// Splits `text` into named sections. A section starts at a line whose
/// trimmed form begins with `NAME:`; its body is the rest of that line plus
/// every following line up to the next section. Text before the first
/// section is ignored.
fn sections(text: &str, names: &[&'static str]) -> Result<Vec<(&'static str, String)>, String> {
    let mut out: Vec<(&'static str, String)> = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim_start();
        let header = names.iter().find_map(|n| {
            trimmed
                .strip_prefix(n)
                .and_then(|rest| rest.strip_prefix(':'))
                .map(|rest| (*n, rest))
        });
        match header {
            Some((name, rest)) => {
                if out.iter().any(|(n, _)| *n == name) {
                    return Err(format!("duplicate {name} section"));
                }
                out.push((name, rest.trim().to_string()));
            }
            None => {
                if let Some((_, body)) = out.last_mut() {
                    body.push('\n');
                    body.push_str(line);
                }
            }
        }
    }
    Ok(out)
}

fn take<'a>(secs: &'a [(&'static str, String)], name: &str) -> Result<&'a str, String> {
    secs.iter()
        .find(|(n, _)| *n == name)
        .map(|(_, b)| b.as_str())
        .ok_or_else(|| format!("missing {name} section"))
}

fn join_lines(body: &str) -> String {
    body.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Strips a list marker (`1.`, `2)`, `-`, `*`) from a line.
fn list_item(line: &str) -> Option<&str> {
    let t = line.trim_start();
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        return rest
            .strip_prefix('.')
            .or_else(|| rest.strip_prefix(')'))
            .map(str::trim);
    }
    t.strip_prefix("- ").or_else(|| t.strip_prefix("* ")).map(str::trim)
}

/// Numbered (or bulleted) items; unmarked lines continue the previous item.
fn list(body: &str, what: &str) -> Result<Vec<String>, String> {
    let mut items: Vec<String> = Vec::new();
    for line in body.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match list_item(line) {
            Some(item) if !item.is_empty() => items.push(item.to_string()),
            Some(_) => return Err(format!("empty {what} item")),
            None => match items.last_mut() {
                Some(prev) => {
                    prev.push(' ');
                    prev.push_str(line.trim());
                }
                None => return Err(format!("{what} items must be numbered")),
            },
        }
    }
    if items.is_empty() {
        return Err(format!("{what} has no items"));
    }
    Ok(items)
}

/// `TYPE: ..`, `STRATEGY: ..`, `PLAN:` followed by numbered steps.
pub fn parse_strategy(text: &str, revision_of: Option<String>) -> Result<VerificationStrategy, String> {
    let secs = sections(text, &["TYPE", "STRATEGY", "PLAN"])?;
    let problem_type = join_lines(take(&secs, "TYPE")?);
    let strategy = join_lines(take(&secs, "STRATEGY")?);
    let plan = list(take(&secs, "PLAN")?, "PLAN")?;
    if problem_type.is_empty() {
        return Err("empty TYPE section".into());
    }
    if strategy.is_empty() {
        return Err("empty STRATEGY section".into());
    }
    VerificationStrategy::new(problem_type, strategy, plan, revision_of).map_err(|e| e.to_string())
}

/// A single real number, optionally labelled `VALUE:` or `SCORE:`.
pub fn parse_number(text: &str) -> Result<f64, String> {
    let t = text.trim();
    let upper = t.to_ascii_uppercase();
    let t = if upper.starts_with("VALUE:") || upper.starts_with("SCORE:") {
        t[6..].trim()
    } else {
        t
    };
    let v: f64 = t
        .parse()
        .map_err(|_| format!("expected a single number, got {:?}", truncate(text, 40)))?;
    if !v.is_finite() {
        return Err("number is not finite".into());
    }
    Ok(v)
}

fn truncate(s: &str, n: usize) -> String {
    let t = s.trim();
    match t.char_indices().nth(n) {
        Some((i, _)) => format!("{}...", &t[..i]),
        None => t.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reflection {
    pub diagnosis: String,
    pub principles: Vec<String>,
    pub revised_strategy: VerificationStrategy,
}

pub fn parse_reflection(text: &str) -> Result<Reflection, String> {
    let secs = sections(text, &["DIAGNOSIS", "PRINCIPLES", "REVISED_STRATEGY"])?;
    let diagnosis = join_lines(take(&secs, "DIAGNOSIS")?);
    if diagnosis.is_empty() {
        return Err("empty DIAGNOSIS section".into());
    }
    let principles = list(take(&secs, "PRINCIPLES")?, "PRINCIPLES")?;
    let revised = parse_strategy(take(&secs, "REVISED_STRATEGY")?, None)
        .map_err(|e| format!("REVISED_STRATEGY: {e}"))?;
    Ok(Reflection {
        diagnosis,
        principles,
        revised_strategy: revised,
    })
}
