//! Planner, actor, critic and reflector.
//!
//! Each agent renders its template, makes one completion, and parses the
//! reply. A reply that does not parse gets exactly one reprompt carrying the
//! defect and a format reminder; a second bad reply is a format error.

pub mod parse;
pub mod prompts;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatRequest, Message};
use crate::memory::{PrecedentRecord, ReflectionRecord, ValueSample};
use crate::react;
use crate::tools::{self, signature};
use crate::types::{Action, AdvantageReport, ArgValue, Claim, Label, StateView, Tool, Trajectory, VerificationStrategy};

pub use parse::Reflection;
pub use prompts::{PromptError, PromptName, PromptSet, PromptTemplate, RenderedPrompt};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgentKind {
    Planner,
    Actor,
    Critic,
    Reflector,
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentKind::Planner => "planner",
            AgentKind::Actor => "actor",
            AgentKind::Critic => "critic",
            AgentKind::Reflector => "reflector",
        })
    }
}

impl AgentKind {
    fn format_hint(self) -> &'static str {
        match self {
            AgentKind::Planner => "TYPE: <problem type>\nSTRATEGY: <high-level strategy>\nPLAN:\n1. <step>\n2. <step>",
            AgentKind::Actor => "Thought: <your reasoning>\nAction: <tool>(<arguments>)",
            AgentKind::Critic => "<a single number between -1 and 1>",
            AgentKind::Reflector => {
                "DIAGNOSIS: <what went wrong>\nPRINCIPLES:\n1. <principle>\nREVISED_STRATEGY:\nTYPE: <problem type>\nSTRATEGY: <high-level strategy>\nPLAN:\n1. <step>"
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("{agent} format error after reprompt: {defect}")]
    Format { agent: AgentKind, defect: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

/// Critic output for one state, before and after clamping to [-1, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValueEstimate {
    pub raw: f64,
    pub value: f64,
}

impl ValueEstimate {
    pub fn new(raw: f64) -> Self {
        ValueEstimate {
            raw,
            value: raw.clamp(-1.0, 1.0),
        }
    }
}

/// Pre-execution critic score for a proposed strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreemptiveScore {
    pub strategy_id: String,
    pub score: f64,
    pub threshold: f64,
    pub approved: bool,
}

impl PreemptiveScore {
    pub fn new(strategy_id: String, score: f64, threshold: f64) -> Self {
        PreemptiveScore {
            strategy_id,
            score,
            threshold,
            approved: approves(score, threshold),
        }
    }
}

pub fn approves(score: f64, threshold: f64) -> bool {
    score >= threshold
}

/// What the reflector is asked to analyse.
pub enum ReflectInput<'a> {
    /// An executed trajectory that scored badly.
    Failure { claim: &'a Claim, trajectory: &'a Trajectory },
    /// A strategy the critic rejected before execution.
    Rejection {
        claim: &'a Claim,
        strategy: &'a VerificationStrategy,
        score: &'a PreemptiveScore,
    },
}

impl ReflectInput<'_> {
    fn claim(&self) -> &Claim {
        match self {
            ReflectInput::Failure { claim, .. } | ReflectInput::Rejection { claim, .. } => claim,
        }
    }
}

impl Reflection {
    pub fn render(&self) -> String {
        let mut out = format!("Diagnosis: {}\nPrinciples:\n", self.diagnosis);
        for (i, p) in self.principles.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", i + 1, p));
        }
        out.push_str("Revised strategy:\n");
        out.push_str(&self.revised_strategy.render());
        out
    }
}

const VALUE_TASK: &str = "Estimate the value of the current verification state: how likely the remaining work ends in a correct verdict without wasted tool calls.";
const SCORE_TASK: &str = "Score the proposed strategy before it is executed: how likely it leads to a correct verdict efficiently.";
const FAILURE_TASK: &str = "The trajectory below received a negative advantage. Diagnose why it failed.";
const REJECTION_TASK: &str = "The critic rejected the strategy below before execution. Diagnose its weaknesses.";

pub const NO_REFLECTIONS: &str = "No prior reflections.";
pub const MAX_STEPS_EVIDENCE: &str = "MAX_STEPS";

fn render_reflections(records: &[ReflectionRecord]) -> String {
    if records.is_empty() {
        return NO_REFLECTIONS.to_string();
    }
    records
        .iter()
        .enumerate()
        .map(|(i, r)| format!("Reflection {}:\n{}", i + 1, r.render()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_precedents(records: &[PrecedentRecord]) -> String {
    if records.is_empty() {
        return "None.".to_string();
    }
    records
        .iter()
        .enumerate()
        .map(|(i, p)| {
            format!(
                "Example {}:\nClaim: {}\n{}Advantage: {:.3}\n",
                i + 1,
                p.claim_text.replace('\n', " | "),
                p.strategy.render(),
                p.advantage
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_exemplars(samples: &[ValueSample]) -> String {
    if samples.is_empty() {
        return "No exemplars.".to_string();
    }
    samples
        .iter()
        .map(|s| format!("State:\n{}\nValue: {:.3}\n", s.state_summary.trim_end(), s.value))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Accepts an actor reply only if it is one well-formed turn; a
/// `get_answer` must also carry a valid label since it ends the run.
fn parse_turn(text: &str) -> Result<(String, Action), String> {
    let (thought, action) = react::parse_react(text).map_err(|e| e.to_string())?;
    if action.tool == Tool::GetAnswer {
        signature(Tool::GetAnswer).check(&action.args)?;
        let label = action.args[0].as_str().unwrap_or_default();
        Label::parse(label).map_err(|e| e.to_string())?;
    }
    Ok((thought, action))
}

#[derive(Clone)]
pub struct Agents {
    chat: Arc<dyn ChatBackend>,
    prompts: Arc<PromptSet>,
    decoding: Decoding,
    max_steps: usize,
    forced_verdict: Label,
}

impl Agents {
    pub fn new(
        chat: Arc<dyn ChatBackend>,
        prompts: Arc<PromptSet>,
        decoding: Decoding,
        max_steps: usize,
        forced_verdict: Label,
    ) -> Self {
        Agents {
            chat,
            prompts,
            decoding,
            max_steps,
            forced_verdict,
        }
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn call<T>(
        &self,
        agent: AgentKind,
        prompt: RenderedPrompt,
        tag: &str,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, AgentError> {
        let mut request = ChatRequest {
            system_prompt: prompt.system,
            messages: vec![Message::user(prompt.user)],
            temperature: self.decoding.temperature,
            top_p: self.decoding.top_p,
            max_tokens: self.decoding.max_tokens,
            tag: Some(tag.to_string()),
        };
        let first = self.chat.complete(&request)?;
        let defect = match parse(&first) {
            Ok(v) => return Ok(v),
            Err(d) => d,
        };
        tracing::debug!(%agent, tag, %defect, "reprompting");
        request.messages.push(Message::assistant(first));
        request.messages.push(Message::user(format!(
            "Your reply could not be used: {defect}.\nAnswer again using exactly this format:\n{}",
            agent.format_hint()
        )));
        let second = self.chat.complete(&request)?;
        parse(&second).map_err(|defect| AgentError::Format { agent, defect })
    }

    /// Proposes a strategy. With `feedback`, the result is a revision of
    /// the given strategy.
    pub fn plan(
        &self,
        claim: &Claim,
        reflections: &[ReflectionRecord],
        feedback: Option<(&Reflection, &VerificationStrategy)>,
    ) -> Result<VerificationStrategy, AgentError> {
        let feedback_text = match feedback {
            None => "None.".to_string(),
            Some((r, prior)) => format!("Previous strategy:\n{}\nFeedback:\n{}", prior.render(), r.render()),
        };
        let prompt = self.prompts.planner.render(&[
            ("claim", &claim.render_block()),
            ("reflections", &render_reflections(reflections)),
            ("feedback", &feedback_text),
        ])?;
        let revision_of = feedback.map(|(_, prior)| prior.id());
        self.call(AgentKind::Planner, prompt, &claim.id, |t| {
            parse::parse_strategy(t, revision_of.clone())
        })
    }

    /// Next (thought, action). When the step about to be taken is the last
    /// one allowed, no model call is made and a conservative verdict is
    /// returned instead.
    pub fn act(
        &self,
        state: StateView<'_>,
        strategy: &VerificationStrategy,
        positive: &[PrecedentRecord],
        negative: &[PrecedentRecord],
    ) -> Result<(String, Action), AgentError> {
        if state.steps.len() + 1 >= self.max_steps {
            return Ok((
                "Step limit reached; returning the conservative verdict.".to_string(),
                Action::new(
                    Tool::GetAnswer,
                    vec![
                        ArgValue::from(self.forced_verdict.as_str()),
                        ArgValue::from(MAX_STEPS_EVIDENCE),
                    ],
                ),
            ));
        }
        let prompt = self.prompts.actor.render(&[
            ("claim", &state.claim.render_block()),
            ("strategy", &strategy.render()),
            ("tools", &tools::describe_tools()),
            ("history", &state.render_history()),
            ("positive_precedents", &render_precedents(positive)),
            ("negative_precedents", &render_precedents(negative)),
        ])?;
        self.call(AgentKind::Actor, prompt, &state.claim.id, parse_turn)
    }

    pub fn estimate_value(&self, state: StateView<'_>, exemplars: &[ValueSample]) -> Result<ValueEstimate, AgentError> {
        let prompt = self.prompts.critic.render(&[
            ("task", VALUE_TASK),
            ("claim", &state.claim.render_block()),
            ("state", &state.render_history()),
            ("exemplars", &render_exemplars(exemplars)),
        ])?;
        let raw = self.call(AgentKind::Critic, prompt, &state.claim.id, parse::parse_number)?;
        Ok(ValueEstimate::new(raw))
    }

    pub fn preemptive_score(
        &self,
        claim: &Claim,
        strategy: &VerificationStrategy,
        exemplars: &[ValueSample],
        threshold: f64,
    ) -> Result<PreemptiveScore, AgentError> {
        let state = format!("Proposed strategy (not yet executed):\n{}", strategy.render());
        let prompt = self.prompts.critic.render(&[
            ("task", SCORE_TASK),
            ("claim", &claim.render_block()),
            ("state", &state),
            ("exemplars", &render_exemplars(exemplars)),
        ])?;
        let score = self.call(AgentKind::Critic, prompt, &claim.id, parse::parse_number)?;
        Ok(PreemptiveScore::new(strategy.id(), score, threshold))
    }

    pub fn reflect(&self, input: &ReflectInput<'_>) -> Result<Reflection, AgentError> {
        let claim = input.claim();
        let (task, material) = match input {
            ReflectInput::Failure { claim, trajectory } => {
                let state = StateView {
                    claim,
                    steps: &trajectory.steps,
                };
                let mut m = format!("Strategy:\n{}\nTrajectory:\n{}", trajectory.strategy.render(), state.render_history());
                if let Some(v) = &trajectory.verdict {
                    m.push_str(&format!("Verdict: {}\n", v.label));
                }
                if let Some(gold) = claim.gold_label {
                    m.push_str(&format!("Correct label: {gold}\n"));
                }
                if let Some(a) = &trajectory.advantage {
                    m.push_str(&format!("Advantage: {:.3}\n", a.advantage));
                }
                (FAILURE_TASK, m)
            }
            ReflectInput::Rejection { strategy, score, .. } => (
                REJECTION_TASK,
                format!(
                    "Strategy:\n{}\nCritic score: {:.3} (threshold {:.3})\n",
                    strategy.render(),
                    score.score,
                    score.threshold
                ),
            ),
        };
        let prompt = self.prompts.reflector.render(&[
            ("task", task),
            ("claim", &claim.render_block()),
            ("material", &material),
        ])?;
        self.call(AgentKind::Reflector, prompt, &claim.id, parse::parse_reflection)
    }
}

/// Advantage of a finished trajectory: `R_T + γ·v_next − v_curr − λ·N_tools`.
pub fn advantage(
    trajectory: &Trajectory,
    terminal_reward: f64,
    gamma: f64,
    lambda: f64,
    v_curr: f64,
    v_next: f64,
) -> AdvantageReport {
    AdvantageReport::compute(
        terminal_reward,
        gamma,
        v_next,
        v_curr,
        lambda,
        trajectory.count_tool_calls(),
    )
}
