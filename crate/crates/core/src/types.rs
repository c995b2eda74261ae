//! Domain values shared by every stage: claims, strategies, steps, trajectories.
//!
//! All of these are plain immutable values once built. The only mutable piece
//! is [`TrajectoryBuilder`], which a single worker owns while it drives one
//! claim through the actor loop.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::content_digest;
use crate::react;

#[derive(Debug, Error, PartialEq)]
pub enum CoreError {
    #[error("state index {n} out of range for trajectory with {len} steps")]
    OutOfBounds { n: usize, len: usize },
    #[error("incomplete trajectory: {0}")]
    IncompleteTrajectory(String),
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error("unrecognized label {0:?}: expected \"Hallucination\" or \"Not Hallucination\"")]
    Label(String),
    #[error("observation for step {0} already recorded")]
    ObservationRecorded(usize),
}

/// Binary detection outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Hallucination,
    NotHallucination,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Hallucination => "Hallucination",
            Label::NotHallucination => "Not Hallucination",
        }
    }

    /// Maps model text onto the enum. Case and surrounding whitespace are
    /// ignored; anything else is rejected.
    pub fn parse(text: &str) -> Result<Self, CoreError> {
        let norm = text.trim().to_ascii_lowercase();
        match norm.as_str() {
            "hallucination" => Ok(Label::Hallucination),
            "not hallucination" => Ok(Label::NotHallucination),
            _ => Err(CoreError::Label(text.to_string())),
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Hallucination => Label::NotHallucination,
            Label::NotHallucination => Label::Hallucination,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Label::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// A (query, response) pair under verification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ClaimFields")]
pub struct Claim {
    pub id: String,
    pub query: String,
    pub response: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<Label>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClaimFields {
    id: String,
    query: String,
    response: String,
    #[serde(default)]
    gold_label: Option<Label>,
}

impl TryFrom<ClaimFields> for Claim {
    type Error = CoreError;
    fn try_from(f: ClaimFields) -> Result<Self, CoreError> {
        Claim::new(f.id, f.query, f.response, f.gold_label)
    }
}

impl Claim {
    pub fn new(
        id: impl Into<String>,
        query: impl Into<String>,
        response: impl Into<String>,
        gold_label: Option<Label>,
    ) -> Result<Self, CoreError> {
        let claim = Claim {
            id: id.into(),
            query: query.into(),
            response: response.into(),
            gold_label,
        };
        if claim.id.is_empty() {
            return Err(invalid("claim", "id is empty"));
        }
        if claim.query.trim().is_empty() {
            return Err(invalid("claim", "query is empty"));
        }
        if claim.response.trim().is_empty() {
            return Err(invalid("claim", "response is empty"));
        }
        Ok(claim)
    }

    /// Text used to place the claim in embedding space.
    pub fn key_text(&self) -> String {
        format!("{}\n{}", self.query, self.response)
    }

    /// The claim as every agent sees it. Also the SFT prompt.
    pub fn render_block(&self) -> String {
        format!("Query: {}\nResponse: {}", self.query, self.response)
    }
}

fn invalid(what: &'static str, reason: impl Into<String>) -> CoreError {
    CoreError::Invalid {
        what,
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Verdict {
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
}

/// Planner output: problem type, approach, and ordered plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StrategyFields")]
pub struct VerificationStrategy {
    pub problem_type: String,
    pub high_level_strategy: String,
    pub plan: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub revision_of: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StrategyFields {
    problem_type: String,
    high_level_strategy: String,
    plan: Vec<String>,
    #[serde(default)]
    revision_of: Option<String>,
}

impl TryFrom<StrategyFields> for VerificationStrategy {
    type Error = CoreError;
    fn try_from(f: StrategyFields) -> Result<Self, CoreError> {
        VerificationStrategy::new(f.problem_type, f.high_level_strategy, f.plan, f.revision_of)
    }
}

impl VerificationStrategy {
    pub fn new(
        problem_type: impl Into<String>,
        high_level_strategy: impl Into<String>,
        plan: Vec<String>,
        revision_of: Option<String>,
    ) -> Result<Self, CoreError> {
        if plan.is_empty() {
            return Err(invalid("strategy", "plan has no steps"));
        }
        Ok(VerificationStrategy {
            problem_type: problem_type.into(),
            high_level_strategy: high_level_strategy.into(),
            plan,
            revision_of,
        })
    }

    /// Content address of this strategy; `revision_of` points at one of these.
    pub fn id(&self) -> String {
        content_digest(self)[..16].to_string()
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "TYPE: {}\nSTRATEGY: {}\nPLAN:\n",
            self.problem_type, self.high_level_strategy
        );
        for (i, step) in self.plan.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", i + 1, step));
        }
        out
    }
}

/// The toolbox. Names serialize in snake_case, as the actor writes them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tool {
    WebSearch,
    Calculator,
    CodeInterpreter,
    WordCount,
    Match,
    SplitText,
    GetAnswer,
}

impl Tool {
    pub const ALL: [Tool; 7] = [
        Tool::WebSearch,
        Tool::Calculator,
        Tool::CodeInterpreter,
        Tool::WordCount,
        Tool::Match,
        Tool::SplitText,
        Tool::GetAnswer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tool::WebSearch => "web_search",
            Tool::Calculator => "calculator",
            Tool::CodeInterpreter => "code_interpreter",
            Tool::WordCount => "word_count",
            Tool::Match => "match",
            Tool::SplitText => "split_text",
            Tool::GetAnswer => "get_answer",
        }
    }

    pub fn from_name(name: &str) -> Option<Tool> {
        Tool::ALL.into_iter().find(|t| t.name() == name)
    }
}

impl fmt::Display for Tool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArgValue {
    Int(i64),
    Str(String),
}

impl ArgValue {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            ArgValue::Str(s) => Some(s),
            ArgValue::Int(_) => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            ArgValue::Int(i) => Some(*i),
            ArgValue::Str(_) => None,
        }
    }
}

impl From<&str> for ArgValue {
    fn from(s: &str) -> Self {
        ArgValue::Str(s.to_string())
    }
}

impl From<String> for ArgValue {
    fn from(s: String) -> Self {
        ArgValue::Str(s)
    }
}

impl From<i64> for ArgValue {
    fn from(i: i64) -> Self {
        ArgValue::Int(i)
    }
}

/// A tool call. Arity is checked at dispatch, not here: a malformed call
/// from the actor still has to be recorded so it can yield an observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    pub tool: Tool,
    pub args: Vec<ArgValue>,
}

impl Action {
    pub fn new(tool: Tool, args: Vec<ArgValue>) -> Self {
        Action { tool, args }
    }

    pub fn is_terminal(&self) -> bool {
        self.tool == Tool::GetAnswer
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&react::render_action(self))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub thought: String,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<String>,
}

/// Critic output combined into a scalar: `R_T + γ·V(next) − V(curr) − λ·N_tools`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvantageReport {
    pub terminal_reward: f64,
    pub gamma: f64,
    pub v_next: f64,
    pub v_curr: f64,
    pub lambda: f64,
    pub n_tools: u32,
    pub advantage: f64,
}

impl AdvantageReport {
    pub fn compute(
        terminal_reward: f64,
        gamma: f64,
        v_next: f64,
        v_curr: f64,
        lambda: f64,
        n_tools: u32,
    ) -> Self {
        let advantage = advantage_value(terminal_reward, gamma, v_next, v_curr, lambda, n_tools);
        AdvantageReport {
            terminal_reward,
            gamma,
            v_next,
            v_curr,
            lambda,
            n_tools,
            advantage,
        }
    }

    pub fn recompute(&self) -> f64 {
        advantage_value(
            self.terminal_reward,
            self.gamma,
            self.v_next,
            self.v_curr,
            self.lambda,
            self.n_tools,
        )
    }

    /// Bit-level agreement between the stored scalar and its terms.
    pub fn is_consistent(&self) -> bool {
        self.recompute().to_bits() == self.advantage.to_bits()
    }
}

fn advantage_value(r_t: f64, gamma: f64, v_next: f64, v_curr: f64, lambda: f64, n: u32) -> f64 {
    r_t + gamma * v_next - v_curr - lambda * f64::from(n)
}

/// A finished (or abandoned) verification run for one claim.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryFields")]
pub struct Trajectory {
    pub id: String,
    pub claim_id: String,
    pub strategy: VerificationStrategy,
    pub steps: Vec<Step>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub advantage: Option<AdvantageReport>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryFields {
    id: String,
    claim_id: String,
    strategy: VerificationStrategy,
    steps: Vec<Step>,
    #[serde(default)]
    verdict: Option<Verdict>,
    #[serde(default)]
    advantage: Option<AdvantageReport>,
}

impl TryFrom<TrajectoryFields> for Trajectory {
    type Error = CoreError;
    fn try_from(f: TrajectoryFields) -> Result<Self, CoreError> {
        let t = Trajectory {
            id: f.id,
            claim_id: f.claim_id,
            strategy: f.strategy,
            steps: f.steps,
            verdict: f.verdict,
            advantage: f.advantage,
        };
        t.validate()?;
        Ok(t)
    }
}

/// Claim plus the first `n` steps: the state the next agent call sees.
#[derive(Clone, Copy, Debug)]
pub struct StateView<'a> {
    pub claim: &'a Claim,
    pub steps: &'a [Step],
}

impl<'a> StateView<'a> {
    pub fn initial(claim: &'a Claim) -> Self {
        StateView { claim, steps: &[] }
    }

    pub fn is_terminal(&self) -> bool {
        self.steps.last().is_some_and(|s| s.action.is_terminal())
    }

    /// History in the ReAct surface form, observations included.
    pub fn render_history(&self) -> String {
        if self.steps.is_empty() {
            return "No steps taken yet.".to_string();
        }
        let mut out = String::new();
        for step in self.steps {
            out.push_str(&react::render_turn(&step.thought, &step.action));
            match &step.observation {
                Some(obs) => {
                    out.push_str("Observation: ");
                    out.push_str(&obs.replace('\n', "\n "));
                    out.push('\n');
                }
                None => out.push_str("Observation: (pending)\n"),
            }
        }
        out
    }

    /// Text identifying this state in the critic's memory.
    pub fn summary(&self) -> String {
        format!("{}\n{}", self.claim.render_block(), self.render_history())
    }
}

impl Trajectory {
    pub fn state_at<'a>(&'a self, claim: &'a Claim, n: usize) -> Result<StateView<'a>, CoreError> {
        if n > self.steps.len() {
            return Err(CoreError::OutOfBounds {
                n,
                len: self.steps.len(),
            });
        }
        if claim.id != self.claim_id {
            return Err(invalid(
                "state",
                format!("claim {} does not belong to trajectory of {}", claim.id, self.claim_id),
            ));
        }
        Ok(StateView {
            claim,
            steps: &self.steps[..n],
        })
    }

    pub fn count_tool_calls(&self) -> u32 {
        count_tool_calls(&self.steps)
    }

    /// Number of states s_0..s_N the trajectory passes through.
    pub fn state_count(&self) -> usize {
        self.steps.len() + 1
    }

    pub fn content_id(claim_id: &str, strategy: &VerificationStrategy, steps: &[Step]) -> String {
        content_digest(&(claim_id, strategy, steps))[..32].to_string()
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.verdict.is_some() && !self.steps.last().is_some_and(|s| s.action.is_terminal()) {
            return Err(invalid("trajectory", "verdict present but last action is not get_answer"));
        }
        if let Some(pos) = self.steps.iter().position(|s| s.action.is_terminal()) {
            if pos + 1 != self.steps.len() {
                return Err(invalid("trajectory", format!("get_answer at step {pos} is not last")));
            }
        }
        if let Some(report) = &self.advantage {
            let n = self.count_tool_calls();
            if report.n_tools != n {
                return Err(invalid(
                    "trajectory",
                    format!("advantage counts {} tool calls, steps contain {n}", report.n_tools),
                ));
            }
        }
        Ok(())
    }

    pub fn with_advantage(mut self, report: AdvantageReport) -> Result<Self, CoreError> {
        self.advantage = Some(report);
        self.validate()?;
        Ok(self)
    }

    /// Target sequence for fine-tuning: every (thought, action) pair in order,
    /// observations left out.
    pub fn linearize_target(&self) -> Result<String, CoreError> {
        if self.verdict.is_none() {
            return Err(CoreError::IncompleteTrajectory(format!(
                "trajectory {} has no verdict",
                self.id
            )));
        }
        if self.steps.is_empty() {
            return Err(CoreError::IncompleteTrajectory(format!(
                "trajectory {} has a verdict but no get_answer step",
                self.id
            )));
        }
        Ok(self
            .steps
            .iter()
            .map(|s| react::render_turn(&s.thought, &s.action))
            .collect())
    }
}

pub fn count_tool_calls(steps: &[Step]) -> u32 {
    steps.iter().filter(|s| !s.action.is_terminal()).count() as u32
}

/// Accumulates steps for one claim. Earlier steps are never touched again
/// once their observation is in.
#[derive(Debug)]
pub struct TrajectoryBuilder {
    claim_id: String,
    strategy: VerificationStrategy,
    steps: Vec<Step>,
}

impl TrajectoryBuilder {
    pub fn new(claim_id: impl Into<String>, strategy: VerificationStrategy) -> Self {
        TrajectoryBuilder {
            claim_id: claim_id.into(),
            strategy,
            steps: Vec::new(),
        }
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn strategy(&self) -> &VerificationStrategy {
        &self.strategy
    }

    pub fn state<'a>(&'a self, claim: &'a Claim) -> StateView<'a> {
        StateView {
            claim,
            steps: &self.steps,
        }
    }

    /// Appends a step awaiting its observation; returns its index.
    pub fn push(&mut self, thought: impl Into<String>, action: Action) -> usize {
        self.steps.push(Step {
            thought: thought.into(),
            action,
            observation: None,
        });
        self.steps.len() - 1
    }

    pub fn observe(&mut self, index: usize, observation: impl Into<String>) -> Result<(), CoreError> {
        let len = self.steps.len();
        let step = self
            .steps
            .get_mut(index)
            .ok_or(CoreError::OutOfBounds { n: index, len })?;
        if step.observation.is_some() {
            return Err(CoreError::ObservationRecorded(index));
        }
        step.observation = Some(observation.into());
        Ok(())
    }

    pub fn finish(self, verdict: Option<Verdict>) -> Result<Trajectory, CoreError> {
        let id = Trajectory::content_id(&self.claim_id, &self.strategy, &self.steps);
        let t = Trajectory {
            id,
            claim_id: self.claim_id,
            strategy: self.strategy,
            steps: self.steps,
            verdict,
            advantage: None,
        };
        t.validate()?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn claim() -> Claim {
        Claim::new("c1", "What family is the kangaroo in?", "Felidae", Some(Label::Hallucination)).unwrap()
    }

    fn strategy() -> VerificationStrategy {
        VerificationStrategy::new("factual", "verify family", vec!["search".into()], None).unwrap()
    }

    fn step(tool: Tool, arg: &str) -> Step {
        Step {
            thought: format!("use {tool}"),
            action: Action::new(tool, vec![arg.into()]),
            observation: Some("ok".into()),
        }
    }

    fn three_steps() -> Trajectory {
        let mut b = TrajectoryBuilder::new("c1", strategy());
        for tool in [Tool::WebSearch, Tool::Calculator] {
            let i = b.push("t", Action::new(tool, vec!["x".into()]));
            b.observe(i, "o").unwrap();
        }
        let i = b.push("done", Action::new(Tool::GetAnswer, vec!["Hallucination".into()]));
        b.observe(i, "Hallucination").unwrap();
        b.finish(Some(Verdict {
            label: Label::Hallucination,
            evidence: None,
        }))
        .unwrap()
    }

    #[test]
    fn state_at_bounds() {
        let c = claim();
        let t = three_steps();
        assert_eq!(t.state_at(&c, 0).unwrap().steps.len(), 0);
        assert_eq!(t.state_at(&c, 3).unwrap().steps.len(), 3);
        assert_eq!(t.state_at(&c, 4).unwrap_err(), CoreError::OutOfBounds { n: 4, len: 3 });
    }

    #[test]
    fn tool_call_counting() {
        assert_eq!(count_tool_calls(&[]), 0);
        assert_eq!(three_steps().count_tool_calls(), 2);
        assert_eq!(count_tool_calls(&[step(Tool::GetAnswer, "Hallucination")]), 0);
    }

    #[test]
    fn single_step_linearization() {
        let t = Trajectory {
            id: "t".into(),
            claim_id: "c1".into(),
            strategy: strategy(),
            steps: vec![Step {
                thought: "check family".into(),
                action: Action::new(Tool::WebSearch, vec!["kangaroo family".into()]),
                observation: None,
            }],
            verdict: Some(Verdict {
                label: Label::Hallucination,
                evidence: None,
            }),
            advantage: None,
        };
        assert_eq!(
            t.linearize_target().unwrap(),
            "Thought: check family\nAction: web_search(\"kangaroo family\")\n"
        );
    }

    #[test]
    fn verdict_without_steps_is_rejected() {
        let b = TrajectoryBuilder::new("c1", strategy());
        let v = Verdict {
            label: Label::Hallucination,
            evidence: None,
        };
        assert!(b.finish(Some(v.clone())).is_err());
        let t = Trajectory {
            id: "x".into(),
            claim_id: "c1".into(),
            strategy: strategy(),
            steps: vec![],
            verdict: Some(v),
            advantage: None,
        };
        assert!(matches!(t.linearize_target(), Err(CoreError::IncompleteTrajectory(_))));
    }

    #[test]
    fn missing_verdict_cannot_linearize() {
        let mut b = TrajectoryBuilder::new("c1", strategy());
        b.push("t", Action::new(Tool::WebSearch, vec!["q".into()]));
        let t = b.finish(None).unwrap();
        assert!(matches!(t.linearize_target(), Err(CoreError::IncompleteTrajectory(_))));
    }

    #[test]
    fn observation_is_write_once() {
        let mut b = TrajectoryBuilder::new("c1", strategy());
        let i = b.push("t", Action::new(Tool::WebSearch, vec!["q".into()]));
        b.observe(i, "first").unwrap();
        assert_eq!(b.observe(i, "second"), Err(CoreError::ObservationRecorded(0)));
    }

    #[test]
    fn appending_keeps_earlier_prefix() {
        let c = claim();
        let mut b = TrajectoryBuilder::new("c1", strategy());
        let i = b.push("a", Action::new(Tool::WebSearch, vec!["q".into()]));
        b.observe(i, "o").unwrap();
        let before: Vec<Step> = b.state(&c).steps[..1].to_vec();
        b.push("b", Action::new(Tool::Calculator, vec!["1+1".into()]));
        assert_eq!(&b.state(&c).steps[..1], before.as_slice());
    }

    #[test]
    fn label_mapping() {
        assert_eq!(Label::parse("  not HALLUCINATION ").unwrap(), Label::NotHallucination);
        assert_eq!(Label::parse("Hallucination").unwrap(), Label::Hallucination);
        assert!(Label::parse("maybe").is_err());
        assert!(Label::parse("NotHallucination").is_err());
    }

    #[test]
    fn claim_requires_text() {
        assert!(Claim::new("a", "  ", "r", None).is_err());
        assert!(Claim::new("a", "q", "\n", None).is_err());
    }

    #[test]
    fn advantage_substitution() {
        let r = AdvantageReport::compute(1.0, 0.9, 0.5, 0.2, 0.1, 3);
        assert!((r.advantage - 0.95).abs() < 1e-12);
        assert!(r.is_consistent());
        assert_eq!(AdvantageReport::compute(0.0, 0.37, 0.0, 0.0, 0.0, 7).advantage, 0.0);
    }

    #[test]
    fn stored_tool_count_must_match_steps() {
        let t = three_steps();
        assert!(t.clone().with_advantage(AdvantageReport::compute(1.0, 1.0, 0.0, 0.0, 0.1, 2)).is_ok());
        assert!(t.with_advantage(AdvantageReport::compute(1.0, 1.0, 0.0, 0.0, 0.1, 5)).is_err());
    }

    #[test]
    fn strategy_id_tracks_content() {
        let a = strategy();
        let mut b = a.clone();
        assert_eq!(a.id(), b.id());
        b.plan.push("more".into());
        assert_ne!(a.id(), b.id());
    }
}
