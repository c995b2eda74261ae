//! The learning loop, curation, SFT export and the correcting detector.
//!
//! Claims are independent; a bounded pool of scoped threads works through
//! them while the memories are the only shared mutable state. Output is
//! always reported in input order so a run with one worker is
//! byte-reproducible.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, Agents, PreemptiveScore, ReflectInput, Reflection};
use crate::backend::{BackendError, Embedding};
use crate::memory::{MemoryError, MemorySizes, PrecedentRecord, ReflectionRecord, ValueSample};
use crate::records::{self, RecordError};
use crate::runtime::Runtime;
use crate::types::{Claim, CoreError, Label, Trajectory, TrajectoryBuilder, VerificationStrategy, Verdict};

#[derive(Debug, Error)]
pub enum LoopError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("claim {0} has no gold label")]
    MissingGold(String),
    #[error("terminal reward needs a gold label")]
    NoGold,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("curation: {0}")]
    Curation(String),
    #[error("export: {0}")]
    Export(String),
    #[error("cannot write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// +1 when the verdict matches gold, -1 otherwise.
pub fn terminal_reward(verdict: Label, gold: Option<Label>) -> Result<f64, LoopError> {
    let gold = gold.ok_or(LoopError::NoGold)?;
    Ok(if verdict == gold { 1.0 } else { -1.0 })
}

fn retrieve_reflections(rt: &Runtime, key: &Embedding) -> Result<Vec<ReflectionRecord>, LoopError> {
    let k = rt.config.learning.k_reflections;
    Ok(rt.memories.reflections.read().unwrap().retrieve_top_k(key, k, None)?)
}

fn retrieve_precedents(rt: &Runtime, key: &Embedding) -> Result<(Vec<PrecedentRecord>, Vec<PrecedentRecord>), LoopError> {
    let l = &rt.config.learning;
    let store = rt.memories.precedents.read().unwrap();
    let pos = store.retrieve_top_k(key, l.k_precedents_pos, Some(&|r: &PrecedentRecord| r.advantage > 0.0))?;
    let neg = store.retrieve_top_k(key, l.k_precedents_neg, Some(&|r: &PrecedentRecord| r.advantage <= 0.0))?;
    Ok((pos, neg))
}

fn retrieve_values(rt: &Runtime, key: &Embedding) -> Result<Vec<ValueSample>, LoopError> {
    let k = rt.config.learning.k_values;
    Ok(rt.memories.values.read().unwrap().retrieve_top_k(key, k, None)?)
}

fn reflection_record(claim: &Claim, reflection: &Reflection, embedding: Embedding) -> ReflectionRecord {
    let id = crate::content_digest(&(
        &claim.id,
        &reflection.diagnosis,
        &reflection.principles,
        &reflection.revised_strategy,
    ))[..32]
        .to_string();
    ReflectionRecord {
        id,
        key_text: claim.key_text(),
        diagnosis: reflection.diagnosis.clone(),
        principles: reflection.principles.clone(),
        revised_strategy: reflection.revised_strategy.clone(),
        embedding,
    }
}

/// Runs the actor against the toolbox until `get_answer`.
pub fn execute(
    rt: &Runtime,
    agents: &Agents,
    claim: &Claim,
    strategy: VerificationStrategy,
    key: &Embedding,
) -> Result<Trajectory, LoopError> {
    let (pos, neg) = retrieve_precedents(rt, key)?;
    let mut builder = TrajectoryBuilder::new(claim.id.clone(), strategy);
    loop {
        let (thought, action) = agents.act(builder.state(claim), builder.strategy(), &pos, &neg)?;
        let result = rt.toolbox.dispatch(&action);
        tracing::debug!(claim = %claim.id, %action, success = result.success, "step");
        let index = builder.push(thought, action);
        builder.observe(index, result.observation_text)?;
        if let Some(verdict) = result.verdict {
            return Ok(builder.finish(Some(verdict))?);
        }
    }
}

/// Records added to each store by one episode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryDelta {
    pub reflections: usize,
    pub precedents: usize,
    pub values: usize,
}

#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub trajectory: Trajectory,
    /// Clamped critic values for s_0..s_N.
    pub values: Vec<f64>,
    pub reflection: Option<Reflection>,
    pub delta: MemoryDelta,
}

/// retrieve reflections, plan, execute, evaluate, then update the
/// precedent and value stores, and the reflection store when A < 0.
pub fn run_learning_episode(rt: &Runtime, agents: &Agents, claim: &Claim) -> Result<EpisodeOutcome, LoopError> {
    let gold = claim.gold_label.ok_or_else(|| LoopError::MissingGold(claim.id.clone()))?;
    let l = &rt.config.learning;
    let key = rt.embedder.embed(&claim.key_text())?;
    let reflections = retrieve_reflections(rt, &key)?;
    let strategy = agents.plan(claim, &reflections, None)?;
    let trajectory = execute(rt, agents, claim, strategy, &key)?;

    let mut samples = Vec::with_capacity(trajectory.state_count());
    for n in 0..trajectory.state_count() {
        let state = trajectory.state_at(claim, n)?;
        let summary = state.summary();
        let embedding = rt.embedder.embed(&summary)?;
        let exemplars = retrieve_values(rt, &embedding)?;
        let estimate = agents.estimate_value(state, &exemplars)?;
        samples.push(ValueSample {
            id: format!("{}/{n}", trajectory.id),
            state_summary: summary,
            value: estimate.value,
            embedding,
        });
    }
    let verdict = trajectory
        .verdict
        .as_ref()
        .ok_or_else(|| CoreError::IncompleteTrajectory(format!("trajectory {} has no verdict", trajectory.id)))?;
    let r_t = terminal_reward(verdict.label, Some(gold))?;
    let report = crate::agents::advantage(&trajectory, r_t, l.gamma, l.lambda, samples[0].value, samples[1].value);
    let a = report.advantage;
    let trajectory = trajectory.with_advantage(report)?;

    let reflection = if a < 0.0 {
        Some(agents.reflect(&ReflectInput::Failure {
            claim,
            trajectory: &trajectory,
        })?)
    } else {
        None
    };

    let values: Vec<f64> = samples.iter().map(|s| s.value).collect();
    let mut delta = MemoryDelta::default();
    rt.memories.precedents.write().unwrap().insert(PrecedentRecord {
        id: trajectory.id.clone(),
        claim_text: claim.key_text(),
        strategy: trajectory.strategy.clone(),
        advantage: a,
        embedding: key.clone(),
    })?;
    delta.precedents = 1;
    {
        let mut store = rt.memories.values.write().unwrap();
        for s in samples {
            store.insert(s)?;
            delta.values += 1;
        }
    }
    if let Some(r) = &reflection {
        rt.memories
            .reflections
            .write()
            .unwrap()
            .insert(reflection_record(claim, r, key))?;
        delta.reflections = 1;
    }
    Ok(EpisodeOutcome {
        trajectory,
        values,
        reflection,
        delta,
    })
}

/// Runs `f` over `items` with up to `workers` threads. Slots left `None`
/// were never started because `cancel` was raised.
pub fn run_pool<T, R, F>(items: &[T], workers: usize, cancel: &AtomicBool, f: F) -> Vec<Option<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                if cancel.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results.into_inner().unwrap()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Failure {
    pub claim_id: String,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningReport {
    pub completed: usize,
    pub failed: usize,
    pub reflected: usize,
    pub not_started: usize,
    pub mean_advantage: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct LearningRun {
    /// Completed episodes in input order.
    pub episodes: Vec<EpisodeOutcome>,
    pub failures: Vec<Failure>,
    pub report: LearningReport,
    pub cancelled: bool,
}

/// Runs one episode per claim. Failed claims are recorded and skipped;
/// with `strict`, the first failure stops the run from picking up more
/// claims.
pub fn run_learning(
    rt: &Runtime,
    agents: &Agents,
    claims: &[Claim],
    strict: bool,
    cancel: &AtomicBool,
) -> Result<LearningRun, LoopError> {
    if claims.is_empty() {
        return Err(LoopError::EmptyDataset);
    }
    let halted = AtomicBool::new(false);
    let stop = StopFlag { cancel, halted: &halted };
    let results = run_pool(claims, rt.config.learning.concurrency, stop.flag(), |claim| {
        if stop.raised() {
            return None;
        }
        let r = run_learning_episode(rt, agents, claim);
        match &r {
            Ok(ep) => tracing::info!(claim = %claim.id, advantage = ep.trajectory.advantage.as_ref().map(|a| a.advantage), "episode done"),
            Err(e) => {
                tracing::warn!(claim = %claim.id, error = %e, "episode failed");
                if strict {
                    halted.store(true, Ordering::SeqCst);
                }
            }
        }
        Some(r)
    });
    let mut run = LearningRun {
        episodes: Vec::new(),
        failures: Vec::new(),
        report: LearningReport::default(),
        cancelled: cancel.load(Ordering::SeqCst),
    };
    for (claim, r) in claims.iter().zip(results) {
        match r.flatten() {
            None => run.report.not_started += 1,
            Some(Ok(ep)) => {
                run.report.completed += 1;
                if ep.reflection.is_some() {
                    run.report.reflected += 1;
                }
                run.episodes.push(ep);
            }
            Some(Err(e)) => {
                run.report.failed += 1;
                run.failures.push(Failure {
                    claim_id: claim.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    let advantages: Vec<f64> = run
        .episodes
        .iter()
        .filter_map(|e| e.trajectory.advantage.as_ref().map(|a| a.advantage))
        .collect();
    if !advantages.is_empty() {
        run.report.mean_advantage = Some(advantages.iter().sum::<f64>() / advantages.len() as f64);
    }
    Ok(run)
}

/// Either the external cancel flag or an internal halt request.
struct StopFlag<'a> {
    cancel: &'a AtomicBool,
    halted: &'a AtomicBool,
}

impl<'a> StopFlag<'a> {
    fn flag(&self) -> &'a AtomicBool {
        self.cancel
    }

    fn raised(&self) -> bool {
        self.cancel.load(Ordering::SeqCst) || self.halted.load(Ordering::SeqCst)
    }
}

/// Summary written next to every run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub status: String,
    pub config_hash: String,
    pub counts: BTreeMap<String, serde_json::Value>,
    pub outputs: Vec<String>,
    pub elapsed_ms: u64,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const CLAIMS_FILE: &str = "claims.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<(), LoopError> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|source| LoopError::Io { path, source })
    }
}

fn ensure_dir(dir: &Path) -> Result<(), LoopError> {
    fs::create_dir_all(dir).map_err(|source| LoopError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Writes trajectories, the claims they refer to, failures and the manifest.
pub fn write_learning_outputs(
    dir: &Path,
    run: &LearningRun,
    claims: &[Claim],
    config_hash: &str,
    memory: MemorySizes,
    elapsed_ms: u64,
) -> Result<Manifest, LoopError> {
    ensure_dir(dir)?;
    let trajectories: Vec<&Trajectory> = run.episodes.iter().map(|e| &e.trajectory).collect();
    records::write_records(&dir.join(TRAJECTORIES_FILE), trajectories.iter().copied())?;
    records::write_records(&dir.join(CLAIMS_FILE), claims)?;
    records::write_records(&dir.join(FAILURES_FILE), &run.failures)?;
    let mut counts = BTreeMap::new();
    let r = &run.report;
    counts.insert("completed".into(), r.completed.into());
    counts.insert("failed".into(), r.failed.into());
    counts.insert("reflected".into(), r.reflected.into());
    counts.insert("not_started".into(), r.not_started.into());
    counts.insert("mean_advantage".into(), serde_json::json!(r.mean_advantage));
    counts.insert("memory_reflections".into(), memory.reflections.into());
    counts.insert("memory_precedents".into(), memory.precedents.into());
    counts.insert("memory_values".into(), memory.values.into());
    let manifest = Manifest {
        command: "learn".into(),
        status: if run.cancelled {
            "cancelled".into()
        } else if run.report.not_started > 0 {
            "halted".into()
        } else {
            "complete".into()
        },
        config_hash: config_hash.to_string(),
        counts,
        outputs: vec![TRAJECTORIES_FILE.into(), CLAIMS_FILE.into(), FAILURES_FILE.into()],
        elapsed_ms,
    };
    manifest.write(dir)?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertRecord {
    pub trajectory_id: String,
    pub claim: Claim,
    pub target: String,
    pub advantage: f64,
    pub verdict: Label,
    pub gold: Label,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExpertDataset {
    pub records: Vec<ExpertRecord>,
}

/// Keeps trajectories with a positive advantage and a correct verdict.
/// Gold labels come from `claims`, joined on claim id.
pub fn curate(trajectories: &[Trajectory], claims: &[Claim]) -> Result<ExpertDataset, LoopError> {
    let by_id: HashMap<&str, &Claim> = claims.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for t in trajectories {
        if !seen.insert(t.id.as_str()) {
            continue;
        }
        let report = t
            .advantage
            .as_ref()
            .ok_or_else(|| LoopError::Curation(format!("trajectory {} has no advantage", t.id)))?;
        let claim = by_id
            .get(t.claim_id.as_str())
            .ok_or_else(|| LoopError::Curation(format!("trajectory {}: claim {} not found", t.id, t.claim_id)))?;
        let gold = claim
            .gold_label
            .ok_or_else(|| LoopError::Curation(format!("trajectory {}: claim {} has no gold label", t.id, t.claim_id)))?;
        let Some(verdict) = t.verdict.as_ref().map(|v| v.label) else {
            continue;
        };
        if report.advantage > 0.0 && verdict == gold {
            records.push(ExpertRecord {
                trajectory_id: t.id.clone(),
                claim: (*claim).clone(),
                target: t.linearize_target()?,
                advantage: report.advantage,
                verdict,
                gold,
            });
        }
    }
    if records.is_empty() {
        tracing::warn!(input = trajectories.len(), "curation kept no trajectories");
    }
    Ok(ExpertDataset { records })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftMeta {
    pub advantage: f64,
    pub claim_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftRecord {
    pub prompt: String,
    pub completion: String,
    pub meta: SftMeta,
}

impl SftRecord {
    pub fn from_expert(r: &ExpertRecord) -> Self {
        SftRecord {
            prompt: r.claim.render_block(),
            completion: r.target.clone(),
            meta: SftMeta {
                advantage: r.advantage,
                claim_id: r.claim.id.clone(),
            },
        }
    }
}

/// Writes one prompt/completion record per expert record.
pub fn export_sft(dataset: &ExpertDataset, path: &Path) -> Result<usize, LoopError> {
    if let Some(bad) = dataset.records.iter().find(|r| r.target.trim().is_empty()) {
        return Err(LoopError::Export(format!(
            "record for trajectory {} has an empty target",
            bad.trajectory_id
        )));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let sft: Vec<SftRecord> = dataset.records.iter().map(SftRecord::from_expert).collect();
    Ok(records::write_records(path, &sft)?)
}

pub fn read_sft(path: &Path) -> Result<Vec<SftRecord>, LoopError> {
    Ok(records::read_records(path)?)
}

#[derive(Clone, Debug)]
pub struct Detection {
    pub verdict: Verdict,
    pub trajectory: Trajectory,
    /// The initial score, then the re-score of the revision if one happened.
    pub scores: Vec<PreemptiveScore>,
    pub initial_strategy: VerificationStrategy,
    pub reflection: Option<Reflection>,
}

impl Detection {
    pub fn corrected(&self) -> bool {
        self.reflection.is_some()
    }
}

/// plan, score, and when the score is below threshold reflect once and
/// re-plan with that feedback; then execute and read the verdict.
pub fn detect(rt: &Runtime, agents: &Agents, claim: &Claim) -> Result<Detection, LoopError> {
    let theta = rt.config.correction.theta_corr;
    let key = rt.embedder.embed(&claim.key_text())?;
    let reflections = retrieve_reflections(rt, &key)?;
    let exemplars = retrieve_values(rt, &key)?;
    let initial = agents.plan(claim, &reflections, None)?;
    let first = agents.preemptive_score(claim, &initial, &exemplars, theta)?;
    let mut scores = vec![first];
    let (strategy, reflection) = if scores[0].approved {
        (initial.clone(), None)
    } else {
        let r = agents.reflect(&ReflectInput::Rejection {
            claim,
            strategy: &initial,
            score: &scores[0],
        })?;
        let revised = agents.plan(claim, &reflections, Some((&r, &initial)))?;
        let rescore = agents.preemptive_score(claim, &revised, &exemplars, theta)?;
        tracing::info!(
            claim = %claim.id,
            initial = scores[0].score,
            revised = rescore.score,
            threshold = theta,
            "strategy revised"
        );
        scores.push(rescore);
        if rt.config.correction.online_memory {
            rt.memories
                .reflections
                .write()
                .unwrap()
                .insert(reflection_record(claim, &r, key.clone()))?;
        }
        (revised, Some(r))
    };
    let trajectory = execute(rt, agents, claim, strategy, &key)?;
    let verdict = trajectory
        .verdict
        .clone()
        .ok_or_else(|| CoreError::IncompleteTrajectory(format!("trajectory {} has no verdict", trajectory.id)))?;
    Ok(Detection {
        verdict,
        trajectory,
        scores,
        initial_strategy: initial,
        reflection,
    })
}

/// One line of a verdict file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRecord {
    pub claim_id: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Label>,
    pub n_steps: usize,
    pub corrected: bool,
    pub scores: Vec<PreemptiveScore>,
    pub trajectory_id: String,
}

impl VerdictRecord {
    pub fn new(claim: &Claim, d: &Detection) -> Self {
        VerdictRecord {
            claim_id: claim.id.clone(),
            label: d.verdict.label,
            evidence: d.verdict.evidence.clone(),
            gold: claim.gold_label,
            n_steps: d.trajectory.steps.len(),
            corrected: d.corrected(),
            scores: d.scores.clone(),
            trajectory_id: d.trajectory.id.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DetectionRun {
    /// Per input claim; `None` when never started.
    pub results: Vec<Option<Result<Detection, String>>>,
    pub cancelled: bool,
}

impl DetectionRun {
    pub fn verdicts(&self, claims: &[Claim]) -> Vec<VerdictRecord> {
        claims
            .iter()
            .zip(&self.results)
            .filter_map(|(c, r)| match r {
                Some(Ok(d)) => Some(VerdictRecord::new(c, d)),
                _ => None,
            })
            .collect()
    }

    pub fn failures(&self, claims: &[Claim]) -> Vec<Failure> {
        claims
            .iter()
            .zip(&self.results)
            .filter_map(|(c, r)| match r {
                Some(Err(e)) => Some(Failure {
                    claim_id: c.id.clone(),
                    error: e.clone(),
                }),
                _ => None,
            })
            .collect()
    }

    pub fn trajectories(&self) -> Vec<&Trajectory> {
        self.results
            .iter()
            .filter_map(|r| match r {
                Some(Ok(d)) => Some(&d.trajectory),
                _ => None,
            })
            .collect()
    }
}

/// Detects every claim; failures are recorded per claim.
pub fn run_detection(rt: &Runtime, agents: &Agents, claims: &[Claim], cancel: &AtomicBool) -> Result<DetectionRun, LoopError> {
    if claims.is_empty() {
        return Err(LoopError::EmptyDataset);
    }
    let results = run_pool(claims, rt.config.learning.concurrency, cancel, |claim| {
        detect(rt, agents, claim).map_err(|e| {
            tracing::warn!(claim = %claim.id, error = %e, "detection failed");
            e.to_string()
        })
    });
    Ok(DetectionRun {
        results,
        cancelled: cancel.load(Ordering::SeqCst),
    })
}
