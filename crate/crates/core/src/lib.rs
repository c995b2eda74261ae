//! Tool-augmented hallucination detection runtime.
//!
//! A planner, actor, critic and reflector cooperate over pluggable chat and
//! embedding backends. The learning loop accumulates experience in three
//! embedding-keyed memories and emits trajectories; curation and export turn
//! the good ones into a fine-tuning file; the detection loop scores a proposed
//! strategy before executing it and revises it once when the score is too low.

pub mod agents;
pub mod backend;
pub mod config;
pub mod eval;
pub mod loops;
pub mod memory;
pub mod react;
pub mod records;
pub mod runtime;
pub mod tools;
pub mod types;

pub use types::{
    Action, AdvantageReport, ArgValue, Claim, Label, StateView, Step, Tool, Trajectory,
    TrajectoryBuilder, VerificationStrategy, Verdict,
};

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub(crate) fn content_digest<T: serde::Serialize + ?Sized>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(value).expect("in-memory values always serialize");
    hex::encode(Sha256::digest(&bytes))
}
