#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use leap_core::backend::{HashingEmbedder, ScriptedBackend};
use leap_core::config::{Config, EmbedderKind};
use leap_core::memory::Memories;
use leap_core::runtime::{Mode, Runtime};
use leap_core::tools::FixtureSearch;
use leap_core::{agents::Agents, Claim, Label};

pub const DIM: usize = 32;

pub fn prompts_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../prompts"))
}

pub fn config() -> Config {
    let mut c = Config::default();
    c.backend.embed_dim = DIM;
    c.backend.embedder = EmbedderKind::Hashing;
    c.paths.prompts_dir = prompts_dir();
    c
}

pub struct Harness {
    pub rt: Runtime,
    pub chat: Arc<ScriptedBackend>,
}

impl Harness {
    pub fn new(config: Config, search: FixtureSearch) -> Self {
        let chat = Arc::new(ScriptedBackend::new());
        let embedder = Arc::new(HashingEmbedder::new(config.backend.embed_dim, config.backend.embed_seed).unwrap());
        let memories = Memories::new(config.backend.embed_dim, config.learning.cap());
        let rt = Runtime::from_parts(config, chat.clone(), embedder, Box::new(search), memories).unwrap();
        Harness { rt, chat }
    }

    pub fn with_defaults() -> Self {
        Self::new(config(), FixtureSearch::default())
    }

    pub fn agents(&self, mode: Mode) -> Agents {
        self.rt.agents(mode)
    }

    /// Queues replies for the claim `tag`, consumed in call order.
    pub fn script(&self, tag: &str, replies: &[String]) {
        for r in replies {
            self.chat.push_ordinal(Some(tag), r.clone());
        }
    }
}

pub fn claim(id: &str, gold: Label) -> Claim {
    Claim::new(
        id,
        format!("Which river flows through city {id}?"),
        format!("The river through city {id} is the Example River."),
        Some(gold),
    )
    .unwrap()
}

pub fn plan_reply(name: &str) -> String {
    format!(
        "TYPE: factual lookup\nSTRATEGY: {name}\nPLAN:\n1. Search for the named entity\n2. Compare the response with the evidence\n"
    )
}

pub fn turn(thought: &str, action: &str) -> String {
    format!("Thought: {thought}\nAction: {action}\n")
}

pub fn search_turn(query: &str) -> String {
    turn("I need evidence.", &format!("web_search(\"{query}\")"))
}

pub fn answer_turn(label: Label) -> String {
    turn("The evidence settles it.", &format!("get_answer(\"{label}\", \"checked\")"))
}

pub fn reflection_reply(name: &str) -> String {
    format!(
        "DIAGNOSIS: the search was too broad\nPRINCIPLES:\n1. Search for the exact entity\nREVISED_STRATEGY:\n{}",
        plan_reply(name)
    )
}

pub fn number(v: f64) -> String {
    format!("{v}")
}
