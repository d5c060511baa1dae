//! Policies that turn observations into raw model output.
//!
//! Scripted policies run in-process and make the engine testable without any
//! model: `oracle` replays a task's recorded solution, `random` acts
//! uniformly at random, `garbage` never produces valid JSON, `never_done`
//! waits forever, and `silent` never replies at all.

use std::future::pending;

use async_trait::async_trait;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::action::{ActionEnvelope, ActionKind, SearchEngine, ACTION_KEYS};
use crate::config::PromptMode;
use crate::dom::collapse_whitespace;
use crate::episode::Observation;
use crate::synthetic::NOT_FOUND_ANSWER;
use crate::task::{OracleAction, OracleScript, TaskConfig};
use crate::wire::EpisodeEnd;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("policy disconnected: {0}")]
    Disconnected(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("policy unavailable: {0}")]
    Unavailable(String),
}

#[async_trait]
pub trait Policy: Send {
    /// Raw model output for the current observation.
    async fn act(&mut self, observation: &Observation) -> Result<String, PolicyError>;

    /// Called once after the episode ended and was evaluated.
    async fn finish(&mut self, _end: &EpisodeEnd) {}
}

/// Everything a scripted policy may know about its episode.
#[derive(Debug, Clone)]
pub struct PolicyContext {
    pub task: TaskConfig,
    pub oracle: Option<OracleScript>,
    pub mode: PromptMode,
    pub seed: u64,
}

pub const SCRIPTED_POLICIES: [&str; 5] = ["oracle", "random", "garbage", "never_done", "silent"];

/// Build a scripted policy by name.
pub fn scripted_policy(name: &str, ctx: &PolicyContext) -> Result<Box<dyn Policy>, String> {
    match name.replace('-', "_").as_str() {
        "oracle" => {
            let script = ctx
                .oracle
                .clone()
                .ok_or_else(|| format!("task `{}` has no oracle script", ctx.task.id))?;
            Ok(Box::new(OraclePolicy::new(script, ctx.mode)))
        }
        "random" => Ok(Box::new(RandomPolicy::new(ctx.seed, ctx.mode))),
        "garbage" => Ok(Box::new(GarbagePolicy)),
        "never_done" => Ok(Box::new(NeverDonePolicy { mode: ctx.mode })),
        "silent" => Ok(Box::new(SilentPolicy)),
        other => Err(format!(
            "unknown scripted policy `{other}` (expected one of {})",
            SCRIPTED_POLICIES.join(", ")
        )),
    }
}

fn envelope_json(mode: PromptMode, actions: Vec<ActionKind>, memory: &str) -> String {
    ActionEnvelope::for_mode(mode, actions)
        .with_memory(memory)
        .to_contract_json()
}

/// Replays a symbolic oracle script, resolving element references against
/// the live observation.
pub struct OraclePolicy {
    script: OracleScript,
    turn: usize,
    mode: PromptMode,
}

impl OraclePolicy {
    pub fn new(script: OracleScript, mode: PromptMode) -> Self {
        OraclePolicy {
            script,
            turn: 0,
            mode,
        }
    }

    fn resolve(op: &OracleAction, obs: &Observation) -> ActionKind {
        let find = |pred: &dyn Fn(&crate::dom::IndexedElement) -> bool| {
            obs.elements.entries.iter().find(|e| pred(e)).map(|e| e.index)
        };
        match op {
            OracleAction::ClickText { text } => {
                match find(&|e| collapse_whitespace(&e.text) == *text) {
                    Some(index) => ActionKind::Click { index },
                    None => ActionKind::FindText { text: text.clone() },
                }
            }
            OracleAction::InputInto { placeholder, text } => {
                match find(&|e| e.attributes.get("placeholder") == Some(placeholder)) {
                    Some(index) => ActionKind::Input {
                        index,
                        text: text.clone(),
                        clear: true,
                    },
                    None => ActionKind::FindText {
                        text: placeholder.clone(),
                    },
                }
            }
            OracleAction::Select { name, option } => {
                match find(&|e| e.attributes.get("name") == Some(name)) {
                    Some(index) => ActionKind::SelectDropdown {
                        index,
                        text: option.clone(),
                    },
                    None => ActionKind::FindText { text: name.clone() },
                }
            }
            OracleAction::Wait { seconds } => ActionKind::Wait { seconds: *seconds },
            OracleAction::SolveCaptcha => ActionKind::SolveSliderCaptcha {},
            OracleAction::Done { answer, evidence } => {
                if obs.dom_text.contains(evidence.as_str()) {
                    ActionKind::Done {
                        text: answer.clone(),
                        success: true,
                        files_to_display: Vec::new(),
                    }
                } else {
                    ActionKind::Done {
                        text: NOT_FOUND_ANSWER.into(),
                        success: false,
                        files_to_display: Vec::new(),
                    }
                }
            }
        }
    }
}

#[async_trait]
impl Policy for OraclePolicy {
    async fn act(&mut self, obs: &Observation) -> Result<String, PolicyError> {
        let actions = match self.script.get(self.turn) {
            Some(turn) => turn.iter().map(|op| Self::resolve(op, obs)).collect(),
            None => vec![ActionKind::Done {
                text: NOT_FOUND_ANSWER.into(),
                success: false,
                files_to_display: Vec::new(),
            }],
        };
        self.turn += 1;
        Ok(envelope_json(self.mode, actions, &format!("oracle turn {}", self.turn)))
    }
}

/// Picks one of the 19 actions uniformly per turn with random parameters.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
    mode: PromptMode,
}

const WORDS: [&str; 8] = [
    "status", "license", "price", "report", "alpha", "order", "verify", "search",
];

impl RandomPolicy {
    pub fn new(seed: u64, mode: PromptMode) -> Self {
        RandomPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f0d_a17d),
            mode,
        }
    }

    fn word(&mut self) -> String {
        WORDS.choose(&mut self.rng).expect("words").to_string()
    }

    fn index(&mut self, obs: &Observation) -> u32 {
        match obs.elements.entries.choose(&mut self.rng) {
            Some(e) if self.rng.gen_bool(0.9) => e.index,
            _ => self.rng.gen_range(0..64),
        }
    }

    fn tab(&mut self, obs: &Observation) -> String {
        let tabs: Vec<&str> = obs
            .bundle
            .browser_state_block
            .lines()
            .filter_map(|l| l.strip_prefix("Tab "))
            .filter_map(|l| l.split([':', ' ']).next())
            .collect();
        tabs.choose(&mut self.rng).map_or("t0".into(), |s| s.to_string())
    }

    fn pick(&mut self, obs: &Observation) -> ActionKind {
        let key = *ACTION_KEYS.choose(&mut self.rng).expect("action keys");
        match key {
            "click" => ActionKind::Click {
                index: self.index(obs),
            },
            "input" => ActionKind::Input {
                index: self.index(obs),
                text: self.word(),
                clear: self.rng.gen(),
            },
            "done" => ActionKind::Done {
                text: self.word(),
                success: self.rng.gen(),
                files_to_display: Vec::new(),
            },
            "search" => ActionKind::Search {
                query: self.word(),
                engine: *[SearchEngine::Duckduckgo, SearchEngine::Google, SearchEngine::Bing]
                    .choose(&mut self.rng)
                    .expect("engines"),
            },
            "navigate" => ActionKind::Navigate {
                url: format!("https://{}.test/", self.word()),
                new_tab: self.rng.gen(),
            },
            "scroll" => ActionKind::Scroll {
                down: self.rng.gen(),
                pages: f64::from(self.rng.gen_range(1..4u32)) / 2.0,
                index: None,
            },
            "wait" => ActionKind::Wait {
                seconds: self.rng.gen_range(1..4),
            },
            "go_back" => ActionKind::GoBack {},
            "refresh" => ActionKind::Refresh {},
            "switch" => ActionKind::Switch {
                tab_id: self.tab(obs),
            },
            "send_keys" => ActionKind::SendKeys {
                keys: if self.rng.gen() { "Enter".into() } else { "Tab".into() },
            },
            "extract" => ActionKind::Extract {
                query: self.word(),
                extract_links: self.rng.gen(),
                start_from_char: 0,
            },
            "close" => ActionKind::Close {
                tab_id: self.tab(obs),
            },
            "find_text" => ActionKind::FindText { text: self.word() },
            "screenshot" => ActionKind::Screenshot {},
            "solve_slider_captcha" => ActionKind::SolveSliderCaptcha {},
            "dropdown_options" => ActionKind::DropdownOptions {
                index: self.index(obs),
            },
            "select_dropdown" => ActionKind::SelectDropdown {
                index: self.index(obs),
                text: self.word(),
            },
            _ => ActionKind::Evaluate {
                code: "document.title".into(),
            },
        }
    }
}

#[async_trait]
impl Policy for RandomPolicy {
    async fn act(&mut self, obs: &Observation) -> Result<String, PolicyError> {
        let action = self.pick(obs);
        Ok(envelope_json(self.mode, vec![action], "random"))
    }
}

pub struct GarbagePolicy;

#[async_trait]
impl Policy for GarbagePolicy {
    async fn act(&mut self, _: &Observation) -> Result<String, PolicyError> {
        Ok("I think I should click the button now.".into())
    }
}

/// Always a valid, successful, non-terminal turn.
pub struct NeverDonePolicy {
    pub mode: PromptMode,
}

#[async_trait]
impl Policy for NeverDonePolicy {
    async fn act(&mut self, _: &Observation) -> Result<String, PolicyError> {
        Ok(envelope_json(self.mode, vec![ActionKind::Wait { seconds: 1 }], "waiting"))
    }
}

pub struct SilentPolicy;

#[async_trait]
impl Policy for SilentPolicy {
    async fn act(&mut self, _: &Observation) -> Result<String, PolicyError> {
        pending().await
    }
}

/// Returns the given outputs in order, then repeats the last one.
pub struct SequencePolicy {
    outputs: Vec<String>,
    next: usize,
}

impl SequencePolicy {
    pub fn new(outputs: Vec<String>) -> Self {
        SequencePolicy { outputs, next: 0 }
    }
}

#[async_trait]
impl Policy for SequencePolicy {
    async fn act(&mut self, _: &Observation) -> Result<String, PolicyError> {
        let i = self.next.min(self.outputs.len().saturating_sub(1));
        self.next += 1;
        self.outputs
            .get(i)
            .cloned()
            .ok_or_else(|| PolicyError::Disconnected("no outputs".into()))
    }
}
