//! The episode state machine: reset, step, finalize.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::action::{
    parse_model_output, rejection_message, render_action_result, validate_action, ActionEnvelope,
    ActionKind, ActionValidation, ParseFailure, ParseResult,
};
use crate::backend::{ActionResult, BrowserSession};
use crate::config::EpisodeConfig;
use crate::dom::{serialize_dom, DomSnapshot, IndexedElementMap};
use crate::error::{EpisodeError, SessionLost};
use crate::prompt::{assemble_messages, HistoryStep, MessageBundle, PageState, StepInfo};
use crate::reward::step_format_reward;
use crate::task::TaskConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Running,
    Terminated,
    Truncated,
}

/// Why an episode stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Done,
    MaxSteps,
    ConsecutiveFailures,
    BackendLost,
    PolicyTimeout,
    ProtocolViolation,
    /// A new reset arrived while the episode was still running.
    Superseded,
    /// The driving connection closed or went idle mid-episode.
    Closed,
}

impl EndReason {
    pub fn as_str(self) -> &'static str {
        match self {
            EndReason::Done => "done",
            EndReason::MaxSteps => "max_steps",
            EndReason::ConsecutiveFailures => "consecutive_failures",
            EndReason::BackendLost => "backend_lost",
            EndReason::PolicyTimeout => "policy_timeout",
            EndReason::ProtocolViolation => "protocol_violation",
            EndReason::Superseded => "superseded",
            EndReason::Closed => "closed",
        }
    }
}

/// What the policy sees before choosing its next turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub bundle: MessageBundle,
    pub user_message: String,
    pub dom_text: String,
    pub elements: IndexedElementMap,
    pub digest: ObservationDigest,
}

/// Compact, loggable identity of an observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationDigest {
    pub sha256: String,
    pub url: String,
    pub dom_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screenshot: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeInfo {
    pub trace_id: String,
    pub step: u32,
    pub parse_ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_failure: Option<ParseFailure>,
    /// Per-action validation for the envelope, in order.
    #[serde(default)]
    pub validation: Vec<ActionValidation>,
    /// Per-action success for every action that was attempted.
    pub action_success: Vec<bool>,
    /// Actions not attempted because an earlier one changed the page.
    #[serde(default)]
    pub skipped_actions: usize,
    /// The step counted as a failure.
    pub failure: bool,
    pub consecutive_failures: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<EndReason>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fence_stripped: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ignored_fields: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: OutcomeInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutedAction {
    pub action: ActionKind,
    pub validation: ActionValidation,
    /// `None` when the action was skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ActionResult>,
    pub rendered: String,
}

/// One step of a finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    /// Digest of the observation the turn was produced from.
    pub observation: ObservationDigest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_model_output: Option<String>,
    pub parse_result: ParseResult,
    pub actions: Vec<ExecutedAction>,
    pub reward_component: f64,
    pub failure: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<EndReason>,
}

impl StepRecord {
    pub fn format_valid(&self) -> bool {
        self.parse_result.is_ok()
    }
}

/// Single-owner view of a running episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub task_id: String,
    pub step_index: u32,
    pub consecutive_failures: u32,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<EndReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_success: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub wall_ms: u64,
    pub step_wall_ms: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub trace_id: String,
    pub seed: u64,
    pub initial_observation: ObservationDigest,
    pub steps: Vec<StepRecord>,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<EndReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_success: Option<bool>,
    pub timings: Timings,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn step_validity(&self) -> Vec<bool> {
        self.steps.iter().map(StepRecord::format_valid).collect()
    }

    /// Text summary handed to the judge.
    pub fn digest_text(&self) -> String {
        let mut out = format!("start: {}\n", self.initial_observation.url);
        for s in &self.steps {
            out.push_str(&format!("step {} @ {}: ", s.step, s.observation.url));
            match &s.parse_result {
                Err(f) => out.push_str(&format!("invalid output ({})", f.reason.as_str())),
                Ok(_) => {
                    let parts: Vec<&str> = s.actions.iter().map(|a| a.rendered.as_str()).collect();
                    out.push_str(&parts.join("; "));
                }
            }
            out.push('\n');
        }
        let end = self.reason.map(EndReason::as_str).unwrap_or("running");
        out.push_str(&format!("end: {end}"));
        out
    }
}

fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

pub struct Episode {
    config: EpisodeConfig,
    task: TaskConfig,
    session: Box<dyn BrowserSession>,
    state: EpisodeState,
    history: Vec<HistoryStep>,
    snapshot: DomSnapshot,
    dom_text: String,
    elements: IndexedElementMap,
    read_state: Option<String>,
    observation: Observation,
    initial: ObservationDigest,
    records: Vec<StepRecord>,
    started: Instant,
    step_wall_ms: Vec<u64>,
}

impl std::fmt::Debug for Episode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Episode")
            .field("task", &self.task.id)
            .field("state", &self.state)
            .finish()
    }
}

impl Episode {
    /// Navigate the session to the task's entry URL and capture the first
    /// observation.
    pub async fn start(
        task: TaskConfig,
        config: EpisodeConfig,
        mut session: Box<dyn BrowserSession>,
    ) -> Result<(Episode, Observation), (EpisodeError, Box<dyn BrowserSession>)> {
        if let Err(e) = task.validate() {
            return Err((e.into(), session));
        }
        if let Err(e) = config.validate() {
            return Err((e.into(), session));
        }
        let nav = ActionKind::Navigate {
            url: task.entry_url.clone(),
            new_tab: false,
        };
        match session.execute_action(&nav, &IndexedElementMap::default()).await {
            Ok(r) if r.ok => {}
            Ok(r) => return Err((EpisodeError::Init(r.message), session)),
            Err(e) => return Err((EpisodeError::Init(e.to_string()), session)),
        }
        let snapshot = match session.capture_state().await {
            Ok(s) => s,
            Err(e) => return Err((EpisodeError::Init(e.to_string()), session)),
        };
        let (dom_text, elements) = serialize_dom(&snapshot, None);
        let state = EpisodeState {
            task_id: task.id.clone(),
            step_index: 0,
            consecutive_failures: 0,
            phase: Phase::Running,
            reason: None,
            final_answer: None,
            declared_success: None,
        };
        let mut ep = Episode {
            config,
            task,
            session,
            state,
            history: Vec::new(),
            snapshot,
            dom_text,
            elements,
            read_state: None,
            observation: placeholder_observation(),
            initial: placeholder_observation().digest,
            records: Vec::new(),
            started: Instant::now(),
            step_wall_ms: Vec::new(),
        };
        ep.observation = ep.build_observation();
        ep.initial = ep.observation.digest.clone();
        let obs = ep.observation.clone();
        Ok((ep, obs))
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    pub fn task(&self) -> &TaskConfig {
        &self.task
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn trace_id(&self) -> &str {
        &self.session.handle().trace_id
    }

    pub fn observation(&self) -> &Observation {
        &self.observation
    }

    /// Step records so far.
    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn is_running(&self) -> bool {
        self.state.phase == Phase::Running
    }

    fn build_observation(&self) -> Observation {
        let bundle = assemble_messages(
            self.config.prompt_mode,
            self.config.max_actions_per_step,
            &self.task,
            &self.history,
            PageState {
                dom_text: &self.dom_text,
                elements: &self.elements,
                snapshot: &self.snapshot,
            },
            StepInfo {
                step_number: self.state.step_index,
                max_steps: self.config.max_steps,
            },
            self.read_state.as_deref(),
        );
        let user_message = bundle.user_message();
        let mut hashed = user_message.clone().into_bytes();
        if let Some(s) = &bundle.screenshot {
            hashed.push(0);
            hashed.extend_from_slice(s.as_bytes());
        }
        let digest = ObservationDigest {
            sha256: sha256_hex(&hashed),
            url: self.snapshot.current_url.clone(),
            dom_text: self.dom_text.clone(),
            screenshot: bundle.screenshot.clone(),
        };
        Observation {
            bundle,
            user_message,
            dom_text: self.dom_text.clone(),
            elements: self.elements.clone(),
            digest,
        }
    }

    /// Parse raw model text under the episode's mode and limits, then step.
    pub async fn step_raw(&mut self, raw: &str) -> Result<StepOutcome, EpisodeError> {
        let parsed = parse_model_output(raw, self.config.prompt_mode, &self.config);
        self.step_inner(parsed, Some(raw.to_string())).await
    }

    pub async fn step(&mut self, parsed: ParseResult) -> Result<StepOutcome, EpisodeError> {
        self.step_inner(parsed, None).await
    }

    /// Step with an already parsed turn, keeping `raw` in the record. Used by
    /// replay, where the recorded parse is authoritative.
    pub async fn step_recorded(
        &mut self,
        parsed: ParseResult,
        raw: Option<String>,
    ) -> Result<StepOutcome, EpisodeError> {
        self.step_inner(parsed, raw).await
    }

    async fn step_inner(
        &mut self,
        parsed: ParseResult,
        raw: Option<String>,
    ) -> Result<StepOutcome, EpisodeError> {
        if self.state.phase != Phase::Running {
            return Err(EpisodeError::Contract(format!(
                "step on episode `{}` after it ended",
                self.task.id
            )));
        }
        let t0 = Instant::now();
        self.state.step_index += 1;
        let n = self.state.step_index;
        let reward = step_format_reward(parsed.is_ok());
        let seen = self.observation.digest.clone();
        self.read_state = None;

        let mut executed = Vec::new();
        let mut lost: Option<SessionLost> = None;
        let mut done: Option<(String, bool)> = None;
        let failure;
        match &parsed {
            Err(f) => {
                failure = true;
                self.history.push(HistoryStep {
                    step_number: n,
                    system_note: Some(format!(
                        "Step {n}: your output could not be used ({}). {}",
                        f.reason.as_str(),
                        f.detail
                    )),
                    ..Default::default()
                });
            }
            Ok(env) => {
                let (acts, l, d) = self.execute(env).await;
                executed = acts;
                lost = l;
                done = d;
                let attempted: Vec<bool> = executed
                    .iter()
                    .filter_map(|a: &ExecutedAction| a.result.as_ref().map(|r| r.ok))
                    .collect();
                failure = lost.is_none() && !attempted.iter().any(|ok| *ok);
                self.history.push(HistoryStep {
                    step_number: n,
                    evaluation_previous_goal: env.evaluation_previous_goal.clone(),
                    memory: Some(env.memory.clone()),
                    next_goal: env.next_goal.clone(),
                    action_results: executed
                        .iter()
                        .filter(|a| a.result.is_some())
                        .map(|a| a.rendered.clone())
                        .collect(),
                    system_note: None,
                });
            }
        }

        if failure {
            self.state.consecutive_failures += 1;
        } else {
            self.state.consecutive_failures = 0;
        }

        let mut reason = None;
        if lost.is_some() {
            self.state.phase = Phase::Truncated;
            reason = Some(EndReason::BackendLost);
        } else if let Some((text, success)) = done {
            self.state.phase = Phase::Terminated;
            self.state.final_answer = Some(text);
            self.state.declared_success = Some(success);
            reason = Some(EndReason::Done);
        } else if self.state.consecutive_failures >= self.config.max_consecutive_failures {
            self.state.phase = Phase::Truncated;
            reason = Some(EndReason::ConsecutiveFailures);
        } else if n >= self.config.max_steps {
            self.state.phase = Phase::Truncated;
            reason = Some(EndReason::MaxSteps);
        }
        self.state.reason = reason;

        if parsed.is_ok() && lost.is_none() {
            match self.session.capture_state().await {
                Ok(snap) => {
                    let same_url = snap.current_url == self.snapshot.current_url;
                    let prev = same_url.then_some(&self.elements);
                    let (text, map) = serialize_dom(&snap, prev);
                    self.snapshot = snap;
                    self.dom_text = text;
                    self.elements = map;
                }
                Err(e) => {
                    lost = Some(e);
                    self.state.phase = Phase::Truncated;
                    self.state.reason = Some(EndReason::BackendLost);
                    reason = Some(EndReason::BackendLost);
                }
            }
        }
        if let Some(e) = &lost {
            tracing::warn!(task = %self.task.id, error = %e, "backend lost mid-episode");
        }
        self.observation = self.build_observation();

        let (fence_stripped, ignored_fields, validation) = match &parsed {
            Ok(env) => (
                env.fence_stripped,
                env.ignored_fields.clone(),
                executed.iter().map(|a| a.validation).collect(),
            ),
            Err(_) => (false, Vec::new(), Vec::new()),
        };
        let info = OutcomeInfo {
            trace_id: self.trace_id().to_string(),
            step: n,
            parse_ok: parsed.is_ok(),
            parse_failure: parsed.as_ref().err().cloned(),
            validation,
            action_success: executed
                .iter()
                .filter_map(|a| a.result.as_ref().map(|r| r.ok))
                .collect(),
            skipped_actions: executed.iter().filter(|a| a.result.is_none()).count(),
            failure,
            consecutive_failures: self.state.consecutive_failures,
            reason,
            fence_stripped,
            ignored_fields,
        };
        self.records.push(StepRecord {
            step: n,
            observation: seen,
            raw_model_output: raw,
            parse_result: parsed,
            actions: executed,
            reward_component: reward,
            failure,
            reason,
        });
        self.step_wall_ms.push(t0.elapsed().as_millis() as u64);
        Ok(StepOutcome {
            observation: self.observation.clone(),
            reward,
            terminated: self.state.phase == Phase::Terminated,
            truncated: self.state.phase == Phase::Truncated,
            info,
        })
    }

    async fn execute(
        &mut self,
        env: &ActionEnvelope,
    ) -> (Vec<ExecutedAction>, Option<SessionLost>, Option<(String, bool)>) {
        let mut out = Vec::with_capacity(env.actions.len());
        let mut skip = false;
        let mut done = None;
        for action in &env.actions {
            let validation = validate_action(action, &self.elements);
            if skip {
                out.push(ExecutedAction {
                    action: action.clone(),
                    validation,
                    result: None,
                    rendered: "Skipped: page changed".into(),
                });
                continue;
            }
            let result = match validation {
                ActionValidation::Invalid(reason) => {
                    ActionResult::failure(rejection_message(action, reason))
                }
                ActionValidation::Valid => {
                    match self.session.execute_action(action, &self.elements).await {
                        Ok(r) => r,
                        Err(e) => return (out, Some(e), None),
                    }
                }
            };
            if result.ok {
                if let ActionKind::Done { text, success, .. } = action {
                    done = Some((text.clone(), *success));
                }
                if let (ActionKind::Extract { .. }, Some(x)) = (action, &result.extracted) {
                    self.read_state = Some(x.clone());
                }
            }
            if result.navigated {
                skip = true;
            }
            out.push(ExecutedAction {
                action: action.clone(),
                validation,
                rendered: render_action_result(action, &result),
                result: Some(result),
            });
        }
        (out, None, done)
    }

    /// End a running episode from outside (timeouts, protocol errors, resets).
    pub fn abort(&mut self, reason: EndReason) {
        if self.state.phase == Phase::Running {
            self.state.phase = Phase::Truncated;
            self.state.reason = Some(reason);
        }
    }

    /// Release the browser session. Safe to call more than once.
    pub async fn release(&mut self) {
        self.session.release().await;
    }

    pub fn finalize(&self) -> Result<Trajectory, EpisodeError> {
        if self.state.phase == Phase::Running {
            return Err(EpisodeError::Contract(format!(
                "finalize on running episode `{}`",
                self.task.id
            )));
        }
        Ok(Trajectory {
            task_id: self.task.id.clone(),
            trace_id: self.trace_id().to_string(),
            seed: self.config.seed,
            initial_observation: self.initial.clone(),
            steps: self.records.clone(),
            phase: self.state.phase,
            reason: self.state.reason,
            final_answer: self.state.final_answer.clone(),
            declared_success: self.state.declared_success,
            timings: Timings {
                wall_ms: self.started.elapsed().as_millis() as u64,
                step_wall_ms: self.step_wall_ms.clone(),
            },
        })
    }
}

fn placeholder_observation() -> Observation {
    Observation {
        bundle: MessageBundle {
            system_prompt: String::new(),
            history_block: String::new(),
            user_request: String::new(),
            step_info: StepInfo {
                step_number: 0,
                max_steps: 0,
            },
            browser_state_block: String::new(),
            screenshot: None,
            read_state_block: None,
        },
        user_message: String::new(),
        dom_text: String::new(),
        elements: IndexedElementMap::default(),
        digest: ObservationDigest {
            sha256: String::new(),
            url: String::new(),
            dom_text: String::new(),
            screenshot: None,
        },
    }
}
