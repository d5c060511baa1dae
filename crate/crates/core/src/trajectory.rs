//! Trajectory JSONL records.
//!
//! One line per step, then a single footer line. Lines contain no wall-clock
//! data unless explicitly requested, so a seeded mock run always writes the
//! same bytes.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::action::{
    ActionEnvelope, ActionKind, ActionValidation, ParseFailure, ParseFailureReason, ParseResult,
};
use crate::backend::{ActionResult, BackendKind};
use crate::config::{EpisodeConfig, PromptMode};
use crate::episode::{EndReason, ObservationDigest, Phase, StepRecord, Trajectory};
use crate::eval::Verdict;
use crate::reward::RewardBreakdown;
use crate::task::TaskConfig;

pub const TRAJECTORY_SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TrajectoryLine {
    Step(StepLine),
    Footer(Box<Footer>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLine {
    pub step: u32,
    pub observation_digest: ObservationDigest,
    pub raw_model_output: Option<String>,
    pub parse_result: ParseRecord,
    pub actions: Vec<ActionKind>,
    pub results: Vec<ResultRecord>,
    pub reward_component: f64,
    pub flags: StepFlags,
}

/// Parse outcome without the action list, which sits beside it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseRecord {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<PromptMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thinking: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation_previous_goal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_goal: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fence_stripped: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ignored_fields: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<ParseFailureReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub validation: ActionValidation,
    pub skipped: bool,
    pub result: Option<ActionResult>,
    pub rendered: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFlags {
    pub failure: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<EndReason>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FooterTimings {
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub step_wall_ms: Vec<u64>,
}

/// What replay needs to rebuild the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayInfo {
    pub backend: BackendKind,
    pub run_seed: u64,
    pub rollout: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_digest: Option<String>,
    pub task: TaskConfig,
    pub config: EpisodeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footer {
    pub schema_version: String,
    pub task_id: String,
    pub trace_id: String,
    pub verdict: Verdict,
    pub reward_breakdown: RewardBreakdown,
    pub timings: FooterTimings,
    pub phase: Phase,
    pub reason: Option<EndReason>,
    pub final_answer: Option<String>,
    pub declared_success: Option<bool>,
    pub initial_observation: ObservationDigest,
    pub replay: ReplayInfo,
}

impl Footer {
    pub fn new(
        traj: &Trajectory,
        verdict: Verdict,
        reward_breakdown: RewardBreakdown,
        replay: ReplayInfo,
        wall_times: bool,
    ) -> Self {
        Footer {
            schema_version: TRAJECTORY_SCHEMA_VERSION.into(),
            task_id: traj.task_id.clone(),
            trace_id: traj.trace_id.clone(),
            verdict,
            reward_breakdown,
            timings: FooterTimings {
                steps: traj.len(),
                wall_ms: wall_times.then_some(traj.timings.wall_ms),
                step_wall_ms: if wall_times {
                    traj.timings.step_wall_ms.clone()
                } else {
                    Vec::new()
                },
            },
            phase: traj.phase,
            reason: traj.reason,
            final_answer: traj.final_answer.clone(),
            declared_success: traj.declared_success,
            initial_observation: traj.initial_observation.clone(),
            replay,
        }
    }
}

impl StepLine {
    pub fn from_record(rec: &StepRecord) -> Self {
        let parse_result = match &rec.parse_result {
            Ok(env) => ParseRecord {
                ok: true,
                mode: Some(env.mode),
                thinking: env.thinking.clone(),
                evaluation_previous_goal: env.evaluation_previous_goal.clone(),
                memory: Some(env.memory.clone()),
                next_goal: env.next_goal.clone(),
                fence_stripped: env.fence_stripped,
                ignored_fields: env.ignored_fields.clone(),
                reason: None,
                detail: None,
            },
            Err(f) => ParseRecord {
                ok: false,
                mode: None,
                thinking: None,
                evaluation_previous_goal: None,
                memory: None,
                next_goal: None,
                fence_stripped: false,
                ignored_fields: Vec::new(),
                reason: Some(f.reason),
                detail: Some(f.detail.clone()),
            },
        };
        let actions = match &rec.parse_result {
            Ok(env) => env.actions.clone(),
            Err(_) => Vec::new(),
        };
        StepLine {
            step: rec.step,
            observation_digest: rec.observation.clone(),
            raw_model_output: rec.raw_model_output.clone(),
            parse_result,
            actions,
            results: rec
                .actions
                .iter()
                .map(|a| ResultRecord {
                    validation: a.validation,
                    skipped: a.result.is_none(),
                    result: a.result.clone(),
                    rendered: a.rendered.clone(),
                })
                .collect(),
            reward_component: rec.reward_component,
            flags: StepFlags {
                failure: rec.failure,
                reason: rec.reason,
            },
        }
    }

    /// Rebuild the parsed turn this line was produced from.
    pub fn to_parse_result(&self) -> Result<ParseResult, TrajectoryError> {
        let p = &self.parse_result;
        if !p.ok {
            let reason = p.reason.ok_or_else(|| {
                TrajectoryError::Malformed(format!("step {}: failed parse without reason", self.step))
            })?;
            return Ok(Err(ParseFailure {
                reason,
                detail: p.detail.clone().unwrap_or_default(),
            }));
        }
        let mode = p.mode.ok_or_else(|| {
            TrajectoryError::Malformed(format!("step {}: parsed turn without mode", self.step))
        })?;
        Ok(Ok(ActionEnvelope {
            mode,
            thinking: p.thinking.clone(),
            evaluation_previous_goal: p.evaluation_previous_goal.clone(),
            memory: p.memory.clone().unwrap_or_default(),
            next_goal: p.next_goal.clone(),
            actions: self.actions.clone(),
            fence_stripped: p.fence_stripped,
            ignored_fields: p.ignored_fields.clone(),
        }))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("malformed trajectory: {0}")]
    Malformed(String),
}

/// Serialize one record as a single line, newline included.
pub fn encode_line(line: &TrajectoryLine) -> String {
    let mut s = serde_json::to_string(line).expect("trajectory lines always serialize");
    s.push('\n');
    s
}

pub fn step_lines(traj: &Trajectory) -> String {
    traj.steps
        .iter()
        .map(|r| encode_line(&TrajectoryLine::Step(StepLine::from_record(r))))
        .collect()
}

/// Write the step lines of a finished episode, replacing any previous file.
pub fn write_steps(path: &Path, traj: &Trajectory) -> Result<(), TrajectoryError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, step_lines(traj))?;
    Ok(())
}

pub fn append_footer(path: &Path, footer: &Footer) -> Result<(), TrajectoryError> {
    let mut f = std::fs::OpenOptions::new().append(true).open(path)?;
    f.write_all(encode_line(&TrajectoryLine::Footer(Box::new(footer.clone()))).as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFile {
    pub steps: Vec<StepLine>,
    pub footer: Footer,
}

impl TrajectoryFile {
    pub fn parse(text: &str) -> Result<Self, TrajectoryError> {
        let mut steps = Vec::new();
        let mut footer = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if footer.is_some() {
                return Err(TrajectoryError::Malformed(format!(
                    "line {}: record after footer",
                    i + 1
                )));
            }
            let rec: TrajectoryLine = serde_json::from_str(line)
                .map_err(|source| TrajectoryError::Json { line: i + 1, source })?;
            match rec {
                TrajectoryLine::Step(s) => {
                    if s.step as usize != steps.len() + 1 {
                        return Err(TrajectoryError::Malformed(format!(
                            "line {}: step {} out of order",
                            i + 1,
                            s.step
                        )));
                    }
                    steps.push(s);
                }
                TrajectoryLine::Footer(f) => footer = Some(*f),
            }
        }
        let footer = footer.ok_or_else(|| TrajectoryError::Malformed("missing footer".into()))?;
        if footer.timings.steps != steps.len() {
            return Err(TrajectoryError::Malformed(format!(
                "footer reports {} steps, file has {}",
                footer.timings.steps,
                steps.len()
            )));
        }
        Ok(TrajectoryFile { steps, footer })
    }

    pub fn load(path: &Path) -> Result<Self, TrajectoryError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
