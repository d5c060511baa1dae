//! Request and response bodies of the HTTP/JSON service API.

use serde::{Deserialize, Serialize};

use crate::eval::CategoryReport;
use crate::orchestrator::{AdvantageRecord, DirectoryReport, ReplayReport, RunReport};

pub const API_VERSION: &str = "v1";

/// A benchmark run, mirroring the `run` command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    /// Suite file path or `synthetic:<seed>:<per-category>`.
    pub suite: String,
    /// Site graph for the mock backend; overrides the suite's own reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<String>,
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default = "default_parallel")]
    pub parallel: usize,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    /// `wire` or `scripted:<name>`.
    #[serde(default = "default_policy")]
    pub policy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_group")]
    pub group_size: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_timeout_ms: Option<u64>,
}

fn default_backend() -> String {
    "mock".into()
}
fn default_parallel() -> usize {
    1
}
fn default_mode() -> String {
    "normal".into()
}
fn default_max_steps() -> u32 {
    20
}
fn default_policy() -> String {
    "wire".into()
}
fn default_group() -> u32 {
    1
}

impl RunRequest {
    pub fn new(suite: impl Into<String>) -> Self {
        RunRequest {
            suite: suite.into(),
            graph: None,
            backend: default_backend(),
            parallel: default_parallel(),
            mode: default_mode(),
            max_steps: default_max_steps(),
            out: None,
            policy: default_policy(),
            judge: None,
            seed: 0,
            group_size: default_group(),
            policy_timeout_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunAccepted {
    pub run_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run_id: String,
    pub state: RunState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<RunReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<CategoryReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub advantages: Vec<AdvantageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRequest {
    pub traj: String,
    pub graph: String,
    pub seed: u64,
}

pub type ReplayResponse = ReplayReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportResponse {
    pub report: DirectoryReport,
    pub rendered: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub wire_version: String,
    /// Address of the newline-delimited JSON listener.
    pub wire_addr: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
}
