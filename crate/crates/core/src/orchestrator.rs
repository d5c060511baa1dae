//! Benchmark orchestration: provisioning, the interaction loop, evaluation,
//! rewards, persistence and replay.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

use crate::backend::graph::MockSiteGraph;
use crate::backend::mock::MockProvider;
use crate::backend::{BackendKind, BrowserProvider, ExecutionProfile};
use crate::config::{EpisodeConfig, PromptMode};
use crate::episode::{EndReason, Episode, Phase, Trajectory};
use crate::error::EpisodeError;
use crate::eval::{aggregate, evaluate, render_table, CategoryReport, JudgeClient, LimitedJudge, Verdict};
use crate::wire::EpisodeEnd;
use crate::policy::{scripted_policy, Policy, PolicyContext, PolicyError};
use crate::reward::{
    completion_reward, group_advantages, trajectory_reward, AdvantageGroup, RewardBreakdown,
    DEFAULT_EPSILON, DEFAULT_GAMMA,
};
use crate::task::{Category, OracleScript, SuiteManifest, TaskConfig};
use crate::trajectory::{
    append_footer, encode_line, write_steps, Footer, ReplayInfo, StepLine, TrajectoryError,
    TrajectoryFile, TrajectoryLine,
};

pub const DEFAULT_POLICY_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_PROVISION_TIMEOUT: Duration = Duration::from_secs(60);
pub const TRAJECTORY_DIR: &str = "trajectories";
pub const RUN_REPORT_FILE: &str = "run_report.json";
pub const CATEGORY_REPORT_FILE: &str = "category_report.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const ADVANTAGES_FILE: &str = "advantages.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub parallelism: usize,
    pub episode: EpisodeConfig,
    pub seed: u64,
    #[serde(with = "millis")]
    pub policy_timeout: Duration,
    #[serde(with = "millis")]
    pub provision_timeout: Duration,
    pub out_dir: Option<PathBuf>,
    /// Rollouts per task. Above 1, group-relative advantages are computed.
    pub group_size: u32,
    pub gamma: f64,
    pub epsilon: f64,
    /// Put wall-clock timings into trajectory footers (breaks byte equality
    /// between runs).
    pub wall_times_in_logs: bool,
    pub judge_concurrency: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            parallelism: 1,
            episode: EpisodeConfig::default(),
            seed: 0,
            policy_timeout: DEFAULT_POLICY_TIMEOUT,
            provision_timeout: DEFAULT_PROVISION_TIMEOUT,
            out_dir: None,
            group_size: 1,
            gamma: DEFAULT_GAMMA,
            epsilon: DEFAULT_EPSILON,
            wall_times_in_logs: false,
            judge_concurrency: 8,
        }
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        if self.parallelism == 0 {
            return Err(RunError::Config("parallelism must be >= 1".into()));
        }
        if self.group_size == 0 {
            return Err(RunError::Config("group_size must be >= 1".into()));
        }
        if self.judge_concurrency == 0 {
            return Err(RunError::Config("judge_concurrency must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(RunError::Config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        self.episode
            .validate()
            .map_err(|e| RunError::Config(e.to_string()))?;
        if let Some(dir) = &self.out_dir {
            std::fs::create_dir_all(dir.join(TRAJECTORY_DIR))
                .map_err(|e| RunError::Config(format!("output directory {}: {e}", dir.display())))?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Where the policy for each episode comes from.
#[async_trait]
pub trait PolicySource: Send + Sync {
    fn describe(&self) -> String;

    async fn open(&self, ctx: &PolicyContext) -> Result<Box<dyn Policy>, PolicyError>;
}

/// In-process scripted policy, selected by name.
pub struct ScriptedSource {
    name: String,
}

impl ScriptedSource {
    pub fn new(name: impl Into<String>) -> Self {
        ScriptedSource { name: name.into() }
    }
}

#[async_trait]
impl PolicySource for ScriptedSource {
    fn describe(&self) -> String {
        format!("scripted:{}", self.name)
    }

    async fn open(&self, ctx: &PolicyContext) -> Result<Box<dyn Policy>, PolicyError> {
        scripted_policy(&self.name, ctx).map_err(PolicyError::Unavailable)
    }
}

/// Episode seed for one rollout of one task under a run seed.
pub fn episode_seed(run_seed: u64, task_id: &str, rollout: u32) -> u64 {
    let d = Sha256::digest(format!("{run_seed}:{task_id}:{rollout}").as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("digest has 8 bytes"))
}

/// A failure outside the episode itself. Such episodes are excluded from
/// success rates and reported separately.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{stage}: {message}")]
pub struct InfraError {
    pub stage: String,
    pub message: String,
}

impl InfraError {
    fn new(stage: &str, message: impl Into<String>) -> Self {
        InfraError {
            stage: stage.into(),
            message: message.into(),
        }
    }
}

/// Shared, read-only state of a run.
pub struct EpisodeEnv {
    pub provider: Arc<dyn BrowserProvider>,
    pub policy: Arc<dyn PolicySource>,
    pub judge: Option<Arc<dyn JudgeClient>>,
    pub config: RunConfig,
    pub graph_digest: Option<String>,
}

impl EpisodeEnv {
    pub fn new(
        provider: Arc<dyn BrowserProvider>,
        policy: Arc<dyn PolicySource>,
        judge: Option<Arc<dyn JudgeClient>>,
        config: RunConfig,
    ) -> Self {
        let judge = judge.map(|j| {
            Arc::new(LimitedJudge::new(j, config.judge_concurrency)) as Arc<dyn JudgeClient>
        });
        EpisodeEnv {
            provider,
            policy,
            judge,
            config,
            graph_digest: None,
        }
    }

    pub fn with_graph_digest(mut self, digest: impl Into<String>) -> Self {
        self.graph_digest = Some(digest.into());
        self
    }

    /// Log file for a driver-session episode.
    pub fn session_log_path(&self, task_id: &str, session: &str, rollout: u32) -> Option<PathBuf> {
        let dir = self.config.out_dir.as_ref()?.join(TRAJECTORY_DIR);
        Some(dir.join(format!("{}.{}.r{rollout}.jsonl", file_stem(task_id), file_stem(session))))
    }

    pub fn log_path(&self, task_id: &str, rollout: u32) -> Option<PathBuf> {
        let dir = self.config.out_dir.as_ref()?.join(TRAJECTORY_DIR);
        let name = file_stem(task_id);
        Some(if self.config.group_size > 1 {
            dir.join(format!("{name}.r{rollout}.jsonl"))
        } else {
            dir.join(format!("{name}.jsonl"))
        })
    }

    fn replay_info(&self, task: &TaskConfig, config: &EpisodeConfig, rollout: u32) -> ReplayInfo {
        ReplayInfo {
            backend: self.provider.kind(),
            run_seed: self.config.seed,
            rollout,
            graph_digest: self.graph_digest.clone(),
            task: task.clone(),
            config: config.clone(),
        }
    }
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

/// A finished episode, evaluated but not yet rewarded.
#[derive(Debug, Clone)]
pub struct PlayedEpisode {
    pub trajectory: Trajectory,
    pub verdict: Verdict,
    pub rollout: u32,
    pub log_path: Option<PathBuf>,
    pub config: EpisodeConfig,
}

/// Provision a session and start the episode on it.
pub async fn open_episode(
    env: &EpisodeEnv,
    task: &TaskConfig,
    rollout: u32,
) -> Result<(Episode, EpisodeConfig), InfraError> {
    let seed = episode_seed(env.config.seed, &task.id, rollout);
    let config = EpisodeConfig {
        seed,
        ..env.config.episode.clone()
    };
    let profile = ExecutionProfile {
        viewport: config.viewport,
        ..Default::default()
    };
    let session = tokio::time::timeout(
        env.config.provision_timeout,
        env.provider.provision(&profile, seed),
    )
    .await
    .map_err(|_| InfraError::new("provision", "timed out"))?
    .map_err(|e| InfraError::new("provision", e.to_string()))?;
    match Episode::start(task.clone(), config.clone(), session).await {
        Ok((episode, _)) => Ok((episode, config)),
        Err((e, mut session)) => {
            session.release().await;
            Err(InfraError::new("initialization", e.to_string()))
        }
    }
}

/// Release the session of an ended episode, persist its step lines and
/// evaluate it.
pub async fn settle_episode(
    env: &EpisodeEnv,
    episode: &mut Episode,
    rollout: u32,
    config: EpisodeConfig,
    log_path: Option<PathBuf>,
) -> Result<PlayedEpisode, InfraError> {
    episode.release().await;
    let trajectory = episode
        .finalize()
        .map_err(|e| InfraError::new("episode", e.to_string()))?;
    if let Some(path) = &log_path {
        write_steps(path, &trajectory).map_err(|e| InfraError::new("persist", e.to_string()))?;
    }
    let verdict = evaluate(
        episode.task(),
        trajectory.final_answer.as_deref(),
        &trajectory.digest_text(),
        env.judge.as_deref(),
    )
    .await;
    Ok(PlayedEpisode {
        trajectory,
        verdict,
        rollout,
        log_path,
        config,
    })
}

pub fn episode_end(played: &PlayedEpisode, reward: RewardBreakdown) -> EpisodeEnd {
    EpisodeEnd {
        task_id: played.trajectory.task_id.clone(),
        trace_id: played.trajectory.trace_id.clone(),
        steps: played.trajectory.len(),
        reason: played.trajectory.reason,
        verdict: played.verdict.clone(),
        reward,
    }
}

/// Provisioning, initialization, interaction loop, evaluation. Step lines are
/// persisted before the verdict is computed.
pub async fn play_episode(
    env: &EpisodeEnv,
    task: &TaskConfig,
    oracle: Option<&OracleScript>,
    rollout: u32,
) -> Result<PlayedEpisode, InfraError> {
    let (mut episode, config) = open_episode(env, task, rollout).await?;
    let ctx = PolicyContext {
        task: task.clone(),
        oracle: oracle.cloned(),
        mode: config.prompt_mode,
        seed: config.seed,
    };
    let mut policy = match env.policy.open(&ctx).await {
        Ok(p) => p,
        Err(e) => {
            episode.release().await;
            return Err(InfraError::new("policy", e.to_string()));
        }
    };

    while episode.is_running() {
        let obs = episode.observation().clone();
        let reply = tokio::time::timeout(env.config.policy_timeout, policy.act(&obs)).await;
        let raw = match reply {
            Ok(Ok(raw)) => raw,
            Ok(Err(e)) => {
                tracing::warn!(task = %task.id, error = %e, "policy failed");
                episode.abort(EndReason::ProtocolViolation);
                break;
            }
            Err(_) => {
                tracing::warn!(task = %task.id, "policy timed out");
                episode.abort(EndReason::PolicyTimeout);
                break;
            }
        };
        if let Err(e) = episode.step_raw(&raw).await {
            episode.release().await;
            return Err(InfraError::new("episode", e.to_string()));
        }
    }
    let log_path = env.log_path(&task.id, rollout);
    let played = settle_episode(env, &mut episode, rollout, config, log_path).await?;
    // The policy hears its own singleton reward; group rewards come later.
    let end = episode_end(&played, rollout_rewards(&[&played], env.config.gamma)[0]);
    let _ = tokio::time::timeout(env.config.policy_timeout, policy.finish(&end)).await;
    Ok(played)
}

/// Rewards for a rollout group. The decay reference is the shortest
/// non-empty trajectory; an empty trajectory gets its completion reward only.
pub fn rollout_rewards(group: &[&PlayedEpisode], gamma: f64) -> Vec<RewardBreakdown> {
    let min = group
        .iter()
        .map(|p| p.trajectory.len())
        .filter(|&n| n > 0)
        .min();
    group
        .iter()
        .map(|p| {
            let validity = p.trajectory.step_validity();
            match min {
                Some(min) if !validity.is_empty() => {
                    trajectory_reward(&validity, p.verdict.tier, min, gamma)
                        .expect("validity length is at least the group minimum")
                }
                _ => {
                    let r_comp = completion_reward(p.verdict.tier);
                    RewardBreakdown {
                        r_comp,
                        gamma,
                        decay_exponent: 0.0,
                        step_sum: 0.0,
                        total: r_comp,
                    }
                }
            }
        })
        .collect()
}

pub fn persist_footer(
    env: &EpisodeEnv,
    task: &TaskConfig,
    played: &PlayedEpisode,
    reward: RewardBreakdown,
) -> Result<(), InfraError> {
    if let Some(path) = &played.log_path {
        let footer = Footer::new(
            &played.trajectory,
            played.verdict.clone(),
            reward,
            env.replay_info(task, &played.config, played.rollout),
            env.config.wall_times_in_logs,
        );
        append_footer(path, &footer).map_err(|e| InfraError::new("persist", e.to_string()))?;
    }
    Ok(())
}

/// Run one task as a singleton group.
pub async fn run_episode(
    env: &EpisodeEnv,
    task: &TaskConfig,
    oracle: Option<&OracleScript>,
) -> Result<(Trajectory, Verdict, RewardBreakdown), InfraError> {
    let played = play_episode(env, task, oracle, 0).await?;
    let reward = rollout_rewards(&[&played], env.config.gamma)[0];
    persist_footer(env, task, &played, reward)?;
    Ok((played.trajectory, played.verdict, reward))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Completed,
    InfraError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub task_id: String,
    pub category: Category,
    pub rollout: u32,
    pub status: EpisodeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub infra_error: Option<InfraError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantage: Option<f64>,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<EndReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_id: Option<String>,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<String>,
}

/// Runtime profile and per-episode outcomes of a benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub suite: String,
    pub run_seed: u64,
    pub policy: String,
    pub backend: BackendKind,
    pub mode: PromptMode,
    pub parallelism: usize,
    pub group_size: u32,
    pub tasks: usize,
    pub episodes: usize,
    pub completed: usize,
    pub infra_errors: usize,
    pub success_rate: f64,
    pub total_steps: usize,
    pub mean_steps: f64,
    pub mean_episode_wall_ms: f64,
    pub wall_ms: u64,
    pub results: Vec<EpisodeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRecord {
    pub task_id: String,
    #[serde(flatten)]
    pub group: AdvantageGroup,
    pub rollouts: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub categories: CategoryReport,
    pub advantages: Vec<AdvantageRecord>,
}

impl RunOutput {
    pub fn summary_text(&self) -> String {
        let r = &self.report;
        format!(
            "{}\nepisodes: {} completed, {} infra_error\nsteps: {} total, {:.2} mean\nwall time: {} ms ({:.1} ms mean per episode)\n",
            render_table(&self.categories),
            r.completed,
            r.infra_errors,
            r.total_steps,
            r.mean_steps,
            r.wall_ms,
            r.mean_episode_wall_ms,
        )
    }
}

/// Run every task of `suite` (times `group_size`) across a bounded worker
/// pool. Episode faults never abort the run.
pub async fn run_benchmark(suite: &SuiteManifest, env: Arc<EpisodeEnv>) -> Result<RunOutput, RunError> {
    env.config.validate()?;
    let started = Instant::now();
    let permits = Arc::new(Semaphore::new(env.config.parallelism));

    let mut handles = Vec::new();
    for task in &suite.tasks {
        for rollout in 0..env.config.group_size {
            let env = env.clone();
            let job = task.clone();
            let oracle = suite.oracles.get(&task.id).cloned();
            let permits = permits.clone();
            let handle = tokio::spawn(async move {
                let _permit = permits.acquire_owned().await.expect("semaphore never closed");
                let t0 = Instant::now();
                let r = play_episode(&env, &job, oracle.as_ref(), rollout).await;
                (r, t0.elapsed().as_millis() as u64)
            });
            handles.push((task.clone(), rollout, handle));
        }
    }

    let mut outcomes: Vec<(TaskConfig, u32, Result<PlayedEpisode, InfraError>, u64)> = Vec::new();
    for (task, rollout, handle) in handles {
        let (result, ms) = match handle.await {
            Ok((r, ms)) => (r, ms),
            Err(e) => {
                let msg = if e.is_panic() {
                    panic_message(e.into_panic())
                } else {
                    "worker cancelled".into()
                };
                tracing::error!(task = %task.id, rollout, "worker crashed: {msg}");
                (Err(InfraError::new("worker", msg)), 0)
            }
        };
        outcomes.push((task, rollout, result, ms));
    }

    let mut by_task: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, (task, _, r, _)) in outcomes.iter().enumerate() {
        if r.is_ok() {
            by_task.entry(task.id.clone()).or_default().push(i);
        }
    }
    let mut rewards: BTreeMap<usize, RewardBreakdown> = BTreeMap::new();
    let mut advantage_of: BTreeMap<usize, f64> = BTreeMap::new();
    let mut advantages = Vec::new();
    for task in &suite.tasks {
        let Some(idx) = by_task.get(&task.id) else {
            continue;
        };
        let group: Vec<&PlayedEpisode> = idx
            .iter()
            .map(|&i| outcomes[i].2.as_ref().expect("only completed episodes grouped"))
            .collect();
        let rs = rollout_rewards(&group, env.config.gamma);
        for (&i, r) in idx.iter().zip(&rs) {
            rewards.insert(i, *r);
        }
        if env.config.group_size > 1 {
            let totals: Vec<f64> = rs.iter().map(|r| r.total).collect();
            let g = group_advantages(&totals, env.config.epsilon)
                .expect("completed groups are non-empty");
            for (&i, a) in idx.iter().zip(&g.advantages) {
                advantage_of.insert(i, *a);
            }
            advantages.push(AdvantageRecord {
                task_id: task.id.clone(),
                rollouts: group.iter().map(|p| p.rollout).collect(),
                group: g,
            });
        }
    }

    let mut results = Vec::new();
    let mut verdicts = Vec::new();
    for (i, (task, rollout, result, ms)) in outcomes.iter_mut().enumerate() {
        let summary = match result {
            Ok(played) => {
                let reward = rewards[&i];
                if let Err(e) = persist_footer(&env, task, played, reward) {
                    *result = Err(e);
                    infra_summary(task, *rollout, result, *ms)
                } else {
                    verdicts.push((task.clone(), played.verdict.clone()));
                    EpisodeSummary {
                        task_id: task.id.clone(),
                        category: task.category,
                        rollout: *rollout,
                        status: EpisodeStatus::Completed,
                        infra_error: None,
                        verdict: Some(played.verdict.clone()),
                        reward: Some(reward),
                        advantage: advantage_of.get(&i).copied(),
                        steps: played.trajectory.len(),
                        phase: Some(played.trajectory.phase),
                        reason: played.trajectory.reason,
                        trace_id: Some(played.trajectory.trace_id.clone()),
                        wall_ms: *ms,
                        log: played
                            .log_path
                            .as_ref()
                            .and_then(|p| p.file_name())
                            .map(|n| n.to_string_lossy().into_owned()),
                    }
                }
            }
            Err(_) => infra_summary(task, *rollout, result, *ms),
        };
        results.push(summary);
    }

    let categories = aggregate(&verdicts);
    let completed = results
        .iter()
        .filter(|r| r.status == EpisodeStatus::Completed)
        .count();
    let total_steps: usize = results.iter().map(|r| r.steps).sum();
    let report = RunReport {
        suite: suite.name.clone(),
        run_seed: env.config.seed,
        policy: env.policy.describe(),
        backend: env.provider.kind(),
        mode: env.config.episode.prompt_mode,
        parallelism: env.config.parallelism,
        group_size: env.config.group_size,
        tasks: suite.tasks.len(),
        episodes: results.len(),
        completed,
        infra_errors: results.len() - completed,
        success_rate: categories.overall.success_rate,
        total_steps,
        mean_steps: mean(completed, total_steps as f64),
        mean_episode_wall_ms: mean(
            completed,
            results
                .iter()
                .filter(|r| r.status == EpisodeStatus::Completed)
                .map(|r| r.wall_ms as f64)
                .sum(),
        ),
        wall_ms: started.elapsed().as_millis() as u64,
        results,
    };
    let out = RunOutput {
        report,
        categories,
        advantages,
    };
    if let Some(dir) = &env.config.out_dir {
        write_run_files(dir, &out)?;
    }
    Ok(out)
}

fn infra_summary(
    task: &TaskConfig,
    rollout: u32,
    result: &Result<PlayedEpisode, InfraError>,
    ms: u64,
) -> EpisodeSummary {
    EpisodeSummary {
        task_id: task.id.clone(),
        category: task.category,
        rollout,
        status: EpisodeStatus::InfraError,
        infra_error: result.as_ref().err().cloned(),
        verdict: None,
        reward: None,
        advantage: None,
        steps: 0,
        phase: None,
        reason: None,
        trace_id: None,
        wall_ms: ms,
        log: None,
    }
}

fn mean(n: usize, sum: f64) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        format!("panic: {s}")
    } else if let Some(s) = payload.downcast_ref::<String>() {
        format!("panic: {s}")
    } else {
        "panic".into()
    }
}

fn write_run_files(dir: &Path, out: &RunOutput) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(RUN_REPORT_FILE), pretty(&out.report))?;
    std::fs::write(dir.join(CATEGORY_REPORT_FILE), pretty(&out.categories))?;
    std::fs::write(dir.join(SUMMARY_FILE), out.summary_text())?;
    if !out.advantages.is_empty() {
        let lines: String = out
            .advantages
            .iter()
            .map(|a| serde_json::to_string(a).expect("advantages serialize") + "\n")
            .collect();
        std::fs::write(dir.join(ADVANTAGES_FILE), lines)?;
    }
    Ok(())
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

/// Category report and profile rebuilt from a run directory's trajectory
/// footers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectoryReport {
    pub categories: CategoryReport,
    pub episodes: usize,
    pub total_steps: usize,
    pub mean_steps: f64,
    pub infra_errors: usize,
    pub wall_ms: Option<u64>,
}

impl DirectoryReport {
    pub fn render(&self) -> String {
        let mut s = render_table(&self.categories);
        s.push_str(&format!(
            "\nepisodes: {} completed, {} infra_error\nsteps: {} total, {:.2} mean\n",
            self.episodes, self.infra_errors, self.total_steps, self.mean_steps
        ));
        if let Some(ms) = self.wall_ms {
            s.push_str(&format!("wall time: {ms} ms\n"));
        }
        s
    }
}

pub fn report_from_dir(dir: &Path) -> Result<DirectoryReport, RunError> {
    let tdir = dir.join(TRAJECTORY_DIR);
    let mut files: Vec<PathBuf> = std::fs::read_dir(&tdir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut verdicts = Vec::new();
    let mut total_steps = 0;
    for f in &files {
        let t = TrajectoryFile::load(f)?;
        total_steps += t.steps.len();
        verdicts.push((t.footer.replay.task.clone(), t.footer.verdict.clone()));
    }
    let run: Option<RunReport> = std::fs::read_to_string(dir.join(RUN_REPORT_FILE))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok());
    Ok(DirectoryReport {
        categories: aggregate(&verdicts),
        episodes: files.len(),
        total_steps,
        mean_steps: mean(files.len(), total_steps as f64),
        infra_errors: run.as_ref().map_or(0, |r| r.infra_errors),
        wall_ms: run.map(|r| r.wall_ms),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    /// Step number; 0 is the initial observation, `steps + 1` the footer.
    pub step: u32,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub task_id: String,
    pub steps: usize,
    pub matched: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<Divergence>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("replay refused: {0}")]
    Refused(String),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
}

/// Re-execute a recorded trajectory on a fresh mock session and compare the
/// regenerated records line by line.
pub async fn replay(
    file: &TrajectoryFile,
    graph: Arc<MockSiteGraph>,
    run_seed: u64,
) -> Result<ReplayReport, ReplayError> {
    let info = &file.footer.replay;
    if info.backend != BackendKind::Mock {
        return Err(ReplayError::Refused(format!(
            "trajectory was recorded on backend `{:?}`; only mock trajectories can be replayed",
            info.backend
        )));
    }
    if info.run_seed != run_seed {
        return Err(ReplayError::Refused(format!(
            "seed mismatch: trajectory recorded with seed {}, replay requested with {run_seed}",
            info.run_seed
        )));
    }
    let digest = graph.digest();
    match &info.graph_digest {
        Some(d) if *d != digest => {
            return Err(ReplayError::Refused(format!(
                "graph mismatch: trajectory pinned to {d}, supplied graph is {digest}"
            )))
        }
        None => {
            return Err(ReplayError::Refused(
                "trajectory carries no graph digest".into(),
            ))
        }
        _ => {}
    }
    if episode_seed(run_seed, &info.task.id, info.rollout) != info.config.seed {
        return Err(ReplayError::Refused(
            "episode seed does not derive from the run seed".into(),
        ));
    }

    let provider = MockProvider::new(graph);
    let profile = ExecutionProfile {
        viewport: info.config.viewport,
        ..Default::default()
    };
    let session = Box::new(provider.open(&profile, info.config.seed));
    let (mut episode, obs) = Episode::start(info.task.clone(), info.config.clone(), session)
        .await
        .map_err(|(e, _)| e)?;

    let report = |divergence: Option<Divergence>| ReplayReport {
        task_id: info.task.id.clone(),
        steps: file.steps.len(),
        matched: divergence.is_none(),
        divergence,
    };
    if obs.digest != file.footer.initial_observation {
        episode.release().await;
        return Ok(report(Some(Divergence {
            step: 0,
            expected: json(&file.footer.initial_observation),
            actual: json(&obs.digest),
        })));
    }
    for line in &file.steps {
        let expected = encode_line(&TrajectoryLine::Step(line.clone()));
        if !episode.is_running() {
            episode.release().await;
            return Ok(report(Some(Divergence {
                step: line.step,
                expected,
                actual: "episode already ended".into(),
            })));
        }
        let parsed = line
            .to_parse_result()
            .map_err(|e| ReplayError::Refused(e.to_string()))?;
        episode.step_recorded(parsed, line.raw_model_output.clone()).await?;
        let rec = episode.records().last().expect("a step was just recorded");
        let actual = encode_line(&TrajectoryLine::Step(StepLine::from_record(rec)));
        if actual != expected {
            episode.release().await;
            return Ok(report(Some(Divergence {
                step: line.step,
                expected,
                actual,
            })));
        }
    }
    let st = episode.state().clone();
    episode.release().await;
    let f = &file.footer;
    let end = |phase: Phase, reason: Option<EndReason>, answer: &Option<String>| {
        format!("phase={phase:?} reason={reason:?} final_answer={answer:?}")
    };
    let expected = end(f.phase, f.reason, &f.final_answer);
    let recorded_abort = matches!(
        f.reason,
        Some(
            EndReason::PolicyTimeout
                | EndReason::ProtocolViolation
                | EndReason::Superseded
                | EndReason::Closed
        )
    );
    // Aborts come from outside the engine; the replayed episode is then still running.
    let actual = if recorded_abort && st.phase == Phase::Running {
        end(f.phase, f.reason, &st.final_answer)
    } else {
        end(st.phase, st.reason, &st.final_answer)
    };
    if actual != expected {
        return Ok(report(Some(Divergence {
            step: file.steps.len() as u32 + 1,
            expected,
            actual,
        })));
    }
    Ok(report(None))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializes")
}
