//! Newline-delimited JSON listener. The first message on a connection is
//! `hello`; its role decides whether the connection drives episodes itself
//! or joins the policy pool.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use tokio::io::BufReader;
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;

use webenv_core::config::EpisodeConfig;
use webenv_core::episode::{EndReason, Episode};
use webenv_core::orchestrator::{
    episode_end, open_episode, persist_footer, rollout_rewards, settle_episode, EpisodeEnv,
};
use webenv_core::task::{SuiteManifest, TaskConfig};
use webenv_core::wire::{
    read_message, write_message, EpisodeEnd, ErrorCode, ObservationPayload, StepResultPayload,
    WireError, WireMessage, WireRole, WIRE_VERSION,
};

use crate::policy_pool::{PolicyConn, PolicyPool};

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(300);

/// Suite and environment used by driver sessions.
pub struct DriverSetup {
    pub manifest: SuiteManifest,
    pub env: Arc<EpisodeEnv>,
}

pub struct WireShared {
    pub driver: Option<DriverSetup>,
    pub pool: Arc<PolicyPool>,
    pub idle_timeout: Duration,
    sessions: AtomicU64,
}

impl WireShared {
    pub fn new(driver: Option<DriverSetup>, pool: Arc<PolicyPool>, idle_timeout: Duration) -> Self {
        WireShared {
            driver,
            pool,
            idle_timeout,
            sessions: AtomicU64::new(0),
        }
    }
}

pub async fn serve_wire(listener: TcpListener, shared: Arc<WireShared>, mut stop: watch::Receiver<bool>) {
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    let shared = shared.clone();
                    tokio::spawn(async move {
                        if let Err(e) = handle_connection(stream, shared).await {
                            tracing::debug!(%peer, error = %e, "wire connection ended");
                        }
                    });
                }
                Err(e) => tracing::warn!(error = %e, "wire accept failed"),
            },
            _ = stop.changed() => break,
        }
    }
}

async fn handle_connection(stream: TcpStream, shared: Arc<WireShared>) -> Result<(), WireError> {
    let _ = stream.set_nodelay(true);
    let (r, mut w) = stream.into_split();
    let mut reader = BufReader::new(r);
    let first = match tokio::time::timeout(shared.idle_timeout, read_message(&mut reader)).await {
        Ok(m) => m?,
        Err(_) => {
            let e = WireMessage::error(None, ErrorCode::IdleTimeout, "no hello received");
            return write_message(&mut w, &e).await;
        }
    };
    let Some(first) = first else {
        return Ok(());
    };
    let WireMessage::Hello { version, role, .. } = first else {
        let e = WireMessage::error(
            None,
            ErrorCode::ProtocolViolation,
            format!("expected hello, got {}", first.kind()),
        );
        return write_message(&mut w, &e).await;
    };
    if version != WIRE_VERSION {
        let e = WireMessage::error(
            None,
            ErrorCode::VersionMismatch,
            format!("server speaks version {WIRE_VERSION}, client sent {version}"),
        );
        return write_message(&mut w, &e).await;
    }
    let n = shared.sessions.fetch_add(1, Ordering::Relaxed);
    let session_id = format!("s{n}");
    let hello = WireMessage::Hello {
        version: WIRE_VERSION.into(),
        role,
        session_id: Some(session_id.clone()),
    };
    write_message(&mut w, &hello).await?;
    match role {
        WireRole::Policy => {
            shared.pool.push(PolicyConn {
                session_id,
                reader,
                writer: w,
            });
            Ok(())
        }
        WireRole::Driver => {
            let mut d = DriverSession {
                id: session_id,
                shared: shared.clone(),
                writer: w,
                current: None,
                resets: 0,
            };
            let r = d.run(&mut reader).await;
            if let Some(mut a) = d.current.take() {
                conclude(&d.shared, &d.id, &mut a, EndReason::Closed).await;
            }
            r
        }
    }
}

struct Active {
    episode: Episode,
    task: TaskConfig,
    config: EpisodeConfig,
    rollout: u32,
    ended: Option<EpisodeEnd>,
}

struct DriverSession {
    id: String,
    shared: Arc<WireShared>,
    writer: OwnedWriteHalf,
    current: Option<Active>,
    resets: u32,
}

impl DriverSession {
    async fn send(&mut self, msg: WireMessage) -> Result<(), WireError> {
        write_message(&mut self.writer, &msg).await
    }

    async fn error(&mut self, code: ErrorCode, message: impl Into<String>) -> Result<(), WireError> {
        let m = WireMessage::error(Some(self.id.clone()), code, message);
        self.send(m).await
    }

    async fn run(&mut self, reader: &mut BufReader<tokio::net::tcp::OwnedReadHalf>) -> Result<(), WireError> {
        loop {
            let msg = match tokio::time::timeout(self.shared.idle_timeout, read_message(reader)).await {
                Err(_) => return self.error(ErrorCode::IdleTimeout, "connection idle").await,
                Ok(Err(e)) => {
                    let _ = self.error(ErrorCode::ProtocolViolation, e.to_string()).await;
                    return Err(e);
                }
                Ok(Ok(None)) => return Ok(()),
                Ok(Ok(Some(m))) => m,
            };
            match msg {
                WireMessage::Reset { task_id, task, .. } => self.reset(task_id, task).await?,
                m @ WireMessage::Act { .. } => {
                    if !self.act(m).await? {
                        return Ok(());
                    }
                }
                WireMessage::Close { .. } => {
                    let episode = match self.current.take() {
                        Some(mut a) => conclude(&self.shared, &self.id, &mut a, EndReason::Closed).await,
                        None => None,
                    };
                    let m = WireMessage::Close {
                        session_id: Some(self.id.clone()),
                        reason: None,
                        episode,
                    };
                    return self.send(m).await;
                }
                WireMessage::Error { code, message, .. } => {
                    tracing::debug!(session = %self.id, ?code, %message, "driver reported an error");
                    return Ok(());
                }
                other => {
                    let kind = other.kind();
                    return self
                        .error(ErrorCode::ProtocolViolation, format!("unexpected {kind} from a driver"))
                        .await;
                }
            }
        }
    }

    async fn reset(&mut self, task_id: String, task: Option<TaskConfig>) -> Result<(), WireError> {
        if let Some(mut a) = self.current.take() {
            conclude(&self.shared, &self.id, &mut a, EndReason::Superseded).await;
        }
        let shared = self.shared.clone();
        let Some(driver) = shared.driver.as_ref() else {
            return self
                .error(ErrorCode::Internal, "service has no default suite or backend for driver sessions")
                .await;
        };
        let task = match task.or_else(|| driver.manifest.task(&task_id).cloned()) {
            Some(t) if t.id == task_id => t,
            Some(_) => {
                return self
                    .error(ErrorCode::ProtocolViolation, "task.id differs from task_id")
                    .await
            }
            None => return self.error(ErrorCode::UnknownTask, format!("no task `{task_id}`")).await,
        };
        if let Err(e) = task.validate() {
            return self.error(ErrorCode::ProtocolViolation, e.to_string()).await;
        }
        let rollout = self.resets;
        self.resets += 1;
        let (episode, config) = match open_episode(&driver.env, &task, rollout).await {
            Ok(v) => v,
            Err(e) => return self.error(ErrorCode::Internal, e.to_string()).await,
        };
        let m = WireMessage::Observation {
            session_id: self.id.clone(),
            task_id: task.id.clone(),
            step: 0,
            observation: ObservationPayload::from(episode.observation()),
        };
        self.current = Some(Active {
            episode,
            task,
            config,
            rollout,
            ended: None,
        });
        self.send(m).await
    }

    /// Returns false when the session must close.
    async fn act(&mut self, m: WireMessage) -> Result<bool, WireError> {
        let Some(active) = self.current.as_mut() else {
            self.error(ErrorCode::ProtocolViolation, "act before reset").await?;
            return Ok(false);
        };
        if active.ended.is_some() {
            self.error(ErrorCode::EpisodeFinished, "episode already ended; send reset or close")
                .await?;
            return Ok(true);
        }
        let text = match m.act_text() {
            Some(Ok(t)) => t,
            Some(Err(e)) => {
                self.error(ErrorCode::ProtocolViolation, e).await?;
                return Ok(true);
            }
            None => unreachable!("only act reaches here"),
        };
        let outcome = match active.episode.step_raw(&text).await {
            Ok(o) => o,
            Err(e) => {
                let mut a = self.current.take().expect("checked above");
                conclude(&self.shared, &self.id, &mut a, EndReason::ProtocolViolation).await;
                self.current = Some(a);
                self.error(ErrorCode::Internal, e.to_string()).await?;
                return Ok(true);
            }
        };
        let finished = outcome.terminated || outcome.truncated;
        let reply = WireMessage::StepResult {
            session_id: self.id.clone(),
            outcome: StepResultPayload::from(&outcome),
        };
        if finished {
            let mut a = self.current.take().expect("checked above");
            conclude(&self.shared, &self.id, &mut a, EndReason::Closed).await;
            self.current = Some(a);
        }
        self.send(reply).await?;
        Ok(true)
    }
}

/// End the episode if it still runs, then settle, evaluate and persist
/// it once.
async fn conclude(shared: &WireShared, session: &str, a: &mut Active, reason: EndReason) -> Option<EpisodeEnd> {
    if let Some(end) = &a.ended {
        return Some(end.clone());
    }
    let driver = shared.driver.as_ref()?;
    let env = &driver.env;
    a.episode.abort(reason);
    let log = env.session_log_path(&a.task.id, session, a.rollout);
    let played = match settle_episode(env, &mut a.episode, a.rollout, a.config.clone(), log).await {
        Ok(p) => p,
        Err(e) => {
            tracing::warn!(session = %session, task = %a.task.id, error = %e, "could not settle episode");
            return None;
        }
    };
    let reward = rollout_rewards(&[&played], env.config.gamma)[0];
    if let Err(e) = persist_footer(env, &a.task, &played, reward) {
        tracing::warn!(session = %session, error = %e, "could not persist footer");
    }
    let end = episode_end(&played, reward);
    a.ended = Some(end.clone());
    Some(end)
}
