//! External policies connected over the wire in the `policy` role. Each idle
//! connection waits in the pool until a run hands it an episode.

use std::time::Duration;

use async_trait::async_trait;
use tokio::io::BufReader;
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::sync::{mpsc, Mutex};

use webenv_core::episode::Observation;
use webenv_core::orchestrator::PolicySource;
use webenv_core::policy::{Policy, PolicyContext, PolicyError};
use webenv_core::wire::{read_message, write_message, EpisodeEnd, ObservationPayload, WireError, WireMessage};

pub struct PolicyConn {
    pub session_id: String,
    pub reader: BufReader<OwnedReadHalf>,
    pub writer: OwnedWriteHalf,
}

impl PolicyConn {
    async fn send(&mut self, msg: &WireMessage) -> Result<(), WireError> {
        write_message(&mut self.writer, msg).await
    }
}

pub struct PolicyPool {
    tx: mpsc::UnboundedSender<PolicyConn>,
    rx: Mutex<mpsc::UnboundedReceiver<PolicyConn>>,
    /// How long an episode waits for a free connection.
    wait: Duration,
}

impl PolicyPool {
    pub fn new(wait: Duration) -> Self {
        let (tx, rx) = mpsc::unbounded_channel();
        PolicyPool {
            tx,
            rx: Mutex::new(rx),
            wait,
        }
    }

    pub fn push(&self, conn: PolicyConn) {
        // The receiver lives as long as the pool.
        let _ = self.tx.send(conn);
    }

    async fn take(&self) -> Option<PolicyConn> {
        let mut rx = self.rx.lock().await;
        tokio::time::timeout(self.wait, rx.recv()).await.ok().flatten()
    }
}

#[async_trait]
impl PolicySource for PolicyPool {
    fn describe(&self) -> String {
        "wire".into()
    }

    async fn open(&self, ctx: &PolicyContext) -> Result<Box<dyn Policy>, PolicyError> {
        loop {
            let Some(mut conn) = self.take().await else {
                return Err(PolicyError::Unavailable(format!(
                    "no policy connection within {} ms",
                    self.wait.as_millis()
                )));
            };
            let reset = WireMessage::Reset {
                session_id: Some(conn.session_id.clone()),
                task_id: ctx.task.id.clone(),
                task: Some(ctx.task.clone()),
            };
            // Connections that went away while idle are dropped here.
            if conn.send(&reset).await.is_ok() {
                return Ok(Box::new(WirePolicy {
                    conn: Some(conn),
                    task_id: ctx.task.id.clone(),
                    step: 0,
                    in_flight: false,
                    pool: self.tx.clone(),
                }));
            }
        }
    }
}

struct WirePolicy {
    conn: Option<PolicyConn>,
    task_id: String,
    step: u32,
    /// Set while waiting for an `act`; a cancelled wait leaves the stream
    /// out of sync and the connection is not reused.
    in_flight: bool,
    pool: mpsc::UnboundedSender<PolicyConn>,
}

#[async_trait]
impl Policy for WirePolicy {
    async fn act(&mut self, observation: &Observation) -> Result<String, PolicyError> {
        let conn = self.conn.as_mut().ok_or_else(|| PolicyError::Disconnected("connection already lost".into()))?;
        self.in_flight = true;
        let msg = WireMessage::Observation {
            session_id: conn.session_id.clone(),
            task_id: self.task_id.clone(),
            step: self.step,
            observation: ObservationPayload::from(observation),
        };
        if conn.send(&msg).await.is_err() {
            self.conn = None;
            return Err(PolicyError::Disconnected("write failed".into()));
        }
        let reply = read_message(&mut conn.reader).await;
        self.in_flight = false;
        self.step += 1;
        match reply {
            Ok(Some(m @ WireMessage::Act { .. })) => match m.act_text() {
                Some(Ok(text)) => Ok(text),
                Some(Err(e)) => Err(PolicyError::Protocol(e)),
                None => unreachable!("act_text is defined for act"),
            },
            Ok(Some(WireMessage::Error { message, .. })) => Err(PolicyError::Protocol(message)),
            Ok(Some(WireMessage::Close { .. })) | Ok(None) => {
                self.conn = None;
                Err(PolicyError::Disconnected("policy closed the connection".into()))
            }
            Ok(Some(other)) => Err(PolicyError::Protocol(format!(
                "expected act, got {}",
                other.kind()
            ))),
            Err(e) => {
                self.conn = None;
                Err(PolicyError::Protocol(e.to_string()))
            }
        }
    }

    async fn finish(&mut self, end: &EpisodeEnd) {
        let Some(mut conn) = self.conn.take() else {
            return;
        };
        let msg = WireMessage::Close {
            session_id: Some(conn.session_id.clone()),
            reason: end.reason.map(|r| r.as_str().to_string()),
            episode: Some(end.clone()),
        };
        if conn.send(&msg).await.is_ok() && !self.in_flight {
            let _ = self.pool.send(conn);
        }
    }
}
