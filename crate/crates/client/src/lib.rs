//! Thin clients for the environment service: HTTP/JSON for runs, replay and
//! reports, and the newline-delimited JSON wire for episode traffic.

use std::net::SocketAddr;
use std::time::Duration;

use reqwest::{StatusCode, Url};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::io::BufReader;
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;

use webenv_core::api::{
    ApiError, Health, ReplayRequest, ReplayResponse, ReportResponse, RunAccepted, RunRequest, RunStatus,
};
use webenv_core::task::TaskConfig;
use webenv_core::wire::{
    read_message, write_message, EpisodeEnd, ErrorCode, ObservationPayload, StepResultPayload,
    WireError, WireMessage, WireRole, WIRE_VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("http: {0}")]
    Http(#[from] reqwest::Error),
    #[error("service returned {status}: {error}")]
    Api { status: u16, error: String },
    #[error("bad service url: {0}")]
    Url(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("server error {code:?}: {message}")]
    Remote { code: ErrorCode, message: String },
    #[error("unexpected {0} message")]
    Unexpected(String),
    #[error("connection closed")]
    Closed,
}

pub struct ServiceClient {
    base: Url,
    http: reqwest::Client,
}

impl ServiceClient {
    pub fn new(base: &str) -> Result<Self, ClientError> {
        let base = Url::parse(base).map_err(|e| ClientError::Url(e.to_string()))?;
        Ok(ServiceClient {
            base,
            http: reqwest::Client::new(),
        })
    }

    pub fn for_addr(addr: SocketAddr) -> Self {
        Self::new(&format!("http://{addr}/")).expect("socket addresses form valid urls")
    }

    fn url(&self, path: &str) -> Result<Url, ClientError> {
        self.base.join(path).map_err(|e| ClientError::Url(e.to_string()))
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let error = match resp.json::<ApiError>().await {
            Ok(e) => e.error,
            Err(_) => status.canonical_reason().unwrap_or("error").to_string(),
        };
        Err(ClientError::Api {
            status: status.as_u16(),
            error,
        })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Self::decode(self.http.get(self.url(path)?).send().await?).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        Self::decode(self.http.post(self.url(path)?).json(body).send().await?).await
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        self.get("v1/health").await
    }

    pub async fn start_run(&self, req: &RunRequest) -> Result<String, ClientError> {
        let a: RunAccepted = self.post("v1/runs", req).await?;
        Ok(a.run_id)
    }

    pub async fn run_status(&self, run_id: &str) -> Result<RunStatus, ClientError> {
        self.get(&format!("v1/runs/{run_id}")).await
    }

    pub async fn wait_run(&self, run_id: &str) -> Result<RunStatus, ClientError> {
        self.get(&format!("v1/runs/{run_id}/wait")).await
    }

    pub async fn replay(&self, req: &ReplayRequest) -> Result<ReplayResponse, ClientError> {
        self.post("v1/replay", req).await
    }

    pub async fn report(&self, dir: &str) -> Result<ReportResponse, ClientError> {
        let mut url = self.url("v1/report")?;
        url.query_pairs_mut().append_pair("dir", dir);
        Self::decode(self.http.get(url).send().await?).await
    }

    /// Poll health until the service answers or `timeout` passes.
    pub async fn wait_ready(&self, timeout: Duration) -> Result<Health, ClientError> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            match self.health().await {
                Ok(h) => return Ok(h),
                Err(e) if tokio::time::Instant::now() >= deadline => return Err(e),
                Err(_) => tokio::time::sleep(Duration::from_millis(50)).await,
            }
        }
    }
}

/// True for a 404 from the service.
pub fn is_not_found(e: &ClientError) -> bool {
    matches!(e, ClientError::Api { status, .. } if *status == StatusCode::NOT_FOUND.as_u16())
}

struct Conn {
    reader: BufReader<OwnedReadHalf>,
    writer: OwnedWriteHalf,
    session_id: String,
}

impl Conn {
    async fn open(addr: SocketAddr, role: WireRole) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).await.map_err(WireError::from)?;
        let _ = stream.set_nodelay(true);
        let (r, w) = stream.into_split();
        let mut c = Conn {
            reader: BufReader::new(r),
            writer: w,
            session_id: String::new(),
        };
        c.send(&WireMessage::Hello {
            version: WIRE_VERSION.into(),
            role,
            session_id: None,
        })
        .await?;
        match c.recv().await? {
            WireMessage::Hello {
                session_id: Some(id),
                ..
            } => c.session_id = id,
            other => return Err(unexpected(other)),
        }
        Ok(c)
    }

    async fn send(&mut self, m: &WireMessage) -> Result<(), ClientError> {
        Ok(write_message(&mut self.writer, m).await?)
    }

    async fn recv(&mut self) -> Result<WireMessage, ClientError> {
        read_message(&mut self.reader).await?.ok_or(ClientError::Closed)
    }
}

fn unexpected(m: WireMessage) -> ClientError {
    match m {
        WireMessage::Error { code, message, .. } => ClientError::Remote { code, message },
        other => ClientError::Unexpected(other.kind().into()),
    }
}

/// Drives episodes step by step (`driver` role).
pub struct WireClient {
    conn: Conn,
}

impl WireClient {
    pub async fn connect(addr: SocketAddr) -> Result<Self, ClientError> {
        Ok(WireClient {
            conn: Conn::open(addr, WireRole::Driver).await?,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.conn.session_id
    }

    /// Start an episode on a task of the service's suite, or on `task` when
    /// given.
    pub async fn reset(&mut self, task_id: &str, task: Option<TaskConfig>) -> Result<ObservationPayload, ClientError> {
        let m = WireMessage::Reset {
            session_id: Some(self.conn.session_id.clone()),
            task_id: task_id.into(),
            task,
        };
        self.conn.send(&m).await?;
        match self.conn.recv().await? {
            WireMessage::Observation { observation, .. } => Ok(observation),
            other => Err(unexpected(other)),
        }
    }

    /// Send raw model output for the current turn.
    pub async fn act(&mut self, text: &str) -> Result<StepResultPayload, ClientError> {
        let m = WireMessage::Act {
            session_id: Some(self.conn.session_id.clone()),
            text: Some(text.into()),
            envelope: None,
        };
        self.conn.send(&m).await?;
        match self.conn.recv().await? {
            WireMessage::StepResult { outcome, .. } => Ok(outcome),
            other => Err(unexpected(other)),
        }
    }

    /// Close the session; returns the last episode's outcome, if any.
    pub async fn close(mut self) -> Result<Option<EpisodeEnd>, ClientError> {
        let m = WireMessage::Close {
            session_id: Some(self.conn.session_id.clone()),
            reason: None,
            episode: None,
        };
        self.conn.send(&m).await?;
        match self.conn.recv().await? {
            WireMessage::Close { episode, .. } => Ok(episode),
            other => Err(unexpected(other)),
        }
    }
}

/// What a policy connection receives.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyEvent {
    Reset { task: Option<TaskConfig>, task_id: String },
    Observation { step: u32, observation: Box<ObservationPayload> },
    Close { episode: Option<Box<EpisodeEnd>> },
}

/// Serves episodes handed out by a benchmark run (`policy` role).
pub struct PolicyClient {
    conn: Conn,
}

impl PolicyClient {
    pub async fn connect(addr: SocketAddr) -> Result<Self, ClientError> {
        Ok(PolicyClient {
            conn: Conn::open(addr, WireRole::Policy).await?,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.conn.session_id
    }

    /// Next event, or `None` once the service hangs up.
    pub async fn next_event(&mut self) -> Result<Option<PolicyEvent>, ClientError> {
        let m = match read_message(&mut self.conn.reader).await? {
            Some(m) => m,
            None => return Ok(None),
        };
        Ok(Some(match m {
            WireMessage::Reset { task_id, task, .. } => PolicyEvent::Reset { task, task_id },
            WireMessage::Observation { step, observation, .. } => PolicyEvent::Observation {
                step,
                observation: Box::new(observation),
            },
            WireMessage::Close { episode, .. } => PolicyEvent::Close {
                episode: episode.map(Box::new),
            },
            other => return Err(unexpected(other)),
        }))
    }

    pub async fn act(&mut self, text: &str) -> Result<(), ClientError> {
        let m = WireMessage::Act {
            session_id: Some(self.conn.session_id.clone()),
            text: Some(text.into()),
            envelope: None,
        };
        self.conn.send(&m).await
    }

    /// Answer every observation with `policy(task, observation)` until the
    /// service hangs up or `max_episodes` episodes have closed.
    pub async fn serve<F>(mut self, mut policy: F, max_episodes: Option<usize>) -> Result<Vec<EpisodeEnd>, ClientError>
    where
        F: FnMut(Option<&TaskConfig>, &ObservationPayload) -> String,
    {
        let mut task = None;
        let mut ends = Vec::new();
        while let Some(ev) = self.next_event().await? {
            match ev {
                PolicyEvent::Reset { task: t, .. } => task = t,
                PolicyEvent::Observation { observation, .. } => {
                    let text = policy(task.as_ref(), &observation);
                    self.act(&text).await?;
                }
                PolicyEvent::Close { episode } => {
                    ends.extend(episode.map(|e| *e));
                    if max_episodes.is_some_and(|n| ends.len() >= n) {
                        break;
                    }
                }
            }
        }
        Ok(ends)
    }
}
