//! Newline-delimited JSON wire protocol between the environment and external
//! policies. One JSON object per line, discriminated by `type`.
//!
//! Two roles share the message set. A `driver` connection steers episodes
//! itself (`reset`, then `act` per turn). A `policy` connection is handed
//! episodes by a benchmark run: the service pushes `reset` and `observation`
//! and expects one `act` per observation.

use serde::{Deserialize, Serialize};
use tokio::io::{AsyncBufRead, AsyncBufReadExt, AsyncReadExt, AsyncWrite, AsyncWriteExt};

use crate::episode::{EndReason, Observation, ObservationDigest, OutcomeInfo, StepOutcome};
use crate::eval::Verdict;
use crate::prompt::MessageBundle;
use crate::reward::RewardBreakdown;
use crate::task::TaskConfig;

pub const WIRE_VERSION: &str = "1";
/// Longest accepted line, in bytes.
pub const MAX_LINE_BYTES: usize = 8 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WireRole {
    #[default]
    Driver,
    Policy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    ProtocolViolation,
    VersionMismatch,
    UnknownTask,
    EpisodeFinished,
    IdleTimeout,
    Internal,
}

/// What the policy sees each turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationPayload {
    pub digest: ObservationDigest,
    pub bundle: MessageBundle,
    pub user_message: String,
}

impl From<&Observation> for ObservationPayload {
    fn from(o: &Observation) -> Self {
        ObservationPayload {
            digest: o.digest.clone(),
            bundle: o.bundle.clone(),
            user_message: o.user_message.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResultPayload {
    pub observation: ObservationPayload,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: OutcomeInfo,
}

impl From<&StepOutcome> for StepResultPayload {
    fn from(o: &StepOutcome) -> Self {
        StepResultPayload {
            observation: ObservationPayload::from(&o.observation),
            reward: o.reward,
            terminated: o.terminated,
            truncated: o.truncated,
            info: o.info.clone(),
        }
    }
}

/// Outcome of a finished episode, sent with `close`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEnd {
    pub task_id: String,
    pub trace_id: String,
    pub steps: usize,
    pub reason: Option<EndReason>,
    pub verdict: Verdict,
    pub reward: RewardBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Hello {
        version: String,
        #[serde(default)]
        role: WireRole,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session_id: Option<String>,
    },
    Reset {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session_id: Option<String>,
        task_id: String,
        /// Pushed to policy connections so they know what they work on.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        task: Option<TaskConfig>,
    },
    Observation {
        session_id: String,
        task_id: String,
        step: u32,
        observation: ObservationPayload,
    },
    Act {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session_id: Option<String>,
        /// Raw model output.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<String>,
        /// Structured output object; serialized and parsed like raw text.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        envelope: Option<serde_json::Value>,
    },
    StepResult {
        session_id: String,
        outcome: StepResultPayload,
    },
    Close {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        episode: Option<EpisodeEnd>,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session_id: Option<String>,
        code: ErrorCode,
        message: String,
    },
}

impl WireMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            WireMessage::Hello { .. } => "hello",
            WireMessage::Reset { .. } => "reset",
            WireMessage::Observation { .. } => "observation",
            WireMessage::Act { .. } => "act",
            WireMessage::StepResult { .. } => "step_result",
            WireMessage::Close { .. } => "close",
            WireMessage::Error { .. } => "error",
        }
    }

    pub fn error(session_id: Option<String>, code: ErrorCode, message: impl Into<String>) -> Self {
        WireMessage::Error {
            session_id,
            code,
            message: message.into(),
        }
    }

    /// The model text carried by an `act`.
    pub fn act_text(&self) -> Option<Result<String, String>> {
        match self {
            WireMessage::Act { text, envelope, .. } => Some(match (text, envelope) {
                (Some(t), None) => Ok(t.clone()),
                (None, Some(e)) => Ok(e.to_string()),
                _ => Err("act needs exactly one of `text` or `envelope`".into()),
            }),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("line exceeds {MAX_LINE_BYTES} bytes")]
    TooLong,
}

pub fn encode(msg: &WireMessage) -> String {
    let mut s = serde_json::to_string(msg).expect("wire messages serialize");
    s.push('\n');
    s
}

pub async fn write_message<W: AsyncWrite + Unpin>(w: &mut W, msg: &WireMessage) -> Result<(), WireError> {
    w.write_all(encode(msg).as_bytes()).await?;
    w.flush().await?;
    Ok(())
}

/// Next message, or `None` at end of stream. Blank lines are skipped.
pub async fn read_message<R: AsyncBufRead + Unpin>(r: &mut R) -> Result<Option<WireMessage>, WireError> {
    loop {
        let mut buf = Vec::new();
        let n = (&mut *r)
            .take(MAX_LINE_BYTES as u64 + 1)
            .read_until(b'\n', &mut buf)
            .await?;
        if n == 0 {
            return Ok(None);
        }
        if buf.len() > MAX_LINE_BYTES {
            return Err(WireError::TooLong);
        }
        let line = String::from_utf8(buf).map_err(|e| WireError::Malformed(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        return serde_json::from_str(line.trim_end())
            .map(Some)
            .map_err(|e| WireError::Malformed(e.to_string()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn messages_are_single_tagged_lines() {
        let m = WireMessage::Hello {
            version: WIRE_VERSION.into(),
            role: WireRole::Driver,
            session_id: None,
        };
        assert_eq!(encode(&m), "{\"type\":\"hello\",\"version\":\"1\",\"role\":\"driver\"}\n");
        let back: WireMessage = serde_json::from_str(r#"{"type":"act","text":"{}"}"#).unwrap();
        assert_eq!(back.act_text(), Some(Ok("{}".to_string())));
        let both: WireMessage =
            serde_json::from_str(r#"{"type":"act","text":"{}","envelope":{}}"#).unwrap();
        assert!(matches!(both.act_text(), Some(Err(_))));
    }

    #[tokio::test]
    async fn reader_skips_blank_lines_and_reports_garbage() {
        let data = b"\n{\"type\":\"close\"}\nnot json\n".to_vec();
        let mut r = tokio::io::BufReader::new(&data[..]);
        assert!(matches!(read_message(&mut r).await.unwrap(), Some(WireMessage::Close { .. })));
        assert!(matches!(read_message(&mut r).await, Err(WireError::Malformed(_))));
        assert!(read_message(&mut r).await.unwrap().is_none());
    }
}
