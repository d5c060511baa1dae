//! Browser execution layer.
//!
//! A [`BrowserProvider`] hands out isolated [`BrowserSession`]s. Two providers
//! exist: [`mock::MockProvider`] over a deterministic site graph, and
//! [`cdp::CdpProvider`] which attaches to remote Chromium sandboxes over the
//! DevTools protocol.

pub mod cdp;
pub mod graph;
pub mod mock;

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::action::ActionKind;
use crate::config::Viewport;
use crate::dom::{DomSnapshot, IndexedElementMap};
use crate::error::{ProvisionError, SessionLost};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    RemoteCdp,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(BackendKind::Mock),
            "cdp" | "remote_cdp" => Ok(BackendKind::RemoteCdp),
            other => Err(format!("unknown backend `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ExecutionProfile {
    pub viewport: Viewport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_agent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionHandle {
    pub backend_kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ws_endpoint: Option<String>,
    pub trace_id: String,
    pub profile: ExecutionProfile,
}

/// Outcome of executing one action. Failures are values, never errors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ActionResult {
    pub ok: bool,
    pub message: String,
    pub page_changed: bool,
    /// The active document changed (navigation, tab switch). Remaining actions
    /// of the same turn are skipped.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub navigated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub downloads: Vec<String>,
}

impl ActionResult {
    pub fn success(message: impl Into<String>) -> Self {
        ActionResult {
            ok: true,
            message: message.into(),
            ..Default::default()
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        let mut message = message.into();
        if message.is_empty() {
            message = "action failed".into();
        }
        ActionResult {
            ok: false,
            message,
            ..Default::default()
        }
    }

    pub fn changed(mut self) -> Self {
        self.page_changed = true;
        self
    }

    pub fn navigation(mut self) -> Self {
        self.page_changed = true;
        self.navigated = true;
        self
    }

    pub fn with_extracted(mut self, text: impl Into<String>) -> Self {
        self.extracted = Some(text.into());
        self
    }
}

/// One live, single-owner browser session.
#[async_trait]
pub trait BrowserSession: Send {
    fn handle(&self) -> &SessionHandle;

    /// Execute an action previously validated against `elements`.
    async fn execute_action(
        &mut self,
        action: &ActionKind,
        elements: &IndexedElementMap,
    ) -> Result<ActionResult, SessionLost>;

    async fn capture_state(&mut self) -> Result<DomSnapshot, SessionLost>;

    /// Tear the session down. Idempotent; teardown problems are logged only.
    async fn release(&mut self);
}

#[async_trait]
pub trait BrowserProvider: Send + Sync {
    fn kind(&self) -> BackendKind;

    async fn provision(
        &self,
        profile: &ExecutionProfile,
        seed: u64,
    ) -> Result<Box<dyn BrowserSession>, ProvisionError>;

    /// Sessions provisioned and not yet released.
    fn live_sessions(&self) -> usize;
}

/// Tracks which sessions of a provider are alive.
#[derive(Debug, Clone, Default)]
pub struct SessionRegistry {
    live: Arc<Mutex<BTreeSet<String>>>,
}

impl SessionRegistry {
    /// Register `base`, suffixing it if an identical id is already live.
    pub fn register(&self, base: &str) -> Lease {
        let mut live = self.live.lock().expect("registry poisoned");
        let mut id = base.to_string();
        let mut n = 1;
        while live.contains(&id) {
            id = format!("{base}-{n}");
            n += 1;
        }
        live.insert(id.clone());
        Lease {
            registry: self.clone(),
            trace_id: id,
            released: false,
        }
    }

    pub fn len(&self) -> usize {
        self.live.lock().expect("registry poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Registry membership of one session; dropped or released exactly once.
#[derive(Debug)]
pub struct Lease {
    registry: SessionRegistry,
    trace_id: String,
    released: bool,
}

impl Lease {
    pub fn trace_id(&self) -> &str {
        &self.trace_id
    }

    pub fn release(&mut self) {
        if !self.released {
            self.released = true;
            self.registry
                .live
                .lock()
                .expect("registry poisoned")
                .remove(&self.trace_id);
        }
    }

    pub fn is_released(&self) -> bool {
        self.released
    }
}

impl Drop for Lease {
    fn drop(&mut self) {
        self.release();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_suffixes_duplicates_and_counts() {
        let reg = SessionRegistry::default();
        let mut a = reg.register("x");
        let b = reg.register("x");
        assert_eq!(a.trace_id(), "x");
        assert_eq!(b.trace_id(), "x-1");
        assert_eq!(reg.len(), 2);
        a.release();
        a.release();
        assert_eq!(reg.len(), 1);
        drop(b);
        assert!(reg.is_empty());
    }

    #[test]
    fn failure_message_never_empty() {
        assert!(!ActionResult::failure("").message.is_empty());
    }
}
