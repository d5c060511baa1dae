//! Remote Chromium sessions over the DevTools protocol.
//!
//! A session provider hands out browsers over HTTP; each session is then
//! driven through one WebSocket using flattened target sessions. The attach
//! handshake is documented in `docs/cdp-attach.md`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::client::IntoClientRequest;
use tokio_tungstenite::tungstenite::http::HeaderValue;
use tokio_tungstenite::tungstenite::Message;

use super::{
    ActionResult, BackendKind, BrowserProvider, BrowserSession, ExecutionProfile, Lease,
    SessionHandle, SessionRegistry,
};
use crate::action::{ActionKind, SearchEngine};
use crate::config::Viewport;
use crate::dom::{DomNode, DomSnapshot, IndexedElementMap, TabInfo};
use crate::error::{ProvisionError, SessionLost};

pub const ENV_PROVIDER_URL: &str = "WEBENV_PROVIDER_URL";
pub const ENV_PROVIDER_TOKEN: &str = "WEBENV_PROVIDER_TOKEN";
pub const ENV_CAPTCHA_SOLVER_URL: &str = "WEBENV_CAPTCHA_SOLVER_URL";
pub const TRACE_ID_HEADER: &str = "X-Trace-Id";
pub const SESSIONS_PATH: &str = "/v1/sessions";
pub const SNAPSHOT_SCRIPT: &str = include_str!("../../assets/cdp_snapshot.js");

const EXTRACT_LIMIT: usize = 4000;
const EVAL_RESULT_LIMIT: usize = 2000;

#[derive(Debug, Clone)]
pub struct CdpConfig {
    pub provider_url: String,
    pub token: Option<String>,
    pub captcha_solver_url: Option<String>,
    pub provision_timeout: Duration,
    pub command_timeout: Duration,
    pub load_timeout: Duration,
    /// Pause after input that may trigger navigation, before checking the URL.
    pub settle: Duration,
}

impl CdpConfig {
    pub fn new(provider_url: impl Into<String>) -> Self {
        CdpConfig {
            provider_url: provider_url.into().trim_end_matches('/').to_string(),
            token: None,
            captcha_solver_url: None,
            provision_timeout: Duration::from_secs(60),
            command_timeout: Duration::from_secs(30),
            load_timeout: Duration::from_secs(15),
            settle: Duration::from_millis(300),
        }
    }

    /// Read provider URL, token and solver URL from the environment.
    pub fn from_env() -> Result<Self, ProvisionError> {
        let url = std::env::var(ENV_PROVIDER_URL)
            .map_err(|_| ProvisionError::Unreachable(format!("{ENV_PROVIDER_URL} is not set")))?;
        let mut cfg = CdpConfig::new(url);
        cfg.token = std::env::var(ENV_PROVIDER_TOKEN).ok().filter(|t| !t.is_empty());
        cfg.captcha_solver_url = std::env::var(ENV_CAPTCHA_SOLVER_URL)
            .ok()
            .filter(|t| !t.is_empty());
        Ok(cfg)
    }
}

#[derive(Debug, Serialize)]
pub struct ProvisionRequest<'a> {
    pub seed: u64,
    pub viewport: Viewport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proxy: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub locale: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user_agent: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvisionResponse {
    pub trace_id: String,
    pub ws_endpoint: String,
}

pub struct CdpProvider {
    cfg: CdpConfig,
    http: reqwest::Client,
    registry: SessionRegistry,
}

impl CdpProvider {
    pub fn new(cfg: CdpConfig) -> Self {
        CdpProvider {
            cfg,
            http: reqwest::Client::new(),
            registry: SessionRegistry::default(),
        }
    }

    async fn request_session(
        &self,
        profile: &ExecutionProfile,
        seed: u64,
    ) -> Result<ProvisionResponse, ProvisionError> {
        let body = ProvisionRequest {
            seed,
            viewport: profile.viewport,
            proxy: profile.proxy.as_deref(),
            locale: profile.locale.as_deref(),
            user_agent: profile.user_agent.as_deref(),
        };
        let mut req = self
            .http
            .post(format!("{}{SESSIONS_PATH}", self.cfg.provider_url))
            .json(&body);
        if let Some(t) = &self.cfg.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().await.map_err(|e| {
            if e.is_timeout() {
                ProvisionError::Timeout(self.cfg.provision_timeout.as_millis() as u64)
            } else {
                ProvisionError::Unreachable(e.to_string())
            }
        })?;
        let status = resp.status();
        if status.as_u16() == 429 {
            return Err(ProvisionError::Quota);
        }
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            return Err(ProvisionError::Rejected(format!("{status}: {text}")));
        }
        let parsed: ProvisionResponse = resp
            .json()
            .await
            .map_err(|e| ProvisionError::Rejected(format!("bad provider reply: {e}")))?;
        if parsed.trace_id.is_empty() || parsed.ws_endpoint.is_empty() {
            return Err(ProvisionError::Rejected(
                "provider reply lacks trace_id or ws_endpoint".into(),
            ));
        }
        Ok(parsed)
    }

    async fn delete_session(http: &reqwest::Client, cfg: &CdpConfig, trace_id: &str) {
        let mut req = http.delete(format!("{}{SESSIONS_PATH}/{trace_id}", cfg.provider_url));
        if let Some(t) = &cfg.token {
            req = req.bearer_auth(t);
        }
        match req.timeout(cfg.command_timeout).send().await {
            Ok(r) if r.status().is_success() => {}
            Ok(r) => tracing::warn!(trace_id, status = %r.status(), "session teardown rejected"),
            Err(e) => tracing::warn!(trace_id, error = %e, "session teardown failed"),
        }
    }

    async fn attach(
        &self,
        session: &ProvisionResponse,
        profile: &ExecutionProfile,
    ) -> Result<(Connection, CdpTab), ProvisionError> {
        let conn = Connection::open(&session.ws_endpoint, &session.trace_id, self.cfg.command_timeout)
            .await
            .map_err(|e| ProvisionError::Attach(e.to_string()))?;
        let targets = conn
            .call("Target.getTargets", json!({}), None)
            .await
            .map_err(|e| ProvisionError::Attach(e.to_string()))?;
        let existing = targets["targetInfos"]
            .as_array()
            .into_iter()
            .flatten()
            .find(|t| t["type"] == "page")
            .and_then(|t| t["targetId"].as_str())
            .map(str::to_string);
        let target_id = match existing {
            Some(id) => id,
            None => conn
                .call("Target.createTarget", json!({"url": "about:blank"}), None)
                .await
                .map_err(|e| ProvisionError::Attach(e.to_string()))?["targetId"]
                .as_str()
                .ok_or_else(|| ProvisionError::Attach("createTarget returned no id".into()))?
                .to_string(),
        };
        let tab = attach_target(&conn, &target_id, profile)
            .await
            .map_err(|e| ProvisionError::Attach(e.to_string()))?;
        Ok((conn, tab))
    }
}

#[async_trait]
impl BrowserProvider for CdpProvider {
    fn kind(&self) -> BackendKind {
        BackendKind::RemoteCdp
    }

    async fn provision(
        &self,
        profile: &ExecutionProfile,
        seed: u64,
    ) -> Result<Box<dyn BrowserSession>, ProvisionError> {
        let session = tokio::time::timeout(self.cfg.provision_timeout, self.request_session(profile, seed))
            .await
            .map_err(|_| ProvisionError::Timeout(self.cfg.provision_timeout.as_millis() as u64))??;
        let attached = tokio::time::timeout(self.cfg.provision_timeout, self.attach(&session, profile))
            .await
            .unwrap_or_else(|_| Err(ProvisionError::Timeout(self.cfg.provision_timeout.as_millis() as u64)));
        let (conn, tab) = match attached {
            Ok(v) => v,
            Err(e) => {
                Self::delete_session(&self.http, &self.cfg, &session.trace_id).await;
                return Err(e);
            }
        };
        let lease = self.registry.register(&session.trace_id);
        Ok(Box::new(CdpSession {
            handle: SessionHandle {
                backend_kind: BackendKind::RemoteCdp,
                ws_endpoint: Some(session.ws_endpoint.clone()),
                trace_id: session.trace_id.clone(),
                profile: profile.clone(),
            },
            lease,
            cfg: self.cfg.clone(),
            http: self.http.clone(),
            conn: Some(conn),
            profile: profile.clone(),
            tabs: vec![tab],
            active: 0,
            screenshot: None,
        }))
    }

    fn live_sessions(&self) -> usize {
        self.registry.len()
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum CdpError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("command {0} timed out")]
    Timeout(String),
    #[error("protocol error {code}: {message}")]
    Protocol { code: i64, message: String },
    #[error("script error: {0}")]
    Script(String),
}

impl CdpError {
    fn is_fatal(&self) -> bool {
        matches!(self, CdpError::Transport(_) | CdpError::Timeout(_))
    }
}

type Pending = Arc<Mutex<HashMap<u64, oneshot::Sender<Result<Value, CdpError>>>>>;

/// One DevTools WebSocket with request/response correlation.
pub struct Connection {
    out: mpsc::UnboundedSender<Message>,
    pending: Pending,
    next_id: AtomicU64,
    closed: Arc<AtomicBool>,
    timeout: Duration,
    tasks: Vec<JoinHandle<()>>,
}

impl Connection {
    pub async fn open(url: &str, trace_id: &str, timeout: Duration) -> Result<Self, CdpError> {
        let mut req = url
            .into_client_request()
            .map_err(|e| CdpError::Transport(e.to_string()))?;
        req.headers_mut().insert(
            TRACE_ID_HEADER,
            HeaderValue::from_str(trace_id).map_err(|e| CdpError::Transport(e.to_string()))?,
        );
        let (ws, _) = tokio::time::timeout(timeout, tokio_tungstenite::connect_async(req))
            .await
            .map_err(|_| CdpError::Timeout("connect".into()))?
            .map_err(|e| CdpError::Transport(e.to_string()))?;
        let (mut sink, mut stream) = ws.split();
        let (out, mut rx) = mpsc::unbounded_channel::<Message>();
        let pending: Pending = Arc::default();
        let closed = Arc::new(AtomicBool::new(false));

        let writer = tokio::spawn(async move {
            while let Some(m) = rx.recv().await {
                if sink.send(m).await.is_err() {
                    break;
                }
            }
            let _ = sink.close().await;
        });
        let reader = {
            let pending = pending.clone();
            let closed = closed.clone();
            tokio::spawn(async move {
                while let Some(msg) = stream.next().await {
                    let text = match msg {
                        Ok(Message::Text(t)) => t.to_string(),
                        Ok(Message::Close(_)) | Err(_) => break,
                        Ok(_) => continue,
                    };
                    let Ok(v) = serde_json::from_str::<Value>(&text) else {
                        continue;
                    };
                    let Some(id) = v.get("id").and_then(Value::as_u64) else {
                        continue;
                    };
                    let reply = match v.get("error") {
                        Some(e) => Err(CdpError::Protocol {
                            code: e["code"].as_i64().unwrap_or(0),
                            message: e["message"].as_str().unwrap_or("").to_string(),
                        }),
                        None => Ok(v.get("result").cloned().unwrap_or(Value::Null)),
                    };
                    if let Some(tx) = pending.lock().expect("pending poisoned").remove(&id) {
                        let _ = tx.send(reply);
                    }
                }
                closed.store(true, Ordering::SeqCst);
                for (_, tx) in pending.lock().expect("pending poisoned").drain() {
                    let _ = tx.send(Err(CdpError::Transport("connection closed".into())));
                }
            })
        };
        Ok(Connection {
            out,
            pending,
            next_id: AtomicU64::new(1),
            closed,
            timeout,
            tasks: vec![writer, reader],
        })
    }

    pub async fn call(
        &self,
        method: &str,
        params: Value,
        session_id: Option<&str>,
    ) -> Result<Value, CdpError> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(CdpError::Transport("connection closed".into()));
        }
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let mut msg = json!({"id": id, "method": method, "params": params});
        if let Some(s) = session_id {
            msg["sessionId"] = Value::String(s.to_string());
        }
        let (tx, rx) = oneshot::channel();
        self.pending.lock().expect("pending poisoned").insert(id, tx);
        if self.out.send(Message::text(msg.to_string())).is_err() {
            self.pending.lock().expect("pending poisoned").remove(&id);
            return Err(CdpError::Transport("connection closed".into()));
        }
        match tokio::time::timeout(self.timeout, rx).await {
            Ok(Ok(r)) => r,
            Ok(Err(_)) => Err(CdpError::Transport("connection closed".into())),
            Err(_) => {
                self.pending.lock().expect("pending poisoned").remove(&id);
                Err(CdpError::Timeout(method.to_string()))
            }
        }
    }

    fn shutdown(&mut self) {
        let _ = self.out.send(Message::Close(None));
        for t in self.tasks.drain(..) {
            t.abort();
        }
        self.closed.store(true, Ordering::SeqCst);
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[derive(Debug, Clone)]
struct CdpTab {
    target_id: String,
    session_id: String,
    tab_id: String,
}

fn short_tab_id(target_id: &str) -> String {
    let n = target_id.chars().count();
    target_id.chars().skip(n.saturating_sub(4)).collect()
}

async fn attach_target(
    conn: &Connection,
    target_id: &str,
    profile: &ExecutionProfile,
) -> Result<CdpTab, CdpError> {
    let attached = conn
        .call(
            "Target.attachToTarget",
            json!({"targetId": target_id, "flatten": true}),
            None,
        )
        .await?;
    let session_id = attached["sessionId"]
        .as_str()
        .ok_or_else(|| CdpError::Transport("attachToTarget returned no session".into()))?
        .to_string();
    let s = Some(session_id.as_str());
    conn.call("Page.enable", json!({}), s).await?;
    conn.call("Runtime.enable", json!({}), s).await?;
    conn.call(
        "Emulation.setDeviceMetricsOverride",
        json!({
            "width": profile.viewport.width,
            "height": profile.viewport.height,
            "deviceScaleFactor": 1,
            "mobile": false
        }),
        s,
    )
    .await?;
    if let Some(ua) = &profile.user_agent {
        conn.call("Emulation.setUserAgentOverride", json!({"userAgent": ua}), s)
            .await?;
    }
    if let Some(locale) = &profile.locale {
        conn.call("Emulation.setLocaleOverride", json!({"locale": locale}), s)
            .await?;
    }
    Ok(CdpTab {
        target_id: target_id.to_string(),
        session_id,
        tab_id: short_tab_id(target_id),
    })
}

pub fn search_url(engine: SearchEngine, query: &str) -> String {
    let base = match engine {
        SearchEngine::Duckduckgo => "https://duckduckgo.com/",
        SearchEngine::Google => "https://www.google.com/search",
        SearchEngine::Bing => "https://www.bing.com/search",
    };
    reqwest::Url::parse_with_params(base, &[("q", query)])
        .expect("static base URL parses")
        .to_string()
}

/// JS expression running `body` with `el` bound to the element recorded at
/// `path` by the last snapshot. `body` must return `{ok, message?, value?}`.
fn with_element(path: &str, body: &str) -> String {
    let p = serde_json::to_string(path).expect("string serializes");
    format!(
        "(() => {{ const el = (window.__webenvPaths || {{}})[{p}]; \
         if (!el || !el.isConnected) return {{ok: false, message: 'element no longer present'}}; \
         {body} }})()"
    )
}

#[derive(Debug, Deserialize)]
struct ScriptReply {
    ok: bool,
    #[serde(default)]
    message: String,
    #[serde(default)]
    value: Option<String>,
}

#[derive(Debug, Deserialize)]
struct PageDump {
    root: DomNode,
    url: String,
    title: String,
    text: String,
}

pub struct CdpSession {
    handle: SessionHandle,
    lease: Lease,
    cfg: CdpConfig,
    http: reqwest::Client,
    conn: Option<Connection>,
    profile: ExecutionProfile,
    tabs: Vec<CdpTab>,
    active: usize,
    /// Hash of a screenshot taken since the last capture.
    screenshot: Option<String>,
}

impl CdpSession {
    fn conn(&self) -> Result<&Connection, CdpError> {
        self.conn
            .as_ref()
            .ok_or_else(|| CdpError::Transport("session released".into()))
    }

    async fn page(&self, method: &str, params: Value) -> Result<Value, CdpError> {
        let tab = &self.tabs[self.active];
        self.conn()?.call(method, params, Some(&tab.session_id)).await
    }

    async fn eval(&self, expression: &str) -> Result<Value, CdpError> {
        let r = self
            .page(
                "Runtime.evaluate",
                json!({"expression": expression, "returnByValue": true, "awaitPromise": true}),
            )
            .await?;
        if let Some(ex) = r.get("exceptionDetails") {
            let text = ex["exception"]["description"]
                .as_str()
                .or_else(|| ex["text"].as_str())
                .unwrap_or("exception");
            return Err(CdpError::Script(text.to_string()));
        }
        Ok(r["result"]["value"].clone())
    }

    async fn script(&self, expression: &str) -> Result<ScriptReply, CdpError> {
        let v = self.eval(expression).await?;
        serde_json::from_value(v).map_err(|e| CdpError::Script(format!("unexpected reply: {e}")))
    }

    async fn url(&self) -> Result<String, CdpError> {
        Ok(self.eval("location.href").await?.as_str().unwrap_or("").to_string())
    }

    async fn wait_loaded(&self) -> Result<(), CdpError> {
        let deadline = tokio::time::Instant::now() + self.cfg.load_timeout;
        loop {
            match self.eval("document.readyState").await {
                Ok(v) if v == "complete" => return Ok(()),
                Ok(_) | Err(CdpError::Script(_)) | Err(CdpError::Protocol { .. }) => {}
                Err(e) => return Err(e),
            }
            if tokio::time::Instant::now() >= deadline {
                return Ok(());
            }
            tokio::time::sleep(Duration::from_millis(100)).await;
        }
    }

    /// Run an element script, then classify the effect by URL change.
    async fn element_action(&self, path: &str, body: &str, verb: &str) -> Result<ActionResult, CdpError> {
        let before = self.url().await?;
        let reply = self.script(&with_element(path, body)).await?;
        if !reply.ok {
            return Ok(ActionResult::failure(reply.message));
        }
        tokio::time::sleep(self.cfg.settle).await;
        self.wait_loaded().await?;
        let after = self.url().await?;
        let msg = if reply.message.is_empty() { verb.to_string() } else { reply.message };
        Ok(if after != before {
            ActionResult::success(msg).navigation()
        } else {
            ActionResult::success(msg).changed()
        })
    }

    async fn navigate(&mut self, url: &str, new_tab: bool) -> Result<ActionResult, CdpError> {
        if new_tab {
            let created = self
                .conn()?
                .call("Target.createTarget", json!({"url": url}), None)
                .await?;
            let target = created["targetId"]
                .as_str()
                .ok_or_else(|| CdpError::Script("createTarget returned no id".into()))?
                .to_string();
            let tab = attach_target(self.conn()?, &target, &self.profile).await?;
            self.tabs.push(tab);
            self.active = self.tabs.len() - 1;
        } else {
            let r = self.page("Page.navigate", json!({"url": url})).await?;
            if let Some(err) = r.get("errorText").and_then(Value::as_str) {
                if !err.is_empty() {
                    return Ok(ActionResult::failure(format!("navigation to {url} failed: {err}")));
                }
            }
        }
        self.wait_loaded().await?;
        Ok(ActionResult::success(format!("navigated to {url}")).navigation())
    }

    async fn key(&self, keys: &str) -> Result<ActionResult, CdpError> {
        let mut modifiers = 0;
        let parts: Vec<&str> = keys.split('+').map(str::trim).collect();
        let (key, mods) = parts.split_last().expect("split yields one part");
        for m in mods {
            modifiers |= match m.to_ascii_lowercase().as_str() {
                "alt" => 1,
                "control" | "ctrl" => 2,
                "meta" | "cmd" => 4,
                "shift" => 8,
                _ => return Ok(ActionResult::failure(format!("unknown modifier {m}"))),
            };
        }
        let text = match *key {
            "Enter" => Some("\r".to_string()),
            k if k.chars().count() == 1 => Some(k.to_string()),
            _ => None,
        };
        let mut down = json!({"type": "keyDown", "key": key, "modifiers": modifiers});
        if let Some(t) = &text {
            down["text"] = Value::String(t.clone());
        }
        self.page("Input.dispatchKeyEvent", down).await?;
        self.page(
            "Input.dispatchKeyEvent",
            json!({"type": "keyUp", "key": key, "modifiers": modifiers}),
        )
        .await?;
        tokio::time::sleep(self.cfg.settle).await;
        self.wait_loaded().await?;
        Ok(ActionResult::success(format!("sent keys {keys}")).changed())
    }

    async fn screenshot_data(&self) -> Result<String, CdpError> {
        let r = self
            .page("Page.captureScreenshot", json!({"format": "png"}))
            .await?;
        Ok(r["data"].as_str().unwrap_or("").to_string())
    }

    async fn solve_captcha(&self) -> Result<ActionResult, CdpError> {
        let Some(solver) = &self.cfg.captcha_solver_url else {
            return Ok(ActionResult::failure("no captcha solver configured"));
        };
        let shot = self.screenshot_data().await?;
        let url = self.url().await?;
        let reply = self
            .http
            .post(solver)
            .timeout(self.cfg.command_timeout)
            .json(&json!({"trace_id": self.handle.trace_id, "url": url, "screenshot_png_base64": shot}))
            .send()
            .await;
        let drag: Value = match reply {
            Ok(r) if r.status().is_success() => match r.json().await {
                Ok(v) => v,
                Err(e) => return Ok(ActionResult::failure(format!("captcha solver reply unreadable: {e}"))),
            },
            Ok(r) => return Ok(ActionResult::failure(format!("captcha solver returned {}", r.status()))),
            Err(e) => return Ok(ActionResult::failure(format!("captcha solver unreachable: {e}"))),
        };
        let coord = |p: &str, k: &str| drag[p][k].as_f64();
        let (Some(x0), Some(y0), Some(x1), Some(y1)) =
            (coord("from", "x"), coord("from", "y"), coord("to", "x"), coord("to", "y"))
        else {
            return Ok(ActionResult::failure("captcha solver gave no drag path"));
        };
        self.page(
            "Input.dispatchMouseEvent",
            json!({"type": "mousePressed", "x": x0, "y": y0, "button": "left", "clickCount": 1}),
        )
        .await?;
        for i in 1..=10 {
            let t = f64::from(i) / 10.0;
            self.page(
                "Input.dispatchMouseEvent",
                json!({"type": "mouseMoved", "x": x0 + (x1 - x0) * t, "y": y0 + (y1 - y0) * t, "button": "left"}),
            )
            .await?;
        }
        self.page(
            "Input.dispatchMouseEvent",
            json!({"type": "mouseReleased", "x": x1, "y": y1, "button": "left", "clickCount": 1}),
        )
        .await?;
        tokio::time::sleep(self.cfg.settle).await;
        self.wait_loaded().await?;
        Ok(ActionResult::success("slider dragged").changed())
    }

    async fn run(&mut self, action: &ActionKind, elements: &IndexedElementMap) -> Result<ActionResult, CdpError> {
        let path_of = |index: u32| elements.get(index).map(|e| e.path.clone());
        let missing = |index: u32| ActionResult::failure(format!("element {index} not found"));
        match action {
            ActionKind::Click { index } => match path_of(*index) {
                Some(p) => {
                    self.element_action(&p, "el.scrollIntoView({block: 'center'}); el.click(); return {ok: true};", &format!("clicked element {index}"))
                        .await
                }
                None => Ok(missing(*index)),
            },
            ActionKind::Input { index, text, clear } => {
                let Some(p) = path_of(*index) else {
                    return Ok(missing(*index));
                };
                let body = format!(
                    "el.focus(); if ({clear}) {{ if ('value' in el) el.value = ''; else el.textContent = ''; }} return {{ok: true}};"
                );
                let r = self.script(&with_element(&p, &body)).await?;
                if !r.ok {
                    return Ok(ActionResult::failure(r.message));
                }
                self.page("Input.insertText", json!({"text": text})).await?;
                let fire = "el.dispatchEvent(new Event('input', {bubbles: true})); el.dispatchEvent(new Event('change', {bubbles: true})); return {ok: true};";
                self.script(&with_element(&p, fire)).await?;
                Ok(ActionResult::success(format!("typed \"{text}\" into element {index}")).changed())
            }
            ActionKind::Done { .. } => Ok(ActionResult::success("done")),
            ActionKind::Search { query, engine } => {
                let url = search_url(*engine, query);
                let mut r = self.navigate(&url, false).await?;
                if r.ok {
                    r.message = format!("searched {} for \"{query}\"", engine.as_str());
                }
                Ok(r)
            }
            ActionKind::Navigate { url, new_tab } => self.navigate(url, *new_tab).await,
            ActionKind::Scroll { down, pages, index } => {
                let sign = if *down { 1.0 } else { -1.0 };
                let dy = format!("{} * window.innerHeight", sign * pages);
                let expr = match index {
                    Some(i) => match path_of(*i) {
                        Some(p) => with_element(&p, &format!("el.scrollBy(0, {dy}); return {{ok: true}};")),
                        None => return Ok(missing(*i)),
                    },
                    None => format!("(() => {{ window.scrollBy(0, {dy}); return {{ok: true}}; }})()"),
                };
                let r = self.script(&expr).await?;
                Ok(if r.ok {
                    ActionResult::success(format!("scrolled {} {pages} pages", if *down { "down" } else { "up" })).changed()
                } else {
                    ActionResult::failure(r.message)
                })
            }
            ActionKind::Wait { seconds } => {
                tokio::time::sleep(Duration::from_secs(u64::from(*seconds))).await;
                Ok(ActionResult::success(format!("waited {seconds} seconds")))
            }
            ActionKind::GoBack {} => {
                let before = self.url().await?;
                self.eval("history.back()").await?;
                tokio::time::sleep(self.cfg.settle).await;
                self.wait_loaded().await?;
                let after = self.url().await?;
                Ok(if after == before {
                    ActionResult::failure("no previous page")
                } else {
                    ActionResult::success("went back").navigation()
                })
            }
            ActionKind::Refresh {} => {
                self.page("Page.reload", json!({})).await?;
                self.wait_loaded().await?;
                Ok(ActionResult::success("page refreshed").navigation())
            }
            ActionKind::Switch { tab_id } => match self.tabs.iter().position(|t| &t.tab_id == tab_id) {
                Some(i) => {
                    let target = self.tabs[i].target_id.clone();
                    self.conn()?
                        .call("Target.activateTarget", json!({"targetId": target}), None)
                        .await?;
                    self.active = i;
                    Ok(ActionResult::success(format!("switched to tab {tab_id}")).navigation())
                }
                None => Ok(ActionResult::failure(format!("tab {tab_id} not found"))),
            },
            ActionKind::SendKeys { keys } => self.key(keys).await,
            ActionKind::Extract {
                query,
                extract_links,
                start_from_char,
            } => {
                let links = if *extract_links {
                    "Array.from(document.links).map(a => (a.innerText || '').trim() + ' <' + a.href + '>').join('\\n')"
                } else {
                    "''"
                };
                let v = self
                    .eval(&format!("(() => ({{text: document.body ? document.body.innerText : '', links: {links}}}))()"))
                    .await?;
                let text = v["text"].as_str().unwrap_or("");
                let text: String = text.chars().skip(*start_from_char as usize).collect();
                let mut out = focus_lines(&text, query);
                if let Some(l) = v["links"].as_str().filter(|l| !l.is_empty()) {
                    out.push_str("\nLinks:\n");
                    out.push_str(l);
                }
                let out: String = out.chars().take(EXTRACT_LIMIT).collect();
                Ok(ActionResult::success(format!("extracted content for \"{query}\"")).with_extracted(out))
            }
            ActionKind::Close { tab_id } => {
                let Some(i) = self.tabs.iter().position(|t| &t.tab_id == tab_id) else {
                    return Ok(ActionResult::failure(format!("tab {tab_id} not found")));
                };
                if self.tabs.len() == 1 {
                    return Ok(ActionResult::failure("cannot close the last tab"));
                }
                let target = self.tabs[i].target_id.clone();
                self.conn()?
                    .call("Target.closeTarget", json!({"targetId": target}), None)
                    .await?;
                self.tabs.remove(i);
                let was_active = i == self.active;
                if self.active >= i && self.active > 0 {
                    self.active -= 1;
                }
                let r = ActionResult::success(format!("closed tab {tab_id}"));
                Ok(if was_active { r.navigation() } else { r })
            }
            ActionKind::FindText { text } => {
                let t = serde_json::to_string(text).expect("string serializes");
                let expr = format!(
                    "(() => {{ const w = document.createTreeWalker(document.body, NodeFilter.SHOW_TEXT); \
                     while (w.nextNode()) {{ if (w.currentNode.textContent.includes({t})) {{ \
                     w.currentNode.parentElement.scrollIntoView({{block: 'center'}}); return {{ok: true}}; }} }} \
                     return {{ok: false, message: 'text not found on page'}}; }})()"
                );
                let r = self.script(&expr).await?;
                Ok(if r.ok {
                    ActionResult::success(format!("scrolled to \"{text}\"")).changed()
                } else {
                    ActionResult::failure(format!("text \"{text}\" not found on page"))
                })
            }
            ActionKind::Screenshot {} => {
                let data = self.screenshot_data().await?;
                self.screenshot = Some(hex::encode(Sha256::digest(data.as_bytes())));
                Ok(ActionResult::success("screenshot captured"))
            }
            ActionKind::SolveSliderCaptcha {} => self.solve_captcha().await,
            ActionKind::DropdownOptions { index } => {
                let Some(p) = path_of(*index) else {
                    return Ok(missing(*index));
                };
                let body = "if (!el.options) return {ok: false, message: 'element is not a dropdown'}; \
                            return {ok: true, value: Array.from(el.options).map((o, i) => i + ': ' + o.text).join('\\n')};";
                let r = self.script(&with_element(&p, body)).await?;
                Ok(if r.ok {
                    ActionResult::success(format!("options of element {index}:\n{}", r.value.unwrap_or_default()))
                } else {
                    ActionResult::failure(r.message)
                })
            }
            ActionKind::SelectDropdown { index, text } => {
                let Some(p) = path_of(*index) else {
                    return Ok(missing(*index));
                };
                let t = serde_json::to_string(text).expect("string serializes");
                let body = format!(
                    "if (!el.options) return {{ok: false, message: 'element is not a dropdown'}}; \
                     const o = Array.from(el.options).find(o => o.text.trim() === {t} || o.value === {t}); \
                     if (!o) return {{ok: false, message: 'option not found'}}; \
                     el.value = o.value; el.dispatchEvent(new Event('change', {{bubbles: true}})); return {{ok: true}};"
                );
                self.element_action(&p, &body, &format!("selected \"{text}\" in element {index}"))
                    .await
            }
            ActionKind::Evaluate { code } => match self.eval(code).await {
                Ok(v) => {
                    let shown = match &v {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    };
                    let shown: String = shown.chars().take(EVAL_RESULT_LIMIT).collect();
                    Ok(ActionResult::success("evaluated").with_extracted(shown))
                }
                Err(CdpError::Script(e)) => Ok(ActionResult::failure(format!("script error: {e}"))),
                Err(e) => Err(e),
            },
        }
    }

    async fn tabs_info(&self) -> Result<Vec<TabInfo>, CdpError> {
        let targets = self.conn()?.call("Target.getTargets", json!({}), None).await?;
        let infos = targets["targetInfos"].as_array().cloned().unwrap_or_default();
        Ok(self
            .tabs
            .iter()
            .map(|t| {
                let info = infos.iter().find(|i| i["targetId"] == t.target_id.as_str());
                TabInfo {
                    tab_id: t.tab_id.clone(),
                    url: info.and_then(|i| i["url"].as_str()).unwrap_or("").to_string(),
                    title: info.and_then(|i| i["title"].as_str()).unwrap_or("").to_string(),
                }
            })
            .collect())
    }
}

/// Lines of `text` mentioning any query word; all of it if none do.
fn focus_lines(text: &str, query: &str) -> String {
    let words: Vec<String> = query
        .split_whitespace()
        .filter(|w| w.len() > 2)
        .map(str::to_lowercase)
        .collect();
    let hits: Vec<&str> = text
        .lines()
        .filter(|l| {
            let l = l.to_lowercase();
            words.iter().any(|w| l.contains(w.as_str()))
        })
        .collect();
    if hits.is_empty() {
        text.to_string()
    } else {
        hits.join("\n")
    }
}

fn lost(e: CdpError) -> SessionLost {
    SessionLost(e.to_string())
}

#[async_trait]
impl BrowserSession for CdpSession {
    fn handle(&self) -> &SessionHandle {
        &self.handle
    }

    async fn execute_action(
        &mut self,
        action: &ActionKind,
        elements: &IndexedElementMap,
    ) -> Result<ActionResult, SessionLost> {
        match self.run(action, elements).await {
            Ok(r) => Ok(r),
            Err(e) if e.is_fatal() => Err(lost(e)),
            Err(e) => Ok(ActionResult::failure(e.to_string())),
        }
    }

    async fn capture_state(&mut self) -> Result<DomSnapshot, SessionLost> {
        let raw = self.eval(SNAPSHOT_SCRIPT).await.map_err(lost)?;
        let dump: PageDump = serde_json::from_str(raw.as_str().unwrap_or(""))
            .map_err(|e| SessionLost(format!("unreadable page snapshot: {e}")))?;
        let open_tabs = self.tabs_info().await.map_err(lost)?;
        Ok(DomSnapshot {
            root: dump.root,
            current_url: dump.url,
            title: dump.title,
            open_tabs,
            active_tab: self.tabs[self.active].tab_id.clone(),
            page_text: dump.text,
            screenshot: self.screenshot.take(),
        })
    }

    async fn release(&mut self) {
        if let Some(mut conn) = self.conn.take() {
            conn.shutdown();
            CdpProvider::delete_session(&self.http, &self.cfg, &self.handle.trace_id).await;
        }
        self.lease.release();
    }
}
