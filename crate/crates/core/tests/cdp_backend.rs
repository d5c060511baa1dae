//! CDP backend against an in-process fake provider and fake DevTools server.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{delete, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::handshake::server::{Request, Response};
use tokio_tungstenite::tungstenite::Message;

use webenv_core::action::ActionKind;
use webenv_core::backend::cdp::{search_url, CdpConfig, CdpProvider, SNAPSHOT_SCRIPT};
use webenv_core::backend::{BrowserProvider, ExecutionProfile};
use webenv_core::config::EpisodeConfig;
use webenv_core::dom::IndexedElementMap;
use webenv_core::episode::{EndReason, Episode, Phase};
use webenv_core::error::ProvisionError;
use webenv_core::task::{Category, EvalMethod, Evaluation, Subset, TaskConfig};

#[derive(Default)]
struct Browser {
    url: String,
    trace_headers: Vec<String>,
    methods: Vec<String>,
    inserted: Vec<String>,
    kill_on: Option<String>,
}

fn page_dump(url: &str) -> String {
    let root = match url {
        "https://shop.test/" => json!({
            "tag": "body",
            "children": [
                {"tag": "h1", "text": "Shop"},
                {"tag": "input", "interactive": true, "attributes": {"placeholder": "Search", "type": "text"}},
                {"tag": "a", "text": "Details", "interactive": true, "attributes": {"href": "/details"}}
            ]
        }),
        _ => json!({"tag": "body", "children": [{"tag": "p", "text": "Business license number: BL-7"}]}),
    };
    json!({"root": root, "url": url, "title": "Fake", "text": "page"}).to_string()
}

async fn fake_cdp(listener: TcpListener, browser: Arc<Mutex<Browser>>) {
    loop {
        let Ok((stream, _)) = listener.accept().await else { return };
        let browser = browser.clone();
        tokio::spawn(async move {
            let b2 = browser.clone();
            let cb = move |req: &Request, resp: Response| {
                if let Some(h) = req.headers().get("X-Trace-Id") {
                    b2.lock().unwrap().trace_headers.push(h.to_str().unwrap().to_string());
                }
                Ok(resp)
            };
            let Ok(mut ws) = tokio_tungstenite::accept_hdr_async(stream, cb).await else { return };
            while let Some(Ok(msg)) = ws.next().await {
                let Message::Text(t) = msg else { continue };
                let req: Value = serde_json::from_str(t.as_str()).unwrap();
                let method = req["method"].as_str().unwrap().to_string();
                let params = &req["params"];
                let result = {
                    let mut b = browser.lock().unwrap();
                    b.methods.push(method.clone());
                    if b.kill_on.as_deref() == Some(method.as_str()) {
                        None
                    } else {
                        Some(match method.as_str() {
                            "Target.getTargets" => json!({"targetInfos": [
                                {"targetId": "PAGE-0001-ab12", "type": "page", "url": b.url, "title": "Fake"}
                            ]}),
                            "Target.attachToTarget" => json!({"sessionId": "S1"}),
                            "Page.navigate" => {
                                let url = params["url"].as_str().unwrap();
                                if url.starts_with("https://shop.test/") {
                                    b.url = url.to_string();
                                    json!({"frameId": "F"})
                                } else {
                                    json!({"frameId": "F", "errorText": "net::ERR_NAME_NOT_RESOLVED"})
                                }
                            }
                            "Input.insertText" => {
                                b.inserted.push(params["text"].as_str().unwrap().to_string());
                                json!({})
                            }
                            "Runtime.evaluate" => {
                                let expr = params["expression"].as_str().unwrap();
                                let value = if expr.contains("__webenvSnapshot") {
                                    Value::String(page_dump(&b.url))
                                } else if expr == "document.readyState" {
                                    json!("complete")
                                } else if expr == "location.href" {
                                    json!(b.url)
                                } else if expr.contains("el.click()") {
                                    b.url = "https://shop.test/details".into();
                                    json!({"ok": true})
                                } else if expr == "throw_me" {
                                    json!("__exception__")
                                } else {
                                    json!({"ok": true})
                                };
                                json!({"result": {"type": "object", "value": value}})
                            }
                            "Page.captureScreenshot" => json!({"data": "aGVsbG8="}),
                            _ => json!({}),
                        })
                    }
                };
                match result {
                    Some(r) if r == return_exception_marker() => {
                        return_exception(&mut ws, &req).await;
                    }
                    Some(r) => {
                        let reply = json!({"id": req["id"], "result": r, "sessionId": req["sessionId"]});
                        if ws.send(Message::text(reply.to_string())).await.is_err() {
                            return;
                        }
                    }
                    None => {
                        let _ = ws.close(None).await;
                        return;
                    }
                }
            }
        });
    }
}

fn return_exception_marker() -> Value {
    json!({"result": {"type": "object", "value": "__exception__"}})
}

async fn return_exception<S>(ws: &mut S, req: &Value)
where
    S: futures::Sink<Message> + Unpin,
{
    let reply = json!({"id": req["id"], "result": {
        "result": {"type": "object"},
        "exceptionDetails": {"text": "Uncaught", "exception": {"description": "ReferenceError: throw_me is not defined"}}
    }});
    let _ = ws.send(Message::text(reply.to_string())).await;
}

#[derive(Clone)]
struct ProviderState {
    ws: String,
    deleted: Arc<Mutex<Vec<String>>>,
    bodies: Arc<Mutex<Vec<Value>>>,
    next: Arc<Mutex<u32>>,
}

async fn create(State(s): State<ProviderState>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    if headers.get("authorization").and_then(|h| h.to_str().ok()) != Some("Bearer sekrit") {
        return (StatusCode::UNAUTHORIZED, Json(json!({"error": "bad token"})));
    }
    s.bodies.lock().unwrap().push(body);
    let mut n = s.next.lock().unwrap();
    *n += 1;
    (
        StatusCode::CREATED,
        Json(json!({"trace_id": format!("trace-{n}"), "ws_endpoint": s.ws})),
    )
}

async fn remove(State(s): State<ProviderState>, Path(id): Path<String>) -> StatusCode {
    s.deleted.lock().unwrap().push(id);
    StatusCode::NO_CONTENT
}

struct Fixture {
    provider_url: String,
    browser: Arc<Mutex<Browser>>,
    state: ProviderState,
}

async fn fixture() -> Fixture {
    let cdp = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let cdp_addr: SocketAddr = cdp.local_addr().unwrap();
    let browser = Arc::new(Mutex::new(Browser {
        url: "about:blank".into(),
        ..Default::default()
    }));
    tokio::spawn(fake_cdp(cdp, browser.clone()));
    let state = ProviderState {
        ws: format!("ws://{cdp_addr}/devtools/browser/fake"),
        deleted: Arc::default(),
        bodies: Arc::default(),
        next: Arc::default(),
    };
    let app = Router::new()
        .route("/v1/sessions", post(create))
        .route("/v1/sessions/{id}", delete(remove))
        .with_state(state.clone());
    let http = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = http.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(http, app).await.unwrap() });
    Fixture {
        provider_url: format!("http://{addr}"),
        browser,
        state,
    }
}

fn config(url: &str) -> CdpConfig {
    let mut c = CdpConfig::new(url);
    c.token = Some("sekrit".into());
    c.settle = std::time::Duration::from_millis(1);
    c
}

fn task() -> TaskConfig {
    TaskConfig {
        id: "MRP-remote".into(),
        category: Category::Mrp,
        role: String::new(),
        instruction: "Find the business license number.".into(),
        sop: None,
        output_format: "BL-<digits>".into(),
        evaluation: Evaluation {
            method: EvalMethod::Exact,
            label: "BL-7".into(),
        },
        entry_url: "https://shop.test/".into(),
        subset: Subset::Standard,
    }
}

#[tokio::test]
async fn attach_handshake_and_episode_flow() {
    let fx = fixture().await;
    let provider = CdpProvider::new(config(&fx.provider_url));
    let profile = ExecutionProfile::default();
    let session = provider.provision(&profile, 11).await.unwrap();
    assert_eq!(session.handle().trace_id, "trace-1");
    assert!(session.handle().ws_endpoint.as_deref().unwrap().starts_with("ws://"));
    assert_eq!(provider.live_sessions(), 1);
    assert_eq!(fx.browser.lock().unwrap().trace_headers, vec!["trace-1".to_string()]);
    let body = fx.state.bodies.lock().unwrap()[0].clone();
    assert_eq!(body, json!({"seed": 11, "viewport": {"width": 1920, "height": 1080}}));

    let (mut ep, obs) = Episode::start(task(), EpisodeConfig::default(), session)
        .await
        .map_err(|(e, _)| e)
        .unwrap();
    assert_eq!(obs.digest.url, "https://shop.test/");
    assert!(obs.dom_text.contains("[0]<input placeholder='Search' type='text'></input>"));
    assert!(obs.dom_text.contains("[1]<a>Details</a>"));

    let out = ep
        .step_raw(r#"{"memory": "", "thinking": "", "evaluation_previous_goal": "", "next_goal": "", "action": [{"input": {"index": 0, "text": "acme", "clear": true}}, {"click": {"index": 1}}]}"#)
        .await
        .unwrap();
    assert_eq!(out.info.action_success, vec![true, true]);
    assert_eq!(out.observation.digest.url, "https://shop.test/details");
    assert!(out.observation.dom_text.contains("BL-7"));
    assert_eq!(fx.browser.lock().unwrap().inserted, vec!["acme".to_string()]);

    let out = ep
        .step_raw(r#"{"memory": "", "thinking": "", "evaluation_previous_goal": "", "next_goal": "", "action": [{"done": {"text": "BL-7", "success": true}}]}"#)
        .await
        .unwrap();
    assert!(out.terminated);
    ep.release().await;
    ep.release().await;
    assert_eq!(provider.live_sessions(), 0);
    assert_eq!(*fx.state.deleted.lock().unwrap(), vec!["trace-1".to_string()]);
    let methods = fx.browser.lock().unwrap().methods.clone();
    for m in ["Target.attachToTarget", "Page.enable", "Runtime.enable", "Emulation.setDeviceMetricsOverride"] {
        assert!(methods.iter().any(|x| x == m), "missing {m}");
    }
}

#[tokio::test]
async fn failures_are_values_and_transport_loss_is_session_lost() {
    let fx = fixture().await;
    let provider = CdpProvider::new(config(&fx.provider_url));
    let mut s = provider.provision(&ExecutionProfile::default(), 1).await.unwrap();
    let none = IndexedElementMap::default();

    let r = s
        .execute_action(&ActionKind::Navigate { url: "https://nowhere.invalid/".into(), new_tab: false }, &none)
        .await
        .unwrap();
    assert!(!r.ok);
    assert!(r.message.contains("ERR_NAME_NOT_RESOLVED"));

    let r = s
        .execute_action(&ActionKind::Evaluate { code: "throw_me".into() }, &none)
        .await
        .unwrap();
    assert!(!r.ok);
    assert!(r.message.contains("ReferenceError"));

    let r = s
        .execute_action(&ActionKind::Click { index: 4 }, &none)
        .await
        .unwrap();
    assert!(!r.ok);

    let r = s.execute_action(&ActionKind::SolveSliderCaptcha {}, &none).await.unwrap();
    assert!(!r.ok);
    assert!(r.message.contains("solver"));

    let r = s.execute_action(&ActionKind::Screenshot {}, &none).await.unwrap();
    assert!(r.ok);
    let snap = s.capture_state().await.unwrap();
    assert!(snap.screenshot.is_some());
    assert_eq!(snap.open_tabs.len(), 1);
    assert_eq!(snap.active_tab, "ab12");
    assert!(s.capture_state().await.unwrap().screenshot.is_none());

    fx.browser.lock().unwrap().kill_on = Some("Runtime.evaluate".into());
    assert!(s.capture_state().await.is_err());
    s.release().await;
    assert_eq!(provider.live_sessions(), 0);
}

#[tokio::test]
async fn backend_loss_truncates_the_episode() {
    let fx = fixture().await;
    let provider = CdpProvider::new(config(&fx.provider_url));
    let s = provider.provision(&ExecutionProfile::default(), 1).await.unwrap();
    let (mut ep, _) = Episode::start(task(), EpisodeConfig::default(), s)
        .await
        .map_err(|(e, _)| e)
        .unwrap();
    fx.browser.lock().unwrap().kill_on = Some("Runtime.evaluate".into());
    let out = ep
        .step_raw(r#"{"memory": "", "thinking": "", "evaluation_previous_goal": "", "next_goal": "", "action": [{"scroll": {"down": true, "pages": 1}}]}"#)
        .await
        .unwrap();
    assert!(out.truncated);
    assert_eq!(out.info.reason, Some(EndReason::BackendLost));
    assert_eq!(ep.state().phase, Phase::Truncated);
    ep.release().await;
}

#[tokio::test]
async fn provisioning_errors_are_distinguished() {
    let fx = fixture().await;
    let mut bad_token = config(&fx.provider_url);
    bad_token.token = Some("wrong".into());
    let err = CdpProvider::new(bad_token)
        .provision(&ExecutionProfile::default(), 1)
        .await
        .err()
        .unwrap();
    assert!(matches!(err, ProvisionError::Rejected(_)), "{err:?}");

    let err = CdpProvider::new(config("http://127.0.0.1:1"))
        .provision(&ExecutionProfile::default(), 1)
        .await
        .err()
        .unwrap();
    assert!(matches!(err, ProvisionError::Unreachable(_)), "{err:?}");
}

#[test]
fn search_urls_are_encoded() {
    use webenv_core::action::SearchEngine;
    assert_eq!(
        search_url(SearchEngine::Bing, "acme corp & co"),
        "https://www.bing.com/search?q=acme+corp+%26+co"
    );
    assert!(SNAPSHOT_SCRIPT.contains("__webenvSnapshot"));
}
