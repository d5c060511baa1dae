use std::net::SocketAddr;
use std::time::Duration;

use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpStream;

use webenv_client::{is_not_found, ClientError, PolicyClient, ServiceClient, WireClient};
use webenv_core::action::{ActionEnvelope, ActionKind};
use webenv_core::api::{ReplayRequest, RunRequest, RunState};
use webenv_core::config::PromptMode;
use webenv_core::episode::EndReason;
use webenv_core::eval::Tier;
use webenv_core::orchestrator::{EpisodeStatus, TRAJECTORY_DIR};
use webenv_core::trajectory::TrajectoryFile;
use webenv_core::wire::ErrorCode;
use webenv_service::setup::SYNTHETIC_GRAPH_FILE;
use webenv_service::{start, RunningService, ServiceConfig};

async fn service(driver: Option<RunRequest>) -> RunningService {
    let mut cfg = ServiceConfig::new("127.0.0.1:0".parse().unwrap());
    cfg.driver = driver;
    cfg.policy_wait = Duration::from_secs(5);
    cfg.idle_timeout = Duration::from_secs(2);
    start(cfg).await.unwrap()
}

fn answer(text: &str) -> String {
    ActionEnvelope::for_mode(
        PromptMode::Normal,
        vec![ActionKind::Done {
            text: text.into(),
            success: true,
            files_to_display: vec![],
        }],
    )
    .to_contract_json()
}

#[tokio::test]
async fn http_run_replay_and_report() {
    let svc = service(None).await;
    let c = ServiceClient::for_addr(svc.http_addr);
    let h = c.health().await.unwrap();
    assert_eq!(h.wire_addr, svc.wire_addr.to_string());

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let mut req = RunRequest::new("synthetic:11:1");
    req.policy = "scripted:oracle".into();
    req.seed = 11;
    req.parallel = 3;
    req.out = Some(out.clone());
    let id = c.start_run(&req).await.unwrap();
    let st = c.wait_run(&id).await.unwrap();
    assert_eq!(st.state, RunState::Completed, "{st:?}");
    let report = st.report.unwrap();
    assert_eq!(report.completed, 8);
    assert_eq!(st.categories.unwrap().overall.success_rate, 1.0);
    assert!(st.summary.unwrap().contains("overall"));
    assert_eq!(c.run_status(&id).await.unwrap().state, RunState::Completed);

    let rep = c.report(&out).await.unwrap();
    assert_eq!(rep.report.episodes, 8);
    assert!(rep.rendered.contains("100.0%"));

    let traj = dir.path().join(TRAJECTORY_DIR).join(format!("{}.jsonl", report.results[0].task_id));
    let graph = dir.path().join(SYNTHETIC_GRAPH_FILE);
    let r = c
        .replay(&ReplayRequest {
            traj: traj.to_string_lossy().into(),
            graph: graph.to_string_lossy().into(),
            seed: 11,
        })
        .await
        .unwrap();
    assert!(r.matched, "{r:?}");
    let refused = c
        .replay(&ReplayRequest {
            traj: traj.to_string_lossy().into(),
            graph: graph.to_string_lossy().into(),
            seed: 12,
        })
        .await
        .unwrap_err();
    assert!(matches!(refused, ClientError::Api { status: 409, .. }), "{refused:?}");

    let missing = c.run_status("run-999").await.unwrap_err();
    assert!(is_not_found(&missing));
    let mut bad = RunRequest::new("synthetic:1:1");
    bad.policy = "scripted:".into();
    assert!(matches!(c.start_run(&bad).await, Err(ClientError::Api { status: 400, .. })));
    svc.shutdown().await;
}

fn driver_defaults(out: Option<String>) -> RunRequest {
    let mut r = RunRequest::new("synthetic:5:1");
    r.seed = 5;
    r.out = out;
    r
}

#[tokio::test]
async fn driver_session_steps_an_episode() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(Some(driver_defaults(Some(dir.path().to_string_lossy().into())))).await;
    let suite = webenv_core::synthetic::generate_synthetic_suite(5, 1);
    let task = suite.manifest.tasks[0].clone();

    let mut w = WireClient::connect(svc.wire_addr).await.unwrap();
    let obs = w.reset(&task.id, None).await.unwrap();
    assert!(obs.user_message.contains(&task.instruction));

    for i in 1..=3 {
        let r = w.act("not json at all").await.unwrap();
        assert!(!r.info.parse_ok);
        assert_eq!(r.truncated, i == 3);
    }
    let err = w.act(&answer("x")).await.unwrap_err();
    assert!(matches!(err, ClientError::Remote { code: ErrorCode::EpisodeFinished, .. }));

    // A second episode on the same connection, answered directly.
    w.reset(&task.id, None).await.unwrap();
    let r = w.act(&answer(&task.evaluation.label)).await.unwrap();
    assert!(r.terminated);
    let end = w.close().await.unwrap().unwrap();
    assert_eq!(end.reason, Some(EndReason::Done));
    assert_eq!(end.verdict.tier, Tier::Correct);
    assert_eq!(end.steps, 1);

    let tdir = dir.path().join(TRAJECTORY_DIR);
    let mut logs: Vec<_> = std::fs::read_dir(&tdir).unwrap().map(|e| e.unwrap().path()).collect();
    logs.sort();
    assert_eq!(logs.len(), 2);
    let first = TrajectoryFile::load(&logs[0]).unwrap();
    assert_eq!(first.footer.reason, Some(EndReason::ConsecutiveFailures));
    svc.shutdown().await;
}

#[tokio::test]
async fn driver_protocol_errors() {
    let svc = service(Some(driver_defaults(None))).await;

    let mut w = WireClient::connect(svc.wire_addr).await.unwrap();
    let e = w.reset("no-such-task", None).await.unwrap_err();
    assert!(matches!(e, ClientError::Remote { code: ErrorCode::UnknownTask, .. }), "{e:?}");
    // The session survives an unknown task; act before any episode closes it.
    let e = w.act(&answer("x")).await.unwrap_err();
    assert!(matches!(e, ClientError::Remote { code: ErrorCode::ProtocolViolation, .. }), "{e:?}");

    let line = raw_exchange(svc.wire_addr, "{\"type\":\"hello\",\"version\":\"0\"}\n").await;
    assert!(line.contains("\"code\":\"version_mismatch\""), "{line}");
    let line = raw_exchange(svc.wire_addr, "{\"type\":\"act\",\"text\":\"{}\"}\n").await;
    assert!(line.contains("\"code\":\"protocol_violation\""), "{line}");
    let line = raw_exchange(svc.wire_addr, "").await;
    assert!(line.contains("\"code\":\"idle_timeout\""), "{line}");
    svc.shutdown().await;
}

async fn raw_exchange(addr: SocketAddr, send: &str) -> String {
    let mut s = TcpStream::connect(addr).await.unwrap();
    s.write_all(send.as_bytes()).await.unwrap();
    let mut r = BufReader::new(s);
    let mut line = String::new();
    r.read_line(&mut line).await.unwrap();
    line
}

#[tokio::test]
async fn wire_policies_serve_a_run() {
    let svc = service(None).await;
    let c = ServiceClient::for_addr(svc.http_addr);
    let mut workers = Vec::new();
    for _ in 0..2 {
        let p = PolicyClient::connect(svc.wire_addr).await.unwrap();
        workers.push(tokio::spawn(p.serve(
            |task, _obs| answer(&task.expect("reset carries the task").evaluation.label),
            None,
        )));
    }
    let mut req = RunRequest::new("synthetic:21:1");
    req.seed = 21;
    req.parallel = 2;
    let id = c.start_run(&req).await.unwrap();
    let st = c.wait_run(&id).await.unwrap();
    let report = st.report.unwrap();
    assert_eq!(report.policy, "wire");
    assert!(report.results.iter().all(|r| r.status == EpisodeStatus::Completed), "{report:?}");
    assert_eq!(st.categories.unwrap().overall.success_rate, 1.0);
    // Shutting down drops the pooled connections, which ends the workers.
    svc.shutdown().await;
    let mut ends = 0;
    for w in workers {
        ends += tokio::time::timeout(Duration::from_secs(5), w).await.unwrap().unwrap().unwrap().len();
    }
    assert_eq!(ends, 8);
}

#[tokio::test]
async fn wire_run_without_policies_reports_infra_errors() {
    let mut cfg = ServiceConfig::new("127.0.0.1:0".parse().unwrap());
    cfg.policy_wait = Duration::from_millis(20);
    let svc = start(cfg).await.unwrap();
    let c = ServiceClient::for_addr(svc.http_addr);
    let id = c.start_run(&RunRequest::new("synthetic:2:1")).await.unwrap();
    let st = c.wait_run(&id).await.unwrap();
    let report = st.report.unwrap();
    assert_eq!(report.infra_errors, 8);
    assert!(report.results.iter().all(|r| r.infra_error.as_ref().unwrap().stage == "policy"));
    svc.shutdown().await;
}

#[tokio::test]
async fn wire_trajectories_match_in_process_runs() {
    let local = tempfile::tempdir().unwrap();
    let remote = tempfile::tempdir().unwrap();
    let mut driver = RunRequest::new("synthetic:31:2");
    driver.seed = 31;
    driver.out = Some(remote.path().to_string_lossy().into());
    let svc = service(Some(driver)).await;
    let c = ServiceClient::for_addr(svc.http_addr);

    let mut req = RunRequest::new("synthetic:31:2");
    req.policy = "scripted:oracle".into();
    req.seed = 31;
    req.parallel = 4;
    req.out = Some(local.path().to_string_lossy().into());
    let id = c.start_run(&req).await.unwrap();
    assert_eq!(c.wait_run(&id).await.unwrap().state, RunState::Completed);

    let suite = webenv_core::synthetic::generate_synthetic_suite(31, 2);
    for task in suite.manifest.tasks.iter().take(10) {
        let recorded = local.path().join(TRAJECTORY_DIR).join(format!("{}.jsonl", task.id));
        let file = TrajectoryFile::load(&recorded).unwrap();
        let mut w = WireClient::connect(svc.wire_addr).await.unwrap();
        let session = w.session_id().to_string();
        w.reset(&task.id, None).await.unwrap();
        for step in &file.steps {
            w.act(step.raw_model_output.as_deref().unwrap()).await.unwrap();
        }
        w.close().await.unwrap().unwrap();
        let wired = remote
            .path()
            .join(TRAJECTORY_DIR)
            .join(format!("{}.{session}.r0.jsonl", task.id));
        assert_eq!(
            std::fs::read_to_string(&wired).unwrap(),
            std::fs::read_to_string(&recorded).unwrap(),
            "{}",
            task.id
        );
    }
    svc.shutdown().await;
}
