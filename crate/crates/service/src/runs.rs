//! Benchmark runs started over HTTP.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use tokio::sync::watch;

use webenv_core::api::{RunState, RunStatus};
use webenv_core::orchestrator::{run_benchmark, EpisodeEnv};
use webenv_core::task::SuiteManifest;

#[derive(Default)]
pub struct RunRegistry {
    next: AtomicU64,
    runs: Mutex<HashMap<String, watch::Receiver<RunStatus>>>,
}

impl RunRegistry {
    /// Start `suite` in the background and return its id.
    pub fn start(self: &Arc<Self>, suite: SuiteManifest, env: Arc<EpisodeEnv>) -> String {
        let id = format!("run-{}", self.next.fetch_add(1, Ordering::Relaxed));
        let (tx, rx) = watch::channel(RunStatus {
            run_id: id.clone(),
            state: RunState::Running,
            error: None,
            report: None,
            categories: None,
            advantages: Vec::new(),
            summary: None,
        });
        self.runs.lock().expect("registry lock").insert(id.clone(), rx);
        let run_id = id.clone();
        tokio::spawn(async move {
            let result = run_benchmark(&suite, env).await;
            tx.send_modify(|s| match result {
                Ok(out) => {
                    s.state = RunState::Completed;
                    s.summary = Some(out.summary_text());
                    s.report = Some(out.report);
                    s.categories = Some(out.categories);
                    s.advantages = out.advantages;
                }
                Err(e) => {
                    tracing::error!(run = %run_id, error = %e, "run failed");
                    s.state = RunState::Failed;
                    s.error = Some(e.to_string());
                }
            });
        });
        id
    }

    pub fn status(&self, id: &str) -> Option<RunStatus> {
        let runs = self.runs.lock().expect("registry lock");
        runs.get(id).map(|rx| rx.borrow().clone())
    }

    /// Wait until the run leaves the running state.
    pub async fn wait(&self, id: &str) -> Option<RunStatus> {
        let mut rx = self.runs.lock().expect("registry lock").get(id)?.clone();
        let s = rx
            .wait_for(|s| s.state != RunState::Running)
            .await
            .map(|s| s.clone());
        Some(s.unwrap_or_else(|_| {
            // The run task died without reporting.
            let mut s = rx.borrow().clone();
            s.state = RunState::Failed;
            s.error.get_or_insert_with(|| "run task aborted".into());
            s
        }))
    }
}
