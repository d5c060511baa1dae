//! Turning a [`RunRequest`] into a suite and an episode environment.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use webenv_core::api::RunRequest;
use webenv_core::backend::cdp::{CdpConfig, CdpProvider};
use webenv_core::backend::graph::MockSiteGraph;
use webenv_core::backend::mock::MockProvider;
use webenv_core::backend::{BackendKind, BrowserProvider};
use webenv_core::config::{EpisodeConfig, PromptMode};
use webenv_core::eval::{HttpJudgeClient, JudgeClient};
use webenv_core::orchestrator::{EpisodeEnv, PolicySource, RunConfig, ScriptedSource};
use webenv_core::synthetic::generate_synthetic_suite;
use webenv_core::task::{SuiteManifest, SuiteSpec};

use crate::policy_pool::PolicyPool;

pub const JUDGE_TIMEOUT: Duration = Duration::from_secs(60);
pub const SYNTHETIC_SUITE_FILE: &str = "suite.json";
pub const SYNTHETIC_GRAPH_FILE: &str = "graph.json";

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct SetupError(pub String);

fn bad(e: impl std::fmt::Display) -> SetupError {
    SetupError(e.to_string())
}

pub struct LoadedSuite {
    pub manifest: SuiteManifest,
    pub graph: Option<Arc<MockSiteGraph>>,
}

/// Load a suite from a file or generate a synthetic one. An explicit graph
/// path wins over the suite's own reference, which is relative to the suite
/// file.
pub fn load_suite(spec: &str, graph: Option<&str>) -> Result<LoadedSuite, SetupError> {
    let spec: SuiteSpec = spec.parse().map_err(bad)?;
    let (manifest, mut graph_obj, base) = match spec {
        SuiteSpec::Synthetic { seed, count } => {
            let s = generate_synthetic_suite(seed, count);
            (s.manifest, Some(s.graph), None)
        }
        SuiteSpec::Path(p) => {
            let m = SuiteManifest::load(&p).map_err(|e| SetupError(format!("{}: {e}", p.display())))?;
            let base = p.parent().map(Path::to_path_buf);
            (m, None, base)
        }
    };
    let graph_path: Option<PathBuf> = match (graph, &manifest.graph, &graph_obj) {
        (Some(g), _, _) => Some(g.into()),
        (None, Some(rel), None) => Some(base.unwrap_or_default().join(rel)),
        _ => None,
    };
    if let Some(p) = graph_path {
        let g = MockSiteGraph::load(&p).map_err(|e| SetupError(format!("{}: {e}", p.display())))?;
        graph_obj = Some(g);
    }
    Ok(LoadedSuite {
        manifest,
        graph: graph_obj.map(Arc::new),
    })
}

/// Everything a run or a driver session needs.
pub struct Prepared {
    pub suite: LoadedSuite,
    pub env: Arc<EpisodeEnv>,
}

pub fn policy_source(spec: &str, pool: &Arc<PolicyPool>) -> Result<Arc<dyn PolicySource>, SetupError> {
    if spec == "wire" {
        return Ok(pool.clone());
    }
    match spec.strip_prefix("scripted:") {
        Some(name) if !name.is_empty() => Ok(Arc::new(ScriptedSource::new(name))),
        _ => Err(SetupError(format!(
            "unknown policy `{spec}` (expected `wire` or `scripted:<name>`)"
        ))),
    }
}

pub fn prepare(req: &RunRequest, policy: Arc<dyn PolicySource>) -> Result<Prepared, SetupError> {
    let suite = load_suite(&req.suite, req.graph.as_deref())?;
    let backend: BackendKind = req.backend.parse().map_err(SetupError)?;
    let mode: PromptMode = req.mode.parse().map_err(bad)?;
    let provider: Arc<dyn BrowserProvider> = match backend {
        BackendKind::Mock => {
            let g = suite
                .graph
                .clone()
                .ok_or_else(|| SetupError("the mock backend needs a site graph".into()))?;
            Arc::new(MockProvider::new(g))
        }
        BackendKind::RemoteCdp => Arc::new(CdpProvider::new(CdpConfig::from_env().map_err(bad)?)),
    };
    let judge = req
        .judge
        .as_ref()
        .map(|url| Arc::new(HttpJudgeClient::from_env(url.clone(), JUDGE_TIMEOUT)) as Arc<dyn JudgeClient>);
    let mut config = RunConfig {
        parallelism: req.parallel,
        episode: EpisodeConfig {
            max_steps: req.max_steps,
            prompt_mode: mode,
            ..Default::default()
        },
        seed: req.seed,
        out_dir: req.out.as_ref().map(PathBuf::from),
        group_size: req.group_size,
        ..Default::default()
    };
    if let Some(ms) = req.policy_timeout_ms {
        config.policy_timeout = Duration::from_millis(ms);
    }
    config.validate().map_err(bad)?;
    if let (Ok(SuiteSpec::Synthetic { .. }), Some(dir), Some(g)) =
        (req.suite.parse::<SuiteSpec>(), &config.out_dir, &suite.graph)
    {
        // Generated suites are written out so the run can be replayed from files.
        suite.manifest.save(&dir.join(SYNTHETIC_SUITE_FILE)).map_err(bad)?;
        std::fs::write(dir.join(SYNTHETIC_GRAPH_FILE), g.to_json()).map_err(bad)?;
    }
    let mut env = EpisodeEnv::new(provider, policy, judge, config);
    if let (BackendKind::Mock, Some(g)) = (backend, &suite.graph) {
        env = env.with_graph_digest(g.digest());
    }
    Ok(Prepared {
        suite,
        env: Arc::new(env),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_suite_brings_its_graph() {
        let s = load_suite("synthetic:3:1", None).unwrap();
        assert_eq!(s.manifest.tasks.len(), 8);
        assert!(s.graph.is_some());
    }

    #[test]
    fn bad_requests_are_rejected_before_running() {
        let pool = Arc::new(PolicyPool::new(Duration::from_millis(10)));
        assert!(policy_source("telepathy", &pool).is_err());
        assert!(policy_source("scripted:", &pool).is_err());
        let src = policy_source("scripted:oracle", &pool).unwrap();
        let mut req = RunRequest::new("synthetic:1:1");
        req.backend = "carrier-pigeon".into();
        assert!(prepare(&req, src.clone()).is_err());
        let mut req = RunRequest::new("synthetic:1:1");
        req.parallel = 0;
        assert!(prepare(&req, src.clone()).is_err());
        let req = RunRequest::new("/nonexistent/suite.json");
        assert!(prepare(&req, src).is_err());
    }
}
