//! Acceptance checks for the engine, one line per criterion.
//!
//! Runs without the libtest harness so the verdict lines are always printed.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::future::Future;
use std::path::Path;
use std::pin::Pin;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::sync::Barrier;

use webenv_core::action::{ActionEnvelope, ActionKind};
use webenv_core::backend::graph::HijackmentKind;
use webenv_core::backend::mock::MockProvider;
use webenv_core::backend::BrowserProvider;
use webenv_core::episode::{EndReason, Observation};
use webenv_core::eval::Tier;
use webenv_core::orchestrator::{
    run_benchmark, run_episode, EpisodeEnv, EpisodeStatus, PolicySource, RunConfig, RunOutput, ScriptedSource,
    ADVANTAGES_FILE, CATEGORY_REPORT_FILE, TRAJECTORY_DIR,
};
use webenv_core::policy::{Policy, PolicyContext, PolicyError, SequencePolicy};
use webenv_core::reward::{group_advantages, group_rewards, DEFAULT_EPSILON, DEFAULT_GAMMA};
use webenv_core::synthetic::{generate_synthetic_suite, SyntheticSuite};
use webenv_core::task::OracleAction;

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn tier_value(t: Tier) -> f64 {
    match t {
        Tier::Correct => 1.0,
        Tier::Reasonable => 0.3,
        Tier::CompletedWithinSteps => 0.1,
        Tier::Fail => 0.0,
    }
}

/// Reference reward, written out longhand.
fn oracle_reward(valid: &[bool], tier: Tier, group_min: usize, gamma: f64) -> f64 {
    let mut shaped = 0.0;
    for v in valid {
        shaped += if *v { 0.02 } else { -0.02 };
    }
    let excess = valid.len() as f64 - group_min as f64;
    tier_value(tier) * (excess / group_min as f64 * gamma.ln()).exp() + shaped
}

const TIERS: [Tier; 4] = [Tier::Correct, Tier::Reasonable, Tier::CompletedWithinSteps, Tier::Fail];

fn criterion_1() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cases = 0;
    let mut worst = 0f64;
    while cases < 1000 {
        let n = rng.gen_range(1..=8);
        let group: Vec<(Vec<bool>, Tier)> = (0..n)
            .map(|_| {
                let len = rng.gen_range(1..=20);
                let valid = (0..len).map(|_| rng.gen_bool(0.7)).collect();
                (valid, TIERS[rng.gen_range(0..4)])
            })
            .collect();
        let gamma = if rng.gen_bool(0.5) { DEFAULT_GAMMA } else { rng.gen_range(0.5..=1.0) };
        let got = group_rewards(&group, gamma).map_err(|e| e.to_string())?;
        let min = group.iter().map(|(v, _)| v.len()).min().unwrap();
        for ((valid, tier), r) in group.iter().zip(&got) {
            let want = oracle_reward(valid, *tier, min, gamma);
            worst = worst.max((r.total - want).abs());
            cases += 1;
        }
    }
    ensure!(worst <= 1e-12, "max deviation {worst:e}");
    let el = t0.elapsed();
    ensure!(el < Duration::from_secs(10), "took {el:?}");
    Ok(())
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..500 {
        let n = rng.gen_range(2..=16);
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.5)).collect();
        let g = group_advantages(&rewards, DEFAULT_EPSILON).map_err(|e| e.to_string())?;
        let sum: f64 = g.advantages.iter().sum();
        ensure!(sum.abs() < 1e-9, "advantages sum to {sum}");
        let c = rng.gen_range(-10.0..10.0);
        let shifted: Vec<f64> = rewards.iter().map(|r| r + c).collect();
        let h = group_advantages(&shifted, DEFAULT_EPSILON).map_err(|e| e.to_string())?;
        for (a, b) in g.advantages.iter().zip(&h.advantages) {
            ensure!((a - b).abs() < 1e-6, "shift by {c} moved {a} to {b}");
        }
        let k = rng.gen_range(-1.0..1.0);
        let flat = group_advantages(&vec![k; n], DEFAULT_EPSILON).map_err(|e| e.to_string())?;
        ensure!(flat.advantages.iter().all(|a| *a == 0.0), "constant group: {:?}", flat.advantages);
    }
    for len in 1..=20 {
        let valid = vec![true; len];
        let r = group_rewards(&[(valid, Tier::Correct)], DEFAULT_GAMMA).map_err(|e| e.to_string())?;
        ensure!(r[0].decay_exponent == 0.0, "singleton of length {len} decays");
        ensure!((r[0].total - (1.0 + 0.02 * len as f64)).abs() < 1e-12, "singleton reward {}", r[0].total);
    }
    Ok(())
}

fn scripted_env(policy: Arc<dyn PolicySource>, suite: &SyntheticSuite, cfg: RunConfig) -> (Arc<EpisodeEnv>, Arc<MockProvider>) {
    let graph = Arc::new(suite.graph.clone());
    let provider = Arc::new(MockProvider::new(graph.clone()));
    let env = EpisodeEnv::new(provider.clone(), policy, None, cfg).with_graph_digest(graph.digest());
    (Arc::new(env), provider)
}

fn named(policy: &str, suite: &SyntheticSuite, cfg: RunConfig) -> Arc<EpisodeEnv> {
    scripted_env(Arc::new(ScriptedSource::new(policy)), suite, cfg).0
}

fn cfg(seed: u64, parallelism: usize) -> RunConfig {
    RunConfig {
        seed,
        parallelism,
        ..Default::default()
    }
}

/// Serves a fixed sequence of outputs to every episode.
struct Sequence(Vec<String>);

#[async_trait]
impl PolicySource for Sequence {
    fn describe(&self) -> String {
        "sequence".into()
    }

    async fn open(&self, _: &PolicyContext) -> Result<Box<dyn Policy>, PolicyError> {
        Ok(Box::new(SequencePolicy::new(self.0.clone())))
    }
}

async fn criterion_3() -> Check {
    let suite = generate_synthetic_suite(3, 1);
    let task = &suite.manifest.tasks[0];

    let (traj, _, _) = run_episode(&named("garbage", &suite, cfg(3, 1)), task, None)
        .await
        .map_err(|e| e.to_string())?;
    ensure!(traj.len() == 3, "garbage ran {} steps", traj.len());
    ensure!(traj.reason == Some(EndReason::ConsecutiveFailures), "garbage ended with {:?}", traj.reason);

    let (traj, _, _) = run_episode(&named("never_done", &suite, cfg(3, 1)), task, None)
        .await
        .map_err(|e| e.to_string())?;
    ensure!(traj.len() == 20, "never_done ran {} steps", traj.len());
    ensure!(traj.reason == Some(EndReason::MaxSteps), "never_done ended with {:?}", traj.reason);

    let ok = ActionEnvelope::normal(vec![ActionKind::Wait { seconds: 1 }]).to_contract_json();
    let bad = "I would click the button".to_string();
    let seq = vec![bad.clone(), bad.clone(), ok, bad.clone(), bad.clone(), bad];
    let (env, _) = scripted_env(Arc::new(Sequence(seq)), &suite, cfg(3, 1));
    let (traj, _, _) = run_episode(&env, task, None).await.map_err(|e| e.to_string())?;
    ensure!(traj.len() == 6, "fail-fail-ok-fail-fail-fail ran {} steps", traj.len());
    ensure!(traj.reason == Some(EndReason::ConsecutiveFailures), "ended with {:?}", traj.reason);
    Ok(())
}

fn corpus(cases: Vec<(String, Check)>, min: usize) -> Check {
    ensure!(cases.len() >= min, "{} cases, need {min}", cases.len());
    for (name, r) in cases {
        r.map_err(|e| format!("{name}: {e}"))?;
    }
    Ok(())
}

async fn criterion_6() -> Check {
    let t0 = Instant::now();
    let suite = generate_synthetic_suite(42, 2);
    let m = &suite.manifest;
    ensure!(m.tasks.len() == 16, "{} tasks", m.tasks.len());
    let cats: BTreeSet<_> = m.tasks.iter().map(|t| t.category).collect();
    ensure!(cats.len() == 8, "{} categories", cats.len());
    let kinds: BTreeSet<_> = suite.hijacks.values().map(|k| k.label()).collect();
    ensure!(kinds.len() == 3, "hijack kinds {kinds:?}");

    let oracle = run_benchmark(m, named("oracle", &suite, cfg(42, 4))).await.map_err(|e| e.to_string())?;
    let sr = oracle.categories.overall.success_rate;
    ensure!(sr == 1.0, "oracle success rate {sr}");
    let random = run_benchmark(m, named("random", &suite, cfg(42, 4))).await.map_err(|e| e.to_string())?;
    let sr = random.categories.overall.success_rate;
    ensure!(sr < 0.2, "random success rate {sr}");
    let el = t0.elapsed();
    ensure!(el < Duration::from_secs(120), "took {el:?}");
    Ok(())
}

fn dir_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    if let Ok(rd) = std::fs::read_dir(dir) {
        for e in rd.flatten() {
            out.insert(e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap_or_default());
        }
    }
    out
}

fn verdicts(o: &RunOutput) -> Vec<(String, u32, Option<Tier>)> {
    o.report
        .results
        .iter()
        .map(|r| (r.task_id.clone(), r.rollout, r.verdict.as_ref().map(|v| v.tier)))
        .collect()
}

async fn recorded(policy: &str, suite: &SyntheticSuite, parallelism: usize, dir: &Path) -> Result<RunOutput, String> {
    let c = RunConfig {
        out_dir: Some(dir.to_path_buf()),
        group_size: 2,
        ..cfg(7, parallelism)
    };
    run_benchmark(&suite.manifest, named(policy, suite, c)).await.map_err(|e| e.to_string())
}

async fn criterion_7() -> Check {
    let suite = generate_synthetic_suite(7, 2);
    for policy in ["random", "oracle"] {
        let a = tempfile::tempdir().map_err(|e| e.to_string())?;
        let b = tempfile::tempdir().map_err(|e| e.to_string())?;
        let one = recorded(policy, &suite, 1, a.path()).await?;
        let eight = recorded(policy, &suite, 8, b.path()).await?;
        ensure!(verdicts(&one) == verdicts(&eight), "{policy}: verdicts differ");
        let (la, lb) = (dir_files(&a.path().join(TRAJECTORY_DIR)), dir_files(&b.path().join(TRAJECTORY_DIR)));
        ensure!(la.len() == 32, "{policy}: {} logs", la.len());
        ensure!(la == lb, "{policy}: trajectory logs differ");
        for f in [ADVANTAGES_FILE, CATEGORY_REPORT_FILE] {
            let (x, y) = (std::fs::read(a.path().join(f)), std::fs::read(b.path().join(f)));
            ensure!(x.is_ok() && x.ok() == y.ok(), "{policy}: {f} differs");
        }
    }
    Ok(())
}

/// Crashes the worker that opens the policy for one task.
struct Crashing {
    inner: ScriptedSource,
    victim: String,
}

#[async_trait]
impl PolicySource for Crashing {
    fn describe(&self) -> String {
        "crashing".into()
    }

    async fn open(&self, ctx: &PolicyContext) -> Result<Box<dyn Policy>, PolicyError> {
        if ctx.task.id == self.victim {
            panic!("injected worker crash");
        }
        self.inner.open(ctx).await
    }
}

async fn criterion_8() -> Check {
    let suite = generate_synthetic_suite(8, 2);
    let victim = suite.manifest.tasks[5].id.clone();
    let src = Arc::new(Crashing {
        inner: ScriptedSource::new("oracle"),
        victim: victim.clone(),
    });
    let (env, provider) = scripted_env(src, &suite, cfg(8, 4));
    let out = run_benchmark(&suite.manifest, env).await.map_err(|e| e.to_string())?;
    ensure!(out.report.infra_errors == 1, "{} infra errors", out.report.infra_errors);
    ensure!(out.report.completed == 15, "{} completed", out.report.completed);
    let crashed: Vec<_> = out
        .report
        .results
        .iter()
        .filter(|r| r.status == EpisodeStatus::InfraError)
        .map(|r| r.task_id.as_str())
        .collect();
    ensure!(crashed == [victim.as_str()], "crashed {crashed:?}");
    ensure!(provider.live_sessions() == 0, "{} sessions leaked", provider.live_sessions());
    Ok(())
}

/// Holds every policy at its first turn until all of them are live.
struct Gathered {
    inner: ScriptedSource,
    barrier: Arc<Barrier>,
    provider: Arc<MockProvider>,
    peak: Arc<std::sync::Mutex<usize>>,
    stalled: Arc<AtomicBool>,
}

struct GatheredPolicy {
    inner: Box<dyn Policy>,
    gate: Option<(Arc<Barrier>, Arc<MockProvider>, Arc<std::sync::Mutex<usize>>, Arc<AtomicBool>)>,
}

#[async_trait]
impl Policy for GatheredPolicy {
    async fn act(&mut self, obs: &Observation) -> Result<String, PolicyError> {
        if let Some((barrier, provider, peak, stalled)) = self.gate.take() {
            if tokio::time::timeout(Duration::from_secs(30), barrier.wait()).await.is_err() {
                stalled.store(true, Ordering::SeqCst);
            } else {
                let mut p = peak.lock().unwrap();
                *p = (*p).max(provider.live_sessions());
            }
        }
        self.inner.act(obs).await
    }
}

#[async_trait]
impl PolicySource for Gathered {
    fn describe(&self) -> String {
        "scripted:oracle".into()
    }

    async fn open(&self, ctx: &PolicyContext) -> Result<Box<dyn Policy>, PolicyError> {
        Ok(Box::new(GatheredPolicy {
            inner: self.inner.open(ctx).await?,
            gate: Some((self.barrier.clone(), self.provider.clone(), self.peak.clone(), self.stalled.clone())),
        }))
    }
}

async fn criterion_9() -> Check {
    let suite = generate_synthetic_suite(9, 8);
    let n = suite.manifest.tasks.len();
    ensure!(n == 64, "{n} tasks");
    let graph = Arc::new(suite.graph.clone());
    let provider = Arc::new(MockProvider::new(graph.clone()));
    let peak = Arc::new(std::sync::Mutex::new(0));
    let stalled = Arc::new(AtomicBool::new(false));
    let src = Arc::new(Gathered {
        inner: ScriptedSource::new("oracle"),
        barrier: Arc::new(Barrier::new(n)),
        provider: provider.clone(),
        peak: peak.clone(),
        stalled: stalled.clone(),
    });
    let par = tempfile::tempdir().map_err(|e| e.to_string())?;
    let c = RunConfig {
        out_dir: Some(par.path().to_path_buf()),
        policy_timeout: Duration::from_secs(60),
        ..cfg(9, n)
    };
    let env = Arc::new(EpisodeEnv::new(provider.clone(), src, None, c).with_graph_digest(graph.digest()));
    let out = run_benchmark(&suite.manifest, env).await.map_err(|e| e.to_string())?;
    ensure!(!stalled.load(Ordering::SeqCst), "episodes never ran together");
    let peak = *peak.lock().unwrap();
    ensure!(peak == n, "peak of {peak} live sessions");
    ensure!(out.report.completed == n, "{} completed", out.report.completed);
    let ids: BTreeSet<_> = out.report.results.iter().filter_map(|r| r.trace_id.clone()).collect();
    ensure!(ids.len() == n, "{} distinct trace ids", ids.len());
    ensure!(out.categories.overall.success_rate == 1.0, "success rate {}", out.categories.overall.success_rate);
    ensure!(provider.live_sessions() == 0, "{} sessions still live", provider.live_sessions());

    // Each concurrent episode must match the same episode run alone.
    let ser = tempfile::tempdir().map_err(|e| e.to_string())?;
    let c = RunConfig {
        out_dir: Some(ser.path().to_path_buf()),
        ..cfg(9, 1)
    };
    run_benchmark(&suite.manifest, named("oracle", &suite, c)).await.map_err(|e| e.to_string())?;
    let (a, b) = (dir_files(&par.path().join(TRAJECTORY_DIR)), dir_files(&ser.path().join(TRAJECTORY_DIR)));
    ensure!(a.len() == n && a == b, "concurrent logs differ from serial ones");
    Ok(())
}

fn is_escape(turn: &[OracleAction], kind: &HijackmentKind) -> bool {
    match (turn, kind) {
        ([OracleAction::SolveCaptcha], HijackmentKind::VerificationBarrier { .. }) => true,
        ([OracleAction::ClickText { text }], HijackmentKind::Popup { consent_text, .. }) => text == consent_text,
        ([OracleAction::Wait { .. }], HijackmentKind::DynamicShift { .. }) => true,
        _ => false,
    }
}

async fn criterion_10() -> Check {
    let suite = generate_synthetic_suite(10, 2);
    let env = named("oracle", &suite, cfg(10, 1));
    let mut seen = BTreeSet::new();
    for (id, kind) in &suite.hijacks {
        let task = suite.manifest.tasks.iter().find(|t| &t.id == id).ok_or(format!("{id}: no task"))?;
        let script = suite.manifest.oracles.get(id).ok_or(format!("{id}: no oracle"))?;
        let evidence = script
            .iter()
            .flatten()
            .find_map(|a| match a {
                OracleAction::Done { evidence, .. } => Some(evidence.clone()),
                _ => None,
            })
            .ok_or(format!("{id}: oracle never answers"))?;
        let label = kind.label();

        let (traj, verdict, _) = run_episode(&env, task, Some(script)).await.map_err(|e| e.to_string())?;
        ensure!(verdict.tier == Tier::Correct, "{id} ({label}): escape did not succeed");
        ensure!(
            traj.steps.iter().any(|s| s.observation.dom_text.contains(&evidence)),
            "{id} ({label}): gated content never shown"
        );

        let mut stripped = script.clone();
        stripped.retain(|turn| !is_escape(turn, kind));
        ensure!(stripped.len() < script.len(), "{id}: no escape turn in its oracle");
        let (traj, verdict, _) = run_episode(&env, task, Some(&stripped)).await.map_err(|e| e.to_string())?;
        ensure!(verdict.tier != Tier::Correct, "{id} ({label}): succeeded without escaping");
        ensure!(
            !traj.steps.iter().any(|s| s.observation.dom_text.contains(&evidence)),
            "{id} ({label}): gated content readable without escaping"
        );
        seen.insert(label);
    }
    ensure!(seen.len() == 3, "hijack kinds covered: {seen:?}");
    Ok(())
}

type Job = Pin<Box<dyn Future<Output = Check> + Send>>;

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Job + Send>)> = vec![
        ("reward matches the reference on 1000 cases", Box::new(|| Box::pin(async { criterion_1() }))),
        ("group advantage properties", Box::new(|| Box::pin(async { criterion_2() }))),
        ("episode step control", Box::new(|| Box::pin(criterion_3()))),
        ("raw output corpus", Box::new(|| Box::pin(async { corpus(common::action_cases(), 25) }))),
        ("DOM serialization goldens", Box::new(|| Box::pin(async { corpus(common::dom_cases(), 10) }))),
        ("seed-42 synthetic suite", Box::new(|| Box::pin(criterion_6()))),
        ("parallelism does not change results", Box::new(|| Box::pin(criterion_7()))),
        ("a crashed worker is isolated", Box::new(|| Box::pin(criterion_8()))),
        ("64 concurrent mock episodes", Box::new(|| Box::pin(criterion_9()))),
        ("hijackment escapes", Box::new(|| Box::pin(criterion_10()))),
    ];
    let mut failed = 0;
    for (i, (name, job)) in criteria.into_iter().enumerate() {
        // Criterion 8 panics inside a worker on purpose; keep the noise out.
        let hook = std::panic::take_hook();
        std::panic::set_hook(Box::new(|_| {}));
        let r = rt.block_on(async {
            match tokio::spawn(job()).await {
                Ok(r) => r,
                Err(e) => Err(format!("panicked: {e}")),
            }
        });
        std::panic::set_hook(hook);
        match r {
            Ok(()) => println!("criterion {:>2}: PASS  {name}", i + 1),
            Err(e) => {
                failed += 1;
                println!("criterion {:>2}: FAIL  {name}: {e}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
