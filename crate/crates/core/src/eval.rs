//! Task-wise evaluation and success-rate reporting.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::task::{Category, EvalMethod, TaskConfig};

pub const JUDGE_TEMPLATE: &str = include_str!("../assets/judge_prompt.md");
pub const DEFAULT_JUDGE_ATTEMPTS: u32 = 3;
pub const JUDGE_UNAVAILABLE: &str = "judge_unavailable";
/// Version of the answer normalization used by [`exact_match`].
pub const NORMALIZATION_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Correct,
    Reasonable,
    CompletedWithinSteps,
    Fail,
}

impl Tier {
    pub const ALL: [Tier; 4] = [
        Tier::Correct,
        Tier::Reasonable,
        Tier::CompletedWithinSteps,
        Tier::Fail,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictSource {
    Exact,
    Judge,
    Rule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub tier: Tier,
    pub rationale: String,
    pub source: VerdictSource,
}

impl Verdict {
    pub fn rule(tier: Tier, rationale: impl Into<String>) -> Self {
        Verdict {
            tier,
            rationale: rationale.into(),
            source: VerdictSource::Rule,
        }
    }
}

fn is_grouped_number(tok: &str) -> bool {
    let body = tok.strip_prefix(['+', '-']).unwrap_or(tok);
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    if let Some(f) = frac {
        if f.is_empty() || !f.chars().all(|c| c.is_ascii_digit()) {
            return false;
        }
    }
    let groups: Vec<&str> = int.split(',').collect();
    groups.len() > 1
        && (1..=3).contains(&groups[0].len())
        && groups[0].chars().all(|c| c.is_ascii_digit())
        && groups[1..]
            .iter()
            .all(|g| g.len() == 3 && g.chars().all(|c| c.is_ascii_digit()))
}

/// Trim, collapse whitespace, case-fold, and drop thousands separators from
/// numeric tokens.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace()
        .map(|tok| {
            let tok = tok.to_lowercase();
            if is_grouped_number(&tok) {
                tok.replace(',', "")
            } else {
                tok
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(answer: &str, label: &str) -> bool {
    normalize_answer(answer) == normalize_answer(label)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub instruction: String,
    pub answer: String,
    pub trajectory_digest: String,
}

impl JudgeRequest {
    pub fn prompt(&self) -> String {
        JUDGE_TEMPLATE
            .replace("{instruction}", &self.instruction)
            .replace("{answer}", &self.answer)
            .replace("{trajectory_digest}", &self.trajectory_digest)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeResponse {
    pub tier: Tier,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
#[error("judge transport error: {0}")]
pub struct JudgeTransportError(pub String);

/// Source of raw judge replies. Parsing and retries live in [`judge`].
#[async_trait]
pub trait JudgeClient: Send + Sync {
    async fn complete(&self, request: &JudgeRequest) -> Result<String, JudgeTransportError>;
}

/// Posts [`JudgeRequest`]s as JSON and returns the response body.
pub struct HttpJudgeClient {
    endpoint: String,
    model: Option<String>,
    token: Option<String>,
    http: reqwest::Client,
}

impl HttpJudgeClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        HttpJudgeClient {
            endpoint: endpoint.into(),
            model: None,
            token: None,
            http: reqwest::Client::builder()
                .timeout(timeout)
                .build()
                .expect("http client builds"),
        }
    }

    /// Model name and token from `WEBENV_JUDGE_MODEL` / `WEBENV_JUDGE_TOKEN`.
    pub fn from_env(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let mut c = Self::new(endpoint, timeout);
        c.model = std::env::var("WEBENV_JUDGE_MODEL").ok();
        c.token = std::env::var("WEBENV_JUDGE_TOKEN").ok();
        c
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = Some(model.into());
        self
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }
}

#[derive(Serialize)]
struct HttpJudgeBody<'a> {
    #[serde(flatten)]
    request: &'a JudgeRequest,
    prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
}

#[async_trait]
impl JudgeClient for HttpJudgeClient {
    async fn complete(&self, request: &JudgeRequest) -> Result<String, JudgeTransportError> {
        let body = HttpJudgeBody {
            request,
            prompt: request.prompt(),
            model: self.model.as_deref(),
        };
        let mut req = self.http.post(&self.endpoint).json(&body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| JudgeTransportError(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .await
            .map_err(|e| JudgeTransportError(e.to_string()))?;
        if !status.is_success() {
            return Err(JudgeTransportError(format!("status {status}")));
        }
        Ok(text)
    }
}

/// Caps concurrent requests across every clone.
#[derive(Clone)]
pub struct LimitedJudge {
    inner: Arc<dyn JudgeClient>,
    permits: Arc<Semaphore>,
}

impl LimitedJudge {
    pub fn new(inner: Arc<dyn JudgeClient>, max_concurrent: usize) -> Self {
        LimitedJudge {
            inner,
            permits: Arc::new(Semaphore::new(max_concurrent.max(1))),
        }
    }
}

#[async_trait]
impl JudgeClient for LimitedJudge {
    async fn complete(&self, request: &JudgeRequest) -> Result<String, JudgeTransportError> {
        let _permit = self
            .permits
            .acquire()
            .await
            .map_err(|_| JudgeTransportError("judge limiter closed".into()))?;
        self.inner.complete(request).await
    }
}

/// Parse a strict `{tier, rationale}` object, tolerating surrounding whitespace.
pub fn parse_judge_response(raw: &str) -> Option<JudgeResponse> {
    serde_json::from_str(raw.trim()).ok()
}

/// Ask the judge, retrying malformed or failed replies up to `attempts` times.
pub async fn judge(
    answer: Option<&str>,
    trajectory_digest: &str,
    task: &TaskConfig,
    client: &dyn JudgeClient,
    attempts: u32,
) -> Verdict {
    let Some(answer) = answer else {
        return Verdict::rule(Tier::Fail, "no final answer");
    };
    let request = JudgeRequest {
        instruction: task.instruction.clone(),
        answer: answer.to_string(),
        trajectory_digest: trajectory_digest.to_string(),
    };
    for attempt in 1..=attempts.max(1) {
        match client.complete(&request).await {
            Ok(raw) => match parse_judge_response(&raw) {
                Some(r) => {
                    return Verdict {
                        tier: r.tier,
                        rationale: r.rationale,
                        source: VerdictSource::Judge,
                    }
                }
                None => tracing::warn!(task = %task.id, attempt, "malformed judge reply"),
            },
            Err(e) => tracing::warn!(task = %task.id, attempt, error = %e, "judge call failed"),
        }
    }
    Verdict::rule(Tier::Fail, JUDGE_UNAVAILABLE)
}

/// Evaluate a finished episode. `answer` is the text of its done action.
pub async fn evaluate(
    task: &TaskConfig,
    answer: Option<&str>,
    trajectory_digest: &str,
    client: Option<&dyn JudgeClient>,
) -> Verdict {
    let Some(answer) = answer else {
        return Verdict::rule(Tier::Fail, "no final answer");
    };
    match task.evaluation.method {
        EvalMethod::Exact => {
            if exact_match(answer, &task.evaluation.label) {
                Verdict {
                    tier: Tier::Correct,
                    rationale: "answer matches label".into(),
                    source: VerdictSource::Exact,
                }
            } else {
                Verdict::rule(Tier::CompletedWithinSteps, "answer does not match label")
            }
        }
        EvalMethod::Judge => match client {
            Some(c) => judge(Some(answer), trajectory_digest, task, c, DEFAULT_JUDGE_ATTEMPTS).await,
            None => Verdict::rule(Tier::Fail, JUDGE_UNAVAILABLE),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub attempts: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// No attempts in this category; the rate is reported as 0.
    pub empty: bool,
}

impl CategoryStats {
    fn new(attempts: usize, successes: usize) -> Self {
        CategoryStats {
            attempts,
            successes,
            success_rate: if attempts == 0 {
                0.0
            } else {
                successes as f64 / attempts as f64
            },
            empty: attempts == 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskVerdict {
    pub task_id: String,
    pub category: Category,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub categories: BTreeMap<Category, CategoryStats>,
    pub overall: CategoryStats,
    /// Sorted by task id.
    pub verdicts: Vec<TaskVerdict>,
}

/// Success is tier correct only.
pub fn aggregate(verdicts: &[(TaskConfig, Verdict)]) -> CategoryReport {
    let mut counts: BTreeMap<Category, (usize, usize)> =
        Category::ALL.iter().map(|c| (*c, (0, 0))).collect();
    for (t, v) in verdicts {
        let e = counts.entry(t.category).or_default();
        e.0 += 1;
        if v.tier == Tier::Correct {
            e.1 += 1;
        }
    }
    let attempts = counts.values().map(|c| c.0).sum();
    let successes = counts.values().map(|c| c.1).sum();
    let mut list: Vec<TaskVerdict> = verdicts
        .iter()
        .map(|(t, v)| TaskVerdict {
            task_id: t.id.clone(),
            category: t.category,
            verdict: v.clone(),
        })
        .collect();
    list.sort_by(|a, b| {
        a.task_id
            .cmp(&b.task_id)
            .then_with(|| a.verdict.tier.cmp(&b.verdict.tier))
            .then_with(|| a.verdict.rationale.cmp(&b.verdict.rationale))
    });
    CategoryReport {
        categories: counts
            .into_iter()
            .map(|(c, (a, s))| (c, CategoryStats::new(a, s)))
            .collect(),
        overall: CategoryStats::new(attempts, successes),
        verdicts: list,
    }
}

/// Aligned plain-text table of a report.
pub fn render_table(report: &CategoryReport) -> String {
    let mut rows = vec![[
        "category".to_string(),
        "attempts".to_string(),
        "successes".to_string(),
        "SR".to_string(),
    ]];
    let fmt_rate = |s: &CategoryStats| {
        if s.empty {
            "-".to_string()
        } else {
            format!("{:.1}%", s.success_rate * 100.0)
        }
    };
    for (c, s) in &report.categories {
        rows.push([
            c.code().to_string(),
            s.attempts.to_string(),
            s.successes.to_string(),
            fmt_rate(s),
        ]);
    }
    rows.push([
        "overall".to_string(),
        report.overall.attempts.to_string(),
        report.overall.successes.to_string(),
        fmt_rate(&report.overall),
    ]);
    let widths: Vec<usize> = (0..4)
        .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &rows {
        let line = format!(
            "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}",
            r[0],
            r[1],
            r[2],
            r[3],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3]
        );
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{Evaluation, Subset};
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Mutex;

    fn task(id: &str, cat: Category, method: EvalMethod) -> TaskConfig {
        TaskConfig {
            id: id.into(),
            category: cat,
            role: String::new(),
            instruction: "Find it".into(),
            sop: None,
            output_format: String::new(),
            evaluation: Evaluation {
                method,
                label: "MSC Oscar".into(),
            },
            entry_url: "mock://x".into(),
            subset: Subset::Standard,
        }
    }

    #[test]
    fn normalization_examples() {
        assert!(exact_match("42", "42"));
        assert!(exact_match("MSC Oscar", "msc  oscar"));
        assert!(exact_match("  MSC\tOscar\n", "msc oscar"));
        assert!(exact_match("1,000", "1000"));
        assert!(exact_match("USD 1,234,567.50", "usd 1234567.50"));
        assert!(!exact_match("1001", "1000"));
        assert!(!exact_match("", "x"));
        assert!(exact_match("", ""));
        // separators only count when grouping is well-formed
        assert!(!exact_match("1,00", "100"));
        assert!(!exact_match("a,b", "ab"));
    }

    struct Scripted {
        replies: Mutex<Vec<Result<String, JudgeTransportError>>>,
        calls: AtomicU32,
    }

    impl Scripted {
        fn new(replies: Vec<Result<String, JudgeTransportError>>) -> Self {
            Scripted {
                replies: Mutex::new(replies.into_iter().rev().collect()),
                calls: AtomicU32::new(0),
            }
        }
    }

    #[async_trait]
    impl JudgeClient for Scripted {
        async fn complete(&self, _: &JudgeRequest) -> Result<String, JudgeTransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.replies
                .lock()
                .unwrap()
                .pop()
                .unwrap_or_else(|| Err(JudgeTransportError("exhausted".into())))
        }
    }

    #[tokio::test]
    async fn judge_pass_through() {
        let c = Scripted::new(vec![Ok(r#"{"tier":"correct"}"#.into())]);
        let t = task("a", Category::Prp, EvalMethod::Judge);
        let v = judge(Some("x"), "", &t, &c, 3).await;
        assert_eq!(v.tier, Tier::Correct);
        assert_eq!(v.source, VerdictSource::Judge);
    }

    #[tokio::test]
    async fn judge_retries_until_valid() {
        let c = Scripted::new(vec![
            Ok("not json".into()),
            Ok(r#"{"tier":"great"}"#.into()),
            Ok(r#"{"tier":"reasonable","rationale":"close"}"#.into()),
        ]);
        let t = task("a", Category::Prp, EvalMethod::Judge);
        let v = judge(Some("x"), "", &t, &c, 3).await;
        assert_eq!(v.tier, Tier::Reasonable);
        assert_eq!(c.calls.load(Ordering::SeqCst), 3);
    }

    #[tokio::test]
    async fn judge_degrades_after_retries() {
        let c = Scripted::new(vec![
            Err(JudgeTransportError("down".into())),
            Ok("{}".into()),
            Ok("garbage".into()),
            Ok(r#"{"tier":"correct"}"#.into()),
        ]);
        let t = task("a", Category::Prp, EvalMethod::Judge);
        let v = judge(Some("x"), "", &t, &c, 3).await;
        assert_eq!(v, Verdict::rule(Tier::Fail, JUDGE_UNAVAILABLE));
        assert_eq!(c.calls.load(Ordering::SeqCst), 3);
    }

    #[tokio::test]
    async fn no_answer_short_circuits_without_judge_call() {
        let c = Scripted::new(vec![Ok(r#"{"tier":"correct"}"#.into())]);
        let t = task("a", Category::Prp, EvalMethod::Judge);
        let v = evaluate(&t, None, "", Some(&c)).await;
        assert_eq!(v.tier, Tier::Fail);
        assert_eq!(v.source, VerdictSource::Rule);
        assert_eq!(c.calls.load(Ordering::SeqCst), 0);
    }

    #[tokio::test]
    async fn exact_tasks_tier_by_match() {
        let t = task("a", Category::Prp, EvalMethod::Exact);
        let v = evaluate(&t, Some("msc oscar"), "", None).await;
        assert_eq!((v.tier, v.source), (Tier::Correct, VerdictSource::Exact));
        let v = evaluate(&t, Some("other"), "", None).await;
        assert_eq!(v.tier, Tier::CompletedWithinSteps);
    }

    fn v(tier: Tier) -> Verdict {
        Verdict::rule(tier, "")
    }

    #[test]
    fn aggregate_rates() {
        let mut input = Vec::new();
        for i in 0..8 {
            let tier = if i < 3 { Tier::Correct } else { Tier::Reasonable };
            input.push((task(&format!("p{i}"), Category::Prp, EvalMethod::Exact), v(tier)));
        }
        input.push((task("m0", Category::Mrp, EvalMethod::Exact), v(Tier::Correct)));
        input.push((task("m1", Category::Mrp, EvalMethod::Exact), v(Tier::Fail)));
        let r = aggregate(&input);
        assert_eq!(r.categories[&Category::Prp].success_rate, 0.375);
        assert_eq!(r.categories[&Category::Mrp].success_rate, 0.5);
        assert_eq!(r.overall.success_rate, 4.0 / 10.0);
        let cca = &r.categories[&Category::Cca];
        assert_eq!((cca.attempts, cca.success_rate, cca.empty), (0, 0.0, true));
        input.reverse();
        assert_eq!(aggregate(&input), r);
        let table = render_table(&r);
        assert!(table.contains("PRP"));
        assert!(table.lines().last().unwrap().starts_with("overall"));
    }
}
