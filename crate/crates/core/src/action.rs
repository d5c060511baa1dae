//! The agent action space and the model-output contract.
//!
//! Parsing is total: every raw model output becomes either an
//! [`ActionEnvelope`] or a [`ParseFailure`], never a panic or an error value
//! that escapes the step.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::backend::ActionResult;
use crate::config::{EpisodeConfig, PromptMode};
use crate::dom::IndexedElementMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchEngine {
    Duckduckgo,
    Google,
    Bing,
}

impl SearchEngine {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchEngine::Duckduckgo => "duckduckgo",
            SearchEngine::Google => "google",
            SearchEngine::Bing => "bing",
        }
    }
}

/// One action of the 19-action space. The serde representation is the wire
/// contract: `{"<action_key>": {<params>}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ActionKind {
    Click { index: u32 },
    Input { index: u32, text: String, clear: bool },
    Done {
        text: String,
        success: bool,
        #[serde(default)]
        files_to_display: Vec<String>,
    },
    Search { query: String, engine: SearchEngine },
    Navigate { url: String, new_tab: bool },
    Scroll {
        down: bool,
        pages: f64,
        #[serde(default)]
        index: Option<u32>,
    },
    Wait { seconds: u32 },
    GoBack {},
    Refresh {},
    Switch { tab_id: String },
    SendKeys { keys: String },
    Extract {
        query: String,
        extract_links: bool,
        start_from_char: u32,
    },
    Close { tab_id: String },
    FindText { text: String },
    Screenshot {},
    SolveSliderCaptcha {},
    DropdownOptions { index: u32 },
    SelectDropdown { index: u32, text: String },
    Evaluate { code: String },
}

/// Contract keys of all 19 actions, in table order.
pub const ACTION_KEYS: [&str; 19] = [
    "click",
    "input",
    "done",
    "search",
    "navigate",
    "scroll",
    "wait",
    "go_back",
    "refresh",
    "switch",
    "send_keys",
    "extract",
    "close",
    "find_text",
    "screenshot",
    "solve_slider_captcha",
    "dropdown_options",
    "select_dropdown",
    "evaluate",
];

impl ActionKind {
    pub fn key(&self) -> &'static str {
        match self {
            ActionKind::Click { .. } => "click",
            ActionKind::Input { .. } => "input",
            ActionKind::Done { .. } => "done",
            ActionKind::Search { .. } => "search",
            ActionKind::Navigate { .. } => "navigate",
            ActionKind::Scroll { .. } => "scroll",
            ActionKind::Wait { .. } => "wait",
            ActionKind::GoBack {} => "go_back",
            ActionKind::Refresh {} => "refresh",
            ActionKind::Switch { .. } => "switch",
            ActionKind::SendKeys { .. } => "send_keys",
            ActionKind::Extract { .. } => "extract",
            ActionKind::Close { .. } => "close",
            ActionKind::FindText { .. } => "find_text",
            ActionKind::Screenshot {} => "screenshot",
            ActionKind::SolveSliderCaptcha {} => "solve_slider_captcha",
            ActionKind::DropdownOptions { .. } => "dropdown_options",
            ActionKind::SelectDropdown { .. } => "select_dropdown",
            ActionKind::Evaluate { .. } => "evaluate",
        }
    }

    /// The element index this action targets, if any.
    pub fn target_index(&self) -> Option<u32> {
        match self {
            ActionKind::Click { index }
            | ActionKind::Input { index, .. }
            | ActionKind::DropdownOptions { index }
            | ActionKind::SelectDropdown { index, .. } => Some(*index),
            ActionKind::Scroll { index, .. } => *index,
            _ => None,
        }
    }

    pub fn is_done(&self) -> bool {
        matches!(self, ActionKind::Done { .. })
    }
}

/// A validated model turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionEnvelope {
    pub mode: PromptMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thinking: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation_previous_goal: Option<String>,
    pub memory: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_goal: Option<String>,
    pub actions: Vec<ActionKind>,
    /// A surrounding markdown fence was removed before parsing.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fence_stripped: bool,
    /// Unknown top-level keys that were ignored.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ignored_fields: Vec<String>,
}

#[derive(Serialize)]
struct ContractOutput<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    thinking: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    evaluation_previous_goal: Option<&'a str>,
    memory: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    next_goal: Option<&'a str>,
    action: &'a [ActionKind],
}

impl ActionEnvelope {
    /// Build a normal-mode envelope with empty reasoning fields.
    pub fn normal(actions: Vec<ActionKind>) -> Self {
        ActionEnvelope {
            mode: PromptMode::Normal,
            thinking: Some(String::new()),
            evaluation_previous_goal: Some(String::new()),
            memory: String::new(),
            next_goal: Some(String::new()),
            actions,
            fence_stripped: false,
            ignored_fields: Vec::new(),
        }
    }

    pub fn flash(actions: Vec<ActionKind>) -> Self {
        ActionEnvelope {
            mode: PromptMode::Flash,
            thinking: None,
            evaluation_previous_goal: None,
            memory: String::new(),
            next_goal: None,
            actions,
            fence_stripped: false,
            ignored_fields: Vec::new(),
        }
    }

    pub fn for_mode(mode: PromptMode, actions: Vec<ActionKind>) -> Self {
        match mode {
            PromptMode::Normal => Self::normal(actions),
            PromptMode::Flash => Self::flash(actions),
        }
    }

    pub fn with_memory(mut self, memory: impl Into<String>) -> Self {
        self.memory = memory.into();
        self
    }

    /// Serialize back to the model-output JSON contract for this mode.
    pub fn to_contract_json(&self) -> String {
        let normal = self.mode == PromptMode::Normal;
        let field = |f: &'_ Option<String>| -> Option<String> {
            normal.then(|| f.clone().unwrap_or_default())
        };
        let thinking = field(&self.thinking);
        let eval = field(&self.evaluation_previous_goal);
        let next = field(&self.next_goal);
        let out = ContractOutput {
            thinking: thinking.as_deref(),
            evaluation_previous_goal: eval.as_deref(),
            memory: &self.memory,
            next_goal: next.as_deref(),
            action: &self.actions,
        };
        serde_json::to_string(&out).expect("contract output always serializes")
    }

    pub fn done(&self) -> Option<(&str, bool)> {
        self.actions.iter().find_map(|a| match a {
            ActionKind::Done { text, success, .. } => Some((text.as_str(), *success)),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseFailureReason {
    InvalidJson,
    MissingField,
    EmptyActionList,
    UnknownAction,
    BadParams,
    DoneNotSingle,
    TooManyActions,
    TruncatedOutput,
}

impl ParseFailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseFailureReason::InvalidJson => "invalid_json",
            ParseFailureReason::MissingField => "missing_field",
            ParseFailureReason::EmptyActionList => "empty_action_list",
            ParseFailureReason::UnknownAction => "unknown_action",
            ParseFailureReason::BadParams => "bad_params",
            ParseFailureReason::DoneNotSingle => "done_not_single",
            ParseFailureReason::TooManyActions => "too_many_actions",
            ParseFailureReason::TruncatedOutput => "truncated_output",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub reason: ParseFailureReason,
    pub detail: String,
}

impl ParseFailure {
    fn new(reason: ParseFailureReason, detail: impl Into<String>) -> Self {
        ParseFailure {
            reason,
            detail: detail.into(),
        }
    }
}

impl std::fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.reason.as_str(), self.detail)
    }
}

pub type ParseResult = Result<ActionEnvelope, ParseFailure>;

/// Remove one surrounding ``` fence pair. Returns `None` if `raw` is not fenced.
fn strip_fence(raw: &str) -> Option<&str> {
    let t = raw.trim();
    let rest = t.strip_prefix("```")?;
    let body_start = rest.find('\n').map_or(rest.len(), |i| i + 1);
    let body = &rest[body_start..];
    let body = body.trim_end();
    let body = body.strip_suffix("```").unwrap_or(body);
    Some(body.trim())
}

const NORMAL_FIELDS: [&str; 4] = ["thinking", "evaluation_previous_goal", "memory", "next_goal"];

/// Parse one raw model output under the given mode and limits.
pub fn parse_model_output(raw: &str, mode: PromptMode, limits: &EpisodeConfig) -> ParseResult {
    let mut text = raw.trim();
    let mut fence_stripped = false;
    if text.starts_with("```") {
        if !limits.lenient_fences {
            return Err(ParseFailure::new(
                ParseFailureReason::InvalidJson,
                "output wrapped in a markdown code fence",
            ));
        }
        text = strip_fence(text).unwrap_or(text);
        fence_stripped = true;
    }
    if text.is_empty() {
        return Err(ParseFailure::new(ParseFailureReason::InvalidJson, "empty output"));
    }

    let value: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) if e.classify() == serde_json::error::Category::Eof => {
            return Err(ParseFailure::new(ParseFailureReason::TruncatedOutput, e.to_string()))
        }
        Err(e) => return Err(ParseFailure::new(ParseFailureReason::InvalidJson, e.to_string())),
    };
    let Value::Object(mut obj) = value else {
        return Err(ParseFailure::new(
            ParseFailureReason::InvalidJson,
            "top-level value is not an object",
        ));
    };

    let required: &[&str] = match mode {
        PromptMode::Normal => &NORMAL_FIELDS,
        PromptMode::Flash => &["memory"],
    };
    let mut fields = std::collections::HashMap::new();
    for name in required {
        match obj.remove(*name) {
            Some(Value::String(s)) => {
                fields.insert(*name, s);
            }
            Some(_) => {
                return Err(ParseFailure::new(
                    ParseFailureReason::MissingField,
                    format!("`{name}` must be a string"),
                ))
            }
            None => {
                return Err(ParseFailure::new(
                    ParseFailureReason::MissingField,
                    format!("missing `{name}`"),
                ))
            }
        }
    }
    let items = match obj.remove("action") {
        Some(Value::Array(items)) => items,
        Some(_) => {
            return Err(ParseFailure::new(
                ParseFailureReason::MissingField,
                "`action` must be an array",
            ))
        }
        None => {
            return Err(ParseFailure::new(
                ParseFailureReason::MissingField,
                "missing `action`",
            ))
        }
    };
    if items.is_empty() {
        return Err(ParseFailure::new(
            ParseFailureReason::EmptyActionList,
            "action list is empty",
        ));
    }
    let actions = items
        .into_iter()
        .enumerate()
        .map(|(i, item)| parse_action_item(i, item))
        .collect::<Result<Vec<_>, _>>()?;
    if actions.len() > 1 && actions.iter().any(ActionKind::is_done) {
        return Err(ParseFailure::new(
            ParseFailureReason::DoneNotSingle,
            "`done` must be the only action",
        ));
    }
    if actions.len() > limits.max_actions_per_step as usize {
        return Err(ParseFailure::new(
            ParseFailureReason::TooManyActions,
            format!(
                "{} actions exceed the limit of {}",
                actions.len(),
                limits.max_actions_per_step
            ),
        ));
    }

    let mut ignored_fields: Vec<String> = obj.keys().cloned().collect();
    ignored_fields.sort();
    if !ignored_fields.is_empty() {
        tracing::debug!(?ignored_fields, "ignoring unknown output fields");
    }
    let mut take = |k: &str| fields.remove(k);
    Ok(ActionEnvelope {
        mode,
        thinking: take("thinking"),
        evaluation_previous_goal: take("evaluation_previous_goal"),
        memory: take("memory").unwrap_or_default(),
        next_goal: take("next_goal"),
        actions,
        fence_stripped,
        ignored_fields,
    })
}

fn parse_action_item(position: usize, item: Value) -> Result<ActionKind, ParseFailure> {
    let Value::Object(map) = item else {
        return Err(ParseFailure::new(
            ParseFailureReason::BadParams,
            format!("action {position} is not an object"),
        ));
    };
    if map.len() != 1 {
        let keys: Vec<_> = map.keys().cloned().collect();
        return Err(ParseFailure::new(
            ParseFailureReason::BadParams,
            format!("action {position} must have exactly one key, found {keys:?}"),
        ));
    }
    let (key, params) = map.iter().next().expect("len checked");
    if !ACTION_KEYS.contains(&key.as_str()) {
        return Err(ParseFailure::new(
            ParseFailureReason::UnknownAction,
            format!("unknown action `{key}`"),
        ));
    }
    if !params.is_object() {
        return Err(ParseFailure::new(
            ParseFailureReason::BadParams,
            format!("`{key}` parameters must be an object"),
        ));
    }
    let single: Map<String, Value> = map.clone();
    serde_json::from_value(Value::Object(single)).map_err(|e| {
        ParseFailure::new(ParseFailureReason::BadParams, format!("`{key}`: {e}"))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    IndexNotFound,
    ElementNotInputtable,
    ElementNotSelectable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum ActionValidation {
    Valid,
    Invalid(InvalidReason),
}

impl ActionValidation {
    pub fn is_valid(&self) -> bool {
        matches!(self, ActionValidation::Valid)
    }
}

/// Check every index-bearing action against the current element map.
pub fn validate_against_page(
    envelope: &ActionEnvelope,
    elements: &IndexedElementMap,
) -> Vec<ActionValidation> {
    envelope
        .actions
        .iter()
        .map(|a| validate_action(a, elements))
        .collect()
}

pub fn validate_action(action: &ActionKind, elements: &IndexedElementMap) -> ActionValidation {
    let Some(index) = action.target_index() else {
        return ActionValidation::Valid;
    };
    let Some(el) = elements.get(index) else {
        return ActionValidation::Invalid(InvalidReason::IndexNotFound);
    };
    match action {
        ActionKind::Input { .. } if !el.is_inputtable() => {
            ActionValidation::Invalid(InvalidReason::ElementNotInputtable)
        }
        ActionKind::DropdownOptions { .. } | ActionKind::SelectDropdown { .. }
            if !el.is_selectable() =>
        {
            ActionValidation::Invalid(InvalidReason::ElementNotSelectable)
        }
        _ => ActionValidation::Valid,
    }
}

/// The failure message a rejected action carries.
pub fn rejection_message(action: &ActionKind, reason: InvalidReason) -> String {
    let index = action.target_index().unwrap_or_default();
    match reason {
        InvalidReason::IndexNotFound => format!("index {index} not found in DOM"),
        InvalidReason::ElementNotInputtable => {
            format!("element {index} does not accept text input")
        }
        InvalidReason::ElementNotSelectable => format!("element {index} is not a dropdown"),
    }
}

fn one_line(s: &str) -> String {
    crate::dom::collapse_whitespace(s)
}

/// Single-line history entry for an executed or rejected action.
pub fn render_action_result(kind: &ActionKind, result: &ActionResult) -> String {
    if !result.ok {
        return format!("Error: {}", one_line(&result.message));
    }
    match kind {
        ActionKind::Click { index } => format!("Clicked element {index}"),
        ActionKind::Input { index, text, .. } => {
            format!("Typed \"{}\" into element {index}", one_line(text))
        }
        ActionKind::Done { success, .. } => format!("Task marked done (success={success})"),
        ActionKind::Search { query, engine } => {
            format!("Searched {} for \"{}\"", engine.as_str(), one_line(query))
        }
        ActionKind::Navigate { url, new_tab } => {
            if *new_tab {
                format!("Opened {url} in a new tab")
            } else {
                format!("Navigated to {url}")
            }
        }
        ActionKind::Scroll { down, pages, index } => {
            let dir = if *down { "down" } else { "up" };
            match index {
                Some(i) => format!("Scrolled {dir} {pages} pages inside element {i}"),
                None => format!("Scrolled {dir} {pages} pages"),
            }
        }
        ActionKind::Wait { seconds } => format!("Waited for {seconds} seconds"),
        ActionKind::GoBack {} => "Navigated back".to_string(),
        ActionKind::Refresh {} => "Refreshed page".to_string(),
        ActionKind::Switch { tab_id } => format!("Switched to tab {tab_id}"),
        ActionKind::SendKeys { keys } => format!("Sent keys {}", one_line(keys)),
        ActionKind::Extract { query, .. } => match &result.extracted {
            Some(x) => format!("Extracted for \"{}\": {}", one_line(query), one_line(x)),
            None => format!("Extracted for \"{}\"", one_line(query)),
        },
        ActionKind::Close { tab_id } => format!("Closed tab {tab_id}"),
        ActionKind::FindText { text } => format!("Found text \"{}\"", one_line(text)),
        ActionKind::Screenshot {} => "Screenshot requested".to_string(),
        ActionKind::SolveSliderCaptcha {} => "Slider captcha solved".to_string(),
        ActionKind::DropdownOptions { index } => format!(
            "Options for element {index}: {}",
            one_line(result.extracted.as_deref().unwrap_or(""))
        ),
        ActionKind::SelectDropdown { index, text } => {
            format!("Selected \"{}\" in element {index}", one_line(text))
        }
        ActionKind::Evaluate { .. } => format!(
            "Evaluated script: {}",
            one_line(result.extracted.as_deref().unwrap_or(""))
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dom::{DomNode, DomSnapshot};

    fn cfg() -> EpisodeConfig {
        EpisodeConfig::default()
    }

    fn normal_with(actions: &str) -> String {
        format!(
            r#"{{"thinking":"t","evaluation_previous_goal":"e","memory":"m","next_goal":"n","action":{actions}}}"#
        )
    }

    #[test]
    fn correct_format_input_parses() {
        let raw = normal_with(r#"[{"input": {"index": 1, "text": "example", "clear": true}}]"#);
        let env = parse_model_output(&raw, PromptMode::Normal, &cfg()).unwrap();
        assert_eq!(
            env.actions,
            vec![ActionKind::Input { index: 1, text: "example".into(), clear: true }]
        );
    }

    #[test]
    fn wrong_format_is_bad_params() {
        let raw = normal_with(r#"[{"action_name": "input", "params": {"index": 1}}]"#);
        let err = parse_model_output(&raw, PromptMode::Normal, &cfg()).unwrap_err();
        assert_eq!(err.reason, ParseFailureReason::BadParams);
    }

    #[test]
    fn failure_reasons() {
        let cases = [
            (normal_with("[]"), ParseFailureReason::EmptyActionList),
            (
                normal_with(r#"[{"done":{"text":"x","success":true}},{"click":{"index":1}}]"#),
                ParseFailureReason::DoneNotSingle,
            ),
            (normal_with(r#"[{"teleport":{}}]"#), ParseFailureReason::UnknownAction),
            (normal_with(r#"[{"click":{"index":"1"}}]"#), ParseFailureReason::BadParams),
            (normal_with(r#"[{"click":{"index":1,"extra":2}}]"#), ParseFailureReason::BadParams),
            (
                normal_with(r#"[{"wait":{"seconds":1}},{"wait":{"seconds":1}},{"wait":{"seconds":1}},{"wait":{"seconds":1}}]"#),
                ParseFailureReason::TooManyActions,
            ),
            (r#"{"memory":"m","action":[{"click":{"ind"#.to_string(), ParseFailureReason::TruncatedOutput),
            ("not json at all".to_string(), ParseFailureReason::InvalidJson),
            (r#"{"memory":"m","action":[]}"#.to_string(), ParseFailureReason::MissingField),
        ];
        for (raw, want) in cases {
            let got = parse_model_output(&raw, PromptMode::Normal, &cfg()).unwrap_err();
            assert_eq!(got.reason, want, "{raw}");
        }
    }

    #[test]
    fn flash_ignores_normal_fields() {
        let raw = normal_with(r#"[{"go_back":{}}]"#);
        let env = parse_model_output(&raw, PromptMode::Flash, &cfg()).unwrap();
        assert_eq!(env.thinking, None);
        assert_eq!(
            env.ignored_fields,
            vec!["evaluation_previous_goal", "next_goal", "thinking"]
        );
    }

    #[test]
    fn fences_depend_on_strictness() {
        let raw = format!("```json\n{}\n```", normal_with(r#"[{"refresh":{}}]"#));
        let env = parse_model_output(&raw, PromptMode::Normal, &cfg()).unwrap();
        assert!(env.fence_stripped);
        let strict = EpisodeConfig { lenient_fences: false, ..cfg() };
        let err = parse_model_output(&raw, PromptMode::Normal, &strict).unwrap_err();
        assert_eq!(err.reason, ParseFailureReason::InvalidJson);
    }

    #[test]
    fn contract_round_trip() {
        let env = ActionEnvelope::normal(vec![
            ActionKind::Scroll { down: true, pages: 1.5, index: None },
            ActionKind::Extract { query: "q".into(), extract_links: false, start_from_char: 0 },
        ])
        .with_memory("mem");
        let raw = env.to_contract_json();
        assert!(raw.starts_with(r#"{"thinking":"""#));
        let back = parse_model_output(&raw, PromptMode::Normal, &cfg()).unwrap();
        assert_eq!(back, env);
    }

    fn page_map() -> IndexedElementMap {
        let root = DomNode::new("body").with_children((0..10).map(|i| {
            if i == 3 {
                DomNode::new("button").text("Go").interactive()
            } else if i == 4 {
                DomNode::new("select").interactive()
            } else {
                DomNode::new("input").interactive()
            }
        }));
        let snap = DomSnapshot {
            root,
            current_url: "u".into(),
            title: String::new(),
            open_tabs: vec![],
            active_tab: "t0".into(),
            page_text: String::new(),
            screenshot: None,
        };
        crate::dom::serialize_dom(&snap, None).1
    }

    #[test]
    fn validation_against_page() {
        let map = page_map();
        let env = ActionEnvelope::normal(vec![
            ActionKind::Click { index: 5 },
            ActionKind::Click { index: 999 },
            ActionKind::Input { index: 3, text: "x".into(), clear: true },
        ]);
        assert_eq!(
            validate_against_page(&env, &map),
            vec![
                ActionValidation::Valid,
                ActionValidation::Invalid(InvalidReason::IndexNotFound),
                ActionValidation::Invalid(InvalidReason::ElementNotInputtable),
            ]
        );
        let sel = ActionKind::SelectDropdown { index: 5, text: "a".into() };
        assert_eq!(
            validate_action(&sel, &map),
            ActionValidation::Invalid(InvalidReason::ElementNotSelectable)
        );
        assert!(validate_action(&ActionKind::DropdownOptions { index: 4 }, &map).is_valid());
    }

    #[test]
    fn rendered_results() {
        let nav = ActionKind::Navigate { url: "https://a.test/x".into(), new_tab: false };
        assert_eq!(
            render_action_result(&nav, &ActionResult::success("")),
            "Navigated to https://a.test/x"
        );
        let click = ActionKind::Click { index: 999 };
        let msg = rejection_message(&click, InvalidReason::IndexNotFound);
        assert_eq!(
            render_action_result(&click, &ActionResult::failure(msg)),
            "Error: index 999 not found in DOM"
        );
        let done = ActionKind::Done { text: "x".into(), success: true, files_to_display: vec![] };
        assert_eq!(
            render_action_result(&done, &ActionResult::success("")),
            "Task marked done (success=true)"
        );
    }
}
