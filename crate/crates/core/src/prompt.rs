//! Message assembly: system prompt, agent history, user request and browser
//! state, laid out in that order.

use serde::{Deserialize, Serialize};

use crate::config::PromptMode;
use crate::dom::{DomSnapshot, IndexedElementMap};
use crate::task::TaskConfig;

pub const NORMAL_TEMPLATE: &str = include_str!("../assets/system_prompt_normal.md");
pub const FLASH_TEMPLATE: &str = include_str!("../assets/system_prompt_flash.md");

/// Section markers of the rendered user message, in layout order.
pub const SECTION_MARKERS: [&str; 3] = ["<agent_history>", "<agent_state>", "<browser_state>"];

/// Render a template written with `{{`/`}}` escapes and `{max_actions}`.
fn render_template(template: &str, max_actions: u32) -> String {
    template
        .replace("{max_actions}", &max_actions.to_string())
        .replace("{{", "{")
        .replace("}}", "}")
}

pub fn system_prompt(mode: PromptMode, max_actions: u32) -> String {
    let template = match mode {
        PromptMode::Normal => NORMAL_TEMPLATE,
        PromptMode::Flash => FLASH_TEMPLATE,
    };
    render_template(template.trim_end(), max_actions)
}

/// One entry of the agent history stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct HistoryStep {
    pub step_number: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation_previous_goal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_goal: Option<String>,
    #[serde(default)]
    pub action_results: Vec<String>,
    /// Environment message, rendered inside `<sys>` instead of a step block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepInfo {
    pub step_number: u32,
    pub max_steps: u32,
}

impl std::fmt::Display for StepInfo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.step_number, self.max_steps)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageBundle {
    pub system_prompt: String,
    pub history_block: String,
    pub user_request: String,
    pub step_info: StepInfo,
    pub browser_state_block: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screenshot: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub read_state_block: Option<String>,
}

impl MessageBundle {
    /// The user-role message that follows the system prompt.
    pub fn user_message(&self) -> String {
        let mut out = String::new();
        out.push_str("<agent_history>\n");
        if !self.history_block.is_empty() {
            out.push_str(&self.history_block);
            out.push('\n');
        }
        out.push_str("</agent_history>\n<agent_state>\n<user_request>\n");
        out.push_str(&self.user_request);
        out.push_str("\n</user_request>\n<step_info>\nSteps taken: ");
        out.push_str(&self.step_info.to_string());
        out.push_str("\n</step_info>\n</agent_state>\n<browser_state>\n");
        out.push_str(&self.browser_state_block);
        out.push_str("\n</browser_state>");
        if let Some(read) = &self.read_state_block {
            out.push_str("\n<read_state>\n");
            out.push_str(read);
            out.push_str("\n</read_state>");
        }
        if let Some(shot) = &self.screenshot {
            out.push_str("\n<browser_vision>\n");
            out.push_str(shot);
            out.push_str("\n</browser_vision>");
        }
        out
    }
}

pub fn render_history(history: &[HistoryStep]) -> String {
    let mut blocks = Vec::with_capacity(history.len());
    for h in history {
        if let Some(note) = &h.system_note {
            blocks.push(format!("<sys>\n{note}\n</sys>"));
            continue;
        }
        let n = h.step_number;
        let mut b = format!("<step_{n}>:\n");
        if let Some(e) = &h.evaluation_previous_goal {
            b.push_str(&format!("Evaluation of Previous Step: {e}\n"));
        }
        if let Some(m) = &h.memory {
            b.push_str(&format!("Memory: {m}\n"));
        }
        if let Some(g) = &h.next_goal {
            b.push_str(&format!("Next Goal: {g}\n"));
        }
        b.push_str("Action Results:\n");
        let total = h.action_results.len();
        for (i, r) in h.action_results.iter().enumerate() {
            b.push_str(&format!("Action {}/{total}: {r}\n", i + 1));
        }
        b.push_str(&format!("</step_{n}>"));
        blocks.push(b);
    }
    blocks.join("\n")
}

pub fn render_user_request(task: &TaskConfig) -> String {
    let mut out = String::new();
    if !task.role.trim().is_empty() {
        out.push_str(&format!("Role: {}\n", task.role.trim()));
    }
    out.push_str(&task.instruction);
    if let Some(sop) = &task.sop {
        out.push_str("\nSOP:");
        for (i, s) in sop.iter().enumerate() {
            out.push_str(&format!("\n{}. {s}", i + 1));
        }
    }
    if !task.output_format.trim().is_empty() {
        out.push_str(&format!("\nOutput format: {}", task.output_format.trim()));
    }
    out
}

pub fn render_browser_state(dom_text: &str, snapshot: &DomSnapshot) -> String {
    let mut out = format!("Current URL: {}\nOpen Tabs:\n", snapshot.current_url);
    for t in &snapshot.open_tabs {
        let marker = if t.tab_id == snapshot.active_tab { " (active)" } else { "" };
        out.push_str(&format!("Tab {}{marker}: {} - {}\n", t.tab_id, t.url, t.title));
    }
    out.push_str("Interactive Elements:\n");
    if dom_text.is_empty() {
        out.push_str("empty page");
    } else {
        out.push_str(dom_text);
    }
    out
}

/// Inputs to [`assemble_messages`] beyond the task and history.
pub struct PageState<'a> {
    pub dom_text: &'a str,
    pub elements: &'a IndexedElementMap,
    pub snapshot: &'a DomSnapshot,
}

pub fn assemble_messages(
    mode: PromptMode,
    max_actions: u32,
    task: &TaskConfig,
    history: &[HistoryStep],
    page: PageState<'_>,
    step_info: StepInfo,
    read_state: Option<&str>,
) -> MessageBundle {
    MessageBundle {
        system_prompt: system_prompt(mode, max_actions),
        history_block: render_history(history),
        user_request: render_user_request(task),
        step_info,
        browser_state_block: render_browser_state(page.dom_text, page.snapshot),
        screenshot: page.snapshot.screenshot.clone(),
        read_state_block: read_state.map(str::to_string),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_render_max_actions_and_braces() {
        let p = system_prompt(PromptMode::Normal, 3);
        assert!(p.contains("maximum of 3 actions per step"));
        assert!(p.contains(r#"2. CORRECT FORMAT: {"input": {"index": 1, "text": "example", "clear": true}}"#));
        assert!(p.contains("<step_{step_number}>"));
        assert!(!p.contains("{max_actions}"));
    }

    #[test]
    fn flash_template_requests_memory_and_action_only() {
        let p = system_prompt(PromptMode::Flash, 5);
        assert!(p.contains("maximum of 5 actions"));
        assert!(p.contains(r#""memory""#));
        assert!(!p.contains(r#""thinking""#));
        assert!(!p.contains(r#""next_goal""#));
    }

    #[test]
    fn history_blocks_and_sys_notes() {
        let h = vec![
            HistoryStep {
                step_number: 1,
                memory: Some("m".into()),
                action_results: vec!["Clicked element 3".into()],
                ..Default::default()
            },
            HistoryStep {
                step_number: 2,
                system_note: Some("invalid output".into()),
                ..Default::default()
            },
        ];
        let text = render_history(&h);
        assert_eq!(
            text,
            "<step_1>:\nMemory: m\nAction Results:\nAction 1/1: Clicked element 3\n</step_1>\n<sys>\ninvalid output\n</sys>"
        );
    }
}
