//! Deterministic in-memory browser over a [`MockSiteGraph`].
//!
//! Time only moves through `wait`: each second advances the mock clock by one
//! tick. Given the same graph, seed and action sequence, every snapshot and
//! result is identical.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use async_trait::async_trait;
use sha2::{Digest, Sha256};

use super::graph::{Effect, HijackmentKind, MockNode, MockSiteGraph};
use super::{
    ActionResult, BackendKind, BrowserProvider, BrowserSession, ExecutionProfile, Lease,
    SessionHandle, SessionRegistry,
};
use crate::action::ActionKind;
use crate::dom::{collapse_whitespace, DomNode, DomSnapshot, IndexedElementMap, TabInfo};
use crate::error::{ProvisionError, SessionLost};

const EXTRACT_LIMIT: usize = 4000;

/// Deterministic trace id for a mock session seed.
pub fn mock_trace_id(seed: u64) -> String {
    let digest = Sha256::digest(format!("mock-session:{seed}").as_bytes());
    format!("mock-{}", &hex::encode(digest)[..16])
}

pub struct MockProvider {
    graph: Arc<MockSiteGraph>,
    registry: SessionRegistry,
}

impl MockProvider {
    pub fn new(graph: Arc<MockSiteGraph>) -> Self {
        MockProvider {
            graph,
            registry: SessionRegistry::default(),
        }
    }

    pub fn graph(&self) -> &Arc<MockSiteGraph> {
        &self.graph
    }

    /// Provision without going through the trait object.
    pub fn open(&self, profile: &ExecutionProfile, seed: u64) -> MockSession {
        let lease = self.registry.register(&mock_trace_id(seed));
        MockSession::new(self.graph.clone(), profile.clone(), lease)
    }
}

#[async_trait]
impl BrowserProvider for MockProvider {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    async fn provision(
        &self,
        profile: &ExecutionProfile,
        seed: u64,
    ) -> Result<Box<dyn BrowserSession>, ProvisionError> {
        Ok(Box::new(self.open(profile, seed)))
    }

    fn live_sessions(&self) -> usize {
        self.registry.len()
    }
}

#[derive(Debug, Clone)]
struct Tab {
    id: String,
    history: Vec<String>,
    cursor: usize,
    arrival_tick: u64,
    scroll_pages: f64,
}

impl Tab {
    fn url(&self) -> &str {
        &self.history[self.cursor]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum NodeRef {
    Page(String),
    Consent,
    OverlayOther,
    Slider,
}

struct Rendered {
    root: DomNode,
    refs: BTreeMap<String, NodeRef>,
    lines: Vec<String>,
    links: Vec<(String, String)>,
}

#[derive(Default)]
struct Acc {
    refs: BTreeMap<String, NodeRef>,
    links: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    None,
    Barrier,
    Popup,
    Loading,
}

pub struct MockSession {
    graph: Arc<MockSiteGraph>,
    handle: SessionHandle,
    lease: Lease,
    tabs: Vec<Tab>,
    active: usize,
    next_tab: u32,
    clock: u64,
    inputs: BTreeMap<(String, String), String>,
    selections: BTreeMap<(String, String), String>,
    revealed: BTreeSet<(String, String)>,
    captcha_attempts: BTreeMap<String, u32>,
    solved: BTreeSet<String>,
    consented: BTreeSet<String>,
    focused: Option<(String, String)>,
    screenshot_requested: bool,
    last_refs: BTreeMap<String, NodeRef>,
    last_url: String,
}

impl MockSession {
    fn new(graph: Arc<MockSiteGraph>, profile: ExecutionProfile, lease: Lease) -> Self {
        let blank = "about:blank".to_string();
        MockSession {
            handle: SessionHandle {
                backend_kind: BackendKind::Mock,
                ws_endpoint: None,
                trace_id: lease.trace_id().to_string(),
                profile,
            },
            graph,
            lease,
            tabs: vec![Tab {
                id: "t0".into(),
                history: vec![blank.clone()],
                cursor: 0,
                arrival_tick: 0,
                scroll_pages: 0.0,
            }],
            active: 0,
            next_tab: 1,
            clock: 0,
            inputs: BTreeMap::new(),
            selections: BTreeMap::new(),
            revealed: BTreeSet::new(),
            captcha_attempts: BTreeMap::new(),
            solved: BTreeSet::new(),
            consented: BTreeSet::new(),
            focused: None,
            screenshot_requested: false,
            last_refs: BTreeMap::new(),
            last_url: blank,
        }
    }

    /// Mock ticks elapsed in this session.
    pub fn clock(&self) -> u64 {
        self.clock
    }

    fn alive(&self) -> Result<(), SessionLost> {
        if self.lease.is_released() {
            Err(SessionLost("session released".into()))
        } else {
            Ok(())
        }
    }

    fn tab(&self) -> &Tab {
        &self.tabs[self.active]
    }

    fn url(&self) -> String {
        self.tab().url().to_string()
    }

    fn block(&self, url: &str) -> Block {
        match self.graph.hijackment_for(url) {
            Some(HijackmentKind::VerificationBarrier { .. }) if !self.solved.contains(url) => {
                Block::Barrier
            }
            Some(HijackmentKind::Popup { .. }) if !self.consented.contains(url) => Block::Popup,
            Some(HijackmentKind::DynamicShift { latency_ticks, .. })
                if self.clock < self.tab().arrival_tick + u64::from(*latency_ticks) =>
            {
                Block::Loading
            }
            _ => Block::None,
        }
    }

    /// Resolve `url` (404 page if unknown, following redirect chains).
    fn resolve(&self, url: &str) -> (String, bool) {
        if !self.graph.pages.contains_key(url) {
            return (self.graph.not_found_url.clone(), false);
        }
        if let Some(HijackmentKind::DynamicShift { redirect_chain, .. }) =
            self.graph.hijackment_for(url)
        {
            if let Some(last) = redirect_chain.last() {
                return (last.clone(), true);
            }
        }
        (url.to_string(), true)
    }

    fn load(&mut self, url: &str) -> (String, bool) {
        let (target, found) = self.resolve(url);
        let clock = self.clock;
        let tab = &mut self.tabs[self.active];
        tab.history.truncate(tab.cursor + 1);
        tab.history.push(target.clone());
        tab.cursor = tab.history.len() - 1;
        tab.arrival_tick = clock;
        tab.scroll_pages = 0.0;
        self.focused = None;
        (target, found)
    }

    fn navigate(&mut self, url: &str) -> ActionResult {
        let (target, found) = self.load(url);
        if !found {
            return ActionResult::failure(format!("404: page not found: {url}")).navigation();
        }
        if target != url {
            ActionResult::success(format!("Redirected to {target}")).navigation()
        } else {
            ActionResult::success(format!("Navigated to {target}")).navigation()
        }
    }

    fn render(&self) -> Rendered {
        let url = self.url();
        let mut out = Rendered {
            root: DomNode::new("body"),
            refs: BTreeMap::new(),
            lines: Vec::new(),
            links: Vec::new(),
        };
        let Some(page) = self.graph.pages.get(&url) else {
            return out;
        };
        match self.block(&url) {
            Block::Barrier => {
                out.root.children = vec![
                    DomNode::new("h1").text("Security verification"),
                    DomNode::new("p")
                        .text("Please complete the slider verification to continue."),
                    DomNode::new("div")
                        .text("Slide to verify")
                        .interactive()
                        .attr("role", "slider"),
                ];
                out.refs.insert("2".into(), NodeRef::Slider);
            }
            Block::Loading => {
                out.root.children = vec![DomNode::new("div").text("Loading...")];
            }
            block @ (Block::None | Block::Popup) => {
                let gate = block == Block::Popup;
                let mut acc = Acc::default();
                for (i, node) in page.nodes.iter().enumerate() {
                    self.render_node(&url, node, i.to_string(), "", gate, &mut out.root, &mut acc);
                }
                out.refs = acc.refs;
                out.links = acc.links;
                if let (true, Some(HijackmentKind::Popup { consent_text, message })) =
                    (gate, self.graph.hijackment_for(&url))
                {
                    let pos = out.root.children.len();
                    out.root.children.push(
                        DomNode::new("div")
                            .attr("role", "dialog")
                            .child(DomNode::new("p").text(message.clone()))
                            .child(DomNode::new("button").text(consent_text.clone()).interactive())
                            .child(DomNode::new("button").text("Manage preferences").interactive()),
                    );
                    out.refs.insert(format!("{pos}/1"), NodeRef::Consent);
                    out.refs.insert(format!("{pos}/2"), NodeRef::OverlayOther);
                }
            }
        }
        fn lines(n: &DomNode, out: &mut Vec<String>) {
            let t = collapse_whitespace(&n.text);
            if !t.is_empty() {
                out.push(t);
            }
            for c in &n.children {
                lines(c, out);
            }
        }
        let mut text_lines = Vec::new();
        lines(&out.root, &mut text_lines);
        out.lines = text_lines;
        out
    }

    fn render_node(
        &self,
        url: &str,
        src: &MockNode,
        src_path: String,
        parent_path: &str,
        gate: bool,
        parent: &mut DomNode,
        out: &mut Acc,
    ) {
        let revealed = src
            .id
            .as_ref()
            .is_some_and(|id| self.revealed.contains(&(url.to_string(), id.clone())));
        if (src.hidden && !revealed) || (src.gated && gate) {
            return;
        }
        let key = (url.to_string(), src_path.clone());
        let mut node = DomNode {
            tag: src.tag.clone(),
            text: src.text.clone(),
            interactive: src.interactive,
            attributes: src.attributes.clone(),
            children: Vec::new(),
        };
        if matches!(src.tag.as_str(), "input" | "textarea") {
            if let Some(v) = self.inputs.get(&key) {
                node.text = v.clone();
            }
        }
        if src.tag == "select" {
            if let Some(v) = self.selections.get(&key) {
                node.text = v.clone();
            }
        }
        if let Some(Effect::Link { url }) = &src.on_click {
            out.links.push((collapse_whitespace(&src.text), url.clone()));
        }
        let pos = parent.children.len();
        let out_path = if parent_path.is_empty() {
            pos.to_string()
        } else {
            format!("{parent_path}/{pos}")
        };
        out.refs.insert(out_path.clone(), NodeRef::Page(src_path.clone()));
        parent.children.push(node);
        let slot = parent.children.last_mut().expect("just pushed");
        for (i, c) in src.children.iter().enumerate() {
            self.render_node(url, c, format!("{src_path}/{i}"), &out_path, gate, slot, out);
        }
    }

    fn source_node(&self, url: &str, src_path: &str) -> Option<&MockNode> {
        let page = self.graph.pages.get(url)?;
        let mut segs = src_path.split('/');
        let first: usize = segs.next()?.parse().ok()?;
        let mut node = page.nodes.get(first)?;
        for s in segs {
            node = node.children.get(s.parse::<usize>().ok()?)?;
        }
        Some(node)
    }

    /// Resolve an element index to what it points at in the last capture.
    fn target(&self, index: u32, elements: &IndexedElementMap) -> Result<NodeRef, ActionResult> {
        let el = elements
            .get(index)
            .ok_or_else(|| ActionResult::failure(format!("index {index} not found in DOM")))?;
        if elements.url != self.last_url || self.url() != self.last_url {
            return Err(ActionResult::failure(format!(
                "element {index} belongs to a page that is no longer loaded"
            )));
        }
        let current = self.render();
        match (self.last_refs.get(&el.path), current.refs.get(&el.path)) {
            (Some(a), Some(b)) if a == b => Ok(a.clone()),
            _ => Err(ActionResult::failure(format!(
                "element {index} no longer exists"
            ))),
        }
    }

    fn apply_effect(&mut self, url: &str, effect: &Effect) -> ActionResult {
        match effect {
            Effect::Link { url: to } => self.navigate(to),
            Effect::Submit {
                field,
                routes,
                fallback,
            } => {
                let value = self
                    .graph
                    .pages
                    .get(url)
                    .and_then(|p| {
                        let mut hit = None;
                        for (i, n) in p.nodes.iter().enumerate() {
                            find_path(n, i.to_string(), field, &mut hit);
                        }
                        hit
                    })
                    .and_then(|path| self.inputs.get(&(url.to_string(), path)).cloned())
                    .unwrap_or_default();
                let to = routes
                    .get(value.trim())
                    .cloned()
                    .unwrap_or_else(|| fallback.clone());
                self.navigate(&to)
            }
            Effect::Reveal { target } => {
                self.revealed.insert((url.to_string(), target.clone()));
                ActionResult::success("revealed").changed()
            }
        }
    }

    fn click(&mut self, index: u32, elements: &IndexedElementMap) -> ActionResult {
        let target = match self.target(index, elements) {
            Ok(t) => t,
            Err(r) => return r,
        };
        let url = self.url();
        match target {
            NodeRef::Slider => {
                ActionResult::failure("captcha unsolved: the slider must be solved")
            }
            NodeRef::Consent => {
                self.consented.insert(url);
                ActionResult::success("consent accepted").changed()
            }
            NodeRef::OverlayOther => ActionResult::success("preferences opened"),
            NodeRef::Page(_) if self.block(&url) == Block::Popup => {
                ActionResult::failure("click intercepted by consent overlay")
            }
            NodeRef::Page(path) => {
                let Some(src) = self.source_node(&url, &path).cloned() else {
                    return ActionResult::failure(format!("element {index} no longer exists"));
                };
                self.focused = Some((url.clone(), path));
                match &src.on_click {
                    Some(e) => self.apply_effect(&url, e),
                    None => ActionResult::success("clicked"),
                }
            }
        }
    }

    fn page_node(
        &self,
        index: u32,
        elements: &IndexedElementMap,
    ) -> Result<(String, String, MockNode), ActionResult> {
        let url = self.url();
        match self.target(index, elements)? {
            NodeRef::Page(path) => {
                let src = self
                    .source_node(&url, &path)
                    .cloned()
                    .ok_or_else(|| ActionResult::failure("element no longer exists"))?;
                Ok((url, path, src))
            }
            _ => Err(ActionResult::failure(format!(
                "element {index} does not support this action"
            ))),
        }
    }

    fn visible_text(&self) -> String {
        self.render().lines.join("\n")
    }

    fn extract(&self, query: &str, extract_links: bool, start: u32) -> ActionResult {
        let rendered = self.render();
        let text: String = rendered.lines.join("\n").chars().skip(start as usize).collect();
        let tokens: Vec<String> = query
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| t.len() >= 3)
            .map(str::to_lowercase)
            .collect();
        let matching: Vec<&str> = text
            .lines()
            .filter(|l| {
                let l = l.to_lowercase();
                tokens.iter().any(|t| l.contains(t))
            })
            .collect();
        let mut body = if matching.is_empty() {
            text.clone()
        } else {
            matching.join("\n")
        };
        if extract_links {
            for (label, url) in &rendered.links {
                body.push_str(&format!("\n[{label}]({url})"));
            }
        }
        let body: String = body.chars().take(EXTRACT_LIMIT).collect();
        ActionResult::success("extracted").with_extracted(body)
    }

    fn evaluate(&self, code: &str) -> ActionResult {
        let code = code.trim().trim_end_matches(';');
        if code == "document.title" {
            let title = self
                .graph
                .pages
                .get(&self.url())
                .map(|p| p.title.clone())
                .unwrap_or_default();
            return ActionResult::success("evaluated").with_extracted(title);
        }
        let count_prefix = "document.querySelectorAll(";
        if let Some(rest) = code.strip_prefix(count_prefix) {
            if let Some(sel) = rest.strip_suffix(").length") {
                let tag = sel.trim_matches(|c| c == '\'' || c == '"');
                if !tag.is_empty() && tag.chars().all(|c| c.is_ascii_alphanumeric()) {
                    let mut n = 0usize;
                    fn count(node: &DomNode, tag: &str, n: &mut usize) {
                        if node.tag == tag {
                            *n += 1;
                        }
                        for c in &node.children {
                            count(c, tag, n);
                        }
                    }
                    count(&self.render().root, tag, &mut n);
                    return ActionResult::success("evaluated").with_extracted(n.to_string());
                }
            }
        }
        ActionResult::failure("unsupported evaluate code on mock backend")
    }

    fn run(&mut self, action: &ActionKind, elements: &IndexedElementMap) -> ActionResult {
        match action {
            ActionKind::Click { index } => self.click(*index, elements),
            ActionKind::Input { index, text, clear } => {
                let (url, path, src) = match self.page_node(*index, elements) {
                    Ok(t) => t,
                    Err(r) => return r,
                };
                if !matches!(src.tag.as_str(), "input" | "textarea") {
                    return ActionResult::failure(format!(
                        "element {index} does not accept text input"
                    ));
                }
                if self.block(&url) == Block::Popup {
                    return ActionResult::failure("input intercepted by consent overlay");
                }
                let key = (url.clone(), path.clone());
                let entry = self.inputs.entry(key).or_insert_with(|| src.text.clone());
                if *clear {
                    *entry = text.clone();
                } else {
                    entry.push_str(text);
                }
                self.focused = Some((url, path));
                ActionResult::success("typed").changed()
            }
            ActionKind::Done { .. } => ActionResult::success("done"),
            ActionKind::Search { query, engine } => {
                match self.graph.search_pages.get(engine.as_str()).cloned() {
                    Some(page) => {
                        let r = self.navigate(&page);
                        if r.ok {
                            ActionResult::success(format!(
                                "Searched {} for \"{query}\"",
                                engine.as_str()
                            ))
                            .navigation()
                        } else {
                            r
                        }
                    }
                    None => {
                        let _ = self.load(&self.graph.not_found_url.clone());
                        ActionResult::failure(format!(
                            "404: no {} results page in this site graph",
                            engine.as_str()
                        ))
                        .navigation()
                    }
                }
            }
            ActionKind::Navigate { url, new_tab } => {
                if *new_tab {
                    let id = format!("t{}", self.next_tab);
                    self.next_tab += 1;
                    self.tabs.push(Tab {
                        id,
                        history: vec!["about:blank".into()],
                        cursor: 0,
                        arrival_tick: self.clock,
                        scroll_pages: 0.0,
                    });
                    self.active = self.tabs.len() - 1;
                }
                self.navigate(url)
            }
            ActionKind::Scroll { down, pages, index } => {
                if let Some(i) = index {
                    if let Err(r) = self.target(*i, elements) {
                        return r;
                    }
                }
                if !pages.is_finite() || *pages < 0.0 {
                    return ActionResult::failure("pages must be a non-negative number");
                }
                let tab = &mut self.tabs[self.active];
                let delta = if *down { *pages } else { -*pages };
                tab.scroll_pages = (tab.scroll_pages + delta).max(0.0);
                ActionResult::success("scrolled")
            }
            ActionKind::Wait { seconds } => {
                self.clock += u64::from(*seconds);
                ActionResult::success("waited").changed()
            }
            ActionKind::GoBack {} => {
                let clock = self.clock;
                let tab = &mut self.tabs[self.active];
                if tab.cursor == 0 || tab.history[tab.cursor - 1] == "about:blank" {
                    return ActionResult::failure("no previous page in history");
                }
                tab.cursor -= 1;
                tab.arrival_tick = clock;
                tab.scroll_pages = 0.0;
                self.focused = None;
                ActionResult::success("went back").navigation()
            }
            ActionKind::Refresh {} => {
                let url = self.url();
                self.inputs.retain(|(u, _), _| *u != url);
                self.selections.retain(|(u, _), _| *u != url);
                let clock = self.clock;
                let tab = &mut self.tabs[self.active];
                tab.arrival_tick = clock;
                tab.scroll_pages = 0.0;
                self.focused = None;
                ActionResult::success("refreshed").changed()
            }
            ActionKind::Switch { tab_id } => match self.tabs.iter().position(|t| &t.id == tab_id) {
                Some(i) => {
                    self.active = i;
                    self.focused = None;
                    ActionResult::success("switched").navigation()
                }
                None => ActionResult::failure(format!("tab {tab_id} not found")),
            },
            ActionKind::SendKeys { keys } => {
                if keys == "Enter" {
                    if let Some((url, path)) = self.focused.clone() {
                        if url == self.url() {
                            if let Some(effect) =
                                self.source_node(&url, &path).and_then(|n| n.on_enter.clone())
                            {
                                return self.apply_effect(&url, &effect);
                            }
                        }
                    }
                }
                ActionResult::success("keys sent")
            }
            ActionKind::Extract {
                query,
                extract_links,
                start_from_char,
            } => self.extract(query, *extract_links, *start_from_char),
            ActionKind::Close { tab_id } => {
                let Some(i) = self.tabs.iter().position(|t| &t.id == tab_id) else {
                    return ActionResult::failure(format!("tab {tab_id} not found"));
                };
                if self.tabs.len() == 1 {
                    return ActionResult::failure("cannot close the last tab");
                }
                self.tabs.remove(i);
                let was_active = i == self.active;
                if self.active >= i && self.active > 0 {
                    self.active -= 1;
                }
                if was_active {
                    self.focused = None;
                    ActionResult::success("closed").navigation()
                } else {
                    ActionResult::success("closed").changed()
                }
            }
            ActionKind::FindText { text } => {
                let needle = text.to_lowercase();
                if !needle.trim().is_empty() && self.visible_text().to_lowercase().contains(&needle)
                {
                    ActionResult::success("found")
                } else {
                    ActionResult::failure(format!("text \"{text}\" not found on page"))
                }
            }
            ActionKind::Screenshot {} => {
                self.screenshot_requested = true;
                ActionResult::success("screenshot requested")
            }
            ActionKind::SolveSliderCaptcha {} => {
                let url = self.url();
                match self.graph.hijackment_for(&url) {
                    Some(HijackmentKind::VerificationBarrier { solve_on_attempt })
                        if !self.solved.contains(&url) =>
                    {
                        let k = *solve_on_attempt;
                        let attempts = self.captcha_attempts.entry(url.clone()).or_insert(0);
                        *attempts += 1;
                        if *attempts >= k {
                            self.solved.insert(url);
                            ActionResult::success("captcha solved").changed()
                        } else {
                            ActionResult::failure(format!(
                                "captcha unsolved (attempt {attempts})"
                            ))
                        }
                    }
                    _ => ActionResult::failure("no captcha present on this page"),
                }
            }
            ActionKind::DropdownOptions { index } => match self.page_node(*index, elements) {
                Ok((_, _, src)) if src.tag == "select" => {
                    ActionResult::success("options").with_extracted(src.options.join(" | "))
                }
                Ok(_) => ActionResult::failure(format!("element {index} is not a dropdown")),
                Err(r) => r,
            },
            ActionKind::SelectDropdown { index, text } => {
                let (url, path, src) = match self.page_node(*index, elements) {
                    Ok(t) => t,
                    Err(r) => return r,
                };
                if src.tag != "select" {
                    return ActionResult::failure(format!("element {index} is not a dropdown"));
                }
                if self.block(&url) == Block::Popup {
                    return ActionResult::failure("selection intercepted by consent overlay");
                }
                if !src.options.iter().any(|o| o == text) {
                    return ActionResult::failure(format!(
                        "option \"{text}\" not found in element {index}"
                    ));
                }
                self.selections.insert((url.clone(), path), text.clone());
                match src.on_select.get(text) {
                    Some(to) => self.navigate(to),
                    None => ActionResult::success("selected").changed(),
                }
            }
            ActionKind::Evaluate { code } => self.evaluate(code),
        }
    }
}

fn find_path(node: &MockNode, path: String, id: &str, hit: &mut Option<String>) {
    if hit.is_some() {
        return;
    }
    if node.id.as_deref() == Some(id) {
        *hit = Some(path);
        return;
    }
    for (i, c) in node.children.iter().enumerate() {
        find_path(c, format!("{path}/{i}"), id, hit);
    }
}

#[async_trait]
impl BrowserSession for MockSession {
    fn handle(&self) -> &SessionHandle {
        &self.handle
    }

    async fn execute_action(
        &mut self,
        action: &ActionKind,
        elements: &IndexedElementMap,
    ) -> Result<ActionResult, SessionLost> {
        self.alive()?;
        Ok(self.run(action, elements))
    }

    async fn capture_state(&mut self) -> Result<DomSnapshot, SessionLost> {
        self.alive()?;
        let url = self.url();
        let rendered = self.render();
        let title = self
            .graph
            .pages
            .get(&url)
            .map(|p| p.title.clone())
            .unwrap_or_default();
        let visual = self.graph.pages.get(&url).is_some_and(|p| p.visual_only);
        let screenshot = if self.screenshot_requested || visual {
            let bytes = serde_json::to_vec(&rendered.root).expect("dom serializes");
            Some(format!("sha256:{}", &hex::encode(Sha256::digest(&bytes))[..16]))
        } else {
            None
        };
        self.screenshot_requested = false;
        self.last_refs = rendered.refs;
        self.last_url = url.clone();
        let open_tabs = self
            .tabs
            .iter()
            .map(|t| TabInfo {
                tab_id: t.id.clone(),
                url: t.url().to_string(),
                title: self
                    .graph
                    .pages
                    .get(t.url())
                    .map(|p| p.title.clone())
                    .unwrap_or_default(),
            })
            .collect();
        Ok(DomSnapshot {
            root: rendered.root,
            current_url: url,
            title,
            open_tabs,
            active_tab: self.tab().id.clone(),
            page_text: rendered.lines.join("\n"),
            screenshot,
        })
    }

    async fn release(&mut self) {
        self.lease.release();
    }
}
