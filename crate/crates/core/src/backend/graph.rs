//! The mock web: a versioned JSON description of pages, their behaviors and
//! the hijackments layered on top of them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::MockGraphError;

pub const GRAPH_SCHEMA_VERSION: &str = "1";

fn default_version() -> String {
    GRAPH_SCHEMA_VERSION.to_string()
}

fn default_not_found() -> String {
    "mock://404".to_string()
}

/// What happens when an element is activated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effect {
    /// Load `url` in the current tab.
    Link { url: String },
    /// Route on the value typed into the input with id `field`.
    Submit {
        field: String,
        routes: BTreeMap<String, String>,
        fallback: String,
    },
    /// Unhide the node with id `target` on the same page.
    Reveal { target: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct MockNode {
    pub tag: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub text: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub interactive: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<MockNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    /// Not rendered until revealed.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub hidden: bool,
    /// Withheld while a hijackment on the page is unescaped.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub gated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_click: Option<Effect>,
    /// Triggered by `send_keys` Enter while this node has focus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_enter: Option<Effect>,
    /// Dropdown options (for `select` nodes).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    /// Option text -> URL loaded when that option is selected.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub on_select: BTreeMap<String, String>,
}

impl MockNode {
    pub fn new(tag: &str) -> Self {
        MockNode {
            tag: tag.to_string(),
            ..Default::default()
        }
    }

    pub fn text(mut self, t: impl Into<String>) -> Self {
        self.text = t.into();
        self
    }

    pub fn interactive(mut self) -> Self {
        self.interactive = true;
        self
    }

    pub fn attr(mut self, k: &str, v: impl Into<String>) -> Self {
        self.attributes.insert(k.to_string(), v.into());
        self
    }

    pub fn id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn hidden(mut self) -> Self {
        self.hidden = true;
        self
    }

    pub fn gated(mut self) -> Self {
        self.gated = true;
        self
    }

    pub fn on_click(mut self, e: Effect) -> Self {
        self.on_click = Some(e);
        self
    }

    pub fn on_enter(mut self, e: Effect) -> Self {
        self.on_enter = Some(e);
        self
    }

    pub fn child(mut self, c: MockNode) -> Self {
        self.children.push(c);
        self
    }

    pub fn link(text: impl Into<String>, url: impl Into<String>) -> Self {
        MockNode::new("a")
            .text(text)
            .interactive()
            .on_click(Effect::Link { url: url.into() })
    }

    pub fn paragraph(text: impl Into<String>) -> Self {
        MockNode::new("p").text(text)
    }

    fn walk<'a>(&'a self, f: &mut impl FnMut(&'a MockNode)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct MockPage {
    pub title: String,
    pub nodes: Vec<MockNode>,
    /// Screenshots are always attached for this page.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub visual_only: bool,
}

impl MockPage {
    pub fn new(title: impl Into<String>, nodes: Vec<MockNode>) -> Self {
        MockPage {
            title: title.into(),
            nodes,
            visual_only: false,
        }
    }

    pub fn find_by_id(&self, id: &str) -> Option<&MockNode> {
        let mut found = None;
        for n in &self.nodes {
            n.walk(&mut |m| {
                if found.is_none() && m.id.as_deref() == Some(id) {
                    found = Some(m);
                }
            });
        }
        found
    }

    fn effect_targets(&self) -> Vec<String> {
        let mut out = Vec::new();
        for n in &self.nodes {
            n.walk(&mut |m| {
                for e in m.on_click.iter().chain(m.on_enter.iter()) {
                    match e {
                        Effect::Link { url } => out.push(url.clone()),
                        Effect::Submit {
                            routes, fallback, ..
                        } => {
                            out.extend(routes.values().cloned());
                            out.push(fallback.clone());
                        }
                        Effect::Reveal { .. } => {}
                    }
                }
                out.extend(m.on_select.values().cloned());
            });
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HijackmentKind {
    /// Human-verification wall; lifted by the `solve_on_attempt`-th
    /// `solve_slider_captcha`.
    VerificationBarrier { solve_on_attempt: u32 },
    /// Consent overlay that swallows clicks until its consent button is hit.
    Popup { consent_text: String, message: String },
    /// Content arrives `latency_ticks` mock ticks after the page loads; an
    /// optional redirect chain moves the tab on arrival.
    DynamicShift {
        latency_ticks: u32,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        redirect_chain: Vec<String>,
    },
}

impl HijackmentKind {
    pub fn label(&self) -> &'static str {
        match self {
            HijackmentKind::VerificationBarrier { .. } => "verification_barrier",
            HijackmentKind::Popup { .. } => "popup",
            HijackmentKind::DynamicShift { .. } => "dynamic_shift",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hijackment {
    pub page: String,
    #[serde(flatten)]
    pub kind: HijackmentKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockSiteGraph {
    #[serde(default = "default_version")]
    pub schema_version: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_not_found")]
    pub not_found_url: String,
    pub pages: BTreeMap<String, MockPage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hijackments: Vec<Hijackment>,
    /// Engine name -> results page.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub search_pages: BTreeMap<String, String>,
}

impl MockSiteGraph {
    pub fn new(seed: u64) -> Self {
        let mut pages = BTreeMap::new();
        pages.insert(default_not_found(), not_found_page());
        MockSiteGraph {
            schema_version: default_version(),
            seed,
            not_found_url: default_not_found(),
            pages,
            hijackments: Vec::new(),
            search_pages: BTreeMap::new(),
        }
    }

    pub fn hijackment_for(&self, url: &str) -> Option<&HijackmentKind> {
        self.hijackments
            .iter()
            .find(|h| h.page == url)
            .map(|h| &h.kind)
    }

    pub fn validate(&self) -> Result<(), MockGraphError> {
        if self.schema_version != GRAPH_SCHEMA_VERSION {
            return Err(MockGraphError::SchemaVersion(self.schema_version.clone()));
        }
        if !self.pages.contains_key(&self.not_found_url) {
            return Err(MockGraphError::MissingNotFound(self.not_found_url.clone()));
        }
        for (url, page) in &self.pages {
            for target in page.effect_targets() {
                if !self.pages.contains_key(&target) {
                    return Err(MockGraphError::DanglingLink {
                        page: url.clone(),
                        target,
                    });
                }
            }
        }
        for target in self.search_pages.values() {
            if !self.pages.contains_key(target) {
                return Err(MockGraphError::DanglingLink {
                    page: "<search>".into(),
                    target: target.clone(),
                });
            }
        }
        for h in &self.hijackments {
            let bad = |reason: &str| MockGraphError::Hijackment {
                page: h.page.clone(),
                reason: reason.to_string(),
            };
            if !self.pages.contains_key(&h.page) {
                return Err(bad("trigger page is not defined"));
            }
            match &h.kind {
                HijackmentKind::VerificationBarrier { solve_on_attempt } => {
                    if *solve_on_attempt == 0 {
                        return Err(bad("solve_on_attempt must be >= 1"));
                    }
                }
                HijackmentKind::Popup { consent_text, .. } => {
                    if consent_text.trim().is_empty() {
                        return Err(bad("consent_text must be non-empty"));
                    }
                }
                HijackmentKind::DynamicShift { redirect_chain, .. } => {
                    if let Some(missing) =
                        redirect_chain.iter().find(|u| !self.pages.contains_key(*u))
                    {
                        return Err(MockGraphError::DanglingLink {
                            page: h.page.clone(),
                            target: missing.clone(),
                        });
                    }
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        for h in &self.hijackments {
            if !seen.insert(&h.page) {
                return Err(MockGraphError::Hijackment {
                    page: h.page.clone(),
                    reason: "more than one hijackment on a page".into(),
                });
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MockGraphError> {
        let text = std::fs::read_to_string(path)?;
        let graph: MockSiteGraph = serde_json::from_str(&text)?;
        graph.validate()?;
        Ok(graph)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    /// Stable content digest, used to pin replays to a graph.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("graph serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

pub fn not_found_page() -> MockPage {
    MockPage::new(
        "404 Not Found",
        vec![
            MockNode::new("h1").text("404 Not Found"),
            MockNode::paragraph("The requested page could not be found."),
        ],
    )
}
