//! Page snapshots and their indexed text serialization.
//!
//! Interactive nodes are rendered as `[index]<tag attrs>text</tag>`, one tab
//! of indentation per indexed ancestor. Plain text nodes are rendered bare.
//! On a page whose URL did not change since the previous step, elements that
//! were not present before are prefixed with `*`, and elements that persist
//! keep the index they had.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

/// Attributes echoed into the serialized element, in this order.
pub const RENDERED_ATTRIBUTES: &[&str] = &[
    "aria-label",
    "placeholder",
    "type",
    "name",
    "role",
    "value",
    "title",
    "alt",
];

/// Element and attribute text longer than this is cut and marked with `...`.
pub const MAX_TEXT_CHARS: usize = 120;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct DomNode {
    pub tag: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub text: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub interactive: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<DomNode>,
}

impl DomNode {
    pub fn new(tag: impl Into<String>) -> Self {
        DomNode {
            tag: tag.into(),
            ..Default::default()
        }
    }

    pub fn text(mut self, text: impl Into<String>) -> Self {
        self.text = text.into();
        self
    }

    pub fn interactive(mut self) -> Self {
        self.interactive = true;
        self
    }

    pub fn attr(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.insert(key.into(), value.into());
        self
    }

    pub fn child(mut self, child: DomNode) -> Self {
        self.children.push(child);
        self
    }

    pub fn with_children(mut self, children: impl IntoIterator<Item = DomNode>) -> Self {
        self.children.extend(children);
        self
    }

    /// Node at a `/`-separated child-index path; the empty path is `self`.
    pub fn at_path(&self, path: &str) -> Option<&DomNode> {
        let mut node = self;
        if path.is_empty() {
            return Some(node);
        }
        for seg in path.split('/') {
            let i: usize = seg.parse().ok()?;
            node = node.children.get(i)?;
        }
        Some(node)
    }

    /// All text in this subtree, in document order, whitespace-collapsed.
    pub fn collect_text(&self) -> String {
        let mut parts = Vec::new();
        fn walk<'a>(n: &'a DomNode, out: &mut Vec<&'a str>) {
            if !n.text.trim().is_empty() {
                out.push(n.text.trim());
            }
            for c in &n.children {
                walk(c, out);
            }
        }
        walk(self, &mut parts);
        collapse_whitespace(&parts.join("\n"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabInfo {
    pub tab_id: String,
    pub url: String,
    pub title: String,
}

/// What a backend observed on the active tab.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomSnapshot {
    pub root: DomNode,
    pub current_url: String,
    pub title: String,
    pub open_tabs: Vec<TabInfo>,
    pub active_tab: String,
    pub page_text: String,
    /// Opaque handle (content hash) of a captured screenshot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screenshot: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexedElement {
    pub index: u32,
    pub path: String,
    pub tag: String,
    pub text: String,
    pub depth: u32,
    pub is_new: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

impl IndexedElement {
    fn identity(&self) -> (&str, &str, &str) {
        (&self.path, &self.tag, &self.text)
    }

    /// Whether typing text into this element makes sense.
    pub fn is_inputtable(&self) -> bool {
        match self.tag.as_str() {
            "textarea" => true,
            "input" => !matches!(
                self.attributes.get("type").map(String::as_str),
                Some("button" | "submit" | "reset" | "checkbox" | "radio" | "image" | "file")
            ),
            _ => self.attributes.get("contenteditable").map(String::as_str) == Some("true"),
        }
    }

    pub fn is_selectable(&self) -> bool {
        self.tag == "select"
            || matches!(
                self.attributes.get("role").map(String::as_str),
                Some("listbox" | "combobox")
            )
    }
}

/// Interactive elements of one serialized page, in document order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct IndexedElementMap {
    pub url: String,
    pub entries: Vec<IndexedElement>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl IndexedElementMap {
    pub fn get(&self, index: u32) -> Option<&IndexedElement> {
        self.entries.iter().find(|e| e.index == index)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_index(&self) -> Option<u32> {
        self.entries.iter().map(|e| e.index).max()
    }

    pub fn new_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_new).count()
    }
}

pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn cap_text(s: &str) -> String {
    let collapsed = collapse_whitespace(s);
    if collapsed.chars().count() > MAX_TEXT_CHARS {
        let cut: String = collapsed.chars().take(MAX_TEXT_CHARS).collect();
        format!("{cut}...")
    } else {
        collapsed
    }
}

struct Serializer<'a> {
    previous: HashMap<(&'a str, &'a str, &'a str), u32>,
    mark_new: bool,
    next_index: u32,
    lines: Vec<String>,
    map: IndexedElementMap,
}

impl Serializer<'_> {
    fn walk(&mut self, node: &DomNode, path: String, depth: u32) {
        if node.tag.trim().is_empty() {
            self.map
                .notes
                .push(format!("skipped malformed node at `{path}`: empty tag"));
            return;
        }
        let indent = "\t".repeat(depth as usize);
        let text = cap_text(&node.text);
        let child_depth = if node.interactive {
            let tag = node.tag.trim().to_ascii_lowercase();
            let prior = self
                .previous
                .get(&(path.as_str(), tag.as_str(), text.as_str()))
                .copied();
            let (index, is_new) = match prior {
                Some(i) => (i, false),
                None => {
                    let i = self.next_index;
                    self.next_index += 1;
                    (i, self.mark_new)
                }
            };
            let attributes: BTreeMap<String, String> = node
                .attributes
                .iter()
                .filter(|(k, _)| {
                    RENDERED_ATTRIBUTES.contains(&k.as_str()) || k.as_str() == "contenteditable"
                })
                .map(|(k, v)| (k.clone(), cap_text(v)))
                .collect();
            let mut rendered_attrs = String::new();
            for key in RENDERED_ATTRIBUTES {
                if let Some(v) = attributes.get(*key) {
                    rendered_attrs.push_str(&format!(" {key}='{v}'"));
                }
            }
            let star = if is_new { "*" } else { "" };
            self.lines.push(format!(
                "{indent}{star}[{index}]<{tag}{rendered_attrs}>{text}</{tag}>"
            ));
            self.map.entries.push(IndexedElement {
                index,
                path: path.clone(),
                tag,
                text,
                depth,
                is_new,
                attributes,
            });
            depth + 1
        } else {
            if !text.is_empty() {
                self.lines.push(format!("{indent}{text}"));
            }
            depth
        };
        for (i, child) in node.children.iter().enumerate() {
            let child_path = if path.is_empty() {
                i.to_string()
            } else {
                format!("{path}/{i}")
            };
            self.walk(child, child_path, child_depth);
        }
    }
}

/// Render a snapshot as indexed text and build its element map.
///
/// `previous` is the map produced for the prior observation. When it was taken
/// on the same URL, persisting elements keep their indices and new ones are
/// starred and numbered after the previous maximum.
pub fn serialize_dom(
    snapshot: &DomSnapshot,
    previous: Option<&IndexedElementMap>,
) -> (String, IndexedElementMap) {
    let same_url = previous.is_some_and(|p| p.url == snapshot.current_url);
    let mut prior = HashMap::new();
    let mut next_index = 0;
    if same_url {
        let prev = previous.expect("same_url implies previous");
        for e in &prev.entries {
            prior.insert(e.identity(), e.index);
        }
        next_index = prev.max_index().map_or(0, |m| m + 1);
    }
    let mut s = Serializer {
        previous: prior,
        mark_new: same_url,
        next_index,
        lines: Vec::new(),
        map: IndexedElementMap {
            url: snapshot.current_url.clone(),
            ..Default::default()
        },
    };
    s.walk(&snapshot.root, String::new(), 0);
    (s.lines.join("\n"), s.map)
}

/// Recompute star flags of `current` against `previous`.
pub fn diff_new_elements(
    current: &IndexedElementMap,
    previous: &IndexedElementMap,
    same_url: bool,
) -> IndexedElementMap {
    let known: std::collections::HashSet<_> =
        previous.entries.iter().map(IndexedElement::identity).collect();
    let mut out = current.clone();
    for e in &mut out.entries {
        e.is_new = same_url && !known.contains(&e.identity());
    }
    out
}
