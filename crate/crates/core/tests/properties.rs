use std::collections::BTreeSet;

use proptest::prelude::*;

use webenv_core::action::parse_model_output;
use webenv_core::config::{EpisodeConfig, PromptMode};
use webenv_core::dom::{serialize_dom, DomNode, DomSnapshot, TabInfo};
use webenv_core::eval::Tier;
use webenv_core::reward::{group_advantages, group_rewards, DEFAULT_EPSILON, DEFAULT_GAMMA};

fn node() -> impl Strategy<Value = DomNode> {
    let leaf = (
        prop::sample::select(vec!["div", "a", "button", "span", "p", "input", ""]),
        "[a-z ]{0,12}",
        any::<bool>(),
    )
        .prop_map(|(tag, text, interactive)| DomNode {
            tag: tag.into(),
            text,
            interactive,
            ..Default::default()
        });
    leaf.prop_recursive(4, 40, 5, |inner| {
        (
            prop::sample::select(vec!["div", "ul", "li", "a", "form", "section"]),
            "[a-z ]{0,8}",
            any::<bool>(),
            prop::collection::vec(inner, 0..5),
        )
            .prop_map(|(tag, text, interactive, children)| DomNode {
                tag: tag.into(),
                text,
                interactive,
                children,
                ..Default::default()
            })
    })
}

fn snapshot(root: DomNode, url: &str) -> DomSnapshot {
    DomSnapshot {
        root: DomNode::new("body").with_children([root]),
        current_url: url.into(),
        title: String::new(),
        open_tabs: vec![TabInfo {
            tab_id: "t0".into(),
            url: url.into(),
            title: String::new(),
        }],
        active_tab: "t0".into(),
        page_text: String::new(),
        screenshot: None,
    }
}

/// Interactive ancestors of the node at `path`, counted by walking the tree.
fn indexed_ancestors(root: &DomNode, path: &str) -> u32 {
    let mut n = 0;
    let mut cur = root;
    for seg in path.split('/').filter(|s| !s.is_empty()) {
        if cur.interactive {
            n += 1;
        }
        cur = &cur.children[seg.parse::<usize>().unwrap()];
    }
    n
}

proptest! {
    #[test]
    fn depth_is_the_indexed_ancestor_count(root in node()) {
        let snap = snapshot(root, "https://a.test/");
        let (text, map) = serialize_dom(&snap, None);
        let lines: Vec<&str> = text.lines().collect();
        for e in &map.entries {
            prop_assert_eq!(e.depth, indexed_ancestors(&snap.root, &e.path));
            let marker = format!("[{}]<", e.index);
            let line = lines.iter().find(|l| l.trim_start_matches('\t').starts_with(&marker)).unwrap();
            prop_assert_eq!(line.len() - line.trim_start_matches('\t').len(), e.depth as usize);
        }
    }

    #[test]
    fn fresh_pages_are_numbered_from_zero_without_stars(root in node()) {
        let (text, map) = serialize_dom(&snapshot(root, "https://a.test/"), None);
        let idx: Vec<u32> = map.entries.iter().map(|e| e.index).collect();
        prop_assert_eq!(idx, (0..map.entries.len() as u32).collect::<Vec<_>>());
        prop_assert!(!text.contains("*["));
    }

    #[test]
    fn serialization_is_deterministic_and_idempotent(root in node()) {
        let snap = snapshot(root, "https://a.test/");
        let (a, map_a) = serialize_dom(&snap, None);
        let (b, map_b) = serialize_dom(&snap, None);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&map_a, &map_b);
        let (again, map_again) = serialize_dom(&snap, Some(&map_a));
        prop_assert_eq!(&again, &a);
        prop_assert_eq!(map_again.entries, map_a.entries);
    }

    #[test]
    fn new_elements_on_the_same_url_are_starred_after_the_old_maximum(
        before in node(),
        after in node(),
    ) {
        let (_, prev) = serialize_dom(&snapshot(before, "https://a.test/"), None);
        let (_, cur) = serialize_dom(&snapshot(after.clone(), "https://a.test/"), Some(&prev));
        let floor = prev.max_index().map_or(0, |m| m + 1);
        let known: BTreeSet<u32> = prev.entries.iter().map(|e| e.index).collect();
        let mut seen = BTreeSet::new();
        for e in &cur.entries {
            prop_assert!(seen.insert(e.index), "duplicate index {}", e.index);
            if e.is_new {
                prop_assert!(e.index >= floor);
            } else {
                prop_assert!(known.contains(&e.index));
            }
        }
        let (_, moved) = serialize_dom(&snapshot(after, "https://b.test/"), Some(&prev));
        prop_assert!(moved.entries.iter().all(|e| !e.is_new));
    }

    #[test]
    fn parsing_is_total(raw in ".{0,300}", flash in any::<bool>()) {
        let mode = if flash { PromptMode::Flash } else { PromptMode::Normal };
        let cfg = EpisodeConfig::default();
        if let Ok(env) = parse_model_output(&raw, mode, &cfg) {
            prop_assert!(!env.actions.is_empty());
            prop_assert!(env.actions.len() <= cfg.max_actions_per_step as usize);
        }
    }

    #[test]
    fn rewards_are_bounded_and_decay_with_length(
        lens in prop::collection::vec(1usize..=20, 1..8),
        valid_p in 0.0f64..=1.0,
    ) {
        let group: Vec<(Vec<bool>, Tier)> = lens
            .iter()
            .enumerate()
            .map(|(i, l)| ((0..*l).map(|s| ((s * 7 + i) % 100) as f64 / 100.0 < valid_p).collect(), Tier::Correct))
            .collect();
        let rs = group_rewards(&group, DEFAULT_GAMMA).unwrap();
        for ((v, _), r) in group.iter().zip(&rs) {
            prop_assert!(r.decay_exponent >= 0.0);
            let completion = r.total - r.step_sum;
            prop_assert!(completion > 0.0 && completion <= 1.0 + 1e-12);
            prop_assert!(r.step_sum.abs() <= 0.02 * v.len() as f64 + 1e-12);
        }
        for (a, ra) in group.iter().zip(&rs) {
            for (b, rb) in group.iter().zip(&rs) {
                if a.0.len() < b.0.len() {
                    prop_assert!(ra.total - ra.step_sum > rb.total - rb.step_sum);
                }
            }
        }
    }

    #[test]
    fn advantages_are_centered(rewards in prop::collection::vec(-2.0f64..2.0, 1..32)) {
        let g = group_advantages(&rewards, DEFAULT_EPSILON).unwrap();
        prop_assert!(g.advantages.iter().sum::<f64>().abs() < 1e-8);
        prop_assert!(g.std >= 0.0);
    }
}
