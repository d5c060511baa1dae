//! Fixture corpora shared by the golden and acceptance targets.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use webenv_core::action::parse_model_output;
use webenv_core::config::{EpisodeConfig, PromptMode};
use webenv_core::dom::{serialize_dom, DomSnapshot};

fn fixtures(sub: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(sub)
}

#[derive(Deserialize)]
struct ActionCase {
    name: String,
    mode: PromptMode,
    raw: String,
    expect: String,
    #[serde(default)]
    strict_fences: bool,
    actions: Option<Vec<String>>,
    fence_stripped: Option<bool>,
    ignored_fields: Option<Vec<String>>,
}

pub fn action_cases() -> Vec<(String, Result<(), String>)> {
    let text = std::fs::read_to_string(fixtures("actions/corpus.jsonl")).unwrap();
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let case: ActionCase = serde_json::from_str(line).unwrap();
        let cfg = EpisodeConfig {
            lenient_fences: !case.strict_fences,
            ..Default::default()
        };
        let got = parse_model_output(&case.raw, case.mode, &cfg);
        let check = match (&got, case.expect.as_str()) {
            (Ok(env), "ok") => {
                let keys: Vec<String> = env.actions.iter().map(|a| a.key().to_string()).collect();
                if case.actions.as_ref().is_some_and(|a| *a != keys) {
                    Err(format!("actions {keys:?}, expected {:?}", case.actions))
                } else if case.fence_stripped.is_some_and(|f| f != env.fence_stripped) {
                    Err(format!("fence_stripped {}", env.fence_stripped))
                } else if case.ignored_fields.as_ref().is_some_and(|f| *f != env.ignored_fields) {
                    Err(format!("ignored_fields {:?}", env.ignored_fields))
                } else {
                    Ok(())
                }
            }
            (Err(f), want) if f.reason.as_str() == want => Ok(()),
            (Ok(_), want) => Err(format!("parsed, expected {want}")),
            (Err(f), want) => Err(format!("{f}, expected {want}")),
        };
        out.push((case.name, check));
    }
    out
}

#[derive(Deserialize)]
struct DomCase {
    previous: Option<DomSnapshot>,
    snapshot: DomSnapshot,
}

pub fn dom_cases() -> Vec<(String, Result<(), String>)> {
    let dir = fixtures("dom");
    let mut inputs: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    inputs.sort();
    inputs
        .into_iter()
        .map(|p| {
            let case: DomCase = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
            let expected = std::fs::read_to_string(p.with_extension("txt")).unwrap();
            let prev_map = case.previous.as_ref().map(|s| serialize_dom(s, None).1);
            let (text, _) = serialize_dom(&case.snapshot, prev_map.as_ref());
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let check = if text == expected.strip_suffix('\n').unwrap_or(&expected) {
                Ok(())
            } else {
                Err(format!("got:\n{text}\nexpected:\n{expected}"))
            };
            (name, check)
        })
        .collect()
}
