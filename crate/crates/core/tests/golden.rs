mod common;

use common::{action_cases, dom_cases};

fn report(cases: Vec<(String, Result<(), String>)>, min: usize) {
    assert!(cases.len() >= min, "only {} cases", cases.len());
    let failed: Vec<_> = cases
        .iter()
        .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")))
        .collect();
    assert!(failed.is_empty(), "{}", failed.join("\n"));
}

#[test]
fn action_output_corpus() {
    report(action_cases(), 25);
}

#[test]
fn dom_serialization_goldens() {
    report(dom_cases(), 10);
}
