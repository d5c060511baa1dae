//! Task configurations and suite manifests.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::TaskError;

pub const SUITE_SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "PRP")]
    Prp,
    #[serde(rename = "MRP")]
    Mrp,
    #[serde(rename = "CRP")]
    Crp,
    #[serde(rename = "LSCT")]
    Lsct,
    #[serde(rename = "CDCSA")]
    Cdcsa,
    #[serde(rename = "WAIV")]
    Waiv,
    #[serde(rename = "CCA")]
    Cca,
    #[serde(rename = "SPCV")]
    Spcv,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Prp,
        Category::Mrp,
        Category::Crp,
        Category::Lsct,
        Category::Cdcsa,
        Category::Waiv,
        Category::Cca,
        Category::Spcv,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Category::Prp => "PRP",
            Category::Mrp => "MRP",
            Category::Crp => "CRP",
            Category::Lsct => "LSCT",
            Category::Cdcsa => "CDCSA",
            Category::Waiv => "WAIV",
            Category::Cca => "CCA",
            Category::Spcv => "SPCV",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Category::Prp => "Product Risk Profile",
            Category::Mrp => "Merchant Risk Profile",
            Category::Crp => "Client Risk Profile",
            Category::Lsct => "Logistics and Supply Chain Tracking",
            Category::Cdcsa => "Customs Declaration & Clearance Status Audit",
            Category::Waiv => "Website Accessibility & Identity Verification",
            Category::Cca => "Content Consistency Assurance",
            Category::Spcv => "Secure Payment Channel Validation",
        }
    }
}

impl std::str::FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown category `{s}`"))
    }
}

/// Task counts of the gated production suite, for validating a mounted copy.
pub const OFFICIAL_COUNTS: [(Category, usize); 8] = [
    (Category::Prp, 332),
    (Category::Mrp, 194),
    (Category::Crp, 245),
    (Category::Lsct, 166),
    (Category::Cdcsa, 116),
    (Category::Waiv, 178),
    (Category::Cca, 108),
    (Category::Spcv, 174),
];
pub const OFFICIAL_TOTAL: usize = 1513;
pub const OFFICIAL_CHALLENGE_TOTAL: usize = 443;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    #[default]
    Standard,
    Challenge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMethod {
    Exact,
    Judge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evaluation {
    pub method: EvalMethod,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub id: String,
    pub category: Category,
    #[serde(default)]
    pub role: String,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sop: Option<Vec<String>>,
    #[serde(default)]
    pub output_format: String,
    pub evaluation: Evaluation,
    pub entry_url: String,
    #[serde(default)]
    pub subset: Subset,
}

pub const CHALLENGE_SUFFIX: &str = "-challenge";

impl TaskConfig {
    pub fn validate(&self) -> Result<(), TaskError> {
        let bad = |reason: &str| {
            Err(TaskError::Invalid {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.id.trim().is_empty() {
            return bad("empty id");
        }
        if self.instruction.trim().is_empty() {
            return bad("instruction is empty");
        }
        if self.evaluation.label.trim().is_empty() {
            return bad("evaluation label is empty");
        }
        if self.entry_url.trim().is_empty() {
            return bad("entry_url is empty");
        }
        match (&self.sop, self.subset) {
            (Some(_), Subset::Challenge) => return bad("challenge tasks carry no SOP"),
            (Some(s), Subset::Standard) if s.is_empty() => return bad("SOP is present but empty"),
            _ => {}
        }
        Ok(())
    }

    /// The same task with its SOP removed, moved to the challenge subset.
    pub fn derive_challenge_variant(&self) -> Result<TaskConfig, TaskError> {
        if self.sop.is_none() {
            return Err(TaskError::Invalid {
                id: self.id.clone(),
                reason: "no SOP to remove".into(),
            });
        }
        let mut t = self.clone();
        t.sop = None;
        t.subset = Subset::Challenge;
        t.id = format!("{}{CHALLENGE_SUFFIX}", self.id);
        Ok(t)
    }
}

/// One recorded step of a task's oracle: symbolic actions resolved against
/// the live page by the oracle policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OracleAction {
    /// Click the interactive element whose text equals `text`.
    ClickText { text: String },
    /// Type into the input whose placeholder equals `placeholder`.
    InputInto { placeholder: String, text: String },
    /// Choose `option` in the dropdown whose name attribute equals `name`.
    Select { name: String, option: String },
    Wait { seconds: u32 },
    SolveCaptcha,
    /// Finish with `answer` once `evidence` is visible on the page; otherwise
    /// give up with a failure answer.
    Done { answer: String, evidence: String },
}

pub type OracleScript = Vec<Vec<OracleAction>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub schema_version: String,
    pub name: String,
    /// Relative path of the site graph the tasks run against (mock backend).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<String>,
    #[serde(default)]
    pub category_counts: BTreeMap<Category, usize>,
    pub tasks: Vec<TaskConfig>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub oracles: BTreeMap<String, OracleScript>,
}

pub fn tally(tasks: &[TaskConfig]) -> BTreeMap<Category, usize> {
    let mut counts: BTreeMap<Category, usize> = Category::ALL.iter().map(|c| (*c, 0)).collect();
    for t in tasks {
        *counts.entry(t.category).or_default() += 1;
    }
    counts
}

impl SuiteManifest {
    pub fn new(name: impl Into<String>, tasks: Vec<TaskConfig>) -> Self {
        let category_counts = tally(&tasks);
        SuiteManifest {
            schema_version: SUITE_SCHEMA_VERSION.to_string(),
            name: name.into(),
            graph: None,
            category_counts,
            tasks,
            oracles: BTreeMap::new(),
        }
    }

    /// Validate every task and id uniqueness, then recompute the counts. A
    /// non-empty declared tally must agree with the recomputed one.
    pub fn validate(&mut self) -> Result<(), TaskError> {
        if self.schema_version != SUITE_SCHEMA_VERSION {
            return Err(TaskError::SchemaVersion(self.schema_version.clone()));
        }
        let mut seen = BTreeSet::new();
        for t in &self.tasks {
            t.validate()?;
            if !seen.insert(t.id.as_str()) {
                return Err(TaskError::DuplicateId(t.id.clone()));
            }
        }
        for id in self.oracles.keys() {
            if !seen.contains(id.as_str()) {
                return Err(TaskError::Invalid {
                    id: id.clone(),
                    reason: "oracle for unknown task".into(),
                });
            }
        }
        let actual = tally(&self.tasks);
        let declared_nonzero: BTreeMap<_, _> = self
            .category_counts
            .iter()
            .filter(|(_, n)| **n > 0)
            .map(|(c, n)| (*c, *n))
            .collect();
        let actual_nonzero: BTreeMap<_, _> =
            actual.iter().filter(|(_, n)| **n > 0).map(|(c, n)| (*c, *n)).collect();
        if !self.category_counts.is_empty() && declared_nonzero != actual_nonzero {
            return Err(TaskError::CountMismatch(format!(
                "declared {declared_nonzero:?}, found {actual_nonzero:?}"
            )));
        }
        self.category_counts = actual;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, TaskError> {
        let mut m: SuiteManifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, TaskError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Canonical serialization: pretty JSON, fixed field order, trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), TaskError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn task(&self, id: &str) -> Option<&TaskConfig> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn total(&self) -> usize {
        self.tasks.len()
    }

    /// Check the tally against the official production counts.
    pub fn check_official_counts(&self) -> Result<(), TaskError> {
        let actual = tally(&self.tasks);
        let mut problems = Vec::new();
        for (cat, want) in OFFICIAL_COUNTS {
            let got = actual.get(&cat).copied().unwrap_or(0);
            if got != want {
                problems.push(format!("{}: expected {want}, found {got}", cat.code()));
            }
        }
        if self.tasks.len() != OFFICIAL_TOTAL {
            problems.push(format!(
                "total: expected {OFFICIAL_TOTAL}, found {}",
                self.tasks.len()
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TaskError::CountMismatch(problems.join("; ")))
        }
    }
}

/// Where a suite comes from on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SuiteSpec {
    Path(std::path::PathBuf),
    Synthetic { seed: u64, count: usize },
}

impl std::str::FromStr for SuiteSpec {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let Some(rest) = s.strip_prefix("synthetic:") else {
            if s.is_empty() {
                return Err(TaskError::Specifier(s.into()));
            }
            return Ok(SuiteSpec::Path(s.into()));
        };
        let mut parts = rest.split(':');
        let (Some(seed), Some(count), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(TaskError::Specifier(s.into()));
        };
        let seed = seed.parse().map_err(|_| TaskError::Specifier(s.into()))?;
        let count: usize = count.parse().map_err(|_| TaskError::Specifier(s.into()))?;
        if count == 0 {
            return Err(TaskError::Specifier(s.into()));
        }
        Ok(SuiteSpec::Synthetic { seed, count })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample(id: &str, cat: Category, sop: bool) -> TaskConfig {
        TaskConfig {
            id: id.into(),
            category: cat,
            role: "Risk analyst".into(),
            instruction: "Find the value.".into(),
            sop: sop.then(|| vec!["Open the page".into(), "Read the value".into()]),
            output_format: "Plain text".into(),
            evaluation: Evaluation {
                method: EvalMethod::Exact,
                label: "42".into(),
            },
            entry_url: "https://example.test/".into(),
            subset: Subset::Standard,
        }
    }

    #[test]
    fn official_counts_sum() {
        assert_eq!(OFFICIAL_COUNTS.iter().map(|(_, n)| n).sum::<usize>(), OFFICIAL_TOTAL);
    }

    #[test]
    fn challenge_variant_drops_sop_once() {
        let t = sample("a", Category::Prp, true);
        let c = t.derive_challenge_variant().unwrap();
        assert_eq!(c.sop, None);
        assert_eq!(c.subset, Subset::Challenge);
        assert_eq!(c.id, "a-challenge");
        assert_eq!(c.evaluation, t.evaluation);
        assert_eq!(c.instruction, t.instruction);
        assert!(c.derive_challenge_variant().is_err());
        c.validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_tasks() {
        let mut t = sample("x", Category::Cca, false);
        t.instruction = " ".into();
        assert!(matches!(t.validate(), Err(TaskError::Invalid { id, .. }) if id == "x"));
        let mut t = sample("y", Category::Cca, true);
        t.subset = Subset::Challenge;
        assert!(t.validate().is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut m = SuiteManifest::new(
            "s",
            vec![sample("a", Category::Prp, false), sample("a", Category::Mrp, false)],
        );
        assert!(matches!(m.validate(), Err(TaskError::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn declared_counts_must_match() {
        let mut m = SuiteManifest::new("s", vec![sample("a", Category::Prp, false)]);
        m.category_counts.insert(Category::Mrp, 3);
        assert!(matches!(m.validate(), Err(TaskError::CountMismatch(_))));
    }

    #[test]
    fn specifier_parsing() {
        assert_eq!(
            "synthetic:42:2".parse::<SuiteSpec>().unwrap(),
            SuiteSpec::Synthetic { seed: 42, count: 2 }
        );
        assert!(matches!("suite.json".parse::<SuiteSpec>().unwrap(), SuiteSpec::Path(_)));
        for bad in ["synthetic:x:2", "synthetic:1", "synthetic:1:0", "synthetic:1:2:3", ""] {
            assert!(bad.parse::<SuiteSpec>().is_err(), "{bad}");
        }
    }
}
