//! Typed capability profiles.
//!
//! A profile partitions domain labels into strong, mixed and weak sets and
//! optionally carries a per-domain evidence vocabulary used by the router's
//! alignment check. Profiles are parsed from a small TOML document:
//!
//! ```toml
//! id = "PCS-NLP"
//! strong = ["machine_learning"]
//! mixed = ["formal_logic"]
//! weak = ["philosophy"]
//! alignment_threshold = 0.5          # optional
//! undeclared_policy = "treat_as_weak" # optional, or "reject"
//!
//! [vocabulary]                        # optional
//! machine_learning = ["gradient", "neural network"]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_ALIGNMENT_THRESHOLD: f64 = 0.5;

const PCS_NLP_SOURCE: &str = include_str!("../../../profiles/pcs-nlp.toml");
const PCS_LITPROF_SOURCE: &str = include_str!("../../../profiles/pcs-litprof.toml");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("profile is not valid TOML: {0}")]
    Syntax(String),
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("domain `{label}` is declared in both `{first}` and `{second}`")]
    Overlap {
        label: DomainLabel,
        first: Partition,
        second: Partition,
    },
    #[error("alignment_threshold {0} is outside [0, 1]")]
    ThresholdOutOfRange(f64),
    #[error("profile declares no domains")]
    NoDomains,
    #[error("vocabulary key `{0}` is not declared in any partition")]
    VocabularyUndeclared(DomainLabel),
    #[error("failed to read profile {path}: {message}")]
    Io { path: String, message: String },
}

impl ProfileError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        ProfileError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("`{0}` does not normalize to a domain label")]
pub struct LabelError(pub String);

/// Normalized domain identifier: lowercase ASCII alphanumerics joined by `_`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DomainLabel(String);

impl DomainLabel {
    /// Normalizes free text such as `"Machine Learning"` into `machine_learning`.
    pub fn parse(raw: &str) -> Result<Self, LabelError> {
        let mut out = String::with_capacity(raw.len());
        let mut pending_sep = false;
        for ch in raw.chars() {
            if ch.is_ascii_alphanumeric() {
                if pending_sep && !out.is_empty() {
                    out.push('_');
                }
                pending_sep = false;
                out.push(ch.to_ascii_lowercase());
            } else {
                pending_sep = true;
            }
        }
        if out.is_empty() {
            return Err(LabelError(raw.to_string()));
        }
        Ok(DomainLabel(out))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DomainLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for DomainLabel {
    type Error = LabelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        DomainLabel::parse(&value)
    }
}

impl From<DomainLabel> for String {
    fn from(value: DomainLabel) -> Self {
        value.0
    }
}

impl std::str::FromStr for DomainLabel {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DomainLabel::parse(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Strong,
    Mixed,
    Weak,
    Undeclared,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Strong => "strong",
            Partition::Mixed => "mixed",
            Partition::Weak => "weak",
            Partition::Undeclared => "undeclared",
        }
    }

    /// Expected intervention pressure: strong < mixed < weak. Undeclared
    /// ranks with weak.
    pub fn escalation_rank(self) -> i8 {
        match self {
            Partition::Strong => 0,
            Partition::Mixed => 1,
            Partition::Weak | Partition::Undeclared => 2,
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UndeclaredPolicy {
    #[default]
    TreatAsWeak,
    Reject,
}

impl UndeclaredPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            UndeclaredPolicy::TreatAsWeak => "treat_as_weak",
            UndeclaredPolicy::Reject => "reject",
        }
    }
}

/// A validated, immutable capability profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityProfile {
    id: String,
    strong: BTreeSet<DomainLabel>,
    mixed: BTreeSet<DomainLabel>,
    weak: BTreeSet<DomainLabel>,
    vocabulary: BTreeMap<DomainLabel, Vec<String>>,
    alignment_threshold: f64,
    undeclared_policy: UndeclaredPolicy,
}

/// Unvalidated profile fields, used to construct profiles programmatically.
#[derive(Debug, Clone, Default)]
pub struct ProfileDraft {
    pub id: String,
    pub strong: Vec<DomainLabel>,
    pub mixed: Vec<DomainLabel>,
    pub weak: Vec<DomainLabel>,
    pub vocabulary: BTreeMap<DomainLabel, Vec<String>>,
    pub alignment_threshold: Option<f64>,
    pub undeclared_policy: Option<UndeclaredPolicy>,
}

impl ProfileDraft {
    pub fn build(self) -> Result<CapabilityProfile, ProfileError> {
        if self.id.trim().is_empty() {
            return Err(ProfileError::schema("id", "must be a non-empty string"));
        }
        let threshold = self.alignment_threshold.unwrap_or(DEFAULT_ALIGNMENT_THRESHOLD);
        if !(0.0..=1.0).contains(&threshold) {
            return Err(ProfileError::ThresholdOutOfRange(threshold));
        }

        let mut seen: BTreeMap<DomainLabel, Partition> = BTreeMap::new();
        let mut sets = [BTreeSet::new(), BTreeSet::new(), BTreeSet::new()];
        let groups = [
            (Partition::Strong, self.strong),
            (Partition::Mixed, self.mixed),
            (Partition::Weak, self.weak),
        ];
        for (slot, (partition, labels)) in groups.into_iter().enumerate() {
            for label in labels {
                if let Some(first) = seen.get(&label) {
                    return Err(ProfileError::Overlap {
                        label,
                        first: *first,
                        second: partition,
                    });
                }
                seen.insert(label.clone(), partition);
                sets[slot].insert(label);
            }
        }
        if seen.is_empty() {
            return Err(ProfileError::NoDomains);
        }

        let mut vocabulary = BTreeMap::new();
        for (label, words) in self.vocabulary {
            if !seen.contains_key(&label) {
                return Err(ProfileError::VocabularyUndeclared(label));
            }
            let words: Vec<String> = words
                .into_iter()
                .map(|w| w.trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect();
            vocabulary.insert(label, words);
        }

        let [strong, mixed, weak] = sets;
        Ok(CapabilityProfile {
            id: self.id.trim().to_string(),
            strong,
            mixed,
            weak,
            vocabulary,
            alignment_threshold: threshold,
            undeclared_policy: self.undeclared_policy.unwrap_or_default(),
        })
    }
}

impl CapabilityProfile {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn strong(&self) -> &BTreeSet<DomainLabel> {
        &self.strong
    }

    pub fn mixed(&self) -> &BTreeSet<DomainLabel> {
        &self.mixed
    }

    pub fn weak(&self) -> &BTreeSet<DomainLabel> {
        &self.weak
    }

    pub fn vocabulary(&self) -> &BTreeMap<DomainLabel, Vec<String>> {
        &self.vocabulary
    }

    pub fn alignment_threshold(&self) -> f64 {
        self.alignment_threshold
    }

    pub fn undeclared_policy(&self) -> UndeclaredPolicy {
        self.undeclared_policy
    }

    /// Returns a copy with the vocabulary replaced. Keys must be declared.
    pub fn with_vocabulary(
        &self,
        vocabulary: BTreeMap<DomainLabel, Vec<String>>,
    ) -> Result<Self, ProfileError> {
        let mut draft = self.to_draft();
        draft.vocabulary = vocabulary;
        draft.build()
    }

    pub fn with_undeclared_policy(&self, policy: UndeclaredPolicy) -> Self {
        let mut out = self.clone();
        out.undeclared_policy = policy;
        out
    }

    pub fn to_draft(&self) -> ProfileDraft {
        ProfileDraft {
            id: self.id.clone(),
            strong: self.strong.iter().cloned().collect(),
            mixed: self.mixed.iter().cloned().collect(),
            weak: self.weak.iter().cloned().collect(),
            vocabulary: self.vocabulary.clone(),
            alignment_threshold: Some(self.alignment_threshold),
            undeclared_policy: Some(self.undeclared_policy),
        }
    }

    pub fn classify(&self, label: &DomainLabel) -> Partition {
        classify_domain(self, label)
    }

    /// Vocabulary of every domain in `partition`, flattened.
    pub fn partition_vocabulary(&self, partition: Partition) -> impl Iterator<Item = &str> {
        let set = match partition {
            Partition::Strong => Some(&self.strong),
            Partition::Mixed => Some(&self.mixed),
            Partition::Weak => Some(&self.weak),
            Partition::Undeclared => None,
        };
        self.vocabulary
            .iter()
            .filter(move |(label, _)| set.is_some_and(|s| s.contains(*label)))
            .flat_map(|(_, words)| words.iter().map(String::as_str))
    }

    /// Canonical TOML serialization; `parse_profile` of the output yields an
    /// equal profile.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("id = {}\n", toml_string(&self.id)));
        for (key, set) in [
            ("strong", &self.strong),
            ("mixed", &self.mixed),
            ("weak", &self.weak),
        ] {
            out.push_str(&format!("{key} = {}\n", toml_array(set.iter().map(|l| l.as_str()))));
        }
        out.push_str(&format!(
            "alignment_threshold = {}\n",
            format_threshold(self.alignment_threshold)
        ));
        out.push_str(&format!(
            "undeclared_policy = \"{}\"\n",
            self.undeclared_policy.as_str()
        ));
        if !self.vocabulary.is_empty() {
            out.push_str("\n[vocabulary]\n");
            for (label, words) in &self.vocabulary {
                out.push_str(&format!(
                    "{label} = {}\n",
                    toml_array(words.iter().map(String::as_str))
                ));
            }
        }
        out
    }
}

fn format_threshold(value: f64) -> String {
    // `{:?}` prints the shortest round-tripping form and keeps a decimal point.
    format!("{value:?}")
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn toml_array<'a>(items: impl Iterator<Item = &'a str>) -> String {
    let parts: Vec<String> = items.map(toml_string).collect();
    format!("[{}]", parts.join(", "))
}

/// Parses and validates a profile document.
pub fn parse_profile(document: &str) -> Result<CapabilityProfile, ProfileError> {
    let table: toml::Table = document
        .parse()
        .map_err(|e: toml::de::Error| ProfileError::Syntax(e.message().to_string()))?;

    let mut draft = ProfileDraft::default();
    let mut have_id = false;
    for (key, value) in &table {
        match key.as_str() {
            "id" => {
                draft.id = value
                    .as_str()
                    .ok_or_else(|| ProfileError::schema("id", "expected a string"))?
                    .to_string();
                have_id = true;
            }
            "strong" => draft.strong = label_array(value, "strong")?,
            "mixed" => draft.mixed = label_array(value, "mixed")?,
            "weak" => draft.weak = label_array(value, "weak")?,
            "vocabulary" => {
                let vocab = value.as_table().ok_or_else(|| {
                    ProfileError::schema("vocabulary", "expected a table of label = [keywords]")
                })?;
                for (raw_label, words) in vocab {
                    let path = format!("vocabulary.{raw_label}");
                    let label = DomainLabel::parse(raw_label)
                        .map_err(|e| ProfileError::schema(&path, e.to_string()))?;
                    let words = string_array(words, &path)?;
                    if draft.vocabulary.insert(label.clone(), words).is_some() {
                        return Err(ProfileError::schema(
                            &path,
                            format!("duplicate vocabulary entry for `{label}`"),
                        ));
                    }
                }
            }
            "alignment_threshold" => {
                let v = match value {
                    toml::Value::Float(f) => *f,
                    toml::Value::Integer(i) => *i as f64,
                    _ => {
                        return Err(ProfileError::schema(
                            "alignment_threshold",
                            "expected a number",
                        ))
                    }
                };
                draft.alignment_threshold = Some(v);
            }
            "undeclared_policy" => {
                let policy = match value.as_str() {
                    Some("treat_as_weak") => UndeclaredPolicy::TreatAsWeak,
                    Some("reject") => UndeclaredPolicy::Reject,
                    _ => {
                        return Err(ProfileError::schema(
                            "undeclared_policy",
                            "expected \"treat_as_weak\" or \"reject\"",
                        ))
                    }
                };
                draft.undeclared_policy = Some(policy);
            }
            other => return Err(ProfileError::schema(other, "unknown key")),
        }
    }
    if !have_id {
        return Err(ProfileError::schema("id", "missing required key"));
    }
    for key in ["strong", "mixed", "weak"] {
        if !table.contains_key(key) {
            return Err(ProfileError::schema(key, "missing required key"));
        }
    }
    draft.build()
}

pub fn load_profile(path: &Path) -> Result<CapabilityProfile, ProfileError> {
    let text = std::fs::read_to_string(path).map_err(|e| ProfileError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_profile(&text)
}

fn string_array(value: &toml::Value, path: &str) -> Result<Vec<String>, ProfileError> {
    let arr = value
        .as_array()
        .ok_or_else(|| ProfileError::schema(path, "expected an array of strings"))?;
    arr.iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| ProfileError::schema(format!("{path}[{i}]"), "expected a string"))
        })
        .collect()
}

fn label_array(value: &toml::Value, path: &str) -> Result<Vec<DomainLabel>, ProfileError> {
    string_array(value, path)?
        .iter()
        .enumerate()
        .map(|(i, raw)| {
            DomainLabel::parse(raw)
                .map_err(|e| ProfileError::schema(format!("{path}[{i}]"), e.to_string()))
        })
        .collect()
}

/// Raw text of the bundled profile files, in `builtin_profiles` order.
pub fn builtin_sources() -> [(&'static str, &'static str); 2] {
    [
        ("pcs-nlp", PCS_NLP_SOURCE),
        ("pcs-litprof", PCS_LITPROF_SOURCE),
    ]
}

/// The two bundled profiles: PCS-NLP and its inversion PCS-LitProf.
pub fn builtin_profiles() -> Vec<CapabilityProfile> {
    builtin_sources()
        .iter()
        .map(|(name, src)| {
            parse_profile(src).unwrap_or_else(|e| panic!("bundled profile {name} is invalid: {e}"))
        })
        .collect()
}

/// Looks up a builtin by file stem (`pcs-nlp`) or id (`PCS-NLP`), case-insensitively.
pub fn builtin_profile(name: &str) -> Option<CapabilityProfile> {
    let wanted = name.to_ascii_lowercase();
    builtin_sources()
        .iter()
        .zip(builtin_profiles())
        .find(|((stem, _), p)| *stem == wanted || p.id().to_ascii_lowercase() == wanted)
        .map(|(_, p)| p)
}

pub fn classify_domain(profile: &CapabilityProfile, label: &DomainLabel) -> Partition {
    if profile.strong.contains(label) {
        Partition::Strong
    } else if profile.mixed.contains(label) {
        Partition::Mixed
    } else if profile.weak.contains(label) {
        Partition::Weak
    } else {
        Partition::Undeclared
    }
}
