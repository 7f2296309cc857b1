//! Question corpora: MMLU-style CSV/JSONL loaders, seeded subset sampling,
//! question × condition expansion, and the persona scenario corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::{CapabilityProfile, DomainLabel, Partition};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    MalformedRow {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: expected 4 choices, found {found}")]
    WrongChoiceCount {
        path: String,
        line: usize,
        found: usize,
    },
    #[error("cannot infer a subject from file name {0}")]
    NoSubject(String),
    #[error("requested {requested} items but only {available} are available")]
    InsufficientItems { requested: usize, available: usize },
    #[error("persona `{role}` is missing zone `{zone}`")]
    MissingZone { role: String, zone: &'static str },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("duplicate item id `{0}`")]
    DuplicateId(String),
}

/// One benchmark question. Multiple-choice items have exactly four choices
/// and an answer index; open-ended items (persona scenarios) have neither.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub subject: DomainLabel,
    pub question: String,
    #[serde(default)]
    pub choices: Vec<String>,
    #[serde(default)]
    pub answer_index: Option<u8>,
    #[serde(default)]
    pub ambiguous: bool,
}

impl Item {
    /// Text the router scans for evidence.
    pub fn evidence_text(&self) -> String {
        let mut s = self.question.clone();
        for c in &self.choices {
            s.push('\n');
            s.push_str(c);
        }
        s
    }

    pub fn is_multiple_choice(&self) -> bool {
        !self.choices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    Baseline,
    Profile(String),
}

impl Condition {
    pub fn profile_id(&self) -> Option<&str> {
        match self {
            Condition::Baseline => None,
            Condition::Profile(id) => Some(id),
        }
    }

    pub fn parse(s: &str) -> Self {
        if s.eq_ignore_ascii_case("baseline") {
            Condition::Baseline
        } else {
            Condition::Profile(s.to_string())
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Baseline => f.write_str("baseline"),
            Condition::Profile(id) => f.write_str(id),
        }
    }
}

impl Serialize for Condition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Condition::parse(&s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionPair {
    pub item: Item,
    pub condition: Condition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemFormat {
    Csv,
    Jsonl,
}

impl ItemFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(ItemFormat::Csv),
            "jsonl" | "json" => Some(ItemFormat::Jsonl),
            _ => None,
        }
    }
}

/// Subject from an MMLU file name: `machine_learning_test.csv` -> `machine_learning`.
pub fn subject_from_path(path: &Path) -> Option<DomainLabel> {
    let stem = path.file_stem()?.to_str()?;
    let stem = ["_test", "_dev", "_val", "_validation", "_train"]
        .iter()
        .find_map(|suffix| stem.strip_suffix(suffix))
        .unwrap_or(stem);
    DomainLabel::parse(stem).ok()
}

fn answer_from_letter(s: &str) -> Option<u8> {
    match s.trim().to_ascii_uppercase().as_str() {
        "A" => Some(0),
        "B" => Some(1),
        "C" => Some(2),
        "D" => Some(3),
        _ => None,
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnswerField {
    Index(u8),
    Letter(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonItem {
    id: Option<String>,
    subject: Option<String>,
    question: String,
    choices: Vec<String>,
    answer: AnswerField,
    #[serde(default)]
    ambiguous: bool,
}

pub fn load_items(path: &Path, format: ItemFormat) -> Result<Vec<Item>, CorpusError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let inferred = subject_from_path(path);
    let items = match format {
        ItemFormat::Csv => parse_csv(&text, &display, inferred)?,
        ItemFormat::Jsonl => parse_jsonl(&text, &display, inferred)?,
    };
    finish(items)
}

fn finish(mut items: Vec<Item>) -> Result<Vec<Item>, CorpusError> {
    items.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = items.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(CorpusError::DuplicateId(w[0].id.clone()));
    }
    Ok(items)
}

fn parse_csv(
    text: &str,
    path: &str,
    subject: Option<DomainLabel>,
) -> Result<Vec<Item>, CorpusError> {
    let subject = subject.ok_or_else(|| CorpusError::NoSubject(path.to_string()))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut items = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CorpusError::MalformedRow {
            path: path.to_string(),
            line: e.position().map_or(row + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(row + 1, |p| p.line() as usize);
        if record.len() < 3 {
            return Err(CorpusError::MalformedRow {
                path: path.to_string(),
                line,
                message: format!("expected question, 4 options and an answer; got {} fields", record.len()),
            });
        }
        let found = record.len() - 2;
        if found != 4 {
            return Err(CorpusError::WrongChoiceCount {
                path: path.to_string(),
                line,
                found,
            });
        }
        let answer = answer_from_letter(&record[5]).ok_or_else(|| CorpusError::MalformedRow {
            path: path.to_string(),
            line,
            message: format!("answer `{}` is not one of A-D", &record[5]),
        })?;
        items.push(Item {
            id: format!("{subject}_{row:04}"),
            subject: subject.clone(),
            question: record[0].to_string(),
            choices: (1..=4).map(|i| record[i].to_string()).collect(),
            answer_index: Some(answer),
            ambiguous: false,
        });
    }
    Ok(items)
}

fn parse_jsonl(
    text: &str,
    path: &str,
    inferred: Option<DomainLabel>,
) -> Result<Vec<Item>, CorpusError> {
    let mut items = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| CorpusError::MalformedRow {
            path: path.to_string(),
            line,
            message,
        };
        let rec: JsonItem = serde_json::from_str(raw).map_err(|e| malformed(e.to_string()))?;
        if rec.choices.len() != 4 {
            return Err(CorpusError::WrongChoiceCount {
                path: path.to_string(),
                line,
                found: rec.choices.len(),
            });
        }
        let subject = match rec.subject {
            Some(s) => DomainLabel::parse(&s).map_err(|e| malformed(e.to_string()))?,
            None => inferred
                .clone()
                .ok_or_else(|| malformed("no `subject` field and none inferable from file name".into()))?,
        };
        let answer = match rec.answer {
            AnswerField::Index(i) if i <= 3 => i,
            AnswerField::Index(i) => return Err(malformed(format!("answer index {i} out of range"))),
            AnswerField::Letter(l) => {
                answer_from_letter(&l).ok_or_else(|| malformed(format!("answer `{l}` is not one of A-D")))?
            }
        };
        let id = rec.id.unwrap_or_else(|| format!("{subject}_{:04}", items.len()));
        items.push(Item {
            id,
            subject,
            question: rec.question,
            choices: rec.choices,
            answer_index: Some(answer),
            ambiguous: rec.ambiguous,
        });
    }
    Ok(items)
}

/// Reads a sidecar ambiguity file (`{"item_id": true, ...}`).
pub fn load_ambiguity_sidecar(path: &Path) -> Result<BTreeMap<String, bool>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CorpusError::Schema {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn apply_ambiguity(items: &mut [Item], flags: &BTreeMap<String, bool>) {
    for item in items {
        if let Some(flag) = flags.get(&item.id) {
            item.ambiguous = *flag;
        }
    }
}

/// Seeded sample of `n` items without replacement, returned sorted by id.
pub fn sample_subset(items: &[Item], n: usize, seed: u64) -> Result<Vec<Item>, CorpusError> {
    if n > items.len() {
        return Err(CorpusError::InsufficientItems {
            requested: n,
            available: items.len(),
        });
    }
    // Sample over id order so the result does not depend on input order.
    let mut ordered: Vec<&Item> = items.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<Item> = index::sample(&mut rng, ordered.len(), n)
        .into_iter()
        .map(|i| ordered[i].clone())
        .collect();
    picked.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(picked)
}

/// Samples `n` items from every subject independently. Each subject uses
/// the seed mixed with its label so subjects do not share a stream.
pub fn sample_per_subject(items: &[Item], n: usize, seed: u64) -> Result<Vec<Item>, CorpusError> {
    let mut by_subject: BTreeMap<&DomainLabel, Vec<Item>> = BTreeMap::new();
    for item in items {
        by_subject.entry(&item.subject).or_default().push(item.clone());
    }
    let mut out = Vec::new();
    for (subject, group) in by_subject {
        let sub_seed = seed ^ fnv1a(subject.as_str().as_bytes());
        out.extend(sample_subset(&group, n, sub_seed)?);
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Keeps only the listed subjects for a condition. Conditions without a
/// rule keep every subject.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairFilter {
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub keep: BTreeMap<String, BTreeSet<DomainLabel>>,
}

impl PairFilter {
    pub fn none() -> Self {
        PairFilter {
            label: "none".into(),
            keep: BTreeMap::new(),
        }
    }

    /// Non-canonical reconstruction of a 480-pair design over ten 30-item
    /// subjects: baseline on the three PCS-NLP mixed subjects, PCS-NLP on all
    /// ten, PCS-LitProf on one representative subject per reported grouping.
    /// The original selection is unknown; this is a documented guess.
    pub fn pilot_guess() -> Self {
        let set = |xs: &[&str]| {
            xs.iter()
                .map(|s| DomainLabel::parse(s).expect("static label"))
                .collect::<BTreeSet<_>>()
        };
        let mut keep = BTreeMap::new();
        keep.insert(
            "baseline".to_string(),
            set(&["professional_psychology", "formal_logic", "econometrics"]),
        );
        keep.insert(
            "PCS-LitProf".to_string(),
            set(&["machine_learning", "clinical_knowledge", "philosophy"]),
        );
        PairFilter {
            label: "pilot-guess (non-canonical)".into(),
            keep,
        }
    }

    /// Drops pairs whose subject is undeclared by the condition's profile.
    pub fn profile_applicable(profiles: &[CapabilityProfile]) -> Self {
        let mut keep = BTreeMap::new();
        for p in profiles {
            let declared: BTreeSet<DomainLabel> = p
                .strong()
                .iter()
                .chain(p.mixed())
                .chain(p.weak())
                .cloned()
                .collect();
            keep.insert(p.id().to_string(), declared);
        }
        PairFilter {
            label: "profile-applicable".into(),
            keep,
        }
    }

    pub fn allows(&self, subject: &DomainLabel, condition: &Condition) -> bool {
        match self.keep.get(&condition.to_string()) {
            Some(subjects) => subjects.contains(subject),
            None => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub raw: usize,
    pub filtered: usize,
    pub kept: usize,
}

/// Cross product of items and conditions, minus the filtered pairs.
pub fn expand_conditions(
    items: &[Item],
    conditions: &[Condition],
    filter: &PairFilter,
) -> (Vec<ConditionPair>, PairCounts) {
    let raw = items.len() * conditions.len();
    let pairs: Vec<ConditionPair> = items
        .iter()
        .flat_map(|item| {
            conditions.iter().map(move |c| ConditionPair {
                item: item.clone(),
                condition: c.clone(),
            })
        })
        .filter(|p| filter.allows(&p.item.subject, &p.condition))
        .collect();
    let kept = pairs.len();
    (
        pairs,
        PairCounts {
            raw,
            filtered: raw - kept,
            kept,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Zone {
    StrongZone,
    RiskZone,
    OutsideZone,
}

impl Zone {
    pub const ALL: [Zone; 3] = [Zone::StrongZone, Zone::RiskZone, Zone::OutsideZone];

    pub fn as_str(self) -> &'static str {
        match self {
            Zone::StrongZone => "strong_zone",
            Zone::RiskZone => "risk_zone",
            Zone::OutsideZone => "outside_zone",
        }
    }

    /// Partition a persona's own profile would assign to this zone.
    pub fn expected_partition(self) -> Partition {
        match self {
            Zone::StrongZone => Partition::Strong,
            Zone::RiskZone => Partition::Mixed,
            Zone::OutsideZone => Partition::Weak,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Persona {
    pub role: String,
    pub zones: BTreeMap<Zone, Vec<String>>,
}

#[derive(Deserialize)]
struct RawPersona {
    role: String,
    zones: BTreeMap<String, Vec<String>>,
}

impl Persona {
    pub fn zone_label(&self, zone: Zone) -> DomainLabel {
        DomainLabel::parse(&format!("{} {}", self.role, zone.as_str()))
            .expect("role with zone suffix is never empty")
    }

    /// Zone prompts as open-ended items tagged `<role>_<zone>`.
    pub fn items(&self) -> Vec<Item> {
        let mut out = Vec::new();
        for (zone, prompts) in &self.zones {
            let subject = self.zone_label(*zone);
            for (i, prompt) in prompts.iter().enumerate() {
                out.push(Item {
                    id: format!("{subject}_{i:04}"),
                    subject: subject.clone(),
                    question: prompt.clone(),
                    choices: Vec::new(),
                    answer_index: None,
                    ambiguous: false,
                });
            }
        }
        out
    }
}

/// Loads a JSON array of personas, each with all three zones.
pub fn load_personas(path: &Path) -> Result<Vec<Persona>, CorpusError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    parse_personas(&text, &display)
}

pub fn parse_personas(text: &str, path: &str) -> Result<Vec<Persona>, CorpusError> {
    let raw: Vec<RawPersona> = serde_json::from_str(text).map_err(|e| CorpusError::Schema {
        path: path.to_string(),
        message: e.to_string(),
    })?;
    raw.into_iter()
        .map(|p| {
            let mut zones = BTreeMap::new();
            for (name, prompts) in p.zones {
                let zone = Zone::ALL
                    .into_iter()
                    .find(|z| z.as_str() == name)
                    .ok_or_else(|| CorpusError::Schema {
                        path: path.to_string(),
                        message: format!("persona `{}` has unknown zone `{name}`", p.role),
                    })?;
                zones.insert(zone, prompts);
            }
            for zone in Zone::ALL {
                if !zones.contains_key(&zone) {
                    return Err(CorpusError::MissingZone {
                        role: p.role.clone(),
                        zone: zone.as_str(),
                    });
                }
            }
            Ok(Persona { role: p.role, zones })
        })
        .collect()
}
