//! Crisis datasets: ingestion, label unification, folds and adaptation plans.

mod folds;
mod layout;
mod plan;
mod tsv;

pub use folds::{make_folds, FoldPlan};
pub use layout::{CorpusLayout, CorpusManifest, EventData, EventFiles, EventSplit, LayoutKind};
pub use plan::{compose_plan, AdaptationPlan, PlanKind};
pub use tsv::{escape_text, load_dataset, parse_dataset, unescape_text, write_dataset, TSV_HEADER};

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: invalid UTF-8")]
    Decode { path: PathBuf, line: usize },
    #[error("unknown event id {0:?}")]
    UnknownEvent(String),
    #[error("unmapped: {}", format_counts(.0))]
    UnmappedLabels(Vec<(String, usize)>),
    #[error("record {0:?} has no unified label")]
    MissingLabel(String),
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("invalid fold request: {0}")]
    Folds(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("no training data for source event {0:?}")]
    EmptySource(String),
    #[error("invalid event registry: {0}")]
    Registry(String),
    #[error("invalid corpus manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

fn format_counts(counts: &[(String, usize)]) -> String {
    counts
        .iter()
        .map(|(l, n)| if *n == 1 { l.clone() } else { format!("{l} (x{n})") })
        .collect::<Vec<_>>()
        .join(", ")
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Unified binary label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Yes,
    No,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Yes, Label::No];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Yes => "yes",
            Label::No => "no",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "yes" => Ok(Label::Yes),
            "no" => Ok(Label::No),
            other => Err(format!("not a label: {other:?}")),
        }
    }
}

/// One labeled message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrisisRecord {
    pub id: String,
    pub text: String,
    pub raw_label: String,
    pub unified_label: Option<Label>,
    pub event_id: String,
}

/// Per-event metadata feeding the event phrase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventDescriptor {
    pub event_id: String,
    pub location_name: String,
    pub crisis_name: String,
    pub event_type: Option<String>,
}

impl EventDescriptor {
    pub fn new(event_id: &str, location_name: &str, crisis_name: &str) -> Self {
        EventDescriptor {
            event_id: event_id.to_string(),
            location_name: location_name.to_string(),
            crisis_name: crisis_name.to_string(),
            event_type: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RegistryEntry {
    location_name: String,
    crisis_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    event_type: Option<String>,
}

/// Event descriptors keyed by event id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventRegistry {
    events: BTreeMap<String, EventDescriptor>,
}

impl EventRegistry {
    pub fn new(events: impl IntoIterator<Item = EventDescriptor>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for e in events {
            if e.crisis_name.is_empty() {
                return Err(CorpusError::Registry(format!(
                    "event {:?} has an empty crisis_name",
                    e.event_id
                )));
            }
            if map.contains_key(&e.event_id) {
                return Err(CorpusError::Registry(format!("duplicate event id {:?}", e.event_id)));
            }
            map.insert(e.event_id.clone(), e);
        }
        Ok(EventRegistry { events: map })
    }

    /// Parses `{event_id: {"location_name", "crisis_name", "event_type"?}}`.
    pub fn from_json(json: &str) -> Result<Self> {
        let raw: BTreeMap<String, RegistryEntry> =
            serde_json::from_str(json).map_err(|e| CorpusError::Registry(e.to_string()))?;
        Self::new(raw.into_iter().map(|(id, e)| EventDescriptor {
            event_id: id,
            location_name: e.location_name,
            crisis_name: e.crisis_name,
            event_type: e.event_type,
        }))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let raw: BTreeMap<&str, RegistryEntry> = self
            .events
            .values()
            .map(|e| {
                (
                    e.event_id.as_str(),
                    RegistryEntry {
                        location_name: e.location_name.clone(),
                        crisis_name: e.crisis_name.clone(),
                        event_type: e.event_type.clone(),
                    },
                )
            })
            .collect();
        serde_json::to_string_pretty(&raw).expect("registry serializes")
    }

    pub fn get(&self, id: &str) -> Result<&EventDescriptor> {
        self.events
            .get(id)
            .ok_or_else(|| CorpusError::UnknownEvent(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.events.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.events.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &EventDescriptor> {
        self.events.values()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Raw label to unified label.
pub type LabelMap = BTreeMap<String, Label>;

/// `relevant`/`not_relevant` (standard-split benchmark).
pub fn relevance_label_map() -> LabelMap {
    LabelMap::from([("relevant".into(), Label::Yes), ("not_relevant".into(), Label::No)])
}

/// `on-topic`/`off-topic` (six-event benchmark).
pub fn topic_label_map() -> LabelMap {
    LabelMap::from([("on-topic".into(), Label::Yes), ("off-topic".into(), Label::No)])
}

/// Sets `unified_label` from `mapping`; raw labels are kept.
pub fn unify_labels(records: &[CrisisRecord], mapping: &LabelMap) -> Result<Vec<CrisisRecord>> {
    let mut unmapped: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        if !mapping.contains_key(&r.raw_label) {
            *unmapped.entry(&r.raw_label).or_default() += 1;
        }
    }
    if !unmapped.is_empty() {
        return Err(CorpusError::UnmappedLabels(
            unmapped.into_iter().map(|(l, n)| (l.to_string(), n)).collect(),
        ));
    }
    Ok(records
        .iter()
        .map(|r| CrisisRecord {
            unified_label: Some(mapping[&r.raw_label]),
            ..r.clone()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, label: &str) -> CrisisRecord {
        CrisisRecord {
            id: id.into(),
            text: "x".into(),
            raw_label: label.into(),
            unified_label: None,
            event_id: "AF".into(),
        }
    }

    #[test]
    fn relevant_becomes_yes() {
        let out = unify_labels(
            &[rec("1", "relevant"), rec("2", "not_relevant")],
            &relevance_label_map(),
        )
        .unwrap();
        assert_eq!(out[0].unified_label, Some(Label::Yes));
        assert_eq!(out[1].unified_label, Some(Label::No));
        assert_eq!(out[0].raw_label, "relevant");
    }

    #[test]
    fn on_topic_becomes_yes() {
        let out = unify_labels(&[rec("1", "on-topic")], &topic_label_map()).unwrap();
        assert_eq!(out[0].unified_label, Some(Label::Yes));
    }

    #[test]
    fn unmapped_label_is_reported() {
        for map in [relevance_label_map(), topic_label_map()] {
            let err = unify_labels(&[rec("1", "maybe")], &map).unwrap_err();
            assert_eq!(err.to_string(), "unmapped: maybe");
        }
        let err = unify_labels(
            &[rec("1", "maybe"), rec("2", "maybe"), rec("3", "x")],
            &topic_label_map(),
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "unmapped: maybe (x2), x");
    }

    #[test]
    fn registry_json_round_trip() {
        let json = r#"{"AF": {"location_name": "Alberta", "crisis_name": "Floods", "event_type": "flood"},
                       "NE": {"location_name": "", "crisis_name": "Nepal Earthquake"}}"#;
        let reg = EventRegistry::from_json(json).unwrap();
        assert_eq!(reg.get("AF").unwrap().location_name, "Alberta");
        assert_eq!(reg.get("NE").unwrap().event_type, None);
        assert_eq!(EventRegistry::from_json(&reg.to_json()).unwrap(), reg);
        assert!(matches!(reg.get("XX"), Err(CorpusError::UnknownEvent(_))));
    }

    #[test]
    fn registry_rejects_empty_crisis_name() {
        let json = r#"{"AF": {"location_name": "Alberta", "crisis_name": ""}}"#;
        assert!(EventRegistry::from_json(json).is_err());
    }
}
