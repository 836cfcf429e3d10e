use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    load_dataset, make_folds, unify_labels, CorpusError, CrisisRecord, EventRegistry, FoldPlan, LabelMap, Result,
};
use crate::rng;

/// Train/dev/test portions of one event.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventSplit {
    pub train: Vec<CrisisRecord>,
    pub dev: Vec<CrisisRecord>,
    pub test: Vec<CrisisRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventData {
    /// Distributed with fixed train/dev/test files.
    Split(EventSplit),
    /// One pool per event, evaluated in-domain with k-fold cross-validation.
    Pooled {
        records: Vec<CrisisRecord>,
        folds: FoldPlan,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    StandardSplit,
    CrossValidation,
}

/// A loaded, label-unified corpus.
#[derive(Debug, Clone)]
pub struct CorpusLayout {
    pub registry: EventRegistry,
    pub kind: LayoutKind,
    pub folds: usize,
    pub events: BTreeMap<String, EventData>,
}

impl CorpusLayout {
    /// Builds a cross-validation layout from labeled pools.
    pub fn cross_validation(
        registry: EventRegistry,
        pools: BTreeMap<String, Vec<CrisisRecord>>,
        folds: usize,
        fold_seed: u64,
    ) -> Result<Self> {
        let mut events = BTreeMap::new();
        for (id, records) in pools {
            registry.get(&id)?;
            let plan = make_folds(&records, folds, rng::derive_seed_str(fold_seed, &id))?;
            events.insert(id, EventData::Pooled { records, folds: plan });
        }
        Ok(CorpusLayout {
            registry,
            kind: LayoutKind::CrossValidation,
            folds,
            events,
        })
    }

    pub fn standard_split(registry: EventRegistry, splits: BTreeMap<String, EventSplit>) -> Result<Self> {
        for id in splits.keys() {
            registry.get(id)?;
        }
        Ok(CorpusLayout {
            registry,
            kind: LayoutKind::StandardSplit,
            folds: 1,
            events: splits.into_iter().map(|(k, v)| (k, EventData::Split(v))).collect(),
        })
    }

    pub fn event_ids(&self) -> Vec<String> {
        self.events.keys().cloned().collect()
    }

    fn data(&self, event: &str) -> Result<&EventData> {
        self.events
            .get(event)
            .ok_or_else(|| CorpusError::UnknownEvent(event.to_string()))
    }

    /// Number of in-domain evaluation runs per event (folds, or 1 for fixed splits).
    pub fn in_domain_runs(&self) -> usize {
        match self.kind {
            LayoutKind::StandardSplit => 1,
            LayoutKind::CrossValidation => self.folds,
        }
    }

    /// Portions used when an event takes part in a cross-domain plan: the
    /// training file (or the whole pool) as source, the test file (or the
    /// whole pool) as target.
    pub fn cross_domain_splits(&self) -> BTreeMap<String, EventSplit> {
        self.events
            .iter()
            .map(|(id, d)| {
                let split = match d {
                    EventData::Split(s) => s.clone(),
                    EventData::Pooled { records, .. } => EventSplit {
                        train: records.clone(),
                        dev: Vec::new(),
                        test: records.clone(),
                    },
                };
                (id.clone(), split)
            })
            .collect()
    }

    /// The in-domain split of `event` for run `fold`.
    pub fn in_domain_split(&self, event: &str, fold: usize) -> Result<EventSplit> {
        match self.data(event)? {
            EventData::Split(s) => {
                if fold != 0 {
                    return Err(CorpusError::Folds(format!(
                        "{event} has a fixed split; fold {fold} requested"
                    )));
                }
                Ok(s.clone())
            }
            EventData::Pooled { records, folds } => {
                let (train, test) = folds.split(records, fold)?;
                Ok(EventSplit {
                    train,
                    dev: Vec::new(),
                    test,
                })
            }
        }
    }

    /// Every record of every event, in event order.
    pub fn all_records(&self) -> Vec<CrisisRecord> {
        let mut out = Vec::new();
        for d in self.events.values() {
            match d {
                EventData::Split(s) => {
                    out.extend(s.train.iter().cloned());
                    out.extend(s.dev.iter().cloned());
                    out.extend(s.test.iter().cloned());
                }
                EventData::Pooled { records, .. } => out.extend(records.iter().cloned()),
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EventFiles {
    Pooled {
        data: PathBuf,
    },
    Split {
        train: PathBuf,
        dev: Option<PathBuf>,
        test: PathBuf,
    },
}

/// JSON description of a corpus on disk. Paths are relative to the manifest.
///
/// ```json
/// {"registry": "events.json", "layout": "cross_validation", "folds": 5, "fold_seed": 0,
///  "label_map": {"on-topic": "yes", "off-topic": "no"},
///  "events": {"AF": {"data": "AF.tsv"}}}
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub registry: PathBuf,
    pub layout: LayoutKind,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub fold_seed: u64,
    pub label_map: LabelMap,
    pub events: BTreeMap<String, EventFiles>,
}

fn default_folds() -> usize {
    5
}

impl CorpusManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| CorpusError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Every data file the manifest references, resolved against `base`.
    pub fn data_files(&self, base: &Path) -> Vec<PathBuf> {
        let mut out = vec![base.join(&self.registry)];
        for files in self.events.values() {
            match files {
                EventFiles::Pooled { data } => out.push(base.join(data)),
                EventFiles::Split { train, dev, test } => {
                    out.push(base.join(train));
                    if let Some(d) = dev {
                        out.push(base.join(d));
                    }
                    out.push(base.join(test));
                }
            }
        }
        out
    }

    /// Loads and label-unifies every file the manifest names.
    pub fn load(path: &Path) -> Result<CorpusLayout> {
        Self::read(path)?.resolve(path)
    }

    /// Builds the layout this manifest (read from `path`) describes.
    pub fn resolve(&self, path: &Path) -> Result<CorpusLayout> {
        let manifest = self;
        let base = path.parent().unwrap_or(Path::new("."));
        let registry = EventRegistry::load(&base.join(&manifest.registry))?;
        let read = |p: &Path| -> Result<Vec<CrisisRecord>> {
            unify_labels(&load_dataset(&base.join(p), &registry)?, &manifest.label_map)
        };
        let bad = |message: String| CorpusError::Manifest {
            path: path.to_path_buf(),
            message,
        };
        match manifest.layout {
            LayoutKind::CrossValidation => {
                let mut pools = BTreeMap::new();
                for (id, files) in &manifest.events {
                    let EventFiles::Pooled { data } = files else {
                        return Err(bad(format!("event {id} needs a single \"data\" file")));
                    };
                    pools.insert(id.clone(), read(data)?);
                }
                CorpusLayout::cross_validation(registry, pools, manifest.folds, manifest.fold_seed)
            }
            LayoutKind::StandardSplit => {
                let mut splits = BTreeMap::new();
                for (id, files) in &manifest.events {
                    let EventFiles::Split { train, dev, test } = files else {
                        return Err(bad(format!("event {id} needs \"train\" and \"test\" files")));
                    };
                    splits.insert(
                        id.clone(),
                        EventSplit {
                            train: read(train)?,
                            dev: dev.as_deref().map(read).transpose()?.unwrap_or_default(),
                            test: read(test)?,
                        },
                    );
                }
                CorpusLayout::standard_split(registry, splits)
            }
        }
    }
}
