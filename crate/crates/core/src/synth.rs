//! Synthetic multi-event corpora.
//!
//! Each event draws its messages from a *topic*: three disjoint pools of
//! pseudo-words (relevant, irrelevant and neutral filler). A relevant message
//! mixes 2..=4 relevant words with filler; an irrelevant one uses irrelevant
//! words instead. Events that share a topic index share all three pools and
//! differ only in their sampling seed. Different topics share no word at
//! all: every pseudo-word ends in a syllable reserved for its topic.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    relevance_label_map, write_dataset, CorpusError, CorpusManifest, CrisisRecord, EventDescriptor, EventFiles,
    EventRegistry, Label, LayoutKind,
};
use crate::rng::{self, derive_seed, SeededRng};

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Word pools of one topic.
#[derive(Debug, Clone, PartialEq)]
pub struct Topic {
    pub relevant: Vec<String>,
    pub irrelevant: Vec<String>,
    pub filler: Vec<String>,
}

fn syllable(i: usize) -> String {
    format!(
        "{}{}",
        ONSETS[i / VOWELS.len() % ONSETS.len()],
        VOWELS[i % VOWELS.len()]
    )
}

/// Maximum number of distinct topics.
pub const MAX_TOPICS: usize = ONSETS.len() * VOWELS.len();

impl Topic {
    /// Deterministic pools for topic `index` (`< MAX_TOPICS`).
    pub fn generate(index: usize, pool_size: usize) -> Topic {
        assert!(index < MAX_TOPICS, "topic index {index} out of range");
        let marker = syllable(index);
        let mut stream = rng::seeded(derive_seed(0x7091c, &[index as u64]));
        let mut seen = BTreeSet::new();
        let mut pools = [Vec::new(), Vec::new(), Vec::new()];
        for pool in pools.iter_mut() {
            while pool.len() < pool_size {
                let n = 1 + rng::below(&mut stream, 2);
                let mut w: String = (0..n).map(|_| syllable(rng::below(&mut stream, MAX_TOPICS))).collect();
                w.push_str(&marker);
                if seen.insert(w.clone()) {
                    pool.push(w);
                }
            }
        }
        let [relevant, irrelevant, filler] = pools;
        Topic {
            relevant,
            irrelevant,
            filler,
        }
    }

    fn message(&self, label: Label, rng: &mut SeededRng) -> String {
        let pick = |pool: &[String], rng: &mut SeededRng| pool[rng::below(rng, pool.len())].clone();
        let keys = if label == Label::Yes {
            &self.relevant
        } else {
            &self.irrelevant
        };
        let n_keys = 2 + rng::below(rng, 3);
        let n_fill = 3 + rng::below(rng, 6);
        let mut words: Vec<String> = (0..n_keys).map(|_| pick(keys, rng)).collect();
        words.extend((0..n_fill).map(|_| pick(&self.filler, rng)));
        rng::shuffle(&mut words, rng);
        words.join(" ")
    }
}

/// One synthetic event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthEvent {
    pub event_id: String,
    pub location_name: String,
    pub crisis_name: String,
    pub topic: usize,
    pub seed: u64,
    pub records: usize,
}

/// A whole synthetic corpus description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub events: Vec<SynthEvent>,
    #[serde(default = "default_pool")]
    pub pool_size: usize,
    #[serde(default = "default_ratio")]
    pub positive_ratio: f64,
}

fn default_pool() -> usize {
    12
}
fn default_ratio() -> f64 {
    0.5
}

impl SynthSpec {
    /// Events A and B on one topic, C on another: the three-event
    /// similarity fixture.
    pub fn twin_and_outlier(records: usize, seed: u64) -> SynthSpec {
        let ev = |id: &str, loc: &str, crisis: &str, topic, k| SynthEvent {
            event_id: id.into(),
            location_name: loc.into(),
            crisis_name: crisis.into(),
            topic,
            seed: derive_seed(seed, &[k]),
            records,
        };
        SynthSpec {
            events: vec![
                ev("A", "Northport", "Floods", 0, 0),
                ev("B", "Southvale", "Floods", 0, 1),
                ev("C", "Eastmere", "Earthquake", 1, 2),
            ],
            pool_size: default_pool(),
            positive_ratio: default_ratio(),
        }
    }

    /// `n` events, each on its own topic.
    pub fn distinct(n: usize, records: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            events: (0..n)
                .map(|i| SynthEvent {
                    event_id: format!("E{i}"),
                    location_name: format!("Town{i}"),
                    crisis_name: format!("Crisis{i}"),
                    topic: i,
                    seed: derive_seed(seed, &[i as u64]),
                    records,
                })
                .collect(),
            pool_size: default_pool(),
            positive_ratio: default_ratio(),
        }
    }

    pub fn registry(&self) -> Result<EventRegistry, CorpusError> {
        EventRegistry::new(self.events.iter().map(|e| EventDescriptor {
            event_type: Some(format!("topic{}", e.topic)),
            ..EventDescriptor::new(&e.event_id, &e.location_name, &e.crisis_name)
        }))
    }

    /// Generates labeled records per event. Labels use the raw strings
    /// `relevant`/`not_relevant` and are already unified.
    pub fn generate(&self) -> BTreeMap<String, Vec<CrisisRecord>> {
        let mut topics: BTreeMap<usize, Topic> = BTreeMap::new();
        let mut out = BTreeMap::new();
        for e in &self.events {
            let topic = topics
                .entry(e.topic)
                .or_insert_with(|| Topic::generate(e.topic, self.pool_size));
            let mut stream = rng::seeded(e.seed);
            let records = (0..e.records)
                .map(|i| {
                    let label = if rng::unit_f64(&mut stream) < self.positive_ratio {
                        Label::Yes
                    } else {
                        Label::No
                    };
                    CrisisRecord {
                        id: format!("{}-{i:04}", e.event_id),
                        text: topic.message(label, &mut stream),
                        raw_label: if label == Label::Yes {
                            "relevant"
                        } else {
                            "not_relevant"
                        }
                        .into(),
                        unified_label: Some(label),
                        event_id: e.event_id.clone(),
                    }
                })
                .collect();
            out.insert(e.event_id.clone(), records);
        }
        out
    }

    /// Writes `events.json`, one pooled TSV per event and a cross-validation
    /// `corpus.json` manifest into `dir`. Returns the manifest path.
    pub fn write(&self, dir: &Path, folds: usize, fold_seed: u64) -> Result<std::path::PathBuf, CorpusError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CorpusError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let registry_path = dir.join("events.json");
        std::fs::write(&registry_path, self.registry()?.to_json()).map_err(io(&registry_path))?;
        let mut events = BTreeMap::new();
        for (id, records) in self.generate() {
            let name = format!("{id}.tsv");
            let path = dir.join(&name);
            std::fs::write(&path, write_dataset(&records)).map_err(io(&path))?;
            events.insert(id, EventFiles::Pooled { data: name.into() });
        }
        let manifest = CorpusManifest {
            registry: "events.json".into(),
            layout: LayoutKind::CrossValidation,
            folds,
            fold_seed,
            label_map: relevance_label_map(),
            events,
        };
        let path = dir.join("corpus.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, json).map_err(io(&path))?;
        Ok(path)
    }
}
