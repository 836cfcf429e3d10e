use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{CorpusError, CrisisRecord, Label, Result};
use crate::rng;

/// Record id to fold index in `[0, k)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, record_id: &str) -> Option<usize> {
        self.assignments.get(record_id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Splits `records` into (train, test) for `fold`, keeping input order.
    pub fn split(&self, records: &[CrisisRecord], fold: usize) -> Result<(Vec<CrisisRecord>, Vec<CrisisRecord>)> {
        if fold >= self.k {
            return Err(CorpusError::Folds(format!("fold {fold} out of range for k={}", self.k)));
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for r in records {
            match self.fold_of(&r.id) {
                Some(f) if f == fold => test.push(r.clone()),
                Some(_) => train.push(r.clone()),
                None => return Err(CorpusError::Folds(format!("record {:?} has no fold", r.id))),
            }
        }
        Ok((train, test))
    }
}

/// Assigns records to `k` folds, stratified by label within each event.
///
/// Records are grouped by `(event_id, label)` and the groups visited in
/// sorted order. Each group is shuffled with one shared seeded stream, then
/// dealt round-robin with a counter that carries across groups, so overall
/// fold sizes and per-group fold sizes both differ by at most one.
pub fn make_folds(records: &[CrisisRecord], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(CorpusError::Folds(format!("k must be at least 2, got {k}")));
    }
    if records.len() < k {
        return Err(CorpusError::Folds(format!(
            "k={k} exceeds record count {}",
            records.len()
        )));
    }
    let mut seen = HashSet::new();
    let mut groups: BTreeMap<(&str, Label), Vec<&str>> = BTreeMap::new();
    for r in records {
        let label = r.unified_label.ok_or_else(|| CorpusError::MissingLabel(r.id.clone()))?;
        if !seen.insert(r.id.as_str()) {
            return Err(CorpusError::DuplicateId(r.id.clone()));
        }
        groups.entry((&r.event_id, label)).or_default().push(&r.id);
    }
    let mut stream = rng::seeded(seed);
    let mut assignments = BTreeMap::new();
    let mut dealt = 0usize;
    for ids in groups.values_mut() {
        rng::shuffle(ids, &mut stream);
        for id in ids.iter() {
            assignments.insert(id.to_string(), dealt % k);
            dealt += 1;
        }
    }
    Ok(FoldPlan { k, seed, assignments })
}
