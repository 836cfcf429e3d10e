use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CorpusError, CrisisRecord, EventSplit, Result};
use crate::prompt::Scenario;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    /// Sources are exactly the target.
    InDomain,
    /// The target is not among the sources.
    CrossDomain,
}

/// Which events train a model and which event's test set it is scored on.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationPlan {
    pub task_id: String,
    pub sources: Vec<String>,
    pub target: String,
    pub scenario: Scenario,
    pub seed: u64,
    /// Concatenated source training portions, shuffled with `seed`.
    pub source_data: Vec<CrisisRecord>,
    pub target_test: Vec<CrisisRecord>,
}

impl AdaptationPlan {
    pub fn kind(&self) -> PlanKind {
        if self.sources.len() == 1 && self.sources[0] == self.target {
            PlanKind::InDomain
        } else {
            PlanKind::CrossDomain
        }
    }

    /// `SH+AF->QF` style identifier.
    pub fn id(&self) -> String {
        format!("{}->{}", self.sources.join("+"), self.target)
    }
}

/// Builds a plan from per-event splits.
///
/// `sources` keeps the caller's order (duplicates removed). A target inside a
/// multi-event source set is rejected.
pub fn compose_plan(
    task_id: &str,
    sources: &[String],
    target: &str,
    scenario: Scenario,
    splits: &BTreeMap<String, EventSplit>,
    seed: u64,
) -> Result<AdaptationPlan> {
    let mut uniq: Vec<String> = Vec::new();
    for s in sources {
        if !uniq.contains(s) {
            uniq.push(s.clone());
        }
    }
    if uniq.is_empty() {
        return Err(CorpusError::InvalidPlan("empty source set".into()));
    }
    if uniq.len() > 1 && uniq.iter().any(|s| s == target) {
        return Err(CorpusError::InvalidPlan(format!(
            "target {target} is one of several sources ({})",
            uniq.join("+")
        )));
    }
    let target_split = splits
        .get(target)
        .ok_or_else(|| CorpusError::UnknownEvent(target.to_string()))?;
    let mut source_data = Vec::new();
    for s in &uniq {
        let split = splits.get(s).ok_or_else(|| CorpusError::UnknownEvent(s.clone()))?;
        if split.train.is_empty() {
            return Err(CorpusError::EmptySource(s.clone()));
        }
        source_data.extend(split.train.iter().cloned());
    }
    let mut stream = rng::seeded(seed);
    rng::shuffle(&mut source_data, &mut stream);
    Ok(AdaptationPlan {
        task_id: task_id.to_string(),
        sources: uniq,
        target: target.to_string(),
        scenario,
        seed,
        source_data,
        target_test: target_split.test.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use proptest::prelude::*;

    fn split_for(event: &str, n: usize) -> EventSplit {
        let mk = |part: &str, i: usize| CrisisRecord {
            id: format!("{event}-{part}-{i}"),
            text: format!("{event} message {i}"),
            raw_label: "on-topic".into(),
            unified_label: Some(if i.is_multiple_of(2) { Label::Yes } else { Label::No }),
            event_id: event.into(),
        };
        EventSplit {
            train: (0..n).map(|i| mk("train", i)).collect(),
            dev: Vec::new(),
            test: (0..n / 2).map(|i| mk("test", i)).collect(),
        }
    }

    fn splits() -> BTreeMap<String, EventSplit> {
        ["SH", "AF", "BB", "WTE", "QF", "OT"]
            .iter()
            .enumerate()
            .map(|(i, e)| (e.to_string(), split_for(e, 10 + i)))
            .collect()
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn one_to_one_cross_domain() {
        let s = splits();
        let plan = compose_plan("relevance", &ids(&["AF"]), "QF", Scenario::PostQ, &s, 1).unwrap();
        assert_eq!(plan.kind(), PlanKind::CrossDomain);
        assert_eq!(plan.source_data.len(), s["AF"].train.len());
        assert!(plan.source_data.iter().all(|r| r.event_id == "AF"));
        assert!(plan.target_test.iter().all(|r| r.event_id == "QF"));
        assert_eq!(plan.id(), "AF->QF");
    }

    #[test]
    fn in_domain_when_sources_equal_target() {
        let plan = compose_plan("relevance", &ids(&["QF"]), "QF", Scenario::PostQ, &splits(), 1).unwrap();
        assert_eq!(plan.kind(), PlanKind::InDomain);
    }

    #[test]
    fn leave_one_out_shape() {
        let s = splits();
        let plan = compose_plan(
            "relevance",
            &ids(&["SH", "AF", "BB", "WTE", "OT"]),
            "QF",
            Scenario::PostQ,
            &s,
            4,
        )
        .unwrap();
        assert_eq!(plan.sources.len(), 5);
        let expected: usize = ["SH", "AF", "BB", "WTE", "OT"].iter().map(|e| s[*e].train.len()).sum();
        assert_eq!(plan.source_data.len(), expected);
        assert!(plan.source_data.iter().all(|r| r.event_id != "QF"));
    }

    #[test]
    fn target_among_several_sources_is_rejected() {
        let err = compose_plan("relevance", &ids(&["QF", "AF"]), "QF", Scenario::PostQ, &splits(), 1).unwrap_err();
        assert!(matches!(err, CorpusError::InvalidPlan(_)));
    }

    #[test]
    fn empty_source_training_data_is_rejected() {
        let mut s = splits();
        s.get_mut("AF").unwrap().train.clear();
        assert!(matches!(
            compose_plan("relevance", &ids(&["AF"]), "QF", Scenario::PostQ, &s, 1),
            Err(CorpusError::EmptySource(_))
        ));
    }

    proptest! {
        #[test]
        fn cross_domain_source_never_contains_target(mask in 1u8..32, target_idx in 0usize..6, seed: u64) {
            let all = ["SH", "AF", "BB", "WTE", "QF", "OT"];
            let target = all[target_idx];
            let others: Vec<&str> = all.iter().copied().filter(|e| *e != target).collect();
            let chosen: Vec<String> = others.iter().enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, e)| e.to_string())
                .collect();
            let s = splits();
            let plan = compose_plan("relevance", &chosen, target, Scenario::Standard, &s, seed).unwrap();
            prop_assert!(plan.source_data.iter().all(|r| r.event_id != target));
            let again = compose_plan("relevance", &chosen, target, Scenario::Standard, &s, seed).unwrap();
            prop_assert_eq!(plan, again);
        }
    }
}
