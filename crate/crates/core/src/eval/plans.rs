use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::corpus::{compose_plan, AdaptationPlan, CorpusError, EventSplit};
use crate::prompt::Scenario;

/// Sources and target of a plan, before any data is attached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSpec {
    pub task_id: String,
    pub sources: Vec<String>,
    pub target: String,
    pub scenario: Scenario,
}

impl PlanSpec {
    pub fn id(&self) -> String {
        format!("{}->{}", self.sources.join("+"), self.target)
    }

    pub fn compose(&self, splits: &BTreeMap<String, EventSplit>, seed: u64) -> Result<AdaptationPlan> {
        Ok(compose_plan(
            &self.task_id,
            &self.sources,
            &self.target,
            self.scenario,
            splits,
            seed,
        )?)
    }
}

/// Leave-one-out plans and the row layout of their result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaveOneOut {
    pub plans: Vec<PlanSpec>,
}

impl LeaveOneOut {
    /// Arithmetic mean of the per-plan values (the table's last row).
    pub fn average(values: &[f64]) -> Option<f64> {
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    /// `plan,target,value` rows followed by an `Average` row. Missing values
    /// read `FAILED` and are left out of the average.
    pub fn table_csv(&self, values: &[Option<f64>]) -> String {
        let mut out = String::from("plan,target,value\n");
        for (p, v) in self.plans.iter().zip(values) {
            let cell = v.map_or_else(|| "FAILED".to_string(), |v| format!("{v:.4}"));
            out.push_str(&format!("{},{},{cell}\n", p.id(), p.target));
        }
        let present: Vec<f64> = values.iter().flatten().copied().collect();
        let avg = Self::average(&present).map_or_else(|| "FAILED".to_string(), |v| format!("{v:.4}"));
        out.push_str(&format!("Average,,{avg}\n"));
        out
    }
}

/// One plan per event, trained on all the other events.
pub fn plan_leave_one_out(events: &[String], scenario: Scenario) -> Result<LeaveOneOut> {
    if events.len() < 2 {
        return Err(EvalError::TooFew {
            what: "events",
            needed: 2,
            got: events.len(),
        });
    }
    let plans = events
        .iter()
        .map(|t| PlanSpec {
            task_id: "leave_one_out".into(),
            sources: events.iter().filter(|e| *e != t).cloned().collect(),
            target: t.clone(),
            scenario,
        })
        .collect();
    Ok(LeaveOneOut { plans })
}

/// One plan per source set, all scored on `target`.
pub fn plan_many_to_one(source_sets: &[Vec<String>], target: &str, scenario: Scenario) -> Result<Vec<PlanSpec>> {
    source_sets
        .iter()
        .map(|set| {
            if set.is_empty() {
                return Err(CorpusError::InvalidPlan("empty source set".into()).into());
            }
            if set.iter().any(|s| s == target) {
                return Err(
                    CorpusError::InvalidPlan(format!("target {target} is in source set {}", set.join("+"))).into(),
                );
            }
            Ok(PlanSpec {
                task_id: "many_to_one".into(),
                sources: set.clone(),
                target: target.to_string(),
                scenario,
            })
        })
        .collect()
}
