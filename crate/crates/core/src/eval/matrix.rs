use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, Metric, Result};
use crate::exec::Execution;
use crate::prompt::Scenario;
use crate::rng::derive_seed_str;

/// How diagonal (in-domain) cells are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalMode {
    /// Mean over the folds of a cross-validation layout.
    FiveFoldMean,
    /// Test score of a fixed train/test split.
    StandardSplit,
}

/// One training-plus-evaluation run behind a matrix cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellJob {
    pub source: String,
    pub target: String,
    pub fold: Option<usize>,
    pub seed: u64,
}

impl CellJob {
    pub fn plan_id(&self) -> String {
        format!("{}->{}", self.source, self.target)
    }

    /// Plan id plus the fold, if any. Seeds derive from this string.
    pub fn run_id(&self) -> String {
        match self.fold {
            Some(f) => format!("{}#fold{f}", self.plan_id()),
            None => self.plan_id(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub fold: Option<usize>,
    pub seed: u64,
    pub value: f64,
    pub fallback_rate: f64,
    pub checkpoint: Option<String>,
}

/// Trains and evaluates one cell job.
pub trait CellRunner: Sync {
    fn run(&self, job: &CellJob) -> std::result::Result<CellRun, String>;
}

impl<F> CellRunner for F
where
    F: Fn(&CellJob) -> std::result::Result<CellRun, String> + Sync,
{
    fn run(&self, job: &CellJob) -> std::result::Result<CellRun, String> {
        self(job)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellProvenance {
    pub source: String,
    pub target: String,
    pub runs: Vec<CellRun>,
    pub errors: Vec<String>,
}

/// Source (row) by target (column) grid of metric values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationMatrix {
    pub events: Vec<String>,
    pub metric: Metric,
    pub scenario: Scenario,
    pub diagonal_mode: DiagonalMode,
    pub master_seed: u64,
    pub cells: Vec<Vec<Option<f64>>>,
    pub provenance: Vec<CellProvenance>,
    pub complete: bool,
}

/// Runs every cell job of a matrix over `events` and assembles the grid.
///
/// Off-diagonal cells come from one cross-domain run each. Diagonal cells
/// average `folds` runs in [`DiagonalMode::FiveFoldMean`] and use a single
/// run otherwise. Every job's seed derives from `master_seed` and its run id,
/// so scheduling with `exec` cannot change results. Failed runs leave their
/// cell empty and mark the matrix incomplete.
#[allow(clippy::too_many_arguments)]
pub fn build_adaptation_matrix<R: CellRunner>(
    events: &[String],
    metric: Metric,
    scenario: Scenario,
    diagonal_mode: DiagonalMode,
    folds: usize,
    master_seed: u64,
    runner: &R,
    exec: Execution,
) -> Result<AdaptationMatrix> {
    if events.len() < 2 {
        return Err(EvalError::TooFew {
            what: "events",
            needed: 2,
            got: events.len(),
        });
    }
    let mut jobs = Vec::new();
    for s in events {
        for t in events {
            let fold_list: Vec<Option<usize>> = match (s == t, diagonal_mode) {
                (true, DiagonalMode::FiveFoldMean) => (0..folds.max(1)).map(Some).collect(),
                _ => vec![None],
            };
            for fold in fold_list {
                let mut job = CellJob {
                    source: s.clone(),
                    target: t.clone(),
                    fold,
                    seed: 0,
                };
                job.seed = derive_seed_str(master_seed, &job.run_id());
                jobs.push(job);
            }
        }
    }
    let results = exec.map(&jobs, |job| runner.run(job));

    let mut by_cell: BTreeMap<(String, String), CellProvenance> = BTreeMap::new();
    for (job, result) in jobs.iter().zip(results) {
        let entry = by_cell
            .entry((job.source.clone(), job.target.clone()))
            .or_insert_with(|| CellProvenance {
                source: job.source.clone(),
                target: job.target.clone(),
                runs: Vec::new(),
                errors: Vec::new(),
            });
        match result {
            Ok(run) => entry.runs.push(run),
            Err(e) => entry.errors.push(format!("{}: {e}", job.run_id())),
        }
    }
    let mut cells = vec![vec![None; events.len()]; events.len()];
    let mut provenance = Vec::new();
    let mut complete = true;
    for (i, s) in events.iter().enumerate() {
        for (j, t) in events.iter().enumerate() {
            let p = by_cell.remove(&(s.clone(), t.clone())).expect("every cell has jobs");
            if p.errors.is_empty() && !p.runs.is_empty() {
                cells[i][j] = Some(p.runs.iter().map(|r| r.value).sum::<f64>() / p.runs.len() as f64);
            } else {
                complete = false;
            }
            provenance.push(p);
        }
    }
    Ok(AdaptationMatrix {
        events: events.to_vec(),
        metric,
        scenario,
        diagonal_mode,
        master_seed,
        cells,
        provenance,
        complete,
    })
}

fn grid_csv(events: &[String], corner: &str, cell: impl Fn(usize, usize) -> String) -> String {
    let mut out = format!("{corner},{}\n", events.join(","));
    for (i, e) in events.iter().enumerate() {
        let row: Vec<String> = (0..events.len()).map(|j| cell(i, j)).collect();
        out.push_str(&format!("{e},{}\n", row.join(",")));
    }
    out
}

impl AdaptationMatrix {
    pub fn get(&self, source: &str, target: &str) -> Option<f64> {
        let i = self.events.iter().position(|e| e == source)?;
        let j = self.events.iter().position(|e| e == target)?;
        self.cells[i][j]
    }

    /// Complete grid of values, or an error naming the failed cells.
    pub fn values(&self) -> Result<Vec<Vec<f64>>> {
        if !self.complete {
            let failed: Vec<String> = self
                .provenance
                .iter()
                .filter(|p| !p.errors.is_empty() || p.runs.is_empty())
                .map(|p| format!("{}->{}", p.source, p.target))
                .collect();
            return Err(EvalError::Incomplete(failed.join(", ")));
        }
        Ok(self
            .cells
            .iter()
            .map(|r| r.iter().map(|v| v.expect("complete")).collect())
            .collect())
    }

    /// Rows are sources, columns targets, values with 4 decimals. Failed
    /// cells read `FAILED`.
    pub fn to_csv(&self) -> String {
        grid_csv(&self.events, "source\\target", |i, j| match self.cells[i][j] {
            Some(v) => format!("{v:.4}"),
            None => "FAILED".into(),
        })
    }

    pub fn correlation(&self, exclude_self: bool) -> Result<Correlation> {
        let (values, warnings) = pearson_row_correlation(&self.values()?, exclude_self)?;
        Ok(Correlation {
            events: self.events.clone(),
            exclude_self,
            values,
            warnings,
        })
    }
}

/// Row-by-row Pearson correlation of an adaptation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub events: Vec<String>,
    pub exclude_self: bool,
    pub values: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl Correlation {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.events.iter().position(|e| e == a)?;
        let j = self.events.iter().position(|e| e == b)?;
        Some(self.values[i][j])
    }

    pub fn to_csv(&self) -> String {
        grid_csv(&self.events, "row", |i, j| format!("{:.4}", self.values[i][j]))
    }
}

/// Pearson r, or `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Correlates every pair of rows of a square matrix. With `exclude_self`,
/// columns `i` and `j` are removed from both rows before correlating rows `i`
/// and `j`. A zero-variance pair gives 0 and a warning; the diagonal is 1.
pub fn pearson_row_correlation(rows: &[Vec<f64>], exclude_self: bool) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
    let n = rows.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != n) {
        return Err(EvalError::LengthMismatch {
            preds: bad.len(),
            golds: n,
        });
    }
    let mut out = vec![vec![0.0; n]; n];
    let mut warnings = Vec::new();
    for i in 0..n {
        out[i][i] = 1.0;
        for j in i + 1..n {
            let cols: Vec<usize> = (0..n).filter(|&c| !exclude_self || (c != i && c != j)).collect();
            if cols.len() < 2 {
                return Err(EvalError::TooFew {
                    what: "paired points",
                    needed: 2,
                    got: cols.len(),
                });
            }
            let x: Vec<f64> = cols.iter().map(|&c| rows[i][c]).collect();
            let y: Vec<f64> = cols.iter().map(|&c| rows[j][c]).collect();
            let r = pearson(&x, &y).unwrap_or_else(|| {
                warnings.push(format!("rows {i} and {j}: zero variance, r set to 0"));
                0.0
            });
            out[i][j] = r;
            out[j][i] = r;
        }
    }
    Ok((out, warnings))
}
