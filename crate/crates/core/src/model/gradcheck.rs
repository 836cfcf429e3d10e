use std::collections::BTreeMap;

use super::{Forward, Mode, ModelConfig, ModelError, ParameterStore, Result};
use crate::tensor::{central_differences, relative_error, tape_gradients, Scalar, Tape, TensorError, Var};

/// Analytic and central-difference derivatives of one example's loss with
/// respect to every parameter, in parameter-name order.
#[derive(Debug, Clone)]
pub struct GradientReport {
    pub names: Vec<String>,
    pub pairs: Vec<Vec<(f64, f64)>>,
}

/// The coordinate with the largest relative error.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCoordinate {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

impl GradientReport {
    pub fn coordinates(&self) -> usize {
        self.pairs.iter().map(Vec::len).sum()
    }

    pub fn max_relative_error(&self) -> f64 {
        self.worst().map_or(0.0, |w| w.relative_error)
    }

    pub fn worst(&self) -> Option<WorstCoordinate> {
        let mut best: Option<WorstCoordinate> = None;
        for (name, coords) in self.names.iter().zip(&self.pairs) {
            for (index, &(analytic, numeric)) in coords.iter().enumerate() {
                let err = relative_error(analytic, numeric);
                if best.as_ref().is_none_or(|b| err > b.relative_error || err.is_nan()) {
                    best = Some(WorstCoordinate {
                        name: name.clone(),
                        index,
                        analytic,
                        numeric,
                        relative_error: err,
                    });
                }
            }
        }
        best
    }

    /// Number of coordinates whose relative error exceeds `tol`.
    pub fn count_above(&self, tol: f64) -> usize {
        self.pairs
            .iter()
            .flatten()
            .filter(|&&(a, n)| {
                let err = relative_error(a, n);
                err.is_nan() || err > tol
            })
            .count()
    }

    /// Largest `|analytic - numeric| - rel * max(|analytic|, |numeric|)`,
    /// i.e. the absolute slack needed for a mixed tolerance with relative part `rel`.
    pub fn absolute_excess(&self, rel: f64) -> f64 {
        self.pairs
            .iter()
            .flatten()
            .map(|&(a, n)| (a - n).abs() - rel * a.abs().max(n.abs()))
            .fold(0.0, f64::max)
    }
}

/// Checks the full model's teacher-forced loss gradient against central
/// differences over every parameter.
pub fn check_model_gradients<T: Scalar>(
    params: &ParameterStore<T>,
    src_ids: &[u32],
    target_ids: &[u32],
    eps: f64,
) -> Result<GradientReport> {
    check_model_gradients_with::<T, T>(params, src_ids, target_ids, eps)
}

/// Like [`check_model_gradients`], but evaluates the central differences in
/// the reference type `R` at the same parameter values.
///
/// With `R` wider than `T` the numeric side carries almost no rounding error,
/// so the report measures the analytic gradient alone.
pub fn check_model_gradients_with<T: Scalar, R: Scalar>(
    params: &ParameterStore<T>,
    src_ids: &[u32],
    target_ids: &[u32],
    eps: f64,
) -> Result<GradientReport> {
    let names: Vec<String> = params.names().map(String::from).collect();
    let tensors: Vec<_> = params.iter().map(|(_, t)| t.clone()).collect();
    let analytic = tape_gradients(model_loss(params.config(), &names, src_ids, target_ids), &tensors)?;
    let reference = params.cast::<R>();
    let wide: Vec<_> = reference.iter().map(|(_, t)| t.clone()).collect();
    let numeric = central_differences(model_loss(params.config(), &names, src_ids, target_ids), &wide, eps)?;
    let pairs = analytic
        .into_iter()
        .zip(numeric)
        .map(|(a, n)| a.into_iter().zip(n).collect())
        .collect();
    Ok(GradientReport { names, pairs })
}

fn model_loss<'a, T: Scalar>(
    config: &'a ModelConfig,
    names: &'a [String],
    src_ids: &'a [u32],
    target_ids: &'a [u32],
) -> impl FnMut(&mut Tape<T>, &[Var]) -> std::result::Result<Var, TensorError> + 'a {
    let mask = vec![1u8; src_ids.len()];
    move |tape, vars| {
        let map: BTreeMap<String, _> = names.iter().cloned().zip(vars.iter().copied()).collect();
        let mut fwd = Forward::from_vars(tape, config.clone(), map, Mode::Eval);
        fwd.loss(src_ids, &mask, target_ids).map_err(|e| match e {
            ModelError::Tensor(t) => t,
            other => TensorError::Parameter(other.to_string()),
        })
    }
}
