//! Derivative-free compass search. Heuristic: returns a local improvement of
//! the starting point, never a global optimum.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::general::{h_k_split, StorageSequence};
use super::h_design;
use crate::dynamics::{ControlledSystem, GeneralSystem};
use crate::error::{Error, Result};
use crate::noise::ExpectationRule;
use crate::storage::StorageFunction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSearch {
    #[serde(default = "default_initial_step")]
    pub initial_step: f64,
    #[serde(default = "default_min_step")]
    pub min_step: f64,
    #[serde(default = "default_budget")]
    pub max_evaluations: usize,
    /// Optional box `[lo, hi]` per coordinate; trial points are clamped.
    #[serde(default)]
    pub bounds: Option<Vec<[f64; 2]>>,
}

fn default_initial_step() -> f64 {
    0.5
}

fn default_min_step() -> f64 {
    1e-7
}

fn default_budget() -> usize {
    20_000
}

impl Default for PatternSearch {
    fn default() -> Self {
        Self {
            initial_step: default_initial_step(),
            min_step: default_min_step(),
            max_evaluations: default_budget(),
            bounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub point: DVector<f64>,
    pub value: f64,
    pub start_value: f64,
    pub evaluations: usize,
}

impl PatternSearch {
    fn validate(&self, dim: usize) -> Result<()> {
        if !(self.initial_step > 0.0 && self.min_step > 0.0 && self.min_step <= self.initial_step)
        {
            return Err(Error::config("pattern search needs 0 < min_step <= initial_step"));
        }
        if let Some(b) = &self.bounds {
            if b.len() != dim {
                return Err(Error::dims("search bounds", dim, b.len()));
            }
            if b.iter().any(|[lo, hi]| !(lo <= hi)) {
                return Err(Error::config("search bounds need lo <= hi"));
            }
        }
        Ok(())
    }

    fn clamp(&self, x: &mut DVector<f64>) {
        if let Some(b) = &self.bounds {
            for (c, [lo, hi]) in x.iter_mut().zip(b) {
                *c = c.clamp(*lo, *hi);
            }
        }
    }
}

/// Minimizes `f` by polling `±step·eᵢ` and halving the step on failure.
/// Failed or non-finite trial evaluations are rejected.
pub fn pattern_search<F>(mut f: F, start: &DVector<f64>, spec: &PatternSearch) -> Result<SearchResult>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    spec.validate(start.len())?;
    let mut best = start.clone();
    spec.clamp(&mut best);
    let start_value = f(&best)?;
    let mut value = start_value;
    let mut evaluations = 1;
    let mut step = spec.initial_step;
    'outer: while step >= spec.min_step {
        let mut improved = false;
        for i in 0..best.len() {
            for sign in [1.0, -1.0] {
                if evaluations >= spec.max_evaluations {
                    break 'outer;
                }
                let mut trial = best.clone();
                trial[i] += sign * step;
                spec.clamp(&mut trial);
                if trial == best {
                    continue;
                }
                evaluations += 1;
                if let Ok(t) = f(&trial) {
                    if t.is_finite() && t < value {
                        best = trial;
                        value = t;
                        improved = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(SearchResult {
        point: best,
        value,
        start_value,
        evaluations,
    })
}

/// Pointwise improvement of `H(V(x), u, β)` over `u`, started at `u₀`.
pub fn argmin_improve(
    plant: &ControlledSystem,
    v: &StorageFunction,
    beta: f64,
    x: &DVector<f64>,
    u0: &DVector<f64>,
    rule: &ExpectationRule,
    spec: &PatternSearch,
) -> Result<SearchResult> {
    pattern_search(|u| Ok(h_design(v, plant, x, u, beta, rule)?.value), u0, spec)
}

/// Worst-case disturbance: maximizes `H_k(x, u, v) − γ²|v|²` over `v`.
/// The returned `value` is the maximum (not its negation).
#[allow(clippy::too_many_arguments)]
pub fn argmax_disturbance(
    sys: &GeneralSystem,
    v: &StorageSequence,
    x: &DVector<f64>,
    u: &DVector<f64>,
    k: usize,
    gamma: f64,
    rule: &ExpectationRule,
    start: &DVector<f64>,
    spec: &PatternSearch,
) -> Result<SearchResult> {
    let g2 = gamma * gamma;
    let mut r = pattern_search(
        |d| Ok(-(h_k_split(sys, v, x, u, d, k, rule)?.value().value - g2 * d.norm_squared())),
        start,
        spec,
    )?;
    r.value = -r.value;
    r.start_value = -r.start_value;
    Ok(r)
}
