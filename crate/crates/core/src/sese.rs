//! Sliced enhanced stochastic evolutionary optimizer.
//!
//! Slices are optimized one after another, each starting from the best design
//! found so far. Per slice an outer loop adapts the acceptance threshold `T_h`
//! and an inner loop proposes exchange candidates in one column at a time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criteria::{CriterionConfig, CriterionError, CriterionValue};
use crate::design::{LevelMatrix, StructureViolation};
use crate::neighborhood::{count_neighbors, random_neighbor, MoveKind, NeighborCounts};
use crate::state::{DesignState, StateError};

/// Largest admissible inner-loop length.
pub const MAX_INNER_ITERS: usize = 100;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid optimizer parameters: {0}")]
    InvalidParams(String),
    #[error("initial design is not a sliced Latin hypercube: {0}")]
    InvalidDesign(StructureViolation),
    #[error(transparent)]
    Criterion(#[from] CriterionError),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeseParams {
    /// `P`, candidate steps per inner loop.
    pub inner_iters: usize,
    /// `N`, outer cycles per slice.
    pub outer_iters: usize,
    /// `T_h0 = threshold_factor × φ_CSM` of each slice's starting design.
    pub threshold_factor: f64,
    /// Overrides the derived `T_h0` when set.
    pub initial_threshold: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    /// Minimum best-value drop that counts as an improving cycle.
    pub tol: f64,
    pub seed: u64,
}

impl Default for SeseParams {
    fn default() -> Self {
        Self {
            inner_iters: 20,
            outer_iters: 10,
            threshold_factor: 0.005,
            initial_threshold: None,
            beta1: 0.8,
            beta2: 0.7,
            beta3: 0.9,
            tol: 0.1,
            seed: 0,
        }
    }
}

impl SeseParams {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let bad = |msg: &str| Err(OptimizeError::InvalidParams(msg.to_string()));
        if self.inner_iters > MAX_INNER_ITERS {
            return bad("inner iterations must not exceed 100");
        }
        for (name, b) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("beta3", self.beta3),
        ] {
            if !(b > 0.0 && b < 1.0) {
                return Err(OptimizeError::InvalidParams(format!(
                    "{name} must lie in (0, 1)"
                )));
            }
        }
        if !(self.threshold_factor > 0.0 && self.threshold_factor.is_finite()) {
            return bad("threshold factor must be positive");
        }
        if let Some(t) = self.initial_threshold {
            if !(t > 0.0) {
                return bad("initial threshold must be positive");
            }
        }
        if !(self.tol >= 0.0) {
            return bad("tol must be non-negative");
        }
        Ok(())
    }
}

/// Candidates per inner step: `I1` within-slice, `I2` different-slice and
/// `I3` out-slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnerBudgets {
    pub within: usize,
    pub different: usize,
    pub out: usize,
}

impl InnerBudgets {
    pub fn from_counts(counts: NeighborCounts) -> Self {
        let within = counts.within.div_ceil(5).min(50);
        let pool = counts.different + counts.out;
        let combined = pool.min(50);
        let different = (combined * counts.different).checked_div(pool).unwrap_or(0);
        Self {
            within,
            different,
            out: combined - different,
        }
    }

    pub fn total(&self) -> usize {
        self.within + self.different + self.out
    }
}

pub fn derive_inner_budgets(m: &LevelMatrix, slice: usize) -> InnerBudgets {
    InnerBudgets::from_counts(count_neighbors(m, slice))
}

/// The acceptance test `gap ≤ T_h · draw`.
#[inline]
pub fn accepts(gap: f64, threshold: f64, draw: f64) -> bool {
    gap <= threshold * draw
}

/// Threshold for the next outer cycle.
pub fn update_threshold(
    params: &SeseParams,
    threshold: f64,
    improved: bool,
    n_ac: usize,
    n_im: usize,
) -> f64 {
    let p = params.inner_iters.max(1) as f64;
    let p_ac = n_ac as f64 / p;
    let p_im = n_im as f64 / p;
    if improved {
        if p_ac > 0.1 && p_im < p_ac {
            params.beta1 * threshold
        } else if p_ac > 0.1 && n_im == n_ac {
            threshold
        } else {
            threshold / params.beta1
        }
    } else if p_ac > 0.8 {
        params.beta3 * threshold
    } else {
        threshold / params.beta2
    }
}

/// One inner-loop step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 1-based, like every index in exported traces.
    pub slice: usize,
    pub outer: usize,
    pub inner: usize,
    pub column: usize,
    pub candidates: usize,
    /// Best candidate value minus current value; `None` without candidates.
    pub gap: Option<f64>,
    pub draw: Option<f64>,
    pub accepted: bool,
    pub current: f64,
    pub best: f64,
    pub threshold: f64,
    pub n_ac: usize,
    pub n_im: usize,
    /// Set on the last step of an outer cycle.
    pub flag_im: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Clone)]
pub struct SeseOutcome {
    pub levels: LevelMatrix,
    pub initial: CriterionValue,
    pub value: CriterionValue,
    pub trace: OptimizerTrace,
}

/// Runs the optimizer from `d0`.
pub fn sese_optimize(
    d0: &LevelMatrix,
    config: &CriterionConfig,
    params: &SeseParams,
) -> Result<SeseOutcome, OptimizeError> {
    params.validate()?;
    d0.check_structure().map_err(OptimizeError::InvalidDesign)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let spec = d0.spec().clone();
    let q = spec.factors();

    let start = DesignState::new(d0.clone(), config)?;
    let initial = start.value().clone();
    let mut best_levels = d0.clone();
    let mut best_value = initial.clone();
    let mut trace = OptimizerTrace::default();

    for slice in 0..spec.num_slices() {
        let mut state = DesignState::new(best_levels.clone(), config)?;
        let mut threshold = params
            .initial_threshold
            .unwrap_or(params.threshold_factor * state.combined());
        for outer in 0..params.outer_iters {
            state.resync()?;
            let old_best = best_value.combined;
            let budgets = derive_inner_budgets(state.levels(), slice);
            let (mut n_ac, mut n_im) = (0, 0);
            for k in 1..=params.inner_iters {
                let column = k % q;
                let mut chosen = None;
                let mut candidates = 0;
                let mut shortfall = 0;
                let plan = [
                    (MoveKind::DifferentSlice, budgets.different),
                    (MoveKind::OutSlice, budgets.out),
                ];
                let mut consider = |mv, state: &DesignState| -> Result<(), OptimizeError> {
                    let v = state.preview(&mv)?.combined;
                    candidates += 1;
                    if chosen.as_ref().is_none_or(|(_, best): &(_, f64)| v < *best) {
                        chosen = Some((mv, v));
                    }
                    Ok(())
                };
                let mut within = budgets.within;
                // Within-slice candidates come first in generation order,
                // then different- and out-slice ones; shortfalls from the
                // latter are made up by extra within-slice candidates.
                let mut pending = Vec::new();
                for (kind, count) in plan {
                    for _ in 0..count {
                        match random_neighbor(kind, state.levels(), slice, Some(column), &mut rng) {
                            Ok(mv) => pending.push(mv),
                            Err(_) => shortfall += 1,
                        }
                    }
                }
                within += shortfall;
                let mut within_moves = Vec::with_capacity(within);
                for _ in 0..within {
                    if let Ok(mv) = random_neighbor(
                        MoveKind::WithinSlice,
                        state.levels(),
                        slice,
                        Some(column),
                        &mut rng,
                    ) {
                        within_moves.push(mv);
                    }
                }
                for mv in within_moves.into_iter().chain(pending) {
                    consider(mv, &state)?;
                }

                let mut record = TraceRecord {
                    slice: slice + 1,
                    outer: outer + 1,
                    inner: k,
                    column: column + 1,
                    candidates,
                    gap: None,
                    draw: None,
                    accepted: false,
                    current: state.combined(),
                    best: best_value.combined,
                    threshold,
                    n_ac,
                    n_im,
                    flag_im: None,
                };
                if let Some((mv, v)) = chosen {
                    let gap = v - state.combined();
                    let draw: f64 = rng.random();
                    record.gap = Some(gap);
                    record.draw = Some(draw);
                    if accepts(gap, threshold, draw) {
                        state.commit(&mv)?;
                        n_ac += 1;
                        record.accepted = true;
                        if state.combined() < best_value.combined {
                            best_levels = state.levels().clone();
                            best_value = state.value().clone();
                            n_im += 1;
                        }
                    }
                }
                record.current = state.combined();
                record.best = best_value.combined;
                record.n_ac = n_ac;
                record.n_im = n_im;
                trace.records.push(record);
            }
            let improved = old_best - best_value.combined > params.tol;
            if let Some(last) = trace.records.last_mut() {
                if params.inner_iters > 0 {
                    last.flag_im = Some(improved);
                }
            }
            threshold = update_threshold(params, threshold, improved, n_ac, n_im);
        }
    }

    Ok(SeseOutcome {
        levels: best_levels,
        initial,
        value: best_value,
        trace,
    })
}
