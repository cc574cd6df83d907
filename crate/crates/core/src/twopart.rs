//! Two-part optimizer for larger designs.
//!
//! Part I first removes coincident cells: for every slice `i` with
//! `n_i^q > n` it applies within-slice swaps until no two rows of
//! `⌈M / t^i⌉` coincide, then greedily improves slice `i` with within-slice
//! moves that keep the grid repeat-free. Part II continues greedily with
//! different- and out-slice moves under the same constraint.
//!
//! Slices are visited in ascending order of run size. The repeat-free
//! constraint accumulates: once a slice's grid has been cleaned, no later
//! move may create a coincidence on it again.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::criteria::{CriterionConfig, CriterionValue};
use crate::design::{ceil_div, LevelMatrix, SliceSpec};
use crate::neighborhood::{random_neighbor, ExchangeMove, MoveKind};
use crate::sese::OptimizeError;
use crate::state::{DesignState, StateError};

/// Number of unordered pairs of identical rows in a row-major matrix.
pub fn repeating_count(data: &[u64], cols: usize) -> usize {
    assert!(cols > 0 && data.len().is_multiple_of(cols), "ragged matrix");
    let mut seen: HashMap<&[u64], usize> = HashMap::new();
    for row in data.chunks_exact(cols) {
        *seen.entry(row).or_default() += 1;
    }
    seen.values().map(|&c| c * (c - 1) / 2).sum()
}

/// `⌈M / t^i⌉`: the design on the `n_i × … × n_i` grid of one slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridProjection {
    slice: usize,
    cols: usize,
    cells: Vec<u64>,
}

impl GridProjection {
    pub fn new(m: &LevelMatrix, slice: usize) -> Self {
        let t = m.spec().slice_scale(slice);
        Self {
            slice,
            cols: m.spec().factors(),
            cells: m.as_slice().iter().map(|&l| ceil_div(l, t)).collect(),
        }
    }

    pub fn slice(&self) -> usize {
        self.slice
    }

    pub fn row(&self, row: usize) -> &[u64] {
        &self.cells[row * self.cols..(row + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.cells
    }

    pub fn repeating_count(&self) -> usize {
        repeating_count(&self.cells, self.cols)
    }

    /// Rows sharing their cell with at least one other row.
    pub fn repeating_rows(&self) -> Vec<usize> {
        let mut counts: HashMap<&[u64], usize> = HashMap::new();
        for row in self.cells.chunks_exact(self.cols) {
            *counts.entry(row).or_default() += 1;
        }
        (0..self.cells.len() / self.cols)
            .filter(|&r| counts[self.row(r)] > 1)
            .collect()
    }
}

/// `P(⌈M / t^i⌉)` for slice scale `i`.
pub fn grid_repeats(m: &LevelMatrix, slice: usize) -> usize {
    GridProjection::new(m, slice).repeating_count()
}

/// Whether slice `i`'s grid has room for all `n` points (`n_i^q > n`).
pub fn needs_dedup(spec: &SliceSpec, slice: usize) -> bool {
    let n = spec.runs() as f64;
    (spec.slice_size(slice) as f64).powi(spec.factors() as i32) > n
}

/// Advises skipping part II when every slice grid is much sparser than the
/// design (`n_i^q > ratio · n` for all `i`).
pub fn should_skip_part2(spec: &SliceSpec, ratio: f64) -> bool {
    let n = spec.runs() as f64;
    (0..spec.num_slices())
        .all(|i| (spec.slice_size(i) as f64).powi(spec.factors() as i32) > ratio * n)
}

/// Slices ordered by run size, ties by index.
pub fn processing_order(spec: &SliceSpec) -> Vec<usize> {
    let mut order: Vec<usize> = (0..spec.num_slices()).collect();
    order.sort_by_key(|&i| spec.slice_size(i));
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPartParams {
    /// Greedy proposals per slice in part I.
    pub part1_iters: usize,
    /// Greedy proposals per slice in part II.
    pub part2_iters: usize,
    /// Cap on de-duplication proposals per slice.
    pub dedup_attempts: usize,
    pub skip_ratio: f64,
    pub seed: u64,
}

impl Default for TwoPartParams {
    fn default() -> Self {
        Self {
            part1_iters: 100,
            part2_iters: 100,
            dedup_attempts: 1000,
            skip_ratio: 10.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Dedup,
    Part1,
    Part2,
}

/// A committed move and the criterion value after it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub phase: Phase,
    pub slice: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct TwoPartOutcome {
    pub levels: LevelMatrix,
    pub initial: CriterionValue,
    pub value: CriterionValue,
    /// Per slice: `Some(P == 0)` where de-duplication applies, else `None`.
    pub repeat_free: Vec<Option<bool>>,
    /// Set when some slice hit the de-duplication cap with repeats left.
    pub dedup_incomplete: bool,
    pub steps: Vec<Step>,
}

impl TwoPartOutcome {
    pub fn accepted(&self, phase: Phase) -> usize {
        self.steps.iter().filter(|s| s.phase == phase).count()
    }
}

/// Repeat counts on every constrained grid never go up.
fn keeps_grids(trial: &LevelMatrix, guarded: &[(usize, usize)]) -> bool {
    guarded
        .iter()
        .all(|&(slice, before)| grid_repeats(trial, slice) <= before)
}

fn trial_of(levels: &LevelMatrix, mv: &ExchangeMove) -> LevelMatrix {
    let mut trial = levels.clone();
    mv.apply(&mut trial)
        .expect("freshly drawn move matches its matrix");
    trial
}

struct Runner {
    state: DesignState,
    rng: ChaCha8Rng,
    /// `(slice, current repeat count)` for grids that must not get worse.
    guarded: Vec<(usize, usize)>,
    steps: Vec<Step>,
}

impl Runner {
    fn refresh_guards(&mut self) {
        for g in &mut self.guarded {
            g.1 = grid_repeats(self.state.levels(), g.0);
        }
    }

    /// Within-slice swaps around repeating rows until the grid of `slice`
    /// has no coincident cells or the attempt cap is reached.
    fn dedup(&mut self, slice: usize, attempts: usize) -> Result<bool, OptimizeError> {
        let spec = self.state.levels().spec().clone();
        let mut current = grid_repeats(self.state.levels(), slice);
        let mut tries = 0;
        while current > 0 && tries < attempts {
            tries += 1;
            let proj = GridProjection::new(self.state.levels(), slice);
            let repeating = proj.repeating_rows();
            let &row = repeating
                .choose(&mut self.rng)
                .expect("positive count has repeating rows");
            let owner = spec.slice_of_row(row).expect("row in range");
            let rows = spec.slice_rows(owner);
            if rows.len() < 2 {
                continue;
            }
            let mut other = self.rng.random_range(rows.start..rows.end - 1);
            if other >= row {
                other += 1;
            }
            let column = self.rng.random_range(0..spec.factors());
            let mv = ExchangeMove::within_slice(self.state.levels(), column, row, other)
                .map_err(StateError::from)?;
            let trial = trial_of(self.state.levels(), &mv);
            let after = grid_repeats(&trial, slice);
            if after < current && keeps_grids(&trial, &self.guarded) {
                self.state.commit(&mv)?;
                current = after;
                self.refresh_guards();
                self.record(Phase::Dedup, slice);
            }
        }
        Ok(current == 0)
    }

    /// Proposes `iters` moves of the given kinds in `slice` and keeps those
    /// that strictly lower `φ_CSM` without creating grid repeats.
    fn greedy(
        &mut self,
        phase: Phase,
        slice: usize,
        kinds: &[MoveKind],
        iters: usize,
    ) -> Result<(), OptimizeError> {
        for _ in 0..iters {
            let kind = *kinds.choose(&mut self.rng).expect("at least one move kind");
            let Ok(mv) = random_neighbor(kind, self.state.levels(), slice, None, &mut self.rng)
            else {
                continue;
            };
            if !self.guarded.is_empty()
                && !keeps_grids(&trial_of(self.state.levels(), &mv), &self.guarded)
            {
                continue;
            }
            if self.state.preview(&mv)?.combined < self.state.combined() {
                self.state.commit(&mv)?;
                self.refresh_guards();
                self.record(phase, slice);
            }
        }
        Ok(())
    }

    fn record(&mut self, phase: Phase, slice: usize) {
        self.steps.push(Step {
            phase,
            slice,
            value: self.state.combined(),
        });
    }
}

fn validate_input(m0: &LevelMatrix) -> Result<(), OptimizeError> {
    m0.check_structure().map_err(OptimizeError::InvalidDesign)
}

fn part1_inner(
    runner: &mut Runner,
    params: &TwoPartParams,
    out: &mut TwoPartOutcome,
) -> Result<(), OptimizeError> {
    let spec = runner.state.levels().spec().clone();
    for slice in processing_order(&spec) {
        if needs_dedup(&spec, slice) {
            let clean = runner.dedup(slice, params.dedup_attempts)?;
            out.dedup_incomplete |= !clean;
            let count = grid_repeats(runner.state.levels(), slice);
            runner.guarded.push((slice, count));
        }
        runner.greedy(
            Phase::Part1,
            slice,
            &[MoveKind::WithinSlice],
            params.part1_iters,
        )?;
    }
    Ok(())
}

fn part2_inner(runner: &mut Runner, params: &TwoPartParams) -> Result<(), OptimizeError> {
    let spec = runner.state.levels().spec().clone();
    let last = spec.num_slices() - 1;
    for slice in processing_order(&spec) {
        let kinds: &[MoveKind] = if slice == last {
            &[MoveKind::OutSlice]
        } else {
            &[MoveKind::DifferentSlice, MoveKind::OutSlice]
        };
        runner.greedy(Phase::Part2, slice, kinds, params.part2_iters)?;
    }
    Ok(())
}

fn run(
    m0: &LevelMatrix,
    config: &CriterionConfig,
    params: &TwoPartParams,
    part1: bool,
    part2: bool,
) -> Result<TwoPartOutcome, OptimizeError> {
    validate_input(m0)?;
    let state = DesignState::new(m0.clone(), config)?;
    let initial = state.value().clone();
    let spec = m0.spec().clone();
    let mut runner = Runner {
        state,
        rng: ChaCha8Rng::seed_from_u64(params.seed),
        guarded: Vec::new(),
        steps: Vec::new(),
    };
    let mut out = TwoPartOutcome {
        levels: m0.clone(),
        initial: initial.clone(),
        value: initial,
        repeat_free: Vec::new(),
        dedup_incomplete: false,
        steps: Vec::new(),
    };
    if part1 {
        part1_inner(&mut runner, params, &mut out)?;
    } else {
        // Part II alone still respects whatever grids are already clean.
        runner.guarded = processing_order(&spec)
            .into_iter()
            .filter(|&i| needs_dedup(&spec, i))
            .map(|i| (i, grid_repeats(m0, i)))
            .collect();
    }
    if part2 {
        part2_inner(&mut runner, params)?;
    }
    out.repeat_free = (0..spec.num_slices())
        .map(|i| needs_dedup(&spec, i).then(|| grid_repeats(runner.state.levels(), i) == 0))
        .collect();
    out.value = runner.state.value().clone();
    out.steps = runner.steps;
    out.levels = runner.state.into_levels();
    Ok(out)
}

pub fn part1(
    m0: &LevelMatrix,
    config: &CriterionConfig,
    params: &TwoPartParams,
) -> Result<TwoPartOutcome, OptimizeError> {
    run(m0, config, params, true, false)
}

pub fn part2(
    m0: &LevelMatrix,
    config: &CriterionConfig,
    params: &TwoPartParams,
) -> Result<TwoPartOutcome, OptimizeError> {
    run(m0, config, params, false, true)
}

/// Part I followed by part II with a single random stream.
pub fn two_part(
    m0: &LevelMatrix,
    config: &CriterionConfig,
    params: &TwoPartParams,
) -> Result<TwoPartOutcome, OptimizeError> {
    run(m0, config, params, true, true)
}
