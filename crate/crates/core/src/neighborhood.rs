//! Structure-preserving neighbors of a level matrix.
//!
//! Three exchange procedures act on one column:
//!
//! * within-slice: swap two entries of the same slice;
//! * different-slice: swap an entry `b` of slice `i` with an entry `c` of a
//!   later slice, where `c` lies in the same slice-`i` bin as `b`;
//! * out-slice: replace `b` by an unused level `c` of the same bin.
//!
//! Candidates for the last two come from `τ(b) = ρ(b) ∪ σ(b)`: `ρ(b)` holds
//! the admissible later-slice levels and `σ(b)` the admissible unused ones.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{ceil_div, LevelMatrix};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MoveError {
    #[error("no admissible move of this kind was found")]
    NoMove,
    #[error("level {level} not found in slice {slice}, column {column}")]
    LevelNotFound {
        level: u64,
        slice: usize,
        column: usize,
    },
    #[error("move does not match the current matrix")]
    Stale,
    #[error("rows {0} and {1} are not in the same slice")]
    NotSameSlice(usize, usize),
    #[error("rows {0} and {1} are in the same slice")]
    SameSlice(usize, usize),
    #[error("index out of range")]
    OutOfRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MoveKind {
    WithinSlice,
    DifferentSlice,
    OutSlice,
}

/// A single exchange in one column, with the levels it expects to find.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExchangeMove {
    /// Swap `levels[0]` at `rows[0]` with `levels[1]` at `rows[1]`.
    WithinSlice {
        column: usize,
        rows: [usize; 2],
        levels: [u64; 2],
        slice: usize,
    },
    DifferentSlice {
        column: usize,
        rows: [usize; 2],
        levels: [u64; 2],
        slices: [usize; 2],
    },
    OutSlice {
        column: usize,
        row: usize,
        old_level: u64,
        new_level: u64,
        slice: usize,
    },
}

impl ExchangeMove {
    pub fn within_slice(
        m: &LevelMatrix,
        column: usize,
        r: usize,
        s: usize,
    ) -> Result<Self, MoveError> {
        let (sr, ss) = slices_of(m, column, r, s)?;
        if sr != ss {
            return Err(MoveError::NotSameSlice(r, s));
        }
        Ok(ExchangeMove::WithinSlice {
            column,
            rows: [r, s],
            levels: [m.get(r, column), m.get(s, column)],
            slice: sr,
        })
    }

    pub fn different_slice(
        m: &LevelMatrix,
        column: usize,
        r: usize,
        s: usize,
    ) -> Result<Self, MoveError> {
        let (sr, ss) = slices_of(m, column, r, s)?;
        if sr == ss {
            return Err(MoveError::SameSlice(r, s));
        }
        Ok(ExchangeMove::DifferentSlice {
            column,
            rows: [r, s],
            levels: [m.get(r, column), m.get(s, column)],
            slices: [sr, ss],
        })
    }

    pub fn out_slice(
        m: &LevelMatrix,
        column: usize,
        row: usize,
        new_level: u64,
    ) -> Result<Self, MoveError> {
        let (slice, _) = slices_of(m, column, row, row)?;
        if new_level == 0 || new_level > m.spec().lcm() {
            return Err(MoveError::OutOfRange);
        }
        Ok(ExchangeMove::OutSlice {
            column,
            row,
            old_level: m.get(row, column),
            new_level,
            slice,
        })
    }

    pub fn kind(&self) -> MoveKind {
        match self {
            ExchangeMove::WithinSlice { .. } => MoveKind::WithinSlice,
            ExchangeMove::DifferentSlice { .. } => MoveKind::DifferentSlice,
            ExchangeMove::OutSlice { .. } => MoveKind::OutSlice,
        }
    }

    pub fn column(&self) -> usize {
        match *self {
            ExchangeMove::WithinSlice { column, .. }
            | ExchangeMove::DifferentSlice { column, .. }
            | ExchangeMove::OutSlice { column, .. } => column,
        }
    }

    pub fn touched_slices(&self) -> Vec<usize> {
        match *self {
            ExchangeMove::WithinSlice { slice, .. } | ExchangeMove::OutSlice { slice, .. } => {
                vec![slice]
            }
            ExchangeMove::DifferentSlice { slices, .. } => slices.to_vec(),
        }
    }

    /// True when `m` holds the levels this move expects to replace.
    pub fn matches(&self, m: &LevelMatrix) -> bool {
        match *self {
            ExchangeMove::WithinSlice {
                column,
                rows,
                levels,
                ..
            }
            | ExchangeMove::DifferentSlice {
                column,
                rows,
                levels,
                ..
            } => m.get(rows[0], column) == levels[0] && m.get(rows[1], column) == levels[1],
            ExchangeMove::OutSlice {
                column,
                row,
                old_level,
                ..
            } => m.get(row, column) == old_level,
        }
    }

    pub fn apply(&self, m: &mut LevelMatrix) -> Result<(), MoveError> {
        match *self {
            ExchangeMove::WithinSlice {
                column,
                rows,
                levels,
                ..
            }
            | ExchangeMove::DifferentSlice {
                column,
                rows,
                levels,
                ..
            } => {
                if m.get(rows[0], column) != levels[0] || m.get(rows[1], column) != levels[1] {
                    return Err(MoveError::Stale);
                }
                m.set(rows[0], column, levels[1]);
                m.set(rows[1], column, levels[0]);
            }
            ExchangeMove::OutSlice {
                column,
                row,
                old_level,
                new_level,
                ..
            } => {
                if m.get(row, column) != old_level {
                    return Err(MoveError::Stale);
                }
                m.set(row, column, new_level);
            }
        }
        Ok(())
    }

    pub fn revert(&self, m: &mut LevelMatrix) -> Result<(), MoveError> {
        match *self {
            ExchangeMove::WithinSlice {
                column,
                rows,
                levels,
                ..
            }
            | ExchangeMove::DifferentSlice {
                column,
                rows,
                levels,
                ..
            } => {
                if m.get(rows[0], column) != levels[1] || m.get(rows[1], column) != levels[0] {
                    return Err(MoveError::Stale);
                }
                m.set(rows[0], column, levels[0]);
                m.set(rows[1], column, levels[1]);
            }
            ExchangeMove::OutSlice {
                column,
                row,
                old_level,
                new_level,
                ..
            } => {
                if m.get(row, column) != new_level {
                    return Err(MoveError::Stale);
                }
                m.set(row, column, old_level);
            }
        }
        Ok(())
    }
}

fn slices_of(
    m: &LevelMatrix,
    column: usize,
    r: usize,
    s: usize,
) -> Result<(usize, usize), MoveError> {
    let spec = m.spec();
    if column >= spec.factors() {
        return Err(MoveError::OutOfRange);
    }
    let sr = spec.slice_of_row(r).map_err(|_| MoveError::OutOfRange)?;
    let ss = spec.slice_of_row(s).map_err(|_| MoveError::OutOfRange)?;
    Ok((sr, ss))
}

/// `ρ(b)` and `σ(b)` for one entry `b`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TauSet {
    /// Later-slice levels with the row holding them, ascending by level.
    pub rho: Vec<(u64, usize)>,
    /// Unused levels, ascending.
    pub sigma: Vec<u64>,
}

impl TauSet {
    /// `τ(b)` as a sorted list of levels.
    pub fn levels(&self) -> Vec<u64> {
        let mut all: Vec<u64> = self
            .rho
            .iter()
            .map(|&(l, _)| l)
            .chain(self.sigma.iter().copied())
            .collect();
        all.sort_unstable();
        all
    }
}

/// Candidate sets for the entry at `row` (which must lie in `slice`).
///
/// Scans the bin `R` of `b` at scale `t^i`. A level held by a later slice
/// `i'` is admissible iff it shares `b`'s bin at scale `t^{i'}`, so that slice
/// stays a Latin hypercube after the swap. An unused level is admissible iff
/// it shares `b`'s bin at the whole-design scale `t'`. Slice `i` is unaffected
/// in both cases because every level in `R` has the same slice-`i` bin.
fn tau_for_row(m: &LevelMatrix, slice: usize, column: usize, row: usize) -> TauSet {
    let spec = m.spec();
    let b = m.get(row, column);
    let ti = spec.slice_scale(slice);
    let tp = spec.run_scale();
    let bin = ceil_div(b, ti);
    let lo = (bin - 1) * ti + 1;

    let mut occupant: Vec<Option<usize>> = vec![None; ti as usize];
    for r in 0..spec.runs() {
        let level = m.get(r, column);
        if level >= lo && level < lo + ti {
            occupant[(level - lo) as usize] = Some(r);
        }
    }
    let later = spec.slice_rows(slice).end;
    let is_last = slice + 1 == spec.num_slices();
    let mut tau = TauSet::default();
    for (offset, occ) in occupant.iter().enumerate() {
        let level = lo + offset as u64;
        if level == b {
            continue;
        }
        match *occ {
            Some(r) if r >= later && !is_last => {
                let other = spec.slice_of_row(r).expect("row within range");
                let t_other = spec.slice_scale(other);
                if ceil_div(level, t_other) == ceil_div(b, t_other) {
                    tau.rho.push((level, r));
                }
            }
            Some(_) => {}
            None => {
                if ceil_div(level, tp) == ceil_div(b, tp) {
                    tau.sigma.push(level);
                }
            }
        }
    }
    tau
}

/// `τ(b)` for level `b` in `slice` of `column`.
pub fn tau_candidates(
    m: &LevelMatrix,
    slice: usize,
    column: usize,
    b: u64,
) -> Result<TauSet, MoveError> {
    let spec = m.spec();
    if slice >= spec.num_slices() || column >= spec.factors() {
        return Err(MoveError::OutOfRange);
    }
    let row = spec
        .slice_rows(slice)
        .find(|&r| m.get(r, column) == b)
        .ok_or(MoveError::LevelNotFound {
            level: b,
            slice,
            column,
        })?;
    Ok(tau_for_row(m, slice, column, row))
}

/// Number of random `(column, b)` draws before giving up on a different- or
/// out-slice move.
pub fn attempt_budget(factors: usize) -> usize {
    10 * factors
}

fn pick_column<R: Rng + ?Sized>(m: &LevelMatrix, column: Option<usize>, rng: &mut R) -> usize {
    column.unwrap_or_else(|| rng.random_range(0..m.spec().factors()))
}

/// Random swap of two entries of `slice`. `column = None` draws the column
/// uniformly.
pub fn within_slice_neighbor<R: Rng + ?Sized>(
    m: &LevelMatrix,
    slice: usize,
    column: Option<usize>,
    rng: &mut R,
) -> Result<ExchangeMove, MoveError> {
    let rows = m.spec().slice_rows(slice);
    let ni = rows.len();
    if ni < 2 {
        return Err(MoveError::NoMove);
    }
    let column = pick_column(m, column, rng);
    let a = rng.random_range(0..ni);
    let mut b = rng.random_range(0..ni - 1);
    if b >= a {
        b += 1;
    }
    ExchangeMove::within_slice(m, column, rows.start + a, rows.start + b)
}

pub fn different_slice_neighbor<R: Rng + ?Sized>(
    m: &LevelMatrix,
    slice: usize,
    column: Option<usize>,
    rng: &mut R,
) -> Result<ExchangeMove, MoveError> {
    let spec = m.spec();
    if slice + 1 >= spec.num_slices() {
        return Err(MoveError::NoMove);
    }
    let rows = spec.slice_rows(slice);
    for _ in 0..attempt_budget(spec.factors()) {
        let col = pick_column(m, column, rng);
        let row = rng.random_range(rows.clone());
        let tau = tau_for_row(m, slice, col, row);
        if let Some(&(_, other)) = tau.rho.choose(rng) {
            return ExchangeMove::different_slice(m, col, row, other);
        }
    }
    Err(MoveError::NoMove)
}

pub fn out_slice_neighbor<R: Rng + ?Sized>(
    m: &LevelMatrix,
    slice: usize,
    column: Option<usize>,
    rng: &mut R,
) -> Result<ExchangeMove, MoveError> {
    let spec = m.spec();
    let rows = spec.slice_rows(slice);
    for _ in 0..attempt_budget(spec.factors()) {
        let col = pick_column(m, column, rng);
        let row = rng.random_range(rows.clone());
        let tau = tau_for_row(m, slice, col, row);
        if let Some(&level) = tau.sigma.choose(rng) {
            return ExchangeMove::out_slice(m, col, row, level);
        }
    }
    Err(MoveError::NoMove)
}

pub fn random_neighbor<R: Rng + ?Sized>(
    kind: MoveKind,
    m: &LevelMatrix,
    slice: usize,
    column: Option<usize>,
    rng: &mut R,
) -> Result<ExchangeMove, MoveError> {
    match kind {
        MoveKind::WithinSlice => within_slice_neighbor(m, slice, column, rng),
        MoveKind::DifferentSlice => different_slice_neighbor(m, slice, column, rng),
        MoveKind::OutSlice => out_slice_neighbor(m, slice, column, rng),
    }
}

/// Sizes of the three neighborhoods of `slice`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborCounts {
    pub within: usize,
    pub different: usize,
    pub out: usize,
}

pub fn count_neighbors(m: &LevelMatrix, slice: usize) -> NeighborCounts {
    let spec = m.spec();
    let ni = spec.slice_size(slice);
    let mut counts = NeighborCounts {
        within: spec.factors() * ni * (ni - 1) / 2,
        different: 0,
        out: 0,
    };
    for column in 0..spec.factors() {
        for row in spec.slice_rows(slice) {
            let tau = tau_for_row(m, slice, column, row);
            counts.different += tau.rho.len();
            counts.out += tau.sigma.len();
        }
    }
    counts
}
