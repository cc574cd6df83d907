//! Sliced Latin hypercube designs with arbitrary slice run sizes.
//!
//! A design with slices of `n_1, …, n_u` runs and `q` factors is held as an
//! integer [`LevelMatrix`] on the grid `{1, …, L}` with `L = lcm(n_1, …, n_u, n)`.
//! [`construction`] builds random designs, [`criteria`] scores them and
//! [`sese`] and [`twopart`] optimize them with structure-preserving
//! [`neighborhood`] moves.
//!
//! Row, column and slice indices are 0-based throughout the library.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod construction;
pub mod criteria;
pub mod design;
pub mod neighborhood;
pub mod sese;
pub mod state;
pub mod twopart;

pub use construction::{assign_slices, generate_level_matrix, SliceAssignment};
pub use criteria::{csm, CriterionConfig, CriterionKind, CriterionValue};
pub use design::{validate_sliced_structure, DesignMatrix, JitterMode, LevelMatrix, SliceSpec};
pub use neighborhood::{tau_candidates, ExchangeMove, MoveKind};
pub use sese::{sese_optimize, SeseOutcome, SeseParams};
pub use state::DesignState;
pub use twopart::{part1, part2, repeating_count, two_part, TwoPartOutcome, TwoPartParams};
