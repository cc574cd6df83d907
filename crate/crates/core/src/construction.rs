//! Random construction of flexible sliced Latin hypercubes.
//!
//! Each column is built in two phases. The deterministic phase partitions
//! `{1, …, n}` into index sets `H^1, …, H^u` such that `⌈n_i h / n⌉` runs
//! over `{1, …, n_i}` exactly once for `h ∈ H^i`. The random phase permutes
//! every `H^i` and scales by `L / n`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::design::{ceil_div, LevelMatrix, SliceSpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConstructionError {
    #[error("expected {expected} slice permutations, got {actual}")]
    PermutationCount { expected: usize, actual: usize },
    #[error("permutation for slice {slice} is not a reordering of its index set")]
    NotAPermutation { slice: usize },
}

/// Output of the deterministic phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceAssignment {
    /// `H^i` for every slice, ascending.
    pub index_sets: Vec<Vec<usize>>,
    /// `θ_1..θ_n`.
    pub theta: Vec<usize>,
}

impl SliceAssignment {
    /// Checks the partition and per-slice bin conditions.
    pub fn is_consistent(&self, spec: &SliceSpec) -> bool {
        index_sets_consistent(spec, &self.index_sets)
            && self.theta.iter().sum::<usize>() == spec.runs()
    }
}

fn index_sets_consistent(spec: &SliceSpec, index_sets: &[Vec<usize>]) -> bool {
    let n = spec.runs();
    if index_sets.len() != spec.num_slices() {
        return false;
    }
    let mut seen = vec![false; n];
    for (i, set) in index_sets.iter().enumerate() {
        let ni = spec.slice_size(i);
        if set.len() != ni {
            return false;
        }
        let mut bins = vec![false; ni];
        for &h in set {
            if h == 0 || h > n || seen[h - 1] {
                return false;
            }
            seen[h - 1] = true;
            let k = ceil_div((ni * h) as u64, n as u64) as usize;
            if bins[k - 1] {
                return false;
            }
            bins[k - 1] = true;
        }
    }
    seen.iter().all(|&s| s)
}

/// Deterministic slice assignment (index sets `H^i` and counts `θ_j`).
///
/// # Panics
///
/// Panics if no candidate index exists at some step, which cannot happen for
/// a valid [`SliceSpec`].
pub fn assign_slices(spec: &SliceSpec) -> SliceAssignment {
    let n = spec.runs();
    let u = spec.num_slices();
    let bin = |ni: usize, j: usize| ceil_div((ni * j) as u64, n as u64) as usize;

    let mut index_sets = vec![Vec::new(); u];
    let mut theta = Vec::with_capacity(n);
    let mut pool = BTreeSet::new();
    for j in 1..=n {
        pool.insert(j);
        // Slices whose bin index steps up between j and j + 1, ascending by p.
        let stepping: Vec<usize> = (0..u)
            .filter(|&p| {
                let np = spec.slice_size(p);
                bin(np, j + 1) - bin(np, j) == 1
            })
            .collect();
        theta.push(stepping.len());
        for &l in &stepping {
            let nl = spec.slice_size(l);
            let target = bin(nl, j);
            let r = *pool
                .iter()
                .find(|&&r| bin(nl, r) == target)
                .unwrap_or_else(|| {
                    panic!("slice assignment found no candidate at j={j}, slice={l}")
                });
            pool.remove(&r);
            index_sets[l].push(r);
        }
    }
    assert!(pool.is_empty(), "slice assignment left unassigned indices");
    for set in &mut index_sets {
        set.sort_unstable();
    }
    SliceAssignment { index_sets, theta }
}

/// Assembles one level column from explicit orderings `h^1, …, h^u` of the
/// index sets.
pub fn column_from_permutations(
    spec: &SliceSpec,
    assignment: &SliceAssignment,
    permutations: &[Vec<usize>],
) -> Result<Vec<u64>, ConstructionError> {
    let u = spec.num_slices();
    if permutations.len() != u {
        return Err(ConstructionError::PermutationCount {
            expected: u,
            actual: permutations.len(),
        });
    }
    let tp = spec.run_scale();
    let mut column = Vec::with_capacity(spec.runs());
    for (slice, (perm, set)) in permutations.iter().zip(&assignment.index_sets).enumerate() {
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        if &sorted != set {
            return Err(ConstructionError::NotAPermutation { slice });
        }
        column.extend(perm.iter().map(|&h| h as u64 * tp));
    }
    Ok(column)
}

fn random_column<R: Rng + ?Sized>(
    spec: &SliceSpec,
    assignment: &SliceAssignment,
    rng: &mut R,
) -> Vec<u64> {
    let tp = spec.run_scale();
    let mut column = Vec::with_capacity(spec.runs());
    for set in &assignment.index_sets {
        let mut h = set.clone();
        h.shuffle(rng);
        column.extend(h.iter().map(|&x| x as u64 * tp));
    }
    column
}

/// Per-column random stream: column `c` draws from stream `c` of the seed.
pub(crate) fn column_rng(seed: u64, column: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(column as u64);
    rng
}

/// Random level matrix, every column generated independently.
pub fn generate_level_matrix(spec: &SliceSpec, seed: u64) -> LevelMatrix {
    let assignment = assign_slices(spec);
    let columns: Vec<Vec<u64>> = (0..spec.factors())
        .map(|c| random_column(spec, &assignment, &mut column_rng(seed, c)))
        .collect();
    LevelMatrix::from_columns(spec.clone(), &columns)
        .expect("constructed columns always have the declared shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::validate_sliced_structure;

    #[test]
    fn example1_assignment() {
        let spec = SliceSpec::new(vec![3, 4, 5], 1).unwrap();
        let a = assign_slices(&spec);
        assert_eq!(a.theta, vec![0, 1, 1, 2, 0, 1, 1, 1, 2, 0, 0, 3]);
        assert_eq!(
            a.index_sets,
            vec![vec![3, 7, 10], vec![2, 5, 8, 11], vec![1, 4, 6, 9, 12]]
        );
        assert!(a.is_consistent(&spec));
    }

    #[test]
    fn single_slice_takes_everything() {
        let spec = SliceSpec::new(vec![9], 2).unwrap();
        let a = assign_slices(&spec);
        assert_eq!(a.theta, vec![1; 9]);
        assert_eq!(a.index_sets, vec![(1..=9).collect::<Vec<_>>()]);
    }

    /// Exhaustive oracle: every partition of {1..n} into sets of the given
    /// sizes that satisfies the bin condition.
    fn consistent_partitions(spec: &SliceSpec) -> Vec<Vec<Vec<usize>>> {
        fn rec(
            spec: &SliceSpec,
            idx: usize,
            sets: &mut Vec<Vec<usize>>,
            out: &mut Vec<Vec<Vec<usize>>>,
        ) {
            let n = spec.runs();
            if idx > n {
                if index_sets_consistent(spec, sets) {
                    out.push(sets.clone());
                }
                return;
            }
            for s in 0..sets.len() {
                if sets[s].len() < spec.slice_size(s) {
                    sets[s].push(idx);
                    rec(spec, idx + 1, sets, out);
                    sets[s].pop();
                }
            }
        }
        let mut out = Vec::new();
        rec(spec, 1, &mut vec![Vec::new(); spec.num_slices()], &mut out);
        out
    }

    #[test]
    fn two_by_two_assignment() {
        let spec = SliceSpec::new(vec![2, 2], 1).unwrap();
        let a = assign_slices(&spec);
        assert_eq!(a.theta, vec![0, 2, 0, 2]);
        assert_eq!(a.index_sets, vec![vec![1, 3], vec![2, 4]]);
        let all = consistent_partitions(&spec);
        assert!(all.contains(&a.index_sets));
    }

    #[test]
    fn exhaustive_small_specs_are_consistent() {
        for sizes in [
            vec![1, 2],
            vec![2, 3],
            vec![1, 1, 2],
            vec![3, 4],
            vec![2, 2, 3],
        ] {
            let spec = SliceSpec::new(sizes, 1).unwrap();
            let a = assign_slices(&spec);
            assert!(a.is_consistent(&spec));
            assert!(consistent_partitions(&spec).contains(&a.index_sets));
        }
    }

    #[test]
    fn one_run_slices() {
        let spec = SliceSpec::new(vec![1, 1], 1).unwrap();
        let a = assign_slices(&spec);
        assert_eq!(a.index_sets, vec![vec![1], vec![2]]);
        let m = generate_level_matrix(&spec, 3);
        assert_eq!(m.column(0), vec![1, 2]);
    }

    #[test]
    fn example1_forced_permutations() {
        let spec = SliceSpec::new(vec![3, 4, 5], 1).unwrap();
        let a = assign_slices(&spec);
        let col = column_from_permutations(
            &spec,
            &a,
            &[vec![10, 7, 3], vec![5, 8, 2, 11], vec![6, 9, 12, 1, 4]],
        )
        .unwrap();
        assert_eq!(col, vec![50, 35, 15, 25, 40, 10, 55, 30, 45, 60, 5, 20]);
        assert_eq!(
            column_from_permutations(&spec, &a, &[vec![10, 7, 4], vec![], vec![]]),
            Err(ConstructionError::NotAPermutation { slice: 0 })
        );
    }

    #[test]
    fn generated_matrix_is_valid_and_seeded() {
        let spec = SliceSpec::new(vec![4, 6], 2).unwrap();
        for seed in 0..20 {
            let m = generate_level_matrix(&spec, seed);
            assert!(validate_sliced_structure(&m));
        }
        assert_eq!(
            generate_level_matrix(&spec, 5),
            generate_level_matrix(&spec, 5)
        );
        assert_ne!(
            generate_level_matrix(&spec, 5),
            generate_level_matrix(&spec, 6)
        );
    }

    #[test]
    fn assignment_is_pure() {
        let spec = SliceSpec::new(vec![5, 7, 2], 3).unwrap();
        assert_eq!(assign_slices(&spec), assign_slices(&spec));
    }

    #[test]
    fn marginal_levels_roughly_uniform() {
        // Chi-square sanity check on the first row of column 0.
        let spec = SliceSpec::new(vec![2, 4], 1).unwrap();
        let trials = 6000;
        let mut counts = std::collections::HashMap::new();
        for seed in 0..trials {
            let m = generate_level_matrix(&spec, seed);
            *counts.entry(m.get(0, 0)).or_insert(0usize) += 1;
        }
        // Row 0 belongs to slice 0 whose index set has two elements.
        assert_eq!(counts.len(), 2);
        let expected = trials as f64 / 2.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 10.8, "chi2 = {chi2}");
    }
}
