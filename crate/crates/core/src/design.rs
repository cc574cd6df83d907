//! Problem-instance types: the slice specification, the integer level matrix
//! (FSLH) and the real-valued design matrix derived from it.
//!
//! Rows are stored slice-major: slice 0 occupies rows `0..n_0`, slice 1 the
//! next `n_1` rows and so on. Slice membership is positional. All indices in
//! this module are 0-based.

use std::fmt;
use std::ops::Range;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    #[error("a design needs at least one slice")]
    NoSlices,
    #[error("slice {slice} has zero runs")]
    EmptySlice { slice: usize },
    #[error("a design needs at least one factor")]
    NoFactors,
    #[error("least common multiple of the run sizes overflows u64")]
    LcmOverflow,
    #[error("expected {expected} entries for an {rows}x{cols} matrix, got {actual}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        expected: usize,
        actual: usize,
    },
    #[error("level {level} at row {row}, column {column} is outside 1..={max}")]
    LevelOutOfRange {
        row: usize,
        column: usize,
        level: u64,
        max: u64,
    },
    #[error("coordinate {value} at row {row}, column {column} is outside (0, 1]")]
    CoordinateOutOfRange {
        row: usize,
        column: usize,
        value: f64,
    },
    #[error("row {row} is out of range for a design with {runs} runs")]
    RowOutOfRange { row: usize, runs: usize },
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

/// Least common multiple, `None` on overflow.
pub fn lcm(a: u64, b: u64) -> Option<u64> {
    if a == 0 || b == 0 {
        return Some(0);
    }
    (a / gcd(a, b)).checked_mul(b)
}

#[inline]
pub(crate) fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Run sizes `n_1..n_u` and factor count `q`, plus the derived constants
/// `n = Σ n_i`, `L = lcm(n_1, …, n_u, n)`, `t^i = L / n_i` and `t' = L / n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SliceSpec {
    slice_sizes: Vec<usize>,
    factors: usize,
    runs: usize,
    lcm: u64,
    offsets: Vec<usize>,
}

impl SliceSpec {
    pub fn new(slice_sizes: Vec<usize>, factors: usize) -> Result<Self, DesignError> {
        if slice_sizes.is_empty() {
            return Err(DesignError::NoSlices);
        }
        if let Some(slice) = slice_sizes.iter().position(|&s| s == 0) {
            return Err(DesignError::EmptySlice { slice });
        }
        if factors == 0 {
            return Err(DesignError::NoFactors);
        }
        let runs: usize = slice_sizes.iter().sum();
        let mut l = runs as u64;
        for &s in &slice_sizes {
            l = lcm(l, s as u64).ok_or(DesignError::LcmOverflow)?;
        }
        let mut offsets = Vec::with_capacity(slice_sizes.len() + 1);
        offsets.push(0);
        let mut acc = 0;
        for &s in &slice_sizes {
            acc += s;
            offsets.push(acc);
        }
        Ok(Self {
            slice_sizes,
            factors,
            runs,
            lcm: l,
            offsets,
        })
    }

    pub fn slice_sizes(&self) -> &[usize] {
        &self.slice_sizes
    }

    pub fn slice_size(&self, slice: usize) -> usize {
        self.slice_sizes[slice]
    }

    pub fn num_slices(&self) -> usize {
        self.slice_sizes.len()
    }

    pub fn factors(&self) -> usize {
        self.factors
    }

    /// Total run count `n`.
    pub fn runs(&self) -> usize {
        self.runs
    }

    /// `L = lcm(n_1, …, n_u, n)`, the number of available levels per column.
    pub fn lcm(&self) -> u64 {
        self.lcm
    }

    /// `t^i = L / n_i`, the width of one slice-level bin.
    pub fn slice_scale(&self, slice: usize) -> u64 {
        self.lcm / self.slice_sizes[slice] as u64
    }

    /// `t' = L / n`, the width of one whole-design bin.
    pub fn run_scale(&self) -> u64 {
        self.lcm / self.runs as u64
    }

    pub fn slice_rows(&self, slice: usize) -> Range<usize> {
        self.offsets[slice]..self.offsets[slice + 1]
    }

    pub fn slice_of_row(&self, row: usize) -> Result<usize, DesignError> {
        if row >= self.runs {
            return Err(DesignError::RowOutOfRange {
                row,
                runs: self.runs,
            });
        }
        // offsets is strictly increasing, so the partition point is unique.
        Ok(self.offsets.partition_point(|&o| o <= row) - 1)
    }

    /// Slice weights `λ_i = n_i / n`.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.runs as f64;
        self.slice_sizes.iter().map(|&s| s as f64 / n).collect()
    }

    /// Short label in the usual `FSLHD(n_1,…,n_u;u,q)` notation.
    pub fn label(&self) -> String {
        let sizes: Vec<String> = self.slice_sizes.iter().map(|s| s.to_string()).collect();
        format!(
            "FSLHD({};{},{})",
            sizes.join(","),
            self.num_slices(),
            self.factors
        )
    }
}

/// Where a structural check failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructureViolation {
    pub column: usize,
    /// `None` when the whole-design condition fails.
    pub slice: Option<usize>,
}

impl fmt::Display for StructureViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // 1-based for humans.
        match self.slice {
            Some(s) => write!(f, "slice {}, column {}", s + 1, self.column + 1),
            None => write!(f, "whole design, column {}", self.column + 1),
        }
    }
}

fn is_permutation(values: impl Iterator<Item = u64>, k: usize) -> bool {
    let mut seen = vec![false; k];
    let mut count = 0;
    for v in values {
        if v == 0 || v as usize > k || seen[v as usize - 1] {
            return false;
        }
        seen[v as usize - 1] = true;
        count += 1;
    }
    count == k
}

/// The integer level matrix of a flexible sliced Latin hypercube.
///
/// Entries lie in `1..=L`. Freshly constructed matrices only use multiples of
/// `t'`; out-slice exchanges may introduce any other level of the same bin.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LevelMatrix {
    spec: SliceSpec,
    levels: Vec<u64>,
}

impl LevelMatrix {
    /// Row-major `n × q` levels.
    pub fn new(spec: SliceSpec, levels: Vec<u64>) -> Result<Self, DesignError> {
        let (rows, cols) = (spec.runs(), spec.factors());
        if levels.len() != rows * cols {
            return Err(DesignError::ShapeMismatch {
                rows,
                cols,
                expected: rows * cols,
                actual: levels.len(),
            });
        }
        let max = spec.lcm();
        if let Some(idx) = levels.iter().position(|&l| l == 0 || l > max) {
            return Err(DesignError::LevelOutOfRange {
                row: idx / cols,
                column: idx % cols,
                level: levels[idx],
                max,
            });
        }
        Ok(Self { spec, levels })
    }

    /// Builds a matrix from column vectors, each of length `n`.
    pub fn from_columns(spec: SliceSpec, columns: &[Vec<u64>]) -> Result<Self, DesignError> {
        let (rows, cols) = (spec.runs(), spec.factors());
        if columns.len() != cols || columns.iter().any(|c| c.len() != rows) {
            return Err(DesignError::ShapeMismatch {
                rows,
                cols,
                expected: rows * cols,
                actual: columns.iter().map(Vec::len).sum(),
            });
        }
        let mut levels = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in columns {
                levels.push(c[r]);
            }
        }
        Self::new(spec, levels)
    }

    pub fn spec(&self) -> &SliceSpec {
        &self.spec
    }

    #[inline]
    pub fn get(&self, row: usize, column: usize) -> u64 {
        self.levels[row * self.spec.factors() + column]
    }

    #[inline]
    pub(crate) fn set(&mut self, row: usize, column: usize, level: u64) {
        let q = self.spec.factors();
        self.levels[row * q + column] = level;
    }

    pub fn row(&self, row: usize) -> &[u64] {
        let q = self.spec.factors();
        &self.levels[row * q..(row + 1) * q]
    }

    pub fn column(&self, column: usize) -> Vec<u64> {
        (0..self.spec.runs()).map(|r| self.get(r, column)).collect()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.levels
    }

    /// Returns the first violated condition, checking every column for
    /// the whole-design condition and then every slice.
    pub fn check_structure(&self) -> Result<(), StructureViolation> {
        let spec = &self.spec;
        let n = spec.runs();
        let tp = spec.run_scale();
        for column in 0..spec.factors() {
            if !is_permutation((0..n).map(|r| ceil_div(self.get(r, column), tp)), n) {
                return Err(StructureViolation {
                    column,
                    slice: None,
                });
            }
            for slice in 0..spec.num_slices() {
                let ti = spec.slice_scale(slice);
                let rows = spec.slice_rows(slice);
                let ok = is_permutation(
                    rows.map(|r| ceil_div(self.get(r, column), ti)),
                    spec.slice_size(slice),
                );
                if !ok {
                    return Err(StructureViolation {
                        column,
                        slice: Some(slice),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_design(&self, jitter: JitterMode, seed: u64) -> DesignMatrix {
        let l = self.spec.lcm() as f64;
        let points = match jitter {
            JitterMode::Midpoint => self.levels.iter().map(|&m| midpoint(m, l)).collect(),
            JitterMode::Uniform => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                self.levels
                    .iter()
                    .map(|&m| {
                        let eps: f64 = rng.sample(Open01);
                        (m as f64 - eps) / l
                    })
                    .collect()
            }
        };
        DesignMatrix {
            spec: self.spec.clone(),
            points,
            jitter: Some(jitter),
        }
    }
}

/// `(m − ½) / L`, the coordinate used for every criterion evaluation.
#[inline]
pub fn midpoint(level: u64, lcm: f64) -> f64 {
    (level as f64 - 0.5) / lcm
}

/// Both sliced Latin hypercube conditions hold in every column.
pub fn validate_sliced_structure(m: &LevelMatrix) -> bool {
    m.check_structure().is_ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JitterMode {
    /// `ε = ½` everywhere.
    Midpoint,
    /// `ε ~ U(0, 1)` drawn independently per entry.
    Uniform,
}

/// Borrowed row-major block of points.
#[derive(Debug, Clone, Copy)]
pub struct PointSet<'a> {
    data: &'a [f64],
    dims: usize,
}

impl<'a> PointSet<'a> {
    pub fn new(data: &'a [f64], dims: usize) -> Self {
        assert!(
            dims > 0 && data.len().is_multiple_of(dims),
            "ragged point set"
        );
        Self { data, dims }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &'a [f64]> + 'a {
        self.data.chunks_exact(self.dims)
    }
}

/// Real-valued design in `(0, 1]^q` with slice boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    spec: SliceSpec,
    points: Vec<f64>,
    /// `None` for designs read back from disk.
    jitter: Option<JitterMode>,
}

impl DesignMatrix {
    pub fn from_points(spec: SliceSpec, points: Vec<f64>) -> Result<Self, DesignError> {
        let (rows, cols) = (spec.runs(), spec.factors());
        if points.len() != rows * cols {
            return Err(DesignError::ShapeMismatch {
                rows,
                cols,
                expected: rows * cols,
                actual: points.len(),
            });
        }
        if let Some(idx) = points.iter().position(|&x| !(x > 0.0 && x <= 1.0)) {
            return Err(DesignError::CoordinateOutOfRange {
                row: idx / cols,
                column: idx % cols,
                value: points[idx],
            });
        }
        Ok(Self {
            spec,
            points,
            jitter: None,
        })
    }

    pub fn spec(&self) -> &SliceSpec {
        &self.spec
    }

    pub fn jitter(&self) -> Option<JitterMode> {
        self.jitter
    }

    pub fn get(&self, row: usize, column: usize) -> f64 {
        self.points[row * self.spec.factors() + column]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }

    pub fn whole(&self) -> PointSet<'_> {
        PointSet::new(&self.points, self.spec.factors())
    }

    pub fn slice(&self, slice: usize) -> PointSet<'_> {
        let q = self.spec.factors();
        let rows = self.spec.slice_rows(slice);
        PointSet::new(&self.points[rows.start * q..rows.end * q], q)
    }

    /// Interval-occupancy check: one point per `((k−1)/n, k/n]` in every
    /// column, and one slice point per `((k−1)/n_i, k/n_i]`.
    pub fn check_structure(&self) -> Result<(), StructureViolation> {
        let spec = &self.spec;
        let bin = |x: f64, k: usize| (x * k as f64).ceil().max(1.0) as u64;
        for column in 0..spec.factors() {
            let n = spec.runs();
            if !is_permutation((0..n).map(|r| bin(self.get(r, column), n)), n) {
                return Err(StructureViolation {
                    column,
                    slice: None,
                });
            }
            for slice in 0..spec.num_slices() {
                let k = spec.slice_size(slice);
                let ok = is_permutation(
                    spec.slice_rows(slice).map(|r| bin(self.get(r, column), k)),
                    k,
                );
                if !ok {
                    return Err(StructureViolation {
                        column,
                        slice: Some(slice),
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn example1_column() -> Vec<u64> {
        vec![50, 35, 15, 25, 40, 10, 55, 30, 45, 60, 5, 20]
    }

    #[test]
    fn derived_constants() {
        let spec = SliceSpec::new(vec![3, 4, 5], 1).unwrap();
        assert_eq!(spec.runs(), 12);
        assert_eq!(spec.lcm(), 60);
        assert_eq!(spec.run_scale(), 5);
        assert_eq!(spec.slice_scale(0), 20);
        assert_eq!(spec.slice_scale(2), 12);
        assert_eq!(spec.slice_rows(1), 3..7);
        assert_eq!(spec.label(), "FSLHD(3,4,5;3,1)");
    }

    #[test]
    fn rejects_bad_specs() {
        assert_eq!(SliceSpec::new(vec![], 2), Err(DesignError::NoSlices));
        assert_eq!(
            SliceSpec::new(vec![3, 0], 2),
            Err(DesignError::EmptySlice { slice: 1 })
        );
        assert_eq!(SliceSpec::new(vec![3], 0), Err(DesignError::NoFactors));
    }

    #[test]
    fn slice_of_row_examples() {
        let spec = SliceSpec::new(vec![3, 4, 5], 1).unwrap();
        assert_eq!(spec.slice_of_row(3), Ok(1));
        assert_eq!(spec.slice_of_row(11), Ok(2));
        assert_eq!(spec.slice_of_row(0), Ok(0));
        assert!(matches!(
            spec.slice_of_row(12),
            Err(DesignError::RowOutOfRange { .. })
        ));
        let single = SliceSpec::new(vec![10], 1).unwrap();
        assert_eq!(single.slice_of_row(6), Ok(0));
    }

    #[test]
    fn example1_column_is_valid() {
        let spec = SliceSpec::new(vec![3, 4, 5], 1).unwrap();
        let m = LevelMatrix::new(spec, example1_column()).unwrap();
        assert!(validate_sliced_structure(&m));
    }

    #[test]
    fn identity_column_single_slice() {
        let spec = SliceSpec::new(vec![7], 1).unwrap();
        let tp = spec.run_scale();
        let m = LevelMatrix::new(spec, (1..=7).map(|k| k * tp).collect()).unwrap();
        assert!(validate_sliced_structure(&m));
    }

    /// Counts slice points per interval directly on the midpoint design.
    fn brute_force_occupancy(m: &LevelMatrix) -> bool {
        let d = m.to_design(JitterMode::Midpoint, 0);
        let spec = m.spec();
        let mut ok = true;
        for c in 0..spec.factors() {
            let n = spec.runs();
            for k in 1..=n {
                let lo = (k - 1) as f64 / n as f64;
                let hi = k as f64 / n as f64;
                let cnt = (0..n)
                    .filter(|&r| d.get(r, c) > lo && d.get(r, c) <= hi)
                    .count();
                ok &= cnt == 1;
            }
            for s in 0..spec.num_slices() {
                let ni = spec.slice_size(s);
                for k in 1..=ni {
                    let lo = (k - 1) as f64 / ni as f64;
                    let hi = k as f64 / ni as f64;
                    let cnt = spec
                        .slice_rows(s)
                        .filter(|&r| d.get(r, c) > lo && d.get(r, c) <= hi)
                        .count();
                    ok &= cnt == 1;
                }
            }
        }
        ok
    }

    #[test]
    fn swapped_across_slices_matches_brute_force() {
        let spec = SliceSpec::new(vec![3, 4, 5], 1).unwrap();
        let mut col = example1_column();
        // Row 0 is in the first slice, row 7 in the third.
        col.swap(0, 7);
        let m = LevelMatrix::new(spec.clone(), col).unwrap();
        assert_eq!(validate_sliced_structure(&m), brute_force_occupancy(&m));
        assert!(!validate_sliced_structure(&m));

        let mut col = example1_column();
        col.swap(0, 1);
        let m = LevelMatrix::new(spec, col).unwrap();
        assert_eq!(validate_sliced_structure(&m), brute_force_occupancy(&m));
    }

    #[test]
    fn violation_location() {
        let spec = SliceSpec::new(vec![3, 4, 5], 1).unwrap();
        let mut col = example1_column();
        col[0] = 45; // duplicates row 8
        let m = LevelMatrix::new(spec, col).unwrap();
        assert_eq!(
            m.check_structure(),
            Err(StructureViolation {
                column: 0,
                slice: None
            })
        );
    }

    #[test]
    fn shape_and_range_errors() {
        let spec = SliceSpec::new(vec![2, 2], 2).unwrap();
        assert!(matches!(
            LevelMatrix::new(spec.clone(), vec![1, 2, 3]),
            Err(DesignError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            LevelMatrix::new(spec, vec![1, 2, 3, 4, 4, 3, 2, 0]),
            Err(DesignError::LevelOutOfRange {
                row: 3,
                column: 1,
                ..
            })
        ));
    }

    #[test]
    fn midpoint_substitution() {
        assert!((midpoint(50, 60.0) - 0.825).abs() < 1e-15);
        let spec = SliceSpec::new(vec![3, 4, 5], 1).unwrap();
        let m = LevelMatrix::new(spec, example1_column()).unwrap();
        let d = m.to_design(JitterMode::Midpoint, 0);
        for (i, &lv) in example1_column().iter().enumerate() {
            assert_eq!(d.get(i, 0), (lv as f64 - 0.5) / 60.0);
        }
        assert!(d.check_structure().is_ok());
    }

    #[test]
    fn uniform_jitter_is_seeded() {
        let spec = SliceSpec::new(vec![3, 4, 5], 1).unwrap();
        let m = LevelMatrix::new(spec, example1_column()).unwrap();
        let a = m.to_design(JitterMode::Uniform, 11);
        let b = m.to_design(JitterMode::Uniform, 11);
        let c = m.to_design(JitterMode::Uniform, 12);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.check_structure().is_ok());
    }

    proptest! {
        #[test]
        fn lcm_divisible_by_all(sizes in prop::collection::vec(1usize..=40, 1..6)) {
            let spec = SliceSpec::new(sizes.clone(), 1).unwrap();
            for &s in &sizes {
                prop_assert_eq!(spec.lcm() % s as u64, 0);
            }
            prop_assert_eq!(spec.lcm() % spec.runs() as u64, 0);
            let covered: usize = (0..spec.num_slices()).map(|i| spec.slice_rows(i).len()).sum();
            prop_assert_eq!(covered, spec.runs());
        }
    }
}
