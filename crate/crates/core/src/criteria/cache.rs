use crate::design::{DesignMatrix, SliceSpec};

use super::{
    coord_pow, distance_pow, CriterionConfig, CriterionError, CriterionValue, ExtSum, PowerKernel,
};

/// Pairwise distance table with running `φ_t` power sums for the whole
/// design and every slice.
///
/// Exchanges touch one column of one or two rows, so only the distances from
/// those rows change. Each changed distance is updated from its cached value
/// through `h(r, s, k, v) = |x_sk − x_vk|^m − |x_rk − x_vk|^m`:
/// `d'(x_r, x_v)^m = d(x_r, x_v)^m + h` and `d'(x_s, x_v)^m = d(x_s, x_v)^m − h`.
#[derive(Debug, Clone)]
pub struct DistanceCache {
    spec: SliceSpec,
    config: CriterionConfig,
    dims: usize,
    points: Vec<f64>,
    slice_of: Vec<usize>,
    /// `d_ij^m`, full symmetric `n × n`.
    dist_pow: Vec<f64>,
    kernel: PowerKernel,
    whole: ExtSum,
    per_slice: Vec<ExtSum>,
}

/// Result of evaluating an exchange against the cache.
struct Pending {
    whole: ExtSum,
    per_slice: Vec<ExtSum>,
    /// `(row, other, new d^m)` when recording for a commit.
    updates: Vec<(usize, usize, f64)>,
}

enum Change {
    Swap { r: usize, s: usize },
    Replace { r: usize, value: f64 },
}

impl DistanceCache {
    pub fn new(design: &DesignMatrix, config: &CriterionConfig) -> Result<Self, CriterionError> {
        Self::from_points(design.spec().clone(), design.as_slice().to_vec(), config)
    }

    /// Row-major points, `n × q`, rows grouped slice-major.
    pub fn from_points(
        spec: SliceSpec,
        points: Vec<f64>,
        config: &CriterionConfig,
    ) -> Result<Self, CriterionError> {
        let n = spec.runs();
        let dims = spec.factors();
        assert_eq!(
            points.len(),
            n * dims,
            "point buffer does not match the spec"
        );
        for i in 0..spec.num_slices() {
            if spec.slice_size(i) < 2 {
                return Err(CriterionError::TooFewPoints {
                    needed: 2,
                    actual: spec.slice_size(i),
                    slice: Some(i),
                });
            }
        }
        let slice_of = (0..n).map(|r| spec.slice_of_row(r).unwrap()).collect();
        let mut cache = Self {
            per_slice: vec![ExtSum::default(); spec.num_slices()],
            spec,
            config: *config,
            dims,
            points,
            slice_of,
            dist_pow: vec![0.0; n * n],
            kernel: PowerKernel::new(config.t(), config.dist_power(), 1.0),
            whole: ExtSum::default(),
        };
        cache.resync()?;
        Ok(cache)
    }

    /// Recomputes every distance and power sum from the stored points.
    pub fn resync(&mut self) -> Result<(), CriterionError> {
        let n = self.spec.runs();
        let m = self.config.dist_power();
        let mut min = f64::INFINITY;
        for i in 0..n {
            self.dist_pow[i * n + i] = 0.0;
            for j in i + 1..n {
                let dm = distance_pow(self.point(i), self.point(j), m);
                self.dist_pow[i * n + j] = dm;
                self.dist_pow[j * n + i] = dm;
                min = min.min(dm);
            }
        }
        if !(min > 0.0) {
            return Err(CriterionError::Degenerate { slice: None });
        }
        let reference = if m == 1 { min } else { min.sqrt() };
        self.kernel = PowerKernel::new(self.config.t(), m, reference);
        (self.whole, self.per_slice) = self.sums_from(&self.dist_pow);
        Ok(())
    }

    pub fn spec(&self) -> &SliceSpec {
        &self.spec
    }

    pub fn config(&self) -> &CriterionConfig {
        &self.config
    }

    #[inline]
    pub fn point(&self, row: usize) -> &[f64] {
        &self.points[row * self.dims..(row + 1) * self.dims]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Cached inter-site distance `d_ij`.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let dm = self.dist_pow[i * self.spec.runs() + j];
        if self.config.dist_power() == 1 {
            dm
        } else {
            dm.sqrt()
        }
    }

    pub fn value(&self) -> Result<CriterionValue, CriterionError> {
        self.value_from(&self.whole, &self.per_slice)
    }

    fn value_from(
        &self,
        whole: &ExtSum,
        per_slice: &[ExtSum],
    ) -> Result<CriterionValue, CriterionError> {
        let w = whole.value();
        if !(w > 0.0) || !w.is_finite() {
            return Err(CriterionError::CacheCorrupted);
        }
        let mut slices = Vec::with_capacity(per_slice.len());
        for s in per_slice {
            let v = s.value();
            if !(v > 0.0) || !v.is_finite() {
                return Err(CriterionError::CacheCorrupted);
            }
            slices.push(self.kernel.finish(v));
        }
        Ok(CriterionValue::new(
            &self.spec,
            &self.config,
            self.kernel.finish(w),
            slices,
        ))
    }

    fn check_index(&self, row: usize, column: usize) -> Result<(), CriterionError> {
        if row >= self.spec.runs() || column >= self.dims {
            Err(CriterionError::IndexOutOfRange { row, column })
        } else {
            Ok(())
        }
    }

    fn check_swap(
        &self,
        r: usize,
        s: usize,
        k: usize,
        same_slice: bool,
    ) -> Result<(), CriterionError> {
        self.check_index(r, k)?;
        self.check_index(s, k)?;
        match (same_slice, self.slice_of[r] == self.slice_of[s]) {
            (true, false) => Err(CriterionError::NotSameSlice(r, s)),
            (false, true) => Err(CriterionError::SameSlice(r, s)),
            _ => Ok(()),
        }
    }

    fn evaluate(&self, change: &Change, k: usize, record: bool) -> Result<Pending, CriterionError> {
        let n = self.spec.runs();
        let m = self.config.dist_power();
        let mut whole = self.whole;
        let mut per_slice = self.per_slice.clone();
        let mut updates = Vec::with_capacity(2 * n);
        let coord = |row: usize| self.points[row * self.dims + k];

        let mut account =
            |row: usize, v: usize, old: f64, new: f64| -> Result<(), CriterionError> {
                if new == old {
                    return Ok(());
                }
                if !(new > 0.0) {
                    return Err(CriterionError::Degenerate {
                        slice: (self.slice_of[row] == self.slice_of[v])
                            .then_some(self.slice_of[row]),
                    });
                }
                let delta_new = self.kernel.term(new);
                if !delta_new.is_finite() {
                    return Err(CriterionError::Degenerate { slice: None });
                }
                let delta_old = self.kernel.term(old);
                whole.add(delta_new);
                whole.add(-delta_old);
                if self.slice_of[row] == self.slice_of[v] {
                    let s = &mut per_slice[self.slice_of[row]];
                    s.add(delta_new);
                    s.add(-delta_old);
                }
                updates.push((row, v, new));
                Ok(())
            };

        match *change {
            Change::Swap { r, s } => {
                let (xr, xs) = (coord(r), coord(s));
                for v in (0..n).filter(|&v| v != r && v != s) {
                    let xv = coord(v);
                    let h = coord_pow(xs - xv, m) - coord_pow(xr - xv, m);
                    let (old_r, old_s) = (self.dist_pow[r * n + v], self.dist_pow[s * n + v]);
                    account(r, v, old_r, old_r + h)?;
                    account(s, v, old_s, old_s - h)?;
                }
            }
            Change::Replace { r, value } => {
                let xr = coord(r);
                for v in (0..n).filter(|&v| v != r) {
                    let xv = coord(v);
                    let h = coord_pow(value - xv, m) - coord_pow(xr - xv, m);
                    let old = self.dist_pow[r * n + v];
                    account(r, v, old, old + h)?;
                }
            }
        }
        if whole.lost_precision() || per_slice.iter().any(ExtSum::lost_precision) {
            (whole, per_slice) = self.exact_sums(&updates);
        }
        if whole.value() < 0.0 || per_slice.iter().any(|s| s.value() < 0.0) {
            return Err(CriterionError::CacheCorrupted);
        }
        if !record {
            updates.clear();
        }
        Ok(Pending {
            whole,
            per_slice,
            updates,
        })
    }

    /// Power sums recomputed from the cached distances with `updates`
    /// applied, used after heavy cancellation.
    fn exact_sums(&self, updates: &[(usize, usize, f64)]) -> (ExtSum, Vec<ExtSum>) {
        let n = self.spec.runs();
        let mut dist = self.dist_pow.clone();
        for &(row, v, dm) in updates {
            dist[row * n + v] = dm;
            dist[v * n + row] = dm;
        }
        self.sums_from(&dist)
    }

    fn sums_from(&self, dist: &[f64]) -> (ExtSum, Vec<ExtSum>) {
        let n = self.spec.runs();
        let mut whole = ExtSum::default();
        let mut per_slice = vec![ExtSum::default(); self.spec.num_slices()];
        for i in 0..n {
            for j in i + 1..n {
                let term = self.kernel.term(dist[i * n + j]);
                whole.add(term);
                if self.slice_of[i] == self.slice_of[j] {
                    per_slice[self.slice_of[i]].add(term);
                }
            }
        }
        (whole, per_slice)
    }

    fn commit(&mut self, change: &Change, k: usize, pending: Pending) {
        let n = self.spec.runs();
        for (row, v, dm) in pending.updates {
            self.dist_pow[row * n + v] = dm;
            self.dist_pow[v * n + row] = dm;
        }
        self.whole = pending.whole;
        self.per_slice = pending.per_slice;
        match *change {
            Change::Swap { r, s } => self.points.swap(r * self.dims + k, s * self.dims + k),
            Change::Replace { r, value } => self.points[r * self.dims + k] = value,
        }
    }

    fn preview(&self, change: Change, k: usize) -> Result<CriterionValue, CriterionError> {
        let p = self.evaluate(&change, k, false)?;
        self.value_from(&p.whole, &p.per_slice)
    }

    fn apply(&mut self, change: Change, k: usize) -> Result<CriterionValue, CriterionError> {
        let p = self.evaluate(&change, k, true)?;
        let value = self.value_from(&p.whole, &p.per_slice)?;
        self.commit(&change, k, p);
        Ok(value)
    }

    /// Criterion value after swapping column `k` of rows `r` and `s` of the
    /// same slice, without changing the cache.
    pub fn preview_within_slice(
        &self,
        r: usize,
        s: usize,
        k: usize,
    ) -> Result<CriterionValue, CriterionError> {
        self.check_swap(r, s, k, true)?;
        self.preview(Change::Swap { r, s }, k)
    }

    pub fn apply_within_slice(
        &mut self,
        r: usize,
        s: usize,
        k: usize,
    ) -> Result<CriterionValue, CriterionError> {
        self.check_swap(r, s, k, true)?;
        self.apply(Change::Swap { r, s }, k)
    }

    /// As [`preview_within_slice`](Self::preview_within_slice) for rows in
    /// two different slices.
    pub fn preview_different_slice(
        &self,
        r: usize,
        s: usize,
        k: usize,
    ) -> Result<CriterionValue, CriterionError> {
        self.check_swap(r, s, k, false)?;
        self.preview(Change::Swap { r, s }, k)
    }

    pub fn apply_different_slice(
        &mut self,
        r: usize,
        s: usize,
        k: usize,
    ) -> Result<CriterionValue, CriterionError> {
        self.check_swap(r, s, k, false)?;
        self.apply(Change::Swap { r, s }, k)
    }

    /// Criterion value after replacing `x_rk` by `value ∈ (0, 1)`.
    pub fn preview_out_slice(
        &self,
        r: usize,
        k: usize,
        value: f64,
    ) -> Result<CriterionValue, CriterionError> {
        self.check_index(r, k)?;
        if !(value > 0.0 && value < 1.0) {
            return Err(CriterionError::ValueOutOfRange(value));
        }
        self.preview(Change::Replace { r, value }, k)
    }

    pub fn apply_out_slice(
        &mut self,
        r: usize,
        k: usize,
        value: f64,
    ) -> Result<CriterionValue, CriterionError> {
        self.check_index(r, k)?;
        if !(value > 0.0 && value < 1.0) {
            return Err(CriterionError::ValueOutOfRange(value));
        }
        self.apply(Change::Replace { r, value }, k)
    }

    /// Largest relative deviation of any cached distance from a fresh
    /// recomputation.
    pub fn max_distance_drift(&self) -> f64 {
        let n = self.spec.runs();
        let m = self.config.dist_power();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let fresh = distance_pow(self.point(i), self.point(j), m);
                let cached = self.dist_pow[i * n + j];
                worst = worst.max((fresh - cached).abs() / fresh);
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::generate_level_matrix;
    use crate::criteria::csm;
    use crate::design::{DesignMatrix, JitterMode, SliceSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn assert_close(a: &CriterionValue, b: &CriterionValue, tol: f64) {
        assert!(rel(a.whole, b.whole) <= tol, "{} vs {}", a.whole, b.whole);
        for (x, y) in a.per_slice.iter().zip(&b.per_slice) {
            assert!(rel(*x, *y) <= tol, "{x} vs {y}");
        }
        assert!(rel(a.combined, b.combined) <= tol);
    }

    fn full(cache: &DistanceCache) -> CriterionValue {
        let d = DesignMatrix::from_points(cache.spec().clone(), cache.points().to_vec()).unwrap();
        csm(&d, cache.config()).unwrap()
    }

    fn fixture(seed: u64) -> DistanceCache {
        let spec = SliceSpec::new(vec![3, 4, 5], 2).unwrap();
        let d = generate_level_matrix(&spec, seed).to_design(JitterMode::Midpoint, 0);
        DistanceCache::new(&d, &CriterionConfig::default()).unwrap()
    }

    #[test]
    fn long_replacement_run_stays_accurate() {
        let spec = SliceSpec::new(vec![4, 8, 12], 3).unwrap();
        let config = CriterionConfig::default();
        let l = spec.lcm() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let design = generate_level_matrix(&spec, 2).to_design(JitterMode::Midpoint, 0);
        let mut cache = DistanceCache::new(&design, &config).unwrap();
        for _ in 0..2000 {
            let r = rng.random_range(0..spec.runs());
            let k = rng.random_range(0..3);
            let value = (rng.random_range(1..=spec.lcm()) as f64 - 0.5) / l;
            if cache.preview_out_slice(r, k, value).is_ok() {
                cache.apply_out_slice(r, k, value).unwrap();
            }
        }
        let fresh = DesignMatrix::from_points(spec, cache.points().to_vec()).unwrap();
        let exact = csm(&fresh, &config).unwrap();
        let got = cache.value().unwrap();
        assert!(
            rel(got.whole, exact.whole) < 1e-11,
            "{} vs {}",
            got.whole,
            exact.whole
        );
        for (a, b) in got.per_slice.iter().zip(&exact.per_slice) {
            assert!(rel(*a, *b) < 1e-11, "{a} vs {b}");
        }
    }

    #[test]
    fn fresh_cache_matches_static_evaluation() {
        let c = fixture(1);
        assert_close(&c.value().unwrap(), &full(&c), 1e-12);
    }

    #[test]
    fn self_swap_is_identity() {
        let spec = SliceSpec::new(vec![2, 2], 2).unwrap();
        let pts = vec![0.1, 0.5, 0.3, 0.5, 0.6, 0.2, 0.9, 0.8];
        let mut c = DistanceCache::from_points(spec, pts, &CriterionConfig::default()).unwrap();
        let before = c.value().unwrap();
        assert_eq!(c.preview_within_slice(0, 1, 1).unwrap(), before);
        assert_eq!(c.apply_within_slice(0, 1, 1).unwrap(), before);
    }

    #[test]
    fn within_slice_matches_full_recompute() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut c = fixture(3);
        for _ in 0..100 {
            let slice = rng.random_range(0..3);
            let rows = c.spec().slice_rows(slice);
            let r = rng.random_range(rows.clone());
            let mut s = rng.random_range(rows.clone());
            while s == r {
                s = rng.random_range(rows.clone());
            }
            let k = rng.random_range(0..2);
            let preview = c.preview_within_slice(r, s, k).unwrap();
            let applied = c.apply_within_slice(r, s, k).unwrap();
            assert_eq!(preview, applied);
            assert_close(&applied, &full(&c), 1e-9);
        }
        assert!(c.max_distance_drift() < 1e-9);
    }

    #[test]
    fn swap_back_restores() {
        let mut c = fixture(4);
        let before = c.value().unwrap();
        c.apply_within_slice(3, 5, 1).unwrap();
        let back = c.apply_within_slice(3, 5, 1).unwrap();
        assert_close(&back, &before, 1e-9);
    }

    #[test]
    fn different_slice_updates_only_touched_slices() {
        let mut c = fixture(5);
        let before = c.value().unwrap();
        // Row 1 in slice 0, row 9 in slice 2; slice 1 must stay bit-identical.
        let after = c.apply_different_slice(1, 9, 0).unwrap();
        assert_eq!(after.per_slice[1], before.per_slice[1]);
        assert_close(&after, &full(&c), 1e-9);
    }

    #[test]
    fn out_slice_matches_and_round_trips() {
        let mut c = fixture(6);
        let before = c.value().unwrap();
        let old = c.point(4)[1];
        let after = c.apply_out_slice(4, 1, old + 1e-3).unwrap();
        assert_close(&after, &full(&c), 1e-9);
        assert_eq!(after.per_slice[0], before.per_slice[0]);
        assert_eq!(after.per_slice[2], before.per_slice[2]);
        let back = c.apply_out_slice(4, 1, old).unwrap();
        assert_close(&back, &before, 1e-9);
        let same = c.preview_out_slice(4, 1, old).unwrap();
        assert_close(&same, &back, 1e-12);
    }

    #[test]
    fn argument_errors() {
        let c = fixture(7);
        assert_eq!(
            c.preview_within_slice(0, 5, 0),
            Err(CriterionError::NotSameSlice(0, 5))
        );
        assert_eq!(
            c.preview_different_slice(0, 1, 0),
            Err(CriterionError::SameSlice(0, 1))
        );
        assert_eq!(
            c.preview_out_slice(0, 0, 1.0),
            Err(CriterionError::ValueOutOfRange(1.0))
        );
        assert!(matches!(
            c.preview_out_slice(40, 0, 0.5),
            Err(CriterionError::IndexOutOfRange { .. })
        ));
    }
}
