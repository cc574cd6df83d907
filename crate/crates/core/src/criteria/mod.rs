//! Space-filling criteria: minimum inter-site distance, `φ_t`, the centered
//! L2-discrepancy, and the combined sliced measurement
//! `φ_CSM = w·φ(D) + (1 − w)·Σ λ_i·φ(D^(i))` with `λ_i = n_i / n`.

mod cache;

pub use cache::DistanceCache;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{DesignMatrix, PointSet, SliceSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CriterionError {
    #[error("need at least {needed} points, got {actual}{}", slice_suffix(*.slice))]
    TooFewPoints {
        needed: usize,
        actual: usize,
        slice: Option<usize>,
    },
    #[error("degenerate design: coincident points{}", slice_suffix(*.slice))]
    Degenerate { slice: Option<usize> },
    #[error("point coordinate {value} lies outside [0, 1]")]
    OutsideUnitCube { value: f64 },
    #[error("invalid criterion configuration: {0}")]
    InvalidConfig(String),
    #[error("rows {0} and {1} are not in the same slice")]
    NotSameSlice(usize, usize),
    #[error("rows {0} and {1} are in the same slice")]
    SameSlice(usize, usize),
    #[error("row {row} or column {column} out of range")]
    IndexOutOfRange { row: usize, column: usize },
    #[error("replacement coordinate {0} is outside (0, 1)")]
    ValueOutOfRange(f64),
    #[error("distance cache corrupted: negative power sum")]
    CacheCorrupted,
}

fn slice_suffix(slice: Option<usize>) -> String {
    match slice {
        Some(s) => format!(" in slice {}", s + 1),
        None => String::new(),
    }
}

impl CriterionError {
    fn in_slice(self, slice: usize) -> Self {
        match self {
            CriterionError::TooFewPoints { needed, actual, .. } => CriterionError::TooFewPoints {
                needed,
                actual,
                slice: Some(slice),
            },
            CriterionError::Degenerate { .. } => CriterionError::Degenerate { slice: Some(slice) },
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriterionKind {
    PhiT,
    Cd2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionConfig {
    kind: CriterionKind,
    t: u32,
    dist_power: u32,
    weight: f64,
}

impl Default for CriterionConfig {
    fn default() -> Self {
        Self {
            kind: CriterionKind::PhiT,
            t: 50,
            dist_power: 2,
            weight: 0.5,
        }
    }
}

impl CriterionConfig {
    pub fn new(
        kind: CriterionKind,
        t: u32,
        dist_power: u32,
        weight: f64,
    ) -> Result<Self, CriterionError> {
        if t == 0 {
            return Err(CriterionError::InvalidConfig("t must be positive".into()));
        }
        if !(dist_power == 1 || dist_power == 2) {
            return Err(CriterionError::InvalidConfig(format!(
                "distance power must be 1 or 2, got {dist_power}"
            )));
        }
        if !(weight > 0.0 && weight < 1.0) {
            return Err(CriterionError::InvalidConfig(format!(
                "weight must lie in (0, 1), got {weight}"
            )));
        }
        Ok(Self {
            kind,
            t,
            dist_power,
            weight,
        })
    }

    pub fn kind(&self) -> CriterionKind {
        self.kind
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn dist_power(&self) -> u32 {
        self.dist_power
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// `w·whole + (1 − w)·Σ λ_i·per_slice[i]`.
    pub fn combine(&self, spec: &SliceSpec, whole: f64, per_slice: &[f64]) -> f64 {
        let sliced: f64 = spec
            .weights()
            .iter()
            .zip(per_slice)
            .map(|(l, v)| l * v)
            .sum();
        self.weight * whole + (1.0 - self.weight) * sliced
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionValue {
    pub whole: f64,
    pub per_slice: Vec<f64>,
    pub combined: f64,
}

impl CriterionValue {
    pub fn new(
        spec: &SliceSpec,
        config: &CriterionConfig,
        whole: f64,
        per_slice: Vec<f64>,
    ) -> Self {
        let combined = config.combine(spec, whole, &per_slice);
        Self {
            whole,
            per_slice,
            combined,
        }
    }
}

/// `Σ_k |a_k − b_k|^m`, i.e. the distance raised to the power `m`.
#[inline]
pub(crate) fn distance_pow(a: &[f64], b: &[f64], m: u32) -> f64 {
    match m {
        1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        _ => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
    }
}

#[inline]
pub(crate) fn coord_pow(diff: f64, m: u32) -> f64 {
    match m {
        1 => diff.abs(),
        _ => diff * diff,
    }
}

/// Inter-site distance `(Σ_k |a_k − b_k|^m)^{1/m}`.
pub fn distance(a: &[f64], b: &[f64], dist_power: u32) -> f64 {
    let dm = distance_pow(a, b, dist_power);
    if dist_power == 1 {
        dm
    } else {
        dm.sqrt()
    }
}

pub fn min_intersite_distance(
    points: PointSet<'_>,
    dist_power: u32,
) -> Result<f64, CriterionError> {
    let n = points.len();
    if n < 2 {
        return Err(CriterionError::TooFewPoints {
            needed: 2,
            actual: n,
            slice: None,
        });
    }
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            best = best.min(distance(points.row(i), points.row(j), dist_power));
        }
    }
    Ok(best)
}

/// Double-double accumulator (TwoSum error-free transformation).
///
/// The rounding error is bounded relative to the largest partial sum seen,
/// kept in `peak`, not relative to the current value.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct ExtSum {
    hi: f64,
    lo: f64,
    peak: f64,
}

impl ExtSum {
    #[inline]
    pub(crate) fn add(&mut self, x: f64) {
        let s = self.hi + x;
        let bp = s - self.hi;
        let err = (self.hi - (s - bp)) + (x - bp);
        self.hi = s;
        self.lo += err;
        self.peak = self.peak.max(s.abs());
    }

    #[inline]
    pub(crate) fn value(&self) -> f64 {
        self.hi + self.lo
    }

    /// True when cancellation since the last fresh sum may have cost more
    /// than about 1e-13 relative accuracy.
    #[inline]
    pub(crate) fn lost_precision(&self) -> bool {
        self.peak > 1e12 * self.value().abs()
    }
}

/// `(d / ref)^{-t}` computed from `d^m`, so that power sums stay in range.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PowerKernel {
    t: u32,
    m: u32,
    ref_pow: f64,
    reference: f64,
}

impl PowerKernel {
    /// `reference` is a positive distance that sets the scale of the sums.
    pub(crate) fn new(t: u32, m: u32, reference: f64) -> Self {
        let ref_pow = if m == 1 {
            reference
        } else {
            reference * reference
        };
        Self {
            t,
            m,
            ref_pow,
            reference,
        }
    }

    #[inline]
    pub(crate) fn term(&self, dm: f64) -> f64 {
        let r = dm / self.ref_pow;
        if self.t.is_multiple_of(self.m) {
            r.powi(-((self.t / self.m) as i32))
        } else {
            r.powf(-(self.t as f64) / self.m as f64)
        }
    }

    /// `φ_t` from a scaled power sum.
    #[inline]
    pub(crate) fn finish(&self, sum: f64) -> f64 {
        sum.powf(1.0 / self.t as f64) / self.reference
    }
}

pub fn phi_t(points: PointSet<'_>, t: u32, dist_power: u32) -> Result<f64, CriterionError> {
    let n = points.len();
    if n < 2 {
        return Err(CriterionError::TooFewPoints {
            needed: 2,
            actual: n,
            slice: None,
        });
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    let mut min = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let dm = distance_pow(points.row(i), points.row(j), dist_power);
            min = min.min(dm);
            dists.push(dm);
        }
    }
    if !(min > 0.0) {
        return Err(CriterionError::Degenerate { slice: None });
    }
    let reference = if dist_power == 1 { min } else { min.sqrt() };
    let kernel = PowerKernel::new(t, dist_power, reference);
    let mut sum = ExtSum::default();
    for dm in dists {
        sum.add(kernel.term(dm));
    }
    Ok(kernel.finish(sum.value()))
}

/// Centered L2-discrepancy with per-dimension product kernels:
///
/// `CD2² = (13/12)^q − (2/n) Σ_i Π_k (1 + ½|x_ik − ½| − ½|x_ik − ½|²)
///        + (1/n²) Σ_i Σ_j Π_k (1 + ½|x_ik − ½| + ½|x_jk − ½| − ½|x_ik − x_jk|)`.
pub fn cd2(points: PointSet<'_>) -> Result<f64, CriterionError> {
    let n = points.len();
    if n == 0 {
        return Err(CriterionError::TooFewPoints {
            needed: 1,
            actual: 0,
            slice: None,
        });
    }
    if let Some(&value) = points
        .rows()
        .flatten()
        .find(|&&x| !(0.0..=1.0).contains(&x))
    {
        return Err(CriterionError::OutsideUnitCube { value });
    }
    let q = points.dims() as i32;
    let centred: Vec<f64> = points.rows().flatten().map(|x| (x - 0.5).abs()).collect();
    let dims = points.dims();
    let mut single = 0.0;
    for i in 0..n {
        let c = &centred[i * dims..(i + 1) * dims];
        single += c
            .iter()
            .map(|z| 1.0 + 0.5 * z - 0.5 * z * z)
            .product::<f64>();
    }
    let mut pair = 0.0;
    for i in 0..n {
        let (xi, ci) = (points.row(i), &centred[i * dims..(i + 1) * dims]);
        // Diagonal once, off-diagonal twice.
        for j in i..n {
            let (xj, cj) = (points.row(j), &centred[j * dims..(j + 1) * dims]);
            let p: f64 = (0..dims)
                .map(|k| 1.0 + 0.5 * ci[k] + 0.5 * cj[k] - 0.5 * (xi[k] - xj[k]).abs())
                .product();
            pair += if i == j { p } else { 2.0 * p };
        }
    }
    let nf = n as f64;
    let sq = (13.0f64 / 12.0).powi(q) - 2.0 / nf * single + pair / (nf * nf);
    Ok(sq.max(0.0).sqrt())
}

fn single_criterion(points: PointSet<'_>, config: &CriterionConfig) -> Result<f64, CriterionError> {
    match config.kind {
        CriterionKind::PhiT => phi_t(points, config.t, config.dist_power),
        CriterionKind::Cd2 => cd2(points),
    }
}

/// Whole-design, per-slice and combined criterion values.
pub fn csm(
    design: &DesignMatrix,
    config: &CriterionConfig,
) -> Result<CriterionValue, CriterionError> {
    let spec = design.spec();
    let whole = single_criterion(design.whole(), config)?;
    let per_slice = (0..spec.num_slices())
        .map(|i| single_criterion(design.slice(i), config).map_err(|e| e.in_slice(i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CriterionValue::new(spec, config, whole, per_slice))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::generate_level_matrix;
    use crate::design::{JitterMode, LevelMatrix};
    use num::{BigInt, BigRational, One, ToPrimitive, Zero};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example1_design() -> DesignMatrix {
        let spec = SliceSpec::new(vec![3, 4, 5], 1).unwrap();
        LevelMatrix::new(spec, vec![50, 35, 15, 25, 40, 10, 55, 30, 45, 60, 5, 20])
            .unwrap()
            .to_design(JitterMode::Midpoint, 0)
    }

    #[test]
    fn min_distance_simple() {
        let p = [0.25, 0.75];
        assert_eq!(
            min_intersite_distance(PointSet::new(&p, 1), 2).unwrap(),
            0.5
        );
        let sq = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        assert_eq!(
            min_intersite_distance(PointSet::new(&sq, 2), 2).unwrap(),
            1.0
        );
        assert!(matches!(
            min_intersite_distance(PointSet::new(&[0.3], 1), 2),
            Err(CriterionError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn example1_min_distance_is_one_level_step() {
        // Brute force over all 66 pairs on the sorted level differences.
        let d = example1_design();
        let mut levels = vec![50, 35, 15, 25, 40, 10, 55, 30, 45, 60, 5, 20];
        levels.sort();
        let mut gaps = Vec::new();
        for i in 0..12 {
            for j in i + 1..12 {
                gaps.push((levels[j] - levels[i]) as f64 / 60.0);
            }
        }
        assert_eq!(gaps.len(), 66);
        let expected = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
        let got = min_intersite_distance(d.whole(), 2).unwrap();
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn phi_closed_forms() {
        let p = [0.0, 1.0];
        for t in [1, 2, 7, 50] {
            assert!((phi_t(PointSet::new(&p, 1), t, 2).unwrap() - 1.0).abs() < 1e-15);
        }
        // Equilateral triangle with side 0.5: three pairs.
        let h = 0.5 * 3f64.sqrt() / 2.0;
        let tri = [0.0, 0.0, 0.5, 0.0, 0.25, h];
        for t in [1u32, 5, 50] {
            let expected = (3.0 * 0.5f64.powi(-(t as i32))).powf(1.0 / t as f64);
            let got = phi_t(PointSet::new(&tri, 2), t, 2).unwrap();
            assert!((got - expected).abs() / expected < 1e-13);
        }
    }

    #[test]
    fn phi_degenerate() {
        let p = [0.3, 0.3, 0.3, 0.3];
        assert_eq!(
            phi_t(PointSet::new(&p, 2), 50, 2),
            Err(CriterionError::Degenerate { slice: None })
        );
    }

    /// Exact rational oracle: with midpoint coordinates (2m − 1) / 2L and
    /// even t, every d^{-t} = (d²)^{-t/2} is rational.
    fn exact_phi_t(levels: &[Vec<u64>], lcm: u64, t: u32) -> f64 {
        let two_l = BigInt::from(2 * lcm);
        let coord = |m: u64| BigRational::new(BigInt::from(2 * m - 1), two_l.clone());
        let mut sum = BigRational::zero();
        for i in 0..levels.len() {
            for j in i + 1..levels.len() {
                let mut d2 = BigRational::zero();
                for (&a, &b) in levels[i].iter().zip(&levels[j]) {
                    let diff = coord(a) - coord(b);
                    d2 += diff.clone() * diff;
                }
                let mut term = BigRational::one();
                for _ in 0..t / 2 {
                    term *= d2.clone();
                }
                sum += term.recip();
            }
        }
        // Σ may exceed f64 range before the root; take logs of num/den.
        let (num, den) = (sum.numer().clone(), sum.denom().clone());
        let ln = |b: &BigInt| {
            let bits = b.bits();
            let shift = bits.saturating_sub(60);
            let top = (b >> shift).to_f64().unwrap();
            top.ln() + shift as f64 * std::f64::consts::LN_2
        };
        ((ln(&num) - ln(&den)) / t as f64).exp()
    }

    #[test]
    fn example1_phi_matches_exact_oracle() {
        let d = example1_design();
        let rows: Vec<Vec<u64>> = [50, 35, 15, 25, 40, 10, 55, 30, 45, 60, 5, 20]
            .iter()
            .map(|&m| vec![m])
            .collect();
        let expected = exact_phi_t(&rows, 60, 50);
        let got = phi_t(d.whole(), 50, 2).unwrap();
        assert!(
            (got - expected).abs() / expected < 1e-12,
            "{got} vs {expected}"
        );
    }

    #[test]
    fn random_two_factor_phi_matches_exact_oracle() {
        let spec = SliceSpec::new(vec![4, 8, 12], 2).unwrap();
        for seed in 0..3 {
            let m = generate_level_matrix(&spec, seed);
            let rows: Vec<Vec<u64>> = (0..spec.runs()).map(|r| m.row(r).to_vec()).collect();
            let expected = exact_phi_t(&rows, spec.lcm(), 50);
            let got = phi_t(m.to_design(JitterMode::Midpoint, 0).whole(), 50, 2).unwrap();
            assert!((got - expected).abs() / expected < 1e-12);
        }
    }

    /// Naive CD2 straight from the definition, no shared helpers.
    fn naive_cd2(x: &[Vec<f64>]) -> f64 {
        let n = x.len() as f64;
        let q = x[0].len();
        let mut a = 0.0;
        for xi in x {
            let mut p = 1.0;
            for &v in &xi[..q] {
                let z = (v - 0.5).abs();
                p *= 1.0 + z / 2.0 - z.powi(2) / 2.0;
            }
            a += p;
        }
        let mut b = 0.0;
        for xi in x {
            for xj in x {
                let mut p = 1.0;
                for k in 0..q {
                    p *= 1.0 + (xi[k] - 0.5).abs() / 2.0 + (xj[k] - 0.5).abs() / 2.0
                        - (xi[k] - xj[k]).abs() / 2.0;
                }
                b += p;
            }
        }
        ((13.0f64 / 12.0).powi(q as i32) - 2.0 * a / n + b / (n * n)).sqrt()
    }

    #[test]
    fn cd2_single_centre_point() {
        // (13/12) − 2 + 1 = 1/12 for q = 1, x = ½.
        let got = cd2(PointSet::new(&[0.5], 1)).unwrap();
        assert!((got - (1.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cd2_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..2).map(|_| rng.random()).collect())
                .collect();
            let flat: Vec<f64> = x.iter().flatten().cloned().collect();
            let got = cd2(PointSet::new(&flat, 2)).unwrap();
            assert!((got - naive_cd2(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn cd2_rejects_outside() {
        assert!(matches!(
            cd2(PointSet::new(&[0.5, 1.5], 1)),
            Err(CriterionError::OutsideUnitCube { .. })
        ));
    }

    #[test]
    fn csm_single_slice_equals_whole() {
        let spec = SliceSpec::new(vec![10], 3).unwrap();
        let d = generate_level_matrix(&spec, 1).to_design(JitterMode::Midpoint, 0);
        for w in [0.1, 0.5, 0.9] {
            let cfg = CriterionConfig::new(CriterionKind::PhiT, 50, 2, w).unwrap();
            let v = csm(&d, &cfg).unwrap();
            assert!((v.combined - v.whole).abs() <= 1e-12 * v.whole);
        }
    }

    #[test]
    fn csm_identity_on_example_design() {
        let spec = SliceSpec::new(vec![4, 8, 12], 2).unwrap();
        let d = generate_level_matrix(&spec, 4).to_design(JitterMode::Midpoint, 0);
        let cfg = CriterionConfig::default();
        let v = csm(&d, &cfg).unwrap();
        let whole = phi_t(d.whole(), 50, 2).unwrap();
        let slices: Vec<f64> = (0..3).map(|i| phi_t(d.slice(i), 50, 2).unwrap()).collect();
        let expected = 0.5 * whole
            + 0.5 * (4.0 / 24.0 * slices[0] + 8.0 / 24.0 * slices[1] + 12.0 / 24.0 * slices[2]);
        assert_eq!(v.whole, whole);
        assert_eq!(v.per_slice, slices);
        assert!((v.combined - expected).abs() <= 1e-14 * expected);
    }

    #[test]
    fn csm_tags_slice_errors() {
        let spec = SliceSpec::new(vec![3, 1], 1).unwrap();
        let d = generate_level_matrix(&spec, 0).to_design(JitterMode::Midpoint, 0);
        assert_eq!(
            csm(&d, &CriterionConfig::default()),
            Err(CriterionError::TooFewPoints {
                needed: 2,
                actual: 1,
                slice: Some(1)
            })
        );
    }

    #[test]
    fn config_validation() {
        assert!(CriterionConfig::new(CriterionKind::PhiT, 50, 2, 1.0).is_err());
        assert!(CriterionConfig::new(CriterionKind::PhiT, 50, 3, 0.5).is_err());
        assert!(CriterionConfig::new(CriterionKind::PhiT, 0, 2, 0.5).is_err());
        let d = CriterionConfig::default();
        assert_eq!((d.t(), d.dist_power(), d.weight()), (50, 2, 0.5));
    }

    proptest! {
        #[test]
        fn phi_invariant_under_row_and_coordinate_permutation(
            seed in 0u64..1000,
            rot in 0usize..20,
        ) {
            let spec = SliceSpec::new(vec![20], 3).unwrap();
            let d = generate_level_matrix(&spec, seed).to_design(JitterMode::Midpoint, 0);
            let base = phi_t(d.whole(), 50, 2).unwrap();
            let mut rows: Vec<Vec<f64>> = d.whole().rows().map(|r| r.to_vec()).collect();
            rows.rotate_left(rot);
            for r in &mut rows {
                r.rotate_left(1);
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            let permuted = phi_t(PointSet::new(&flat, 3), 50, 2).unwrap();
            prop_assert!((base - permuted).abs() <= 1e-12 * base);
            let c0 = cd2(d.whole()).unwrap();
            let c1 = cd2(PointSet::new(&flat, 3)).unwrap();
            prop_assert!((c0 - c1).abs() < 1e-12);
        }
    }
}
