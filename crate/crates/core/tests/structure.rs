use fslhd::construction::generate_level_matrix;
use fslhd::design::{LevelMatrix, SliceSpec};
use fslhd::neighborhood::{random_neighbor, tau_candidates, MoveKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Interval-occupancy check: each of the `k` equal cells of `(0, L]` holds
/// exactly one of `levels`.
fn one_per_cell(levels: &[u64], lcm: u64, k: u64) -> bool {
    let width = lcm / k;
    (1..=k).all(|cell| {
        levels
            .iter()
            .filter(|&&m| (cell - 1) * width < m && m <= cell * width)
            .count()
            == 1
    })
}

fn oracle_valid(m: &LevelMatrix) -> bool {
    let spec = m.spec();
    let lcm = spec.lcm();
    (0..spec.factors()).all(|c| {
        let col = m.column(c);
        one_per_cell(&col, lcm, spec.runs() as u64)
            && (0..spec.num_slices()).all(|i| {
                let rows = spec.slice_rows(i);
                one_per_cell(&col[rows], lcm, spec.slice_size(i) as u64)
            })
    })
}

fn arb_spec() -> impl Strategy<Value = SliceSpec> {
    (prop::collection::vec(1usize..=12, 1..=5), 1usize..=6)
        .prop_map(|(sizes, q)| SliceSpec::new(sizes, q).unwrap())
}

const KINDS: [MoveKind; 3] = [
    MoveKind::WithinSlice,
    MoveKind::DifferentSlice,
    MoveKind::OutSlice,
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constructed_designs_are_valid(spec in arb_spec(), seed in any::<u64>()) {
        let m = generate_level_matrix(&spec, seed);
        prop_assert!(oracle_valid(&m));
        prop_assert!(m.check_structure().is_ok());
    }

    #[test]
    fn moves_keep_designs_valid(spec in arb_spec(), seed in any::<u64>()) {
        let mut m = generate_level_matrix(&spec, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for step in 0..50 {
            let slice = rng.random_range(0..spec.num_slices());
            if let Ok(mv) = random_neighbor(KINDS[step % 3], &m, slice, None, &mut rng) {
                mv.apply(&mut m).unwrap();
                prop_assert!(oracle_valid(&m), "after {:?}", mv);
            }
        }
    }

    #[test]
    fn library_check_agrees_with_oracle(spec in arb_spec(), seed in any::<u64>(), r in any::<prop::sample::Index>(), s in any::<prop::sample::Index>(), c in any::<prop::sample::Index>()) {
        // Swaps between arbitrary rows may or may not break the structure.
        let m = generate_level_matrix(&spec, seed);
        let n = spec.runs();
        let (r, s, c) = (r.index(n), s.index(n), c.index(spec.factors()));
        let mut data = m.as_slice().to_vec();
        let q = spec.factors();
        data.swap(r * q + c, s * q + c);
        let swapped = LevelMatrix::new(spec.clone(), data).unwrap();
        prop_assert_eq!(swapped.check_structure().is_ok(), oracle_valid(&swapped));
    }
}

/// Every level of `b`'s slice bin that yields a valid design when exchanged
/// or substituted, as admitted by the exchange rules.
fn brute_tau(m: &LevelMatrix, slice: usize, column: usize, b: u64) -> Vec<u64> {
    let spec = m.spec();
    let q = spec.factors();
    let ti = spec.slice_scale(slice);
    let bin = b.div_ceil(ti);
    let col = m.column(column);
    let row = spec.slice_rows(slice).find(|&r| col[r] == b).unwrap();
    let later = spec.slice_rows(slice).end;
    let last = slice + 1 == spec.num_slices();
    let mut out = Vec::new();
    for level in (bin - 1) * ti + 1..=bin * ti {
        if level == b {
            continue;
        }
        let mut data = m.as_slice().to_vec();
        match col.iter().position(|&x| x == level) {
            Some(r) if r >= later && !last => {
                data[r * q + column] = b;
                data[row * q + column] = level;
            }
            Some(_) => continue,
            None => data[row * q + column] = level,
        }
        if oracle_valid(&LevelMatrix::new(spec.clone(), data).unwrap()) {
            out.push(level);
        }
    }
    out
}

#[test]
fn tau_matches_exhaustive_search() {
    let specs = [
        vec![4, 6],
        vec![3, 4, 5],
        vec![2, 3],
        vec![2, 2, 4],
        vec![5, 3, 2],
        vec![1, 4],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for sizes in specs {
        let spec = SliceSpec::new(sizes, 2).unwrap();
        assert!(spec.lcm() <= 120);
        for seed in 0..10 {
            let mut m = generate_level_matrix(&spec, seed);
            for step in 0..20 {
                let slice = rng.random_range(0..spec.num_slices());
                if let Ok(mv) = random_neighbor(KINDS[step % 3], &m, slice, None, &mut rng) {
                    mv.apply(&mut m).unwrap();
                }
            }
            for slice in 0..spec.num_slices() {
                for column in 0..2 {
                    for row in spec.slice_rows(slice) {
                        let b = m.get(row, column);
                        let tau = tau_candidates(&m, slice, column, b).unwrap();
                        assert_eq!(tau.levels(), brute_tau(&m, slice, column, b));
                    }
                }
            }
        }
    }
}
