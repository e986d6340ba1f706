use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use titan::solver::{
    choose_shift_and_range, direct_lssol, even_row_counts, local_update, make_equivalent_system, partition_system,
    relative_error, shifted_inputs, solve_private, validate_shift_and_range, LinearSystem,
};
use titan::{generate_graph, ExactRunConfig, Fixed, GraphKind, NodeId, Scale};

fn random_system(p: usize, n: usize, seed: u64) -> LinearSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(p, n, |_, _| rng.gen_range(-3.0..3.0));
    let b = DVector::from_fn(p, |_, _| rng.gen_range(-3.0..3.0));
    LinearSystem::new(a, b).unwrap()
}

/// Plain triple loop, independent of the library's matrix products.
fn transpose_multiply(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.ncols(), b.ncols());
    for i in 0..a.ncols() {
        for j in 0..b.ncols() {
            let mut s = 0.0;
            for r in 0..a.nrows() {
                s += a[(r, i)] * b[(r, j)];
            }
            out[(i, j)] = s;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn local_update_matches_oracle(p in 1usize..6, n in 1usize..5, seed in any::<u64>()) {
        let sys = random_system(p, n, seed);
        let u = local_update(&sys.a, &sys.b);
        let gram = transpose_multiply(&sys.a, &sys.a);
        let moment = transpose_multiply(&sys.a, &DMatrix::from_column_slice(p, 1, sys.b.as_slice()));
        prop_assert!((u.gram.clone() - gram).norm() <= 1e-12 * (1.0 + u.gram.norm()));
        prop_assert!((u.moment.clone() - DVector::from_column_slice(moment.as_slice())).norm() <= 1e-12 * (1.0 + u.moment.norm()));
        prop_assert_eq!(u.gram.transpose(), u.gram);
    }

    /// Private and direct solutions agree, the aggregated sums are exact on
    /// the grid and the row split does not matter.
    #[test]
    fn private_solution_matches_direct(m in 2usize..7, n in 1usize..5, extra in 0usize..8, seed in any::<u64>()) {
        let p = m * n + extra;
        let sys = random_system(p, n, seed);
        prop_assume!(sys.check_full_rank().is_ok());
        let direct = direct_lssol(&sys).unwrap();
        let cond = {
            let ev = sys.a.tr_mul(&sys.a).symmetric_eigenvalues();
            ev.max() / ev.min()
        };
        prop_assume!(cond <= 1e6);
        let counts_list = [even_row_counts(p, m), {
            let mut c = vec![1; m];
            c[0] = p - (m - 1);
            c
        }];
        for counts in counts_list {
            let part = partition_system(&sys, &counts).unwrap();
            let updates = part.local_updates();
            let (c, a) = choose_shift_and_range(&updates).unwrap();
            validate_shift_and_range(&updates, c, a).unwrap();
            let g = generate_graph(GraphKind::Ring, m, 0).unwrap();
            let config = ExactRunConfig::new(g, m - 1, m.min(3), a, Default::default()).unwrap().with_seed(seed);
            let sol = solve_private(&part, &config, c).unwrap();
            prop_assert!(relative_error(&sol.x, direct.as_slice()) <= 1e-6);

            let params = Scale::default();
            let q = shifted_inputs(&updates, Fixed::from_ticks(0), &params).unwrap();
            let expected: Vec<Fixed> = (0..q[0].len())
                .map(|e| q.iter().fold(Fixed::from_ticks(0), |acc, node| acc + node[e]))
                .collect();
            prop_assert_eq!(&sol.packed_sums, &expected);
            for r in 0..n {
                for col in 0..n {
                    prop_assert_eq!(sol.gram_average[r * n + col], sol.gram_average[col * n + r]);
                }
            }
        }
    }

    #[test]
    fn shifted_aggregate_recovers_unshifted(seed in any::<u64>()) {
        let sys = random_system(12, 3, seed);
        let part = partition_system(&sys, &[4, 4, 4]).unwrap();
        let updates = part.local_updates();
        let (c, a) = choose_shift_and_range(&updates).unwrap();
        prop_assert!(c >= 0.0);
        for u in &updates {
            for e in u.pack() {
                prop_assert!((0.0..a).contains(&(e + c)));
            }
        }
        let shifted_sum: f64 = updates.iter().map(|u| u.pack()[0] + c).sum();
        let direct: f64 = updates.iter().map(|u| u.pack()[0]).sum();
        prop_assert!((shifted_sum - 3.0 * c - direct).abs() <= 1e-9 * (1.0 + direct.abs() + c));
    }

    #[test]
    fn moving_a_row_preserves_sums_and_solution(seed in any::<u64>(), row in 0usize..3) {
        let sys = random_system(12, 3, seed);
        prop_assume!(sys.check_full_rank().is_ok());
        let part = partition_system(&sys, &[3, 3, 3, 3]).unwrap();
        let id = |i| NodeId::new(i).unwrap();
        let corrupted = BTreeSet::from([id(1)]);
        let moved = make_equivalent_system(&part, &corrupted, row, id(2), id(4)).unwrap();
        let sum = |p: &titan::solver::Partition| {
            p.local_updates().into_iter().fold((DMatrix::zeros(3, 3), DVector::zeros(3)), |(g, m), u| (g + u.gram, m + u.moment))
        };
        let (g0, m0) = sum(&part);
        let (g1, m1) = sum(&moved);
        prop_assert!((g0 - g1).norm() <= 1e-12 * sys.a.norm_squared());
        prop_assert!((m0 - m1).norm() <= 1e-12 * sys.a.norm() * sys.b.norm());
        let x0 = direct_lssol(&part.stack().unwrap()).unwrap();
        let x1 = direct_lssol(&moved.stack().unwrap()).unwrap();
        prop_assert!((x0 - x1).norm() <= 1e-9);
        prop_assert_eq!(make_equivalent_system(&moved, &corrupted, row, id(4), id(2)).unwrap(), part);
    }
}

#[test]
fn identity_system_is_solved_exactly() {
    let m = 4;
    let v = vec![1.0, -0.5, 2.25, 0.0];
    let sys = LinearSystem::new(DMatrix::identity(4, 4), DVector::from_vec(v.clone())).unwrap();
    let part = partition_system(&sys, &[1; 4]).unwrap();
    let (c, a) = choose_shift_and_range(&part.local_updates()).unwrap();
    let g = generate_graph(GraphKind::Ring, m, 0).unwrap();
    let config = ExactRunConfig::new(g, 3, 2, a, Default::default()).unwrap();
    assert_eq!(solve_private(&part, &config, c).unwrap().x, v);
}
