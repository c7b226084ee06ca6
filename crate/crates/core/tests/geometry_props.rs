mod common;

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use subcomp::procrustes::{self, orthogonality_error, ProcrustesMap};
use subcomp::retrieval::rank_targets;
use subcomp::{compose, precision_at_k, CompositionOp};

use common::{gaussian, random_orthogonal};

fn vector(d: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-100.0f64..100.0, d)
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<usize>)> {
    (1usize..12).prop_flat_map(|d| (vector(d), vector(d), Just((0..d).collect::<Vec<_>>()).prop_shuffle()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_op_is_commutative((u, v, _) in pair()) {
        let (u, v) = (DVector::from_vec(u), DVector::from_vec(v));
        for op in CompositionOp::ALL {
            prop_assert_eq!(compose(op, &u, &v).unwrap(), compose(op, &v, &u).unwrap());
        }
    }

    #[test]
    fn ops_commute_with_coordinate_permutations((u, v, perm) in pair()) {
        let permute = |x: &[f64]| DVector::from_iterator(x.len(), perm.iter().map(|&i| x[i]));
        let (du, dv) = (DVector::from_vec(u.clone()), DVector::from_vec(v.clone()));
        for op in CompositionOp::ALL {
            let composed: Vec<f64> = compose(op, &du, &dv).unwrap().iter().copied().collect();
            prop_assert_eq!(permute(&composed), compose(op, &permute(&u), &permute(&v)).unwrap());
        }
    }

    #[test]
    fn procrustes_is_orthogonal_and_scale_invariant(seed in any::<u64>(), d in 1usize..10, extra in 0usize..10, log_scale in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = (gaussian(&mut rng, d + extra, d), gaussian(&mut rng, d + extra, d));
        let map = procrustes::fit(&x, &y).unwrap();
        prop_assert!(orthogonality_error(&map.w) <= 1e-8);
        prop_assert!(map.singular_values.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(map.singular_values.iter().all(|&s| s >= 0.0));
        if !map.degenerate {
            let c = 10f64.powf(log_scale);
            let scaled = procrustes::fit(&(&x * c), &y).unwrap();
            prop_assert!((&scaled.w - &map.w).amax() <= 1e-8);
            let scaled_y = procrustes::fit(&x, &(&y * c)).unwrap();
            prop_assert!((&scaled_y.w - &map.w).amax() <= 1e-8);
        }
    }

    #[test]
    fn procrustes_recovers_rotations(seed in any::<u64>(), d in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, 3 * d + 2, d);
        let r = random_orthogonal(&mut rng, d);
        let map = procrustes::fit(&x, &(&x * &r)).unwrap();
        prop_assert!((&map.w - &r).amax() <= 1e-8);
        prop_assert!(map.train_residual <= 1e-8);
    }

    #[test]
    fn ranks_ignore_positive_query_rescaling(seed in any::<u64>(), n in 1usize..30, d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = (gaussian(&mut rng, n, d), gaussian(&mut rng, n, d));
        // Powers of two keep the rescaled rows exact.
        let scales: Vec<f64> = (0..n).map(|i| 2f64.powi((i % 7) as i32 - 3)).collect();
        let scaled = DMatrix::from_fn(n, d, |i, j| x[(i, j)] * scales[i]);
        let a = precision_at_k(&x, &y, &[1, n]).unwrap();
        let b = precision_at_k(&scaled, &y, &[1, n]).unwrap();
        prop_assert_eq!(&a.per_item_rank, &b.per_item_rank);
        // Every target is within the top n.
        prop_assert_eq!(a.p_at_k[&n], 1.0);
        let hits = a.per_item_rank.iter().filter(|&&r| r == 1).count();
        prop_assert_eq!(a.p_at_1, hits as f64 / n as f64);
    }

    #[test]
    fn precision_is_monotone_in_k(seed in any::<u64>(), n in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = (gaussian(&mut rng, n, 3), gaussian(&mut rng, n, 3));
        let ks: Vec<usize> = (1..=n).collect();
        let r = precision_at_k(&x, &y, &ks).unwrap();
        let values: Vec<f64> = r.p_at_k.values().copied().collect();
        prop_assert!(values.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(r.per_item_rank.iter().all(|&k| (1..=n).contains(&k)));
    }
}

#[test]
fn identity_when_spaces_coincide() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = gaussian(&mut rng, 20, 5);
    let map = procrustes::fit(&x, &x).unwrap();
    assert!((&map.w - DMatrix::<f64>::identity(5, 5)).amax() <= 1e-10);
    assert_abs_diff_eq!(map.train_residual, 0.0, epsilon = 1e-10);
    assert_eq!(ProcrustesMap::identity(5).apply(&x).unwrap(), x);
}

#[test]
fn quarter_turn_is_recovered() {
    let r = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 1.0, 1.0]);
    let map = procrustes::fit(&x, &(&x * &r)).unwrap();
    assert!((&map.w - &r).amax() <= 1e-8);
}

#[test]
fn hand_computed_nearest_neighbour() {
    let y = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.7071, 0.7071]);
    let q = DMatrix::from_row_slice(1, 2, &[0.9, 0.1]);
    assert_eq!(rank_targets(&q, &y, &[0]).unwrap(), [1]);
}

#[test]
fn ties_go_to_the_lower_index() {
    let y = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 0.0, 1.0]);
    let q = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
    assert_eq!(rank_targets(&q, &y, &[0, 1]).unwrap(), [1, 2]);
}

#[test]
fn zero_query_takes_the_worst_rank_and_zero_candidate_fails() {
    let y = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    let r = precision_at_k(&x, &y, &[1]).unwrap();
    assert_eq!(r.per_item_rank, [3, 1, 1]);
    let mut bad = y.clone();
    bad.row_mut(1).fill(0.0);
    assert!(precision_at_k(&x, &bad, &[1]).is_err());
}
