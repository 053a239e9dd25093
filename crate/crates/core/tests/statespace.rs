mod common;

use common::*;
use gramspai::estimator::predict_gramian_pattern;
use gramspai::models::generate_banded_chain;
use gramspai::sparse::{binarize, spgemm, transpose, BlockSparseMatrix};
use gramspai::statespace::{
    apply_inverse_permutation, apply_permutation, ctrl_gramian, global_pattern, lift, numerical_rank, obs_gramian,
    observability_index, InterconnectedSystem,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn rel(a: &BlockSparseMatrix, b: &BlockSparseMatrix) -> f64 {
    dense_rel_diff(&a.to_dense(), &b.to_dense())
}

fn scalar_system(a: f64, b: f64, c: f64) -> InterconnectedSystem {
    InterconnectedSystem {
        subsystems: 1,
        n: 1,
        m: 1,
        r: 1,
        edges: vec![],
        diag: vec![vec![a]],
        b: vec![vec![b]],
        c: vec![vec![c]],
        d: vec![vec![0.0]],
        meta: serde_json::Value::Null,
    }
}

#[test]
fn gramians_factor_through_lifted_matrices() {
    for seed in 0..12 {
        let sys = random_system(seed, 10 + seed as usize * 3, 2, seed % 2 == 0);
        assert!(sys.subsystems * sys.n <= 200);
        for p in 1..=4 {
            let lifted = lift(&sys, p).unwrap();
            let w = obs_gramian(&lifted, 0.0).unwrap();
            let oto = spgemm(&transpose(&lifted.cal_o), &lifted.cal_o).unwrap();
            assert!(rel(&w.matrix, &oto) <= 1e-12, "seed {seed} p {p}");
            let q = ctrl_gramian(&lifted, 0.0).unwrap();
            let rrt = spgemm(&lifted.cal_r, &transpose(&lifted.cal_r)).unwrap();
            assert!(rel(&q.matrix, &rrt) <= 1e-12, "seed {seed} p {p}");
        }
    }
}

#[test]
fn regularization_adds_a_multiple_of_identity() {
    let lifted = lift(&random_system(3, 12, 2, false), 3).unwrap();
    let w0 = obs_gramian(&lifted, 0.0).unwrap().matrix.to_dense();
    let w1 = obs_gramian(&lifted, 0.25).unwrap().matrix.to_dense();
    let diff = w1 - w0 - DMatrix::<f64>::identity(24, 24) * 0.25;
    assert!(diff.amax() <= 1e-14);
}

#[test]
fn structured_matrices_are_permuted_classical_ones() {
    let lifted = lift(&random_system(7, 8, 3, false), 3).unwrap();
    let n_state = 8 * 3;
    let mut r = rng(1);
    let x = random_dense(n_state, 1, &mut r);
    let classical = lifted.o_p.matvec(x.as_slice()).unwrap();
    let structured = lifted.cal_o.matvec(x.as_slice()).unwrap();
    assert!(max_abs_diff(&apply_permutation(&lifted.perm_y, &classical), &structured) <= 1e-14);

    let u = random_dense(lifted.cal_g.ncols(), 1, &mut r);
    let u_classical = apply_inverse_permutation(&lifted.perm_u, u.as_slice());
    let y_classical = lifted.gamma_p.matvec(&u_classical).unwrap();
    let y = lifted.cal_g.matvec(u.as_slice()).unwrap();
    assert!(max_abs_diff(&apply_permutation(&lifted.perm_y, &y_classical), &y) <= 1e-14);
    lifted.verify_permutation_identities().unwrap();
}

#[test]
fn noise_free_trajectories_satisfy_lifted_equations() {
    for seed in 0..15 {
        let sys = random_system(100 + seed, 6 + seed as usize, 2, false);
        let p = 1 + seed as usize % 4;
        let lifted = lift(&sys, p).unwrap();
        let w = window(&lifted, 0.0, seed);
        let mut out = lifted.cal_o.matvec(&w.x_start).unwrap();
        for (o, g) in out.iter_mut().zip(lifted.cal_g.matvec(&w.u).unwrap()) {
            *o += g;
        }
        let scale = norm(&w.y).max(1.0);
        assert!(max_abs_diff(&out, &w.y) <= 1e-10 * scale, "output identity, seed {seed}");

        let mut reach = lifted.a_pow_p.matvec(&w.x_start).unwrap();
        for (x, r) in reach.iter_mut().zip(lifted.cal_r.matvec(&w.u).unwrap()) {
            *x += r;
        }
        assert!(max_abs_diff(&reach, &w.x_end) <= 1e-10 * norm(&w.x_end).max(1.0), "state identity, seed {seed}");
    }
}

#[test]
fn gramian_pattern_is_within_prediction() {
    for seed in 0..10 {
        let positive = seed % 2 == 0;
        let sys = random_system(200 + seed, 25, 2, positive);
        let lifted = lift(&sys, 3).unwrap();
        let w = obs_gramian(&lifted, 0.0).unwrap();
        let predicted = predict_gramian_pattern(&global_pattern(&lifted.global), 3).unwrap();
        let actual = binarize(&w.matrix);
        assert!(actual.is_subset_of(&predicted), "seed {seed}");
        if positive {
            assert_eq!(actual, predicted);
        }
    }
}

#[test]
fn scalar_gramians_by_hand() {
    // a = 0.5, b = c = 1: 𝒲 = Σ_{i≤p} a^{2i}, ℛₚ = [a^{p−1}, …, 1, 0].
    let sys = scalar_system(0.5, 1.0, 1.0);
    let w1 = obs_gramian(&lift(&sys, 1).unwrap(), 0.0).unwrap();
    assert!((w1.matrix.get(0, 0) - 1.25).abs() < 1e-15);
    let q1 = ctrl_gramian(&lift(&sys, 1).unwrap(), 0.0).unwrap();
    assert!((q1.matrix.get(0, 0) - 1.0).abs() < 1e-15);
    let q2 = ctrl_gramian(&lift(&sys, 2).unwrap(), 0.0).unwrap();
    assert!((q2.matrix.get(0, 0) - 1.25).abs() < 1e-15);
    let w3 = obs_gramian(&lift(&sys, 3).unwrap(), 0.0).unwrap();
    assert!((w3.matrix.get(0, 0) - (1.0 + 0.25 + 0.0625 + 0.015625)).abs() < 1e-15);
}

#[test]
fn observability_index_of_chain_read_at_one_end() {
    let mut sys = generate_banded_chain(4, 1, 0.3, 0.9).unwrap();
    // Only the first subsystem is measured.
    for c in sys.c.iter_mut().skip(1) {
        c[0] = 0.0;
    }
    let nu = observability_index(&sys, 10).unwrap().expect("observable");
    assert_eq!(nu, 3);
    let lifted = lift(&sys, nu).unwrap();
    assert_eq!(numerical_rank(&lifted.cal_o.to_dense()), 4);
    let short = lift(&sys, nu - 1).unwrap();
    assert!(numerical_rank(&short.cal_o.to_dense()) < 4);
}

#[test]
fn system_json_round_trip() {
    let sys = random_system(4, 6, 2, false);
    let back = InterconnectedSystem::from_json(&sys.to_json().unwrap()).unwrap();
    assert_eq!(back, sys);
    let text = sys.to_json().unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["N", "n", "m", "r", "edges", "diag", "B", "C", "D"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(v["edges"][0].get("A_ij").is_some());
}

proptest! {
    #[test]
    fn permutations_round_trip(nn in 4usize..9, p in 1usize..5, seed in any::<u64>()) {
        let sys = random_system(seed, nn, 1, false);
        let lifted = lift(&sys, p).unwrap();
        let mut r = rng(seed);
        let v = random_dense(lifted.perm_y.len(), 1, &mut r);
        let there = apply_permutation(&lifted.perm_y, v.as_slice());
        prop_assert_eq!(apply_inverse_permutation(&lifted.perm_y, &there), v.as_slice().to_vec());
        let mut sorted = lifted.perm_u.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..lifted.perm_u.len()).collect::<Vec<_>>());
    }
}
