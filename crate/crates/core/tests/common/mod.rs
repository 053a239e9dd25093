#![allow(dead_code)]

use gramspai::models::{generate_random, RandomModelSpec};
use gramspai::sparse::BlockSparseMatrix;
use gramspai::statespace::{simulate, InterconnectedSystem, LiftedModel, Trajectory};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_dense(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

/// `Q·diag(λ)·Qᵀ` with eigenvalues spread log-uniformly over `[1, kappa]`.
pub fn random_spd(dim: usize, kappa: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q = random_dense(dim, dim, rng).qr().q();
    let lambda = DMatrix::from_fn(dim, dim, |i, j| {
        if i != j {
            0.0
        } else if dim == 1 {
            1.0
        } else {
            kappa.powf(i as f64 / (dim - 1) as f64)
        }
    });
    let m = &q * lambda * q.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn uniform_blocks(dim: usize, bs: usize) -> Vec<usize> {
    let mut sizes = vec![bs; dim / bs];
    if dim % bs != 0 {
        sizes.push(dim % bs);
    }
    sizes
}

pub fn to_blocks(m: &DMatrix<f64>, bs: usize) -> BlockSparseMatrix {
    BlockSparseMatrix::from_dense(m, uniform_blocks(m.nrows(), bs), uniform_blocks(m.ncols(), bs)).unwrap()
}

/// Random block-sparse matrix with roughly `density` of its blocks stored.
pub fn random_block_sparse(
    rows: &[usize],
    cols: &[usize],
    density: f64,
    positive: bool,
    rng: &mut ChaCha8Rng,
) -> BlockSparseMatrix {
    let mut blocks = Vec::new();
    for (i, &ri) in rows.iter().enumerate() {
        for (j, &cj) in cols.iter().enumerate() {
            if rng.random::<f64>() < density {
                let vals = (0..ri * cj)
                    .map(|_| {
                        let v: f64 = rng.random::<f64>();
                        if positive { 0.1 + v } else { 2.0 * v - 1.0 }
                    })
                    .collect();
                blocks.push(((i, j), vals));
            }
        }
    }
    BlockSparseMatrix::from_blocks(rows.to_vec(), cols.to_vec(), blocks).unwrap()
}

pub fn random_system(seed: u64, subsystems: usize, n: usize, positive: bool) -> InterconnectedSystem {
    generate_random(&RandomModelSpec {
        subsystems,
        n,
        m: 1,
        r: 1,
        mean_degree: 2.0,
        rho: 0.9,
        positive,
        seed,
    })
    .unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dense_rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Window of `p + 1` samples from a random trajectory, lifted into the
/// structured vectors `(𝒴, 𝒰)`, with the window's first and last state.
pub struct Window {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub x_start: Vec<f64>,
    pub x_end: Vec<f64>,
    pub trajectory: Trajectory,
}

pub fn window(lifted: &LiftedModel, noise: f64, seed: u64) -> Window {
    let mut r = rng(seed);
    let nx = lifted.subsystems * lifted.n;
    let nu = lifted.subsystems * lifted.m;
    let x0: Vec<f64> = (0..nx).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
    let inputs: Vec<Vec<f64>> = (0..=lifted.p)
        .map(|_| (0..nu).map(|_| r.random::<f64>() * 2.0 - 1.0).collect())
        .collect();
    let trajectory = simulate(&lifted.global, &x0, &inputs, noise, seed).unwrap();
    Window {
        y: lifted.lift_outputs(&trajectory.outputs).unwrap(),
        u: lifted.lift_inputs(&trajectory.inputs).unwrap(),
        x_start: x0,
        x_end: trajectory.states[lifted.p].clone(),
        trajectory,
    }
}
