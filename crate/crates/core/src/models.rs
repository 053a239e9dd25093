//! Benchmark system generators.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::sparse::spectral::{spectral_norm, SpectralOptions};
use crate::statespace::{assemble_global, Edge, InterconnectedSystem};

/// Explicit finite-difference discretization of the 3D heat equation on a
/// `gx × gy × gz` grid with zero Dirichlet boundaries. Each subsystem is one
/// vertical column of `gz` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatModelSpec {
    pub gx: usize,
    pub gy: usize,
    pub gz: usize,
    pub alpha: f64,
    pub h: f64,
    pub dt: f64,
}

impl Default for HeatModelSpec {
    fn default() -> Self {
        HeatModelSpec {
            gx: 30,
            gy: 30,
            gz: 3,
            alpha: 1.0,
            h: 1.0,
            dt: 0.1,
        }
    }
}

impl HeatModelSpec {
    /// Largest stable time step `h²/(6α)`.
    pub fn stability_bound(&self) -> f64 {
        self.h * self.h / (6.0 * self.alpha)
    }

    /// Stencil weight `αΔt/h²`.
    pub fn lambda(&self) -> f64 {
        self.alpha * self.dt / (self.h * self.h)
    }
}

fn unit(len: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[k] = 1.0;
    v
}

fn scaled_identity(n: usize, s: f64) -> Vec<f64> {
    let mut v = vec![0.0; n * n];
    for d in 0..n {
        v[d * n + d] = s;
    }
    v
}

/// 7-point stencil: `x(k+1) = x(k) + λ·Δx(k)`. Cell 0 of each column is the
/// bottom (heated, `B_i = e₀`); cell `gz − 1` is the top (measured,
/// `C_i = e_{gz−1}ᵀ`).
pub fn generate_heat3d(spec: &HeatModelSpec) -> Result<InterconnectedSystem> {
    if spec.gx == 0 || spec.gy == 0 || spec.gz == 0 {
        return Err(Error::invalid("grid", "gx, gy and gz must be positive"));
    }
    if !(spec.alpha > 0.0) || !(spec.h > 0.0) || !(spec.dt > 0.0) {
        return Err(Error::invalid("heat spec", "alpha, h and dt must be positive"));
    }
    let bound = spec.stability_bound();
    if spec.dt > bound {
        return Err(Error::UnstableTimeStep { dt: spec.dt, bound });
    }
    let (gx, gy, n) = (spec.gx, spec.gy, spec.gz);
    let lam = spec.lambda();
    let mut local = vec![0.0; n * n];
    for z in 0..n {
        local[z * n + z] = 1.0 - 6.0 * lam;
        if z > 0 {
            local[z * n + z - 1] = lam;
        }
        if z + 1 < n {
            local[z * n + z + 1] = lam;
        }
    }
    let idx = |x: usize, y: usize| x + gx * y;
    let mut edges = Vec::new();
    for y in 0..gy {
        for x in 0..gx {
            let i = idx(x, y);
            let mut nb = Vec::with_capacity(4);
            if y > 0 {
                nb.push(idx(x, y - 1));
            }
            if x > 0 {
                nb.push(idx(x - 1, y));
            }
            if x + 1 < gx {
                nb.push(idx(x + 1, y));
            }
            if y + 1 < gy {
                nb.push(idx(x, y + 1));
            }
            edges.extend(nb.into_iter().map(|j| Edge {
                i,
                j,
                a: scaled_identity(n, lam),
            }));
        }
    }
    let nn = gx * gy;
    Ok(InterconnectedSystem {
        subsystems: nn,
        n,
        m: 1,
        r: 1,
        edges,
        diag: vec![local; nn],
        b: vec![unit(n, 0); nn],
        c: vec![unit(n, n - 1); nn],
        d: vec![vec![0.0]; nn],
        meta: json!({
            "model": "heat3d",
            "gx": gx, "gy": gy, "gz": n,
            "alpha": spec.alpha, "h": spec.h, "dt": spec.dt,
        }),
    })
}

/// 1D chain of `N` subsystems with symmetric nearest-neighbour coupling
/// `coupling·I`, scaled so that the (symmetric) global `A` has spectral
/// radius `rho`.
pub fn generate_banded_chain(subsystems: usize, n: usize, coupling: f64, rho: f64) -> Result<InterconnectedSystem> {
    if subsystems == 0 || n == 0 {
        return Err(Error::invalid("chain", "N and n must be positive"));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid("rho", format!("spectral radius target must lie in (0, 1), got {rho}")));
    }
    let mut local = vec![0.0; n * n];
    for z in 0..n {
        local[z * n + z] = 1.0;
        if z + 1 < n {
            local[z * n + z + 1] = 0.25;
            local[(z + 1) * n + z] = 0.25;
        }
    }
    let mut edges = Vec::new();
    if coupling != 0.0 {
        for i in 0..subsystems.saturating_sub(1) {
            edges.push(Edge {
                i,
                j: i + 1,
                a: scaled_identity(n, coupling),
            });
            edges.push(Edge {
                i: i + 1,
                j: i,
                a: scaled_identity(n, coupling),
            });
        }
    }
    let mut sys = InterconnectedSystem {
        subsystems,
        n,
        m: 1,
        r: 1,
        edges,
        diag: vec![local; subsystems],
        b: vec![unit(n, 0); subsystems],
        c: vec![vec![1.0; n]; subsystems],
        d: vec![vec![0.0]; subsystems],
        meta: json!({"model": "chain", "N": subsystems, "n": n, "coupling": coupling, "rho": rho}),
    };
    // A is symmetric, so its spectral radius equals its spectral norm.
    let a = assemble_global(&sys)?.a;
    let (norm, _) = spectral_norm(&a, &SpectralOptions::default());
    scale_dynamics(&mut sys, rho / norm);
    Ok(sys)
}

fn scale_dynamics(sys: &mut InterconnectedSystem, s: f64) {
    for blk in sys.diag.iter_mut() {
        blk.iter_mut().for_each(|v| *v *= s);
    }
    for e in sys.edges.iter_mut() {
        e.a.iter_mut().for_each(|v| *v *= s);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomModelSpec {
    pub subsystems: usize,
    pub n: usize,
    pub m: usize,
    pub r: usize,
    /// Mean out-degree of the interconnection graph (self loops excluded).
    pub mean_degree: f64,
    /// Target spectral radius of the global `A`.
    pub rho: f64,
    /// Draw all blocks with strictly positive entries.
    pub positive: bool,
    pub seed: u64,
}

impl Default for RandomModelSpec {
    fn default() -> Self {
        RandomModelSpec {
            subsystems: 20,
            n: 2,
            m: 1,
            r: 1,
            mean_degree: 3.0,
            rho: 0.9,
            positive: false,
            seed: 1,
        }
    }
}

/// Spectral radius estimate from the asymptotic growth rate of power
/// iteration, `(‖A^{k+w}v‖ / ‖A^k v‖)^{1/w}`. Averaging over a window copes
/// with complex-conjugate dominant pairs.
pub fn spectral_radius_estimate(sys: &InterconnectedSystem, seed: u64) -> Result<f64> {
    let a = assemble_global(sys)?.a;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..a.nrows()).map(|_| rng.random::<f64>() - 0.5).collect();
    let (burn, window) = (1500, 200);
    let mut log_growth = 0.0;
    for step in 0..burn + window {
        let next = a.matvec(&v)?;
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        if step >= burn {
            log_growth += norm.ln();
        }
        v = next.into_iter().map(|x| x / norm).collect();
    }
    Ok((log_growth / window as f64).exp())
}

/// Random interconnected system with exactly `round(mean_degree·N)`
/// distinct directed edges, random nonzero diagonal blocks and `A`
/// rescaled to spectral radius `rho`. Deterministic in `seed`.
pub fn generate_random(spec: &RandomModelSpec) -> Result<InterconnectedSystem> {
    let (nn, n, m, r) = (spec.subsystems, spec.n, spec.m, spec.r);
    if nn == 0 || n == 0 || m == 0 || r == 0 {
        return Err(Error::invalid("spec", "N, n, m and r must be positive"));
    }
    if !(spec.rho > 0.0) {
        return Err(Error::invalid("rho", "must be positive"));
    }
    let target = (spec.mean_degree * nn as f64).round() as usize;
    if spec.mean_degree < 0.0 || target > nn * (nn - 1) {
        return Err(Error::invalid("mean_degree", format!("cannot place {target} edges on {nn} nodes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let positive = spec.positive;
    let draw = |len: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..len)
            .map(|_| {
                if positive {
                    rng.random_range(0.1..1.0)
                } else {
                    let v: f64 = normal.sample(rng);
                    if v == 0.0 { 1.0 } else { v }
                }
            })
            .collect()
    };
    let mut pairs = BTreeSet::new();
    while pairs.len() < target {
        let i = rng.random_range(0..nn);
        let j = rng.random_range(0..nn);
        if i != j {
            pairs.insert((i, j));
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(i, j)| Edge {
            i,
            j,
            a: draw(n * n, &mut rng),
        })
        .collect();
    let diag = (0..nn).map(|_| draw(n * n, &mut rng)).collect();
    let b = (0..nn).map(|_| draw(n * m, &mut rng)).collect();
    let c = (0..nn).map(|_| draw(r * n, &mut rng)).collect();
    let d = (0..nn).map(|_| draw(r * m, &mut rng)).collect();
    let mut sys = InterconnectedSystem {
        subsystems: nn,
        n,
        m,
        r,
        edges,
        diag,
        b,
        c,
        d,
        meta: serde_json::to_value(spec)?,
    };
    let radius = spectral_radius_estimate(&sys, spec.seed ^ 0x9e37_79b9)?;
    if radius > 0.0 {
        scale_dynamics(&mut sys, spec.rho / radius);
    }
    Ok(sys)
}
