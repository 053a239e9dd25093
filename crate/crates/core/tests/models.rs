use gramspai::models::{
    generate_banded_chain, generate_heat3d, generate_random, spectral_radius_estimate, HeatModelSpec,
    RandomModelSpec,
};
use gramspai::statespace::assemble_global;
use gramspai::Error;

#[test]
fn heat_grid_is_a_four_neighbour_lattice() {
    let spec = HeatModelSpec {
        gx: 5,
        gy: 4,
        gz: 3,
        ..Default::default()
    };
    let sys = generate_heat3d(&spec).unwrap();
    assert_eq!((sys.subsystems, sys.n, sys.m, sys.r), (20, 3, 1, 1));
    // 2·(gx−1)·gy + 2·gx·(gy−1) directed edges.
    assert_eq!(sys.edges.len(), 2 * 4 * 4 + 2 * 5 * 3);
    let corner = sys.neighbors(0);
    assert_eq!(corner.len(), 2);
    let interior = sys.neighbors(1 + 5);
    assert_eq!(interior.len(), 4);
    let pattern = sys.interconnection_pattern();
    assert!(pattern.is_symmetric());
}

#[test]
fn heat_dynamics_conserve_mass_away_from_boundary() {
    let sys = generate_heat3d(&HeatModelSpec::default()).unwrap();
    let a = assemble_global(&sys).unwrap().a;
    let lam = HeatModelSpec::default().lambda();
    // Middle layer of an interior column: four lateral, two vertical neighbours.
    let col = 15 + 30 * 15;
    let row = col * 3 + 1;
    let sum: f64 = (0..a.ncols()).map(|j| a.get(row, j)).sum();
    assert!((sum - 1.0).abs() <= 1e-12);
    assert!((a.get(row, row) - (1.0 - 6.0 * lam)).abs() <= 1e-15);
}

#[test]
fn unstable_time_step_is_rejected() {
    let spec = HeatModelSpec {
        dt: 0.5,
        ..Default::default()
    };
    assert!(matches!(generate_heat3d(&spec), Err(Error::UnstableTimeStep { .. })));
}

#[test]
fn random_model_has_requested_degree_and_radius() {
    for (seed, rho) in [(1, 0.5), (2, 0.9), (3, 0.99)] {
        let spec = RandomModelSpec {
            subsystems: 40,
            n: 2,
            mean_degree: 3.0,
            rho,
            seed,
            ..Default::default()
        };
        let sys = generate_random(&spec).unwrap();
        assert_eq!(sys.edges.len(), 120);
        let radius = spectral_radius_estimate(&sys, 77).unwrap();
        assert!((radius - rho).abs() <= 0.02 * rho, "seed {seed}: {radius} vs {rho}");
        assert!(sys.edges.iter().all(|e| e.i != e.j));
        assert_eq!(generate_random(&spec).unwrap(), sys);
    }
}

#[test]
fn positive_models_have_positive_blocks() {
    let sys = generate_random(&RandomModelSpec {
        positive: true,
        ..Default::default()
    })
    .unwrap();
    assert!(sys.edges.iter().all(|e| e.a.iter().all(|&v| v > 0.0)));
    assert!(sys.diag.iter().flatten().all(|&v| v > 0.0));
}

#[test]
fn impossible_degree_is_rejected() {
    let spec = RandomModelSpec {
        subsystems: 3,
        mean_degree: 5.0,
        ..Default::default()
    };
    assert!(generate_random(&spec).is_err());
}

#[test]
fn chain_is_scaled_to_target_radius() {
    let sys = generate_banded_chain(10, 2, 0.3, 0.8).unwrap();
    assert_eq!(sys.edges.len(), 18);
    let radius = spectral_radius_estimate(&sys, 1).unwrap();
    assert!((radius - 0.8).abs() <= 1e-3);
    assert!(generate_banded_chain(10, 2, 0.3, 1.5).is_err());
}
