mod common;

use common::*;
use netcem::cem::{
    assemble_coarse, build_global_basis, build_local_basis, solve_multiscale, CemBasis,
    PatchOptions,
};
use netcem::linalg::Tolerances;
use netcem::{AuxSpace, CpoPolicy, Partition, SpatialNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pipeline(
    net: &SpatialNetwork,
    part: &Partition,
    nov: usize,
    layers: Option<usize>,
    f: &[f64],
) -> Vec<f64> {
    let aux = AuxSpace::build(net, part, nov, &CpoPolicy::default(), 1e-10).unwrap();
    let basis = CemBasis::build(net, part, &aux, layers, &PatchOptions::default()).unwrap();
    let coarse = assemble_coarse(net, &basis, f).unwrap();
    solve_multiscale(net, &coarse, &basis, f, &Tolerances::default())
        .unwrap()
        .u
}

#[test]
fn six_node_path_matches_dense_constrained_minimization() {
    let net =
        SpatialNetwork::new(6, (0..5).map(|x| (x, x + 1, 1.0)).collect(), vec![1.0; 6]).unwrap();
    let assignment = [0, 0, 1, 1, 2, 2];
    let (part, _) = Partition::from_assignment(&net, &assignment).unwrap();
    let aux = AuxSpace::build(&net, &part, 1, &CpoPolicy::default(), 1e-10).unwrap();
    let oracle = dense_cem(&net, &assignment, 1, Some(1));
    for i in 0..3 {
        let col = build_local_basis(&net, &part, &aux, i, 0, 1).unwrap();
        let dense = col.to_dense(6);
        // eigenvector signs may differ between solvers
        let sign = if dense
            .iter()
            .zip(oracle.psi.column(i).iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            < 0.0
        {
            -1.0
        } else {
            1.0
        };
        for (x, &d) in dense.iter().enumerate() {
            assert!(
                (sign * d - oracle.psi[(x, i)]).abs() < 1e-10,
                "column {i} node {x}"
            );
        }
        for (x, &d) in dense.iter().enumerate() {
            if !col.nodes.contains(&x) {
                assert_eq!(d, 0.0);
            }
        }
    }
}

#[test]
fn random_networks_match_dense_pipeline() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..12 {
        let n = rng.gen_range(8..=30);
        let net = random_network(&mut rng, n, 1e3);
        let parts = rng.gen_range(2..=4);
        let part = netcem::partition_grow(&net, parts, trial, &Default::default()).unwrap();
        let nov = rng.gen_range(1..=2);
        let layers = rng.gen_range(0..=2);
        let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let u = pipeline(&net, &part, nov, Some(layers), &f);
        let oracle = dense_cem(&net, part.assignment(), nov, Some(layers));
        let a = dense_operator(&net);
        let u_ref = dense_galerkin(&a, &oracle.psi, &f);
        let err = rel_energy_error(&a, &u_ref, &u);
        assert!(err < 1e-8, "trial {trial}: {err:e}");
    }
}

#[test]
fn global_basis_is_a_orthogonal_to_kernel_of_pi() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = random_network(&mut rng, 24, 1e2);
    let part = netcem::partition_grow(&net, 3, 0, &Default::default()).unwrap();
    let aux = AuxSpace::build(&net, &part, 2, &CpoPolicy::default(), 1e-10).unwrap();
    let a = dense_operator(&net);
    for i in 0..3 {
        for j in 0..2 {
            let psi = build_global_basis(&net, &part, &aux, i, j).unwrap();
            let phi = aux.phi_global(i, j);
            assert!(energy(&a, &psi) <= 0.25 * aux.s_inner(&phi, &phi) * (1.0 + 1e-10));
            for _ in 0..5 {
                let v: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let pv = aux.project(&v).unwrap();
                let w: Vec<f64> = v.iter().zip(&pv).map(|(a, b)| a - b).collect();
                let av = a.clone() * nalgebra::DVector::from_column_slice(&w);
                let inner: f64 = psi.iter().zip(av.iter()).map(|(p, q)| p * q).sum();
                let scale = energy(&a, &psi).sqrt() * energy(&a, &w).sqrt();
                assert!(inner.abs() <= 1e-9 * scale, "{inner:e}");
            }
        }
    }
}

#[test]
fn zero_load_gives_zero_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = random_network(&mut rng, 15, 10.0);
    let part = netcem::partition_grow(&net, 3, 0, &Default::default()).unwrap();
    let u = pipeline(&net, &part, 1, Some(1), &[0.0; 15]);
    assert!(u.iter().all(|&v| v == 0.0));
}

#[test]
fn manufactured_solution_in_span_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = random_network(&mut rng, 20, 1e2);
    let part = netcem::partition_grow(&net, 4, 0, &Default::default()).unwrap();
    let aux = AuxSpace::build(&net, &part, 2, &CpoPolicy::default(), 1e-10).unwrap();
    let basis = CemBasis::build(&net, &part, &aux, Some(1), &PatchOptions::default()).unwrap();
    let c: Vec<f64> = (0..basis.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let target = basis.prolong(&c).unwrap();
    let f = net.apply_operator(&target).unwrap();
    let coarse = assemble_coarse(&net, &basis, &f).unwrap();
    let sol = solve_multiscale(&net, &coarse, &basis, &f, &Tolerances::default()).unwrap();
    let a = dense_operator(&net);
    assert!(rel_energy_error(&a, &target, &sol.u) < 1e-8);
    for (x, y) in sol.coeffs.iter().zip(&c) {
        assert!((x - y).abs() < 1e-8 * (1.0 + y.abs()));
    }
}

#[test]
fn saturated_patch_equals_global_basis() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = random_network(&mut rng, 18, 1e2);
    let part = netcem::partition_grow(&net, 3, 0, &Default::default()).unwrap();
    let aux = AuxSpace::build(&net, &part, 1, &CpoPolicy::default(), 1e-10).unwrap();
    let glo = build_global_basis(&net, &part, &aux, 0, 0).unwrap();
    let loc = build_local_basis(&net, &part, &aux, 0, 0, 10)
        .unwrap()
        .to_dense(18);
    for (g, l) in glo.iter().zip(&loc) {
        assert!((g - l).abs() < 1e-12 * (1.0 + g.abs()));
    }
}

#[test]
fn cg_patch_path_agrees_with_direct() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = random_network(&mut rng, 30, 1e2);
    let part = netcem::partition_grow(&net, 3, 0, &Default::default()).unwrap();
    let aux = AuxSpace::build(&net, &part, 2, &CpoPolicy::default(), 1e-10).unwrap();
    let direct = CemBasis::build(&net, &part, &aux, Some(1), &PatchOptions::default()).unwrap();
    let iterative = CemBasis::build(
        &net,
        &part,
        &aux,
        Some(1),
        &PatchOptions {
            direct_limit: 0,
            ..Default::default()
        },
    )
    .unwrap();
    let a = dense_operator(&net);
    for (p, q) in direct.columns.iter().zip(&iterative.columns) {
        let err = rel_energy_error(&a, &p.to_dense(30), &q.to_dense(30));
        assert!(err < 1e-8, "{err:e}");
    }
}
