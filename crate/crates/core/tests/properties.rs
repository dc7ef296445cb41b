mod common;

use common::*;
use netcem::bundle::{read_bundle, write_bundle, BundleMeta};
use netcem::cem::{assemble_coarse, CemBasis, PatchOptions};
use netcem::linalg::{dense_sym_geig, lanczos_smallest_geig, CsrMatrix};
use netcem::problem::{gen_fem_p1, CoefficientField, FemLoad, TriMesh};
use netcem::spectral::build_local_forms;
use netcem::study::solution_hash;
use netcem::{
    partition_grow, run_pipeline, AuxSpace, CpoPolicy, MethodConfig, Partition, SpatialNetwork,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, max_nodes: usize) -> (SpatialNetwork, Partition, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(10..=max_nodes);
    let net = random_network(&mut rng, n, 1e5);
    let part = partition_grow(&net, rng.gen_range(2..=5), seed, &Default::default()).unwrap();
    (net, part, rng)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_is_s_orthogonal(seed in any::<u64>(), nov in 1usize..4) {
        let (net, part, mut rng) = instance(seed, 40);
        let n = net.node_count();
        let aux = AuxSpace::build(&net, &part, nov, &CpoPolicy::default(), 1e-10).unwrap();
        let (v, w) = (random_vec(&mut rng, n), random_vec(&mut rng, n));
        let pv = aux.project(&v).unwrap();
        let pw = aux.project(&w).unwrap();
        let ppv = aux.project(&pv).unwrap();
        let nv = aux.s_inner(&v, &v).sqrt();
        let nw = aux.s_inner(&w, &w).sqrt();
        let d: Vec<f64> = ppv.iter().zip(&pv).map(|(a, b)| a - b).collect();
        prop_assert!(aux.s_inner(&d, &d).sqrt() <= 1e-10 * nv);
        prop_assert!((aux.s_inner(&pv, &w) - aux.s_inner(&v, &pw)).abs() <= 1e-10 * nv * nw);
        // contraction in the s-norm
        prop_assert!(aux.s_inner(&pv, &pv).sqrt() <= nv * (1.0 + 1e-12));
    }

    #[test]
    fn local_spectral_estimate(seed in any::<u64>(), nov in 1usize..4) {
        let (net, part, mut rng) = instance(seed, 40);
        let n = net.node_count();
        let aux = AuxSpace::build(&net, &part, nov, &CpoPolicy::default(), 1e-10).unwrap();
        for i in 0..part.count() {
            let Some(lambda) = aux.subgraphs[i].eigen.next_value else { continue };
            let forms = build_local_forms(&net, &part, i, &CpoPolicy::default()).unwrap();
            let local = random_vec(&mut rng, forms.nodes.len());
            let mut v = vec![0.0; n];
            for (&x, &val) in forms.nodes.iter().zip(&local) {
                v[x] = val;
            }
            let pv = aux.project(&v).unwrap();
            let lhs: f64 = forms.nodes.iter().map(|&x| aux.s_weights[x] * (v[x] - pv[x]).powi(2)).sum();
            let rhs = forms.a_matrix.quad_form(&local) / lambda;
            let norm: f64 = forms.nodes.iter().map(|&x| aux.s_weights[x] * v[x] * v[x]).sum();
            prop_assert!(lhs <= rhs + 1e-8 * norm.max(rhs), "subgraph {i}: {lhs} > {rhs}");
        }
    }

    #[test]
    fn coarse_matrix_is_spd(seed in any::<u64>()) {
        let (net, part, mut rng) = instance(seed, 40);
        let aux = AuxSpace::build(&net, &part, 2, &CpoPolicy::default(), 1e-10).unwrap();
        let basis = CemBasis::build(&net, &part, &aux, Some(1), &PatchOptions::default()).unwrap();
        let f = random_vec(&mut rng, net.node_count());
        let coarse = assemble_coarse(&net, &basis, &f).unwrap();
        prop_assert!(coarse.asymmetry <= 1e-12);
        let eig = coarse.matrix.clone().symmetric_eigen();
        prop_assert!(eig.eigenvalues.iter().all(|&l| l > 0.0));
    }

    #[test]
    fn grown_partitions_are_deterministic_and_connected(seed in any::<u64>(), parts in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(parts.max(8)..=60);
        let net = random_network(&mut rng, n, 10.0);
        let a = partition_grow(&net, parts, seed, &Default::default()).unwrap();
        let b = partition_grow(&net, parts, seed, &Default::default()).unwrap();
        prop_assert_eq!(a.assignment(), b.assignment());
        prop_assert_eq!(a.count(), parts);
        for i in 0..a.count() {
            let keep: Vec<bool> = (0..n).map(|x| a.part_of(x) == i).collect();
            let (comp, _) = net.components(Some(&keep));
            let first = comp[a.nodes(i)[0]];
            prop_assert!(a.nodes(i).iter().all(|&x| comp[x] == first));
        }
    }
}

#[test]
fn lanczos_agrees_with_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..6 {
        let n = rng.gen_range(80..200);
        let net = random_network(&mut rng, n, 1e4);
        let a = net.operator_matrix();
        let d = net.lumped_plus_mass();
        let dense = dense_sym_geig(&a.to_dense(), &d, 6).unwrap();
        let lanczos = lanczos_smallest_geig(&a, &d, 6, 0.0, 1e-10).unwrap();
        for (x, y) in dense.values.iter().zip(&lanczos.values) {
            assert!((x - y).abs() <= 1e-8 * x.abs().max(1e-12), "{x} vs {y}");
        }
    }
}

#[test]
fn fem_bundle_round_trip() {
    let mesh = TriMesh::unit_square(12).unwrap();
    let field = CoefficientField::Rectangles {
        background: 1.0,
        contrast: 1e4,
        rects: vec![[0.2, 0.3, 0.7, 0.4]],
    };
    let fem = gen_fem_p1(mesh, &field, &FemLoad::Sine).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_bundle(
        dir.path(),
        &fem.network,
        &fem.load,
        Some(&fem.mass_matrix),
        &BundleMeta::default(),
    )
    .unwrap();
    let b = read_bundle(dir.path()).unwrap();
    let (x, y): (CsrMatrix, CsrMatrix) =
        (fem.network.operator_matrix(), b.network.operator_matrix());
    let scale = x.max_abs();
    for (r, c, v) in x.triplets() {
        assert!((v - y.get(r, c)).abs() <= 1e-12 * scale);
    }
    assert_eq!(x.nnz(), y.nnz());
    assert_eq!(b.load, fem.load);
    assert_eq!(b.l2_weight.unwrap(), fem.mass_matrix);
}

#[test]
fn solution_is_independent_of_thread_count() {
    let (net, part, mut rng) = instance(17, 120);
    let f = random_vec(&mut rng, net.node_count());
    let cfg = MethodConfig {
        layers: Some(1),
        nov: 2,
        ..Default::default()
    };
    let hashes: Vec<String> = [1, 2, 3]
        .iter()
        .map(|&t| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .unwrap();
            let out = pool
                .install(|| run_pipeline(&net, &part, &f, &cfg))
                .unwrap();
            solution_hash(&out.solution.u)
        })
        .collect();
    assert!(hashes.windows(2).all(|w| w[0] == w[1]));
}
