mod oracles;

use ditsgcr::graph::{adjacency_weights, WeightMode};
use ditsgcr::laplacian::{build_graph_laplacian, solve, LaplacianParams};
use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use oracles::*;

fn uniform_r(n: usize, k: usize) -> Array2<f64> {
    Array2::from_elem((n, k), 1.0 / k as f64)
}

fn to_dense(x: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[[i, j]])
}

#[test]
fn triangle_spectrum() {
    let g = build(3, vec![(0, 1, 0), (1, 2, 0), (2, 0, 0)]);
    let w = adjacency_weights(&g.graph, WeightMode::Count).unwrap();
    let l = build_graph_laplacian(&w).unwrap().to_dense();
    let mut eig: Vec<f64> = to_dense(l.view()).symmetric_eigen().eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    for (got, want) in eig.iter().zip([0.0, 3.0, 3.0]) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn smoothing_lowers_the_objective() {
    let mut r = rng(21);
    for _ in 0..30 {
        // a ring guarantees connectivity, random chords on top
        let n = 30;
        let mut edges: Vec<(usize, usize, u64)> = (0..n).map(|i| (i, (i + 1) % n, 0)).collect();
        let extra = random_graph(&mut r, n, 1, 40, 0);
        edges.extend(extra.edges.iter().filter(|e| e.0 < n && e.1 < n));
        let g = build(n, edges);
        let w = adjacency_weights(&g.graph, WeightMode::Count).unwrap();
        let b = random_matrix(&mut r, n, 3);
        let params = LaplacianParams { lambda: 0.0, mu: 1.0, ..LaplacianParams::default() };
        let (z, _) = solve(b.view(), &w, uniform_r(n, 3).view(), &params).unwrap();

        let l = laplacian_of(&dense_adjacency(&g));
        let (zd, bd) = (to_dense(z.view()), to_dense(b.view()));
        let objective = (zd.transpose() * &l * &zd).trace() + (&zd - &bd).norm_squared();
        let at_b = (bd.transpose() * &l * &bd).trace();
        assert!(objective <= at_b + 1e-9);
    }
}

#[test]
fn edits_in_one_component_leave_the_other_alone() {
    let left = vec![(0, 1, 0), (1, 2, 0), (2, 3, 0)];
    let mut right = vec![(4, 5, 0), (5, 6, 0)];
    let mut r = rng(22);
    let b = random_matrix(&mut r, 8, 2);
    let params = LaplacianParams::default();
    let run = |edges: Vec<(usize, usize, u64)>| {
        let g = build(8, edges);
        let w = adjacency_weights(&g.graph, WeightMode::Count).unwrap();
        solve(b.view(), &w, uniform_r(8, 2).view(), &params).unwrap().0
    };
    let before = run([left.clone(), right.clone()].concat());
    right.extend([(6, 7, 0), (4, 7, 0), (5, 7, 0)]);
    let after = run([left, right].concat());
    for i in 0..4 {
        for c in 0..2 {
            assert!((before[[i, c]] - after[[i, c]]).abs() < 1e-5);
        }
    }
}

#[test]
fn large_mu_pins_to_subx() {
    let mut r = rng(23);
    let g = random_graph(&mut r, 20, 1, 60, 0);
    let w = adjacency_weights(&g.graph, WeightMode::Count).unwrap();
    let b = random_matrix(&mut r, g.n, 3);
    let params = LaplacianParams { mu: 1e6, ..LaplacianParams::default() };
    let (z, _) = solve(b.view(), &w, uniform_r(g.n, 3).view(), &params).unwrap();
    assert!(max_abs_diff(z.view(), b.view()) < 1e-3);
}

#[test]
fn uniform_assignment_scales_cluster_terms() {
    // With r = 1/K everywhere, each L_c is L/K², so M = (1 + λ/K) L + μ I.
    let mut r = rng(24);
    let g = random_graph(&mut r, 25, 1, 70, 0);
    let k = 4;
    let w = adjacency_weights(&g.graph, WeightMode::Count).unwrap();
    let m = dense_system(&dense_adjacency(&g), uniform_r(g.n, k).view(), 2.0, 1.0);
    let want = laplacian_of(&dense_adjacency(&g)) * (1.0 + 2.0 / k as f64) + DMatrix::identity(g.n, g.n);
    assert!((&m - &want).abs().max() < 1e-12);
    let b = random_matrix(&mut r, g.n, k);
    let params = LaplacianParams { lambda: 2.0, ..LaplacianParams::default() };
    let (z, _) = solve(b.view(), &w, uniform_r(g.n, k).view(), &params).unwrap();
    let dense = dense_solve(&want, b.view(), 1.0);
    assert!(max_abs_diff(z.view(), dense.view()) < 1e-5);
}

#[test]
fn jacobi_matches_plain_cg() {
    let mut r = rng(25);
    let g = random_graph(&mut r, 50, 1, 300, 0);
    let w = adjacency_weights(&g.graph, WeightMode::Count).unwrap();
    let b = random_matrix(&mut r, g.n, 3);
    let rr = uniform_r(g.n, 3);
    let plain = solve(b.view(), &w, rr.view(), &LaplacianParams::default()).unwrap().0;
    let jac = solve(b.view(), &w, rr.view(), &LaplacianParams { jacobi: true, ..LaplacianParams::default() }).unwrap().0;
    assert!(max_abs_diff(plain.view(), jac.view()) < 1e-5);
}
