use mixnash::graph::{estimator_matrix, laplacian, solve_lyapunov, CommGraph};
use mixnash::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Random undirected graph on `2..=8` nodes as an edge mask.
fn any_graph() -> impl Strategy<Value = CommGraph> {
    (2usize..=8)
        .prop_flat_map(|n| (Just(n), proptest::collection::vec(any::<bool>(), n * (n - 1) / 2)))
        .prop_map(|(n, mask)| {
            let mut edges = Vec::new();
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if mask[k] {
                        edges.push((i, j));
                    }
                    k += 1;
                }
            }
            CommGraph::from_edges(n, &edges).unwrap()
        })
}

/// Random connected graph: a random spanning tree plus random extra edges.
fn connected_graph() -> impl Strategy<Value = CommGraph> {
    (2usize..=8)
        .prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec(any::<prop::sample::Index>(), n - 1),
                proptest::collection::vec(any::<bool>(), n * (n - 1) / 2),
            )
        })
        .prop_map(|(n, parents, extra)| {
            let mut edges: Vec<(usize, usize)> =
                (1..n).map(|v| (parents[v - 1].index(v), v)).collect();
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if extra[k] && !edges.contains(&(i, j)) {
                        edges.push((i, j));
                    }
                    k += 1;
                }
            }
            CommGraph::from_edges(n, &edges).unwrap()
        })
}

fn spd(n: usize, seed: &[f64]) -> DMatrix<f64> {
    let r = DMatrix::from_fn(n, n, |i, j| seed[(i * n + j) % seed.len()]);
    r.transpose() * &r + DMatrix::identity(n, n)
}

proptest! {
    #[test]
    fn laplacian_is_symmetric_psd_with_zero_row_sums(g in any_graph()) {
        let l = laplacian(&g);
        let n = g.n_players();
        prop_assert_eq!(&l, &l.transpose());
        for i in 0..n {
            prop_assert!(l.row(i).sum().abs() < 1e-12);
            prop_assert_eq!(l[(i, i)], g.neighbors(i).count() as f64);
        }
        let ev = l.symmetric_eigen().eigenvalues;
        prop_assert!(ev.min() > -1e-10);
    }

    #[test]
    fn connectivity_matches_algebraic_connectivity(g in any_graph()) {
        let mut ev: Vec<f64> = laplacian(&g).symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        prop_assert_eq!(g.is_connected(), ev[1] > 1e-9);
        let m = estimator_matrix(&g, 1);
        if g.is_connected() {
            prop_assert!(m.is_ok());
        } else {
            prop_assert!(matches!(m, Err(Error::DisconnectedGraph)));
        }
    }

    #[test]
    fn estimator_matrix_is_spd_and_kronecker_indexed(g in connected_graph(), d in 1usize..=2) {
        let n = g.n_players();
        let m = estimator_matrix(&g, d).unwrap();
        let mat = m.matrix();
        prop_assert_eq!(mat.nrows(), n * n * d);
        prop_assert_eq!(mat, &mat.transpose());
        prop_assert!(m.lambda_min() > 0.0);
        prop_assert!(m.lambda_min() <= m.lambda_max());
        let idx = |i: usize, j: usize, c: usize| (i * n + j) * d + c;
        for i in 0..n {
            let deg = g.neighbors(i).count() as f64;
            for j in 0..n {
                for c in 0..d {
                    prop_assert_eq!(mat[(idx(i, j, c), idx(i, j, c))], deg + g.a(i, j));
                    for k in 0..n {
                        if k != i {
                            prop_assert_eq!(mat[(idx(i, j, c), idx(k, j, c))], -g.a(i, k));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn lyapunov_solution_satisfies_equation(g in connected_graph(), seed in proptest::collection::vec(-1.0f64..1.0, 7)) {
        let m = estimator_matrix(&g, 1).unwrap();
        let q = spd(m.dim(), &seed);
        let p = solve_lyapunov(m.matrix(), &q).unwrap();
        let resid = &p * m.matrix() + m.matrix() * &p - &q;
        prop_assert!(resid.amax() < 1e-9 * q.amax().max(1.0), "residual {}", resid.amax());
        prop_assert!((&p - p.transpose()).amax() < 1e-12);
        prop_assert!(p.symmetric_eigen().eigenvalues.min() > 0.0);
    }
}

#[test]
fn ring_laplacian_spectrum_matches_closed_form() {
    for n in 3..=8 {
        let mut ev: Vec<f64> = laplacian(&CommGraph::ring(n)).symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        let mut expect: Vec<f64> = (0..n)
            .map(|k| 2.0 - 2.0 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
            .collect();
        expect.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "n={n}: {ev:?} vs {expect:?}");
        }
    }
}

#[test]
fn complete_graph_estimator_spectrum() {
    // Each block is L + diag(a_{·j}); adding a PSD diagonal with entries ≤ 1
    // to L (λ₁ = 0) keeps λ_min in (0, 1].
    let g = CommGraph::complete(4);
    let m = estimator_matrix(&g, 1).unwrap();
    assert!(m.lambda_min() > 0.0 && m.lambda_min() <= 1.0);
    let trace: f64 = (0..16).map(|k| m.matrix()[(k, k)]).sum();
    let ev_sum: f64 = m.eigenvalues().iter().sum();
    assert!((trace - ev_sum).abs() < 1e-10);
}

#[test]
fn invalid_adjacency_is_rejected() {
    let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    assert!(matches!(CommGraph::from_adjacency(asym), Err(Error::InvalidGraph(_))));
    let looped = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]);
    assert!(matches!(CommGraph::from_adjacency(looped), Err(Error::InvalidGraph(_))));
    let weighted = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
    assert!(CommGraph::from_adjacency(weighted).is_err());
    assert!(CommGraph::from_edges_one_based(3, &[[0, 1]]).is_err());
    assert!(CommGraph::from_edges_one_based(3, &[[1, 4]]).is_err());
}

#[test]
fn single_edge_path_estimator_matrix() {
    // n = 2, d = 1: L = [[1,-1],[-1,1]], A₀ = diag(0,1,1,0).
    let m = estimator_matrix(&CommGraph::path(2), 1).unwrap();
    let expect = DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 0.0, -1.0, 0.0, //
            0.0, 2.0, 0.0, -1.0, //
            -1.0, 0.0, 2.0, 0.0, //
            0.0, -1.0, 0.0, 1.0,
        ],
    );
    assert_eq!(m.matrix(), &expect);
    // Two decoupled 2×2 blocks [[1,-1],[-1,2]]: eigenvalues (3 ± √5)/2.
    let lo = (3.0 - 5f64.sqrt()) / 2.0;
    assert!((m.lambda_min() - lo).abs() < 1e-12);
}
