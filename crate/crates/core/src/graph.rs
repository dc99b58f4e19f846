//! Communication topology and the matrices derived from it.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Undirected, unweighted communication graph over `n` players.
///
/// Nodes are 0-based internally; [`CommGraph::from_edges_one_based`] accepts the
/// 1-based edge lists used in scenario files.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    adjacency: DMatrix<f64>,
}

impl CommGraph {
    /// Validates a 0/1 adjacency matrix: square, symmetric, zero diagonal.
    ///
    /// Connectivity is *not* required here; use [`CommGraph::is_connected`]
    /// or let [`estimator_matrix`] reject disconnected graphs.
    pub fn from_adjacency(adjacency: DMatrix<f64>) -> Result<Self> {
        let n = adjacency.nrows();
        if n == 0 {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        if adjacency.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: adjacency.ncols(),
                context: "adjacency must be square",
            });
        }
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::InvalidGraph(format!("self loop at node {}", i + 1)));
            }
            for j in 0..n {
                let a = adjacency[(i, j)];
                if a != 0.0 && a != 1.0 {
                    return Err(Error::InvalidGraph(format!(
                        "weighted edge ({}, {}) = {a}; only 0/1 entries are supported",
                        i + 1,
                        j + 1
                    )));
                }
                if a != adjacency[(j, i)] {
                    return Err(Error::InvalidGraph(format!(
                        "adjacency is not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { adjacency })
    }

    /// Builds a graph from 0-based undirected edges. Duplicate edges are merged.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut a = DMatrix::zeros(n, n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) references a node outside 1..={n}",
                    i + 1,
                    j + 1
                )));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self loop at node {}", i + 1)));
            }
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        Self::from_adjacency(a)
    }

    pub fn from_edges_one_based(n: usize, edges: &[[usize; 2]]) -> Result<Self> {
        let mut zero_based = Vec::with_capacity(edges.len());
        for e in edges {
            if e[0] == 0 || e[1] == 0 {
                return Err(Error::InvalidGraph(
                    "edge lists are 1-based; node 0 does not exist".into(),
                ));
            }
            zero_based.push((e[0] - 1, e[1] - 1));
        }
        Self::from_edges(n, &zero_based)
    }

    /// Cycle 1-2-...-n-1. For `n == 2` this is the single edge.
    pub fn ring(n: usize) -> Self {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).filter(|(i, j)| i != j).collect();
        Self::from_edges(n, &edges).expect("ring edges are valid")
    }

    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges).expect("path edges are valid")
    }

    pub fn complete(n: usize) -> Self {
        let mut a = DMatrix::from_element(n, n, 1.0);
        a.fill_diagonal(0.0);
        Self::from_adjacency(a).expect("complete graph is valid")
    }

    pub fn n_players(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    #[inline]
    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.adjacency[(i, j)]
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_players()).filter(move |&k| self.adjacency[(i, k)] != 0.0)
    }

    /// Breadth-first reachability from node 0.
    pub fn is_connected(&self) -> bool {
        let n = self.n_players();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for k in self.neighbors(i) {
                if !seen[k] {
                    seen[k] = true;
                    queue.push_back(k);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// 1-based edge list, each edge once with `i < j`.
    pub fn edges_one_based(&self) -> Vec<[usize; 2]> {
        let n = self.n_players();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.a(i, j) != 0.0 {
                    out.push([i + 1, j + 1]);
                }
            }
        }
        out
    }
}

/// `L = D - A`.
pub fn laplacian(g: &CommGraph) -> DMatrix<f64> {
    let a = g.adjacency();
    let mut l = -a.clone();
    for i in 0..g.n_players() {
        l[(i, i)] = a.row(i).sum();
    }
    l
}

/// `(L ⊗ I_n + A₀) ⊗ I_d`, the matrix driving the stacked estimate error.
///
/// Row/column index of estimate coordinate `c` of player `i`'s copy of
/// player `j`'s action is `(i * n + j) * d + c`.
#[derive(Debug, Clone)]
pub struct EstimatorMatrix {
    matrix: DMatrix<f64>,
    n_players: usize,
    action_dim: usize,
}

impl EstimatorMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n_players(&self) -> usize {
        self.n_players
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.matrix.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues().last().unwrap()
    }
}

pub fn estimator_matrix(g: &CommGraph, action_dim: usize) -> Result<EstimatorMatrix> {
    if action_dim == 0 {
        return Err(Error::InvalidGraph("action dimension must be positive".into()));
    }
    if !g.is_connected() {
        return Err(Error::DisconnectedGraph);
    }
    let n = g.n_players();
    let d = action_dim;
    let l = laplacian(g);
    let dim = n * n * d;
    let mut m = DMatrix::zeros(dim, dim);
    let idx = |i: usize, j: usize, c: usize| (i * n + j) * d + c;
    for i in 0..n {
        for k in 0..n {
            if l[(i, k)] == 0.0 {
                continue;
            }
            for j in 0..n {
                for c in 0..d {
                    m[(idx(i, j, c), idx(k, j, c))] += l[(i, k)];
                }
            }
        }
        for j in 0..n {
            for c in 0..d {
                m[(idx(i, j, c), idx(i, j, c))] += g.a(i, j);
            }
        }
    }
    Ok(EstimatorMatrix {
        matrix: m,
        n_players: n,
        action_dim: d,
    })
}

/// Solves `P·M + M·P = Q` for symmetric positive definite `M` and symmetric `Q`.
///
/// Works in the eigenbasis of `M`, where the equation decouples into
/// `P̃_ij (λ_i + λ_j) = Q̃_ij`.
pub fn solve_lyapunov(m: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.ncols(),
            context: "Lyapunov operand must be square",
        });
    }
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: q.nrows(),
            context: "Lyapunov right-hand side must match the operand",
        });
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lmin = eig.eigenvalues.min();
    if lmin <= 0.0 {
        return Err(Error::NotPositiveDefinite(lmin));
    }
    let u = &eig.eigenvectors;
    let mut qt = u.transpose() * q * u;
    for i in 0..n {
        for j in 0..n {
            qt[(i, j)] /= eig.eigenvalues[i] + eig.eigenvalues[j];
        }
    }
    let p = u * qt * u.transpose();
    Ok((&p + p.transpose()) * 0.5)
}

/// `P` for `Q = I`, used by the Lyapunov surrogate.
pub fn diagnostic_p(m: &EstimatorMatrix) -> Result<DMatrix<f64>> {
    solve_lyapunov(m.matrix(), &DMatrix::identity(m.dim(), m.dim()))
}
