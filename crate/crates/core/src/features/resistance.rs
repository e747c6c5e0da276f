use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{HubId, StaticNetwork};

/// Pairwise effective resistance between hubs of the static network.
#[derive(Clone, Debug, PartialEq)]
pub struct ResistanceMatrix {
    hubs: usize,
    data: Vec<f64>,
}

impl ResistanceMatrix {
    pub fn hubs(&self) -> usize {
        self.hubs
    }

    pub fn get(&self, a: HubId, b: HubId) -> f64 {
        self.data[a.index() * self.hubs + b.index()]
    }

    pub fn row(&self, a: HubId) -> &[f64] {
        &self.data[a.index() * self.hubs..(a.index() + 1) * self.hubs]
    }

    pub fn scaled(&self, factor: f64) -> ResistanceMatrix {
        ResistanceMatrix {
            hubs: self.hubs,
            data: self.data.iter().map(|r| r * factor).collect(),
        }
    }
}

/// Resistance distances with link conductance `beta1 * (deg(a) + deg(b))`,
/// matching how often trucks are drawn on that link.
pub fn resistance_matrix(network: &StaticNetwork, beta1: f64) -> Result<ResistanceMatrix> {
    if beta1 <= 0.0 {
        return Err(Error::param("beta1 must be positive to define conductances"));
    }
    let deg = network.degrees();
    let conductances: Vec<(usize, usize, f64)> = network
        .links()
        .iter()
        .map(|&(a, b)| {
            let c = beta1 * (deg[a as usize] + deg[b as usize]) as f64;
            (a as usize, b as usize, c)
        })
        .collect();
    resistance_from_conductances(network.hub_count(), &conductances)
}

/// Effective resistance for arbitrary positive conductances. Grounds node 0,
/// inverts the reduced Laplacian `X` (Cholesky) and reads
/// `r(i, j) = X_ii + X_jj - 2 X_ij` with the grounded row and column at zero.
pub fn resistance_from_conductances(n: usize, conductances: &[(usize, usize, f64)]) -> Result<ResistanceMatrix> {
    if n == 0 {
        return Ok(ResistanceMatrix { hubs: 0, data: Vec::new() });
    }
    let mut reduced = DMatrix::<f64>::zeros(n - 1, n - 1);
    let mut adjacency = vec![Vec::new(); n];
    for &(a, b, c) in conductances {
        if a >= n || b >= n || a == b || !(c > 0.0) {
            return Err(Error::param(format!("bad conductance ({a}, {b}, {c})")));
        }
        adjacency[a].push(b);
        adjacency[b].push(a);
        for (u, v) in [(a, b), (b, a)] {
            if u > 0 {
                reduced[(u - 1, u - 1)] += c;
                if v > 0 {
                    reduced[(u - 1, v - 1)] -= c;
                }
            }
        }
    }
    if !connected(&adjacency) {
        return Err(Error::Disconnected);
    }
    let inverse = reduced
        .cholesky()
        .ok_or(Error::Disconnected)?
        .inverse();
    let x = |i: usize, j: usize| if i == 0 || j == 0 { 0.0 } else { inverse[(i - 1, j - 1)] };
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                data[i * n + j] = x(i, i) + x(j, j) - 2.0 * x(i, j);
            }
        }
    }
    // Symmetrize away rounding.
    for i in 0..n {
        for j in i + 1..n {
            let r = 0.5 * (data[i * n + j] + data[j * n + i]);
            data[i * n + j] = r;
            data[j * n + i] = r;
        }
    }
    Ok(ResistanceMatrix { hubs: n, data })
}

fn connected(adjacency: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; adjacency.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adjacency[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}
