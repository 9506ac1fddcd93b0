use std::collections::BTreeSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::Graph;
use crate::rng::Rng;

/// Maximum regeneration attempts before giving up on a connected sample.
pub const MAX_ATTEMPTS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WsParams {
    pub n_nodes: usize,
    pub k_neighbors: usize,
    pub rewire_prob: f64,
}

impl WsParams {
    pub const NODES: (usize, usize) = (10, 120);
    pub const NEIGHBORS: (usize, usize) = (3, 8);
    pub const REWIRE: (f64, f64) = (0.1, 1.0);

    /// Uniform draw from the benchmark's parameter box.
    pub fn sample(rng: &mut Rng) -> Self {
        Self {
            n_nodes: rng.random_range(Self::NODES.0..=Self::NODES.1),
            k_neighbors: rng.random_range(Self::NEIGHBORS.0..=Self::NEIGHBORS.1),
            rewire_prob: rng.random_range(Self::REWIRE.0..=Self::REWIRE.1),
        }
    }

    /// Ring-lattice degree: odd `k` rounds down to the nearest even value, at least 2.
    pub fn lattice_degree(&self) -> usize {
        (self.k_neighbors - self.k_neighbors % 2).max(2)
    }

    pub fn lattice_edge_count(&self) -> usize {
        self.n_nodes * self.lattice_degree() / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 3 {
            return Err(Error::Config(format!("need n >= 3, got {}", self.n_nodes)));
        }
        if self.lattice_degree() >= self.n_nodes {
            return Err(Error::Config(format!(
                "lattice degree {} must be below n = {}",
                self.lattice_degree(),
                self.n_nodes
            )));
        }
        if !(0.0..=1.0).contains(&self.rewire_prob) {
            return Err(Error::Config(format!("rewire_prob {} not in [0, 1]", self.rewire_prob)));
        }
        Ok(())
    }
}

/// One Watts–Strogatz draw, possibly disconnected.
///
/// Lattice edges `(u, u + j)` are visited offset by offset (`j = 1..=k/2`),
/// node by node; each is rewired with probability `p` to `(u, w)` where `w`
/// is uniform over nodes that are neither `u` nor already adjacent to `u`.
pub fn watts_strogatz_once(rng: &mut Rng, params: &WsParams) -> Result<Graph> {
    params.validate()?;
    let n = params.n_nodes;
    let half = params.lattice_degree() / 2;
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for j in 1..=half {
        for u in 0..n {
            let v = (u + j) % n;
            adj[u].insert(v);
            adj[v].insert(u);
        }
    }
    for j in 1..=half {
        for u in 0..n {
            let v = (u + j) % n;
            if rng.random::<f64>() >= params.rewire_prob {
                continue;
            }
            if adj[u].len() >= n - 1 {
                continue;
            }
            let mut w = rng.random_range(0..n);
            while w == u || adj[u].contains(&w) {
                w = rng.random_range(0..n);
            }
            adj[u].remove(&v);
            adj[v].remove(&u);
            adj[u].insert(w);
            adj[w].insert(u);
        }
    }
    let edges = adj
        .iter()
        .enumerate()
        .flat_map(|(u, nb)| nb.iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
        .collect();
    Graph::with_degree_centrality(n, edges)
}

/// Regenerates until the sample is connected.
pub fn generate_watts_strogatz(rng: &mut Rng, params: &WsParams) -> Result<Graph> {
    for _ in 0..MAX_ATTEMPTS {
        let g = watts_strogatz_once(rng, params)?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::Generation {
        attempts: MAX_ATTEMPTS,
        n: params.n_nodes,
        k: params.k_neighbors,
        p: params.rewire_prob,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_rewiring_gives_ring_lattice() {
        let p = WsParams {
            n_nodes: 12,
            k_neighbors: 4,
            rewire_prob: 0.0,
        };
        let g = generate_watts_strogatz(&mut rng::from_seed(1), &p).unwrap();
        assert_eq!(g.n_edges(), 24);
        assert!((0..12).all(|v| g.degree(v) == 4));
        assert!(g.has_edge(0, 11) && g.has_edge(0, 10) && !g.has_edge(0, 3));
    }

    #[test]
    fn full_rewiring_keeps_edge_count() {
        let p = WsParams {
            n_nodes: 10,
            k_neighbors: 4,
            rewire_prob: 1.0,
        };
        let g = generate_watts_strogatz(&mut rng::from_seed(42), &p).unwrap();
        assert_eq!(g.n_edges(), 20);
        assert!(g.is_connected());
    }

    #[test]
    fn odd_k_rounds_down() {
        let p = |k| WsParams {
            n_nodes: 20,
            k_neighbors: k,
            rewire_prob: 0.5,
        };
        assert_eq!(p(3).lattice_degree(), 2);
        assert_eq!(p(7).lattice_degree(), 6);
        assert_eq!(p(8).lattice_degree(), 8);
        assert_eq!(p(3).lattice_edge_count(), 20);
    }

    #[test]
    fn sampled_params_stay_in_box() {
        let mut r = rng::from_seed(5);
        for _ in 0..500 {
            let p = WsParams::sample(&mut r);
            assert!((10..=120).contains(&p.n_nodes));
            assert!((3..=8).contains(&p.k_neighbors));
            assert!((0.1..=1.0).contains(&p.rewire_prob));
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let p = WsParams {
            n_nodes: 4,
            k_neighbors: 4,
            rewire_prob: 0.5,
        };
        assert!(generate_watts_strogatz(&mut rng::from_seed(0), &p).is_err());
    }
}
