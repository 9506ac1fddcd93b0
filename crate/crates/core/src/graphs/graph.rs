use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::Tensor;

/// Undirected simple graph with per-node features.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    node_features: Tensor,
}

/// On-disk form: `{"n": .., "edges": [[u, v], ..], "node_features": [[..], ..]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphJson {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
    pub node_features: Vec<Vec<f64>>,
}

impl Graph {
    /// Validates and normalizes edges to `(min, max)` order.
    pub fn new(n_nodes: usize, edges: Vec<(usize, usize)>, node_features: Tensor) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::Graph("graph needs at least one node".into()));
        }
        if node_features.rows() != n_nodes {
            return Err(Error::Graph(format!(
                "{} feature rows for {n_nodes} nodes",
                node_features.rows()
            )));
        }
        let mut seen = BTreeSet::new();
        let mut adjacency = vec![Vec::new(); n_nodes];
        let mut canon = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::Graph(format!("edge ({u}, {v}) out of range")));
            }
            if u == v {
                return Err(Error::Graph(format!("self-loop at {u}")));
            }
            let e = (u.min(v), u.max(v));
            if !seen.insert(e) {
                return Err(Error::Graph(format!("duplicate edge ({}, {})", e.0, e.1)));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
            canon.push(e);
        }
        for a in &mut adjacency {
            a.sort_unstable();
        }
        Ok(Self {
            n_nodes,
            edges: canon,
            adjacency,
            node_features,
        })
    }

    /// Graph whose single node feature is its degree centrality `deg / (n - 1)`.
    pub fn with_degree_centrality(n_nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let g = Self::new(n_nodes, edges, Tensor::zeros(n_nodes, 1))?;
        let feats = g.degree_centrality();
        Ok(Self {
            node_features: Tensor::from_vec(n_nodes, 1, feats)?,
            ..g
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Same structure with replacement node features.
    pub fn with_node_features(&self, node_features: Tensor) -> Result<Self> {
        if node_features.rows() != self.n_nodes {
            return Err(shape_err(
                "Graph::with_node_features",
                format!("{} feature rows for {} nodes", node_features.rows(), self.n_nodes),
            ));
        }
        Ok(Self {
            node_features,
            ..self.clone()
        })
    }

    pub fn node_features(&self) -> &Tensor {
        &self.node_features
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn degree_centrality(&self) -> Vec<f64> {
        let denom = (self.n_nodes.saturating_sub(1)).max(1) as f64;
        (0..self.n_nodes).map(|v| self.degree(v) as f64 / denom).collect()
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n_nodes];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &w in &self.adjacency[u] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == self.n_nodes
    }

    /// Relabels nodes: old node `v` becomes `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_nodes {
            return Err(Error::Graph("permutation length".into()));
        }
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let d = self.feature_dim();
        let mut feats = Tensor::zeros(self.n_nodes, d);
        for v in 0..self.n_nodes {
            for c in 0..d {
                feats.set(perm[v], c, self.node_features.get(v, c));
            }
        }
        Self::new(self.n_nodes, edges, feats)
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            n: self.n_nodes,
            edges: self.edges.iter().map(|&(u, v)| [u, v]).collect(),
            node_features: (0..self.n_nodes)
                .map(|v| self.node_features.row(v).to_vec())
                .collect(),
        }
    }

    pub fn from_json(j: &GraphJson) -> Result<Self> {
        let feats = Tensor::from_rows(&j.node_features)?;
        Self::new(j.n, j.edges.iter().map(|e| (e[0], e[1])).collect(), feats)
    }
}

impl Serialize for Graph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Graph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = GraphJson::deserialize(d)?;
        Graph::from_json(&j).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_edges() {
        let f = || Tensor::zeros(3, 1);
        assert!(Graph::new(3, vec![(0, 0)], f()).is_err());
        assert!(Graph::new(3, vec![(0, 1), (1, 0)], f()).is_err());
        assert!(Graph::new(3, vec![(0, 3)], f()).is_err());
        assert!(Graph::new(3, vec![], Tensor::zeros(2, 1)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let g = Graph::with_degree_centrality(4, vec![(0, 1), (1, 2), (2, 3)]).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert!(s.starts_with("{\"n\":4,\"edges\":[[0,1],[1,2],[2,3]]"));
        let back: Graph = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn degree_centrality_is_normalized() {
        let g = Graph::with_degree_centrality(4, vec![(0, 1), (0, 2), (0, 3)]).unwrap();
        assert_eq!(g.node_features().data(), &[1.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
    }
}
