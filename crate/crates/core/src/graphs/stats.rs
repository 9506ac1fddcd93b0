use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::Graph;

/// Treatment statistics consumed by the small-world outcome model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    /// Vertex connectivity ν(G).
    pub connectivity: usize,
    /// Mean hop distance over unordered node pairs, l(G).
    pub avg_shortest_path: f64,
}

pub fn graph_statistics(g: &Graph) -> Result<GraphStats> {
    if !g.is_connected() {
        return Err(Error::Graph("statistics need a connected graph".into()));
    }
    Ok(GraphStats {
        connectivity: vertex_connectivity(g),
        avg_shortest_path: average_shortest_path(g),
    })
}

pub fn bfs_distances(g: &Graph, source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; g.n_nodes()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].expect("queued nodes have a distance");
        for &w in g.neighbors(u) {
            if dist[w].is_none() {
                dist[w] = Some(du + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Assumes `g` is connected; 0 for a single node.
pub fn average_shortest_path(g: &Graph) -> f64 {
    let n = g.n_nodes();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0usize;
    for s in 0..n {
        total += bfs_distances(g, s)
            .iter()
            .skip(s + 1)
            .map(|d| d.unwrap_or(0))
            .sum::<usize>();
    }
    total as f64 / (n * (n - 1) / 2) as f64
}

/// Unit-capacity flow network on split vertices: `v_in = 2v`, `v_out = 2v + 1`.
struct FlowNet {
    head: Vec<usize>,
    cap: Vec<i32>,
    out: Vec<Vec<usize>>,
}

impl FlowNet {
    fn new(nodes: usize) -> Self {
        Self {
            head: Vec::new(),
            cap: Vec::new(),
            out: vec![Vec::new(); nodes],
        }
    }

    fn arc(&mut self, from: usize, to: usize, cap: i32) {
        self.out[from].push(self.head.len());
        self.head.push(to);
        self.cap.push(cap);
        self.out[to].push(self.head.len());
        self.head.push(from);
        self.cap.push(0);
    }

    /// Edmonds–Karp with unit augmentations, stopping once `limit` is reached.
    fn max_flow(&mut self, s: usize, t: usize, limit: usize) -> usize {
        let mut flow = 0;
        let mut prev = vec![usize::MAX; self.out.len()];
        while flow < limit {
            prev.iter_mut().for_each(|p| *p = usize::MAX);
            let mut queue = VecDeque::from([s]);
            let mut reached = false;
            while let Some(u) = queue.pop_front() {
                for &a in &self.out[u] {
                    let w = self.head[a];
                    if self.cap[a] > 0 && prev[w] == usize::MAX && w != s {
                        prev[w] = a;
                        if w == t {
                            reached = true;
                            break;
                        }
                        queue.push_back(w);
                    }
                }
                if reached {
                    break;
                }
            }
            if !reached {
                break;
            }
            let mut v = t;
            while v != s {
                let a = prev[v];
                self.cap[a] -= 1;
                self.cap[a ^ 1] += 1;
                v = self.head[a ^ 1];
            }
            flow += 1;
        }
        flow
    }
}

/// Minimum number of vertices separating non-adjacent `s` and `t`.
pub fn local_vertex_connectivity(g: &Graph, s: usize, t: usize, limit: usize) -> usize {
    let n = g.n_nodes();
    let big = n as i32 + 1;
    let mut net = FlowNet::new(2 * n);
    for v in 0..n {
        let c = if v == s || v == t { big } else { 1 };
        net.arc(2 * v, 2 * v + 1, c);
    }
    for &(u, v) in g.edges() {
        net.arc(2 * u + 1, 2 * v, big);
        net.arc(2 * v + 1, 2 * u, big);
    }
    net.max_flow(2 * s + 1, 2 * t, limit)
}

/// Exact vertex connectivity.
///
/// With `v` a minimum-degree vertex, ν(G) is the smallest local connectivity
/// among pairs `(v, w)` for `w` not adjacent to `v`, and pairs of
/// non-adjacent neighbours of `v`. Complete graphs give `n - 1`.
pub fn vertex_connectivity(g: &Graph) -> usize {
    let n = g.n_nodes();
    if n <= 1 {
        return 0;
    }
    if !g.is_connected() {
        return 0;
    }
    let v = (0..n).min_by_key(|&u| g.degree(u)).expect("n > 0");
    let min_deg = g.degree(v);
    if min_deg == n - 1 {
        return n - 1;
    }
    let mut best = min_deg;
    for w in 0..n {
        if w != v && !g.has_edge(v, w) {
            best = best.min(local_vertex_connectivity(g, v, w, best));
        }
    }
    let nb = g.neighbors(v);
    for (i, &x) in nb.iter().enumerate() {
        for &y in &nb[i + 1..] {
            if !g.has_edge(x, y) {
                best = best.min(local_vertex_connectivity(g, x, y, best));
            }
        }
    }
    best
}
