use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Joint,
    Position,
}

/// Undirected weighted graph over sampled nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Roadmap {
    pub space: Space,
    pub nodes: Vec<Vector3<f64>>,
    pub edges: Vec<(usize, usize)>,
    pub costs: Vec<f64>,
    pub start: usize,
    pub goal: usize,
}

impl Roadmap {
    pub fn new(
        space: Space,
        nodes: Vec<Vector3<f64>>,
        edges: Vec<(usize, usize)>,
        costs: Vec<f64>,
        start: usize,
        goal: usize,
    ) -> Result<Self> {
        let n = nodes.len();
        if edges.len() != costs.len() {
            return Err(Error::InvalidParameter(format!(
                "{} edges but {} costs",
                edges.len(),
                costs.len()
            )));
        }
        if start >= n || goal >= n {
            return Err(Error::InvalidParameter("start or goal index out of range".into()));
        }
        for (&(a, b), &c) in edges.iter().zip(&costs) {
            if a >= n || b >= n || a == b {
                return Err(Error::InvalidParameter(format!("bad edge ({a}, {b})")));
            }
            if c.is_nan() || c < 0.0 {
                return Err(Error::InvalidParameter(format!("edge ({a}, {b}) has cost {c}")));
            }
        }
        Ok(Self {
            space,
            nodes,
            edges,
            costs,
            start,
            goal,
        })
    }

    fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (&(a, b), &c) in self.edges.iter().zip(&self.costs) {
            if c.is_finite() {
                adj[a].push((b, c));
                adj[b].push((a, c));
            }
        }
        adj
    }

    /// Sum of edge costs along consecutive nodes of `path`.
    pub fn path_cost(&self, path: &[usize]) -> f64 {
        let adj = self.adjacency();
        path.windows(2)
            .map(|w| {
                adj[w[0]]
                    .iter()
                    .filter(|(b, _)| *b == w[1])
                    .map(|(_, c)| *c)
                    .fold(f64::INFINITY, f64::min)
            })
            // an empty f64 sum is -0.0
            .fold(0.0, |a, c| a + c)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let costs: Vec<Option<f64>> = self.costs.iter().map(|c| c.is_finite().then_some(*c)).collect();
        serde_json::json!({
            "space": self.space,
            "start": self.start,
            "goal": self.goal,
            "nodes": self.nodes.iter().map(|v| [v.x, v.y, v.z]).collect::<Vec<_>>(),
            "edges": self.edges,
            "costs": costs,
        })
    }
}

#[derive(PartialEq)]
struct State {
    cost: f64,
    node: usize,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, o: &Self) -> Ordering {
        // min-heap on cost, then on node index for determinism
        o.cost.total_cmp(&self.cost).then_with(|| o.node.cmp(&self.node))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Minimum-cost node sequence from `src` to `dst`; infinite-cost edges are
/// never used.
pub fn dijkstra(roadmap: &Roadmap, src: usize, dst: usize) -> Result<Vec<usize>> {
    let n = roadmap.nodes.len();
    if src >= n || dst >= n {
        return Err(Error::InvalidParameter("node index out of range".into()));
    }
    let adj = roadmap.adjacency();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[src] = 0.0;
    heap.push(State { cost: 0.0, node: src });
    while let Some(State { cost, node }) = heap.pop() {
        if node == dst {
            break;
        }
        if cost > dist[node] {
            continue;
        }
        for &(nb, c) in &adj[node] {
            let nd = cost + c;
            if nd < dist[nb] {
                dist[nb] = nd;
                prev[nb] = node;
                heap.push(State { cost: nd, node: nb });
            }
        }
    }
    if !dist[dst].is_finite() {
        return Err(Error::Unreachable);
    }
    let mut path = vec![dst];
    let mut cur = dst;
    while cur != src {
        cur = prev[cur];
        path.push(cur);
    }
    path.reverse();
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph(n: usize, edges: Vec<(usize, usize)>, costs: Vec<f64>) -> Roadmap {
        Roadmap::new(Space::Joint, vec![Vector3::zeros(); n], edges, costs, 0, n - 1).unwrap()
    }

    /// Cheapest simple path by depth-first enumeration.
    fn enumerate(adj: &[Vec<(usize, f64)>], cur: usize, dst: usize, seen: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if cur == dst {
            *best = best.min(acc);
            return;
        }
        for &(nb, c) in &adj[cur] {
            if !seen[nb] {
                seen[nb] = true;
                enumerate(adj, nb, dst, seen, acc + c, best);
                seen[nb] = false;
            }
        }
    }

    #[test]
    fn single_edge() {
        let g = graph(2, vec![(0, 1)], vec![3.0]);
        assert_eq!(dijkstra(&g, 0, 1).unwrap(), vec![0, 1]);
        assert!(g.path_cost(&[0]).is_sign_positive());
    }

    #[test]
    fn infinite_edges_are_never_traversed() {
        let g = graph(3, vec![(0, 2), (0, 1), (1, 2)], vec![f64::INFINITY, 5.0, 5.0]);
        assert_eq!(dijkstra(&g, 0, 2).unwrap(), vec![0, 1, 2]);
        let g = graph(2, vec![(0, 1)], vec![f64::INFINITY]);
        assert!(matches!(dijkstra(&g, 0, 1), Err(Error::Unreachable)));
    }

    #[test]
    fn uniform_costs_give_fewest_hops() {
        let g = graph(5, vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 3)], vec![1.0; 5]);
        assert_eq!(dijkstra(&g, 0, 4).unwrap(), vec![0, 3, 4]);
    }

    #[test]
    fn matches_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let n = rng.gen_range(2..=8);
            let mut edges = Vec::new();
            let mut costs = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    if rng.gen_bool(0.4) {
                        edges.push((a, b));
                        costs.push(rng.gen_range(0.0..10.0));
                    }
                }
            }
            let g = graph(n, edges, costs);
            let adj = g.adjacency();
            let mut best = f64::INFINITY;
            let mut seen = vec![false; n];
            seen[0] = true;
            enumerate(&adj, 0, n - 1, &mut seen, 0.0, &mut best);
            match dijkstra(&g, 0, n - 1) {
                Ok(p) => assert!((g.path_cost(&p) - best).abs() < 1e-9),
                Err(Error::Unreachable) => assert!(best.is_infinite()),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn rejects_bad_edges() {
        let nodes = vec![Vector3::zeros(); 2];
        assert!(Roadmap::new(Space::Joint, nodes.clone(), vec![(0, 0)], vec![1.0], 0, 1).is_err());
        assert!(Roadmap::new(Space::Joint, nodes.clone(), vec![(0, 1)], vec![-1.0], 0, 1).is_err());
        assert!(Roadmap::new(Space::Joint, nodes, vec![(0, 1)], vec![], 0, 1).is_err());
    }
}
