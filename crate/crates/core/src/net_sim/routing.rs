use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::topology::{AdjacencyMatrix, NetworkTopology};
use super::SimConfig;

/// Next hop of a node in the forwarding tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Uplink {
    Central,
    Node(usize),
    Unreachable,
}

/// Per-node measurement and forwarding counters in unit operations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub window: usize,
    pub neighbor_counts: Vec<usize>,
    /// `None` for nodes with no route to the central unit.
    pub forward_counts: Vec<Option<usize>>,
    pub per_node_cost: Vec<Option<u64>>,
    pub total_cost: u64,
    pub anchor_based: bool,
    pub uplinks: Vec<Uplink>,
    pub hops: Vec<Option<usize>>,
    pub unreachable: Vec<usize>,
}

/// Builds the minimum-hop forwarding tree toward the central unit and counts
/// per-node work.
///
/// Nodes within radio range of the central unit send to it directly. Every
/// other node picks, among neighbors one hop closer, the one with the lowest
/// index. `h_n` is the number of packets node `n` sends upstream: its own plus
/// one per descendant.
pub fn route_and_count(topo: &NetworkTopology, adjacency: &AdjacencyMatrix, cfg: &SimConfig) -> ComplexityReport {
    let n = topo.node_count();
    let t = cfg.window as u64;
    let mut hops: Vec<Option<usize>> = vec![None; n];
    let mut uplinks = vec![Uplink::Unreachable; n];
    let mut queue = VecDeque::new();
    for i in 0..n {
        if topo.distance_to_central(i) <= cfg.radio_range {
            hops[i] = Some(1);
            uplinks[i] = Uplink::Central;
            queue.push_back(i);
        }
    }
    while let Some(u) = queue.pop_front() {
        let next = hops[u].map(|h| h + 1);
        for v in adjacency.neighbors(u) {
            if hops[v].is_none() {
                hops[v] = next;
                queue.push_back(v);
            }
        }
    }
    for v in 0..n {
        if let Some(h) = hops[v] {
            if h > 1 {
                let parent = adjacency
                    .neighbors(v)
                    .find(|&u| hops[u] == Some(h - 1))
                    .expect("bfs level implies a parent one hop closer");
                uplinks[v] = Uplink::Node(parent);
            }
        }
    }

    // Accumulate subtree sizes from the deepest level up.
    let mut order: Vec<usize> = (0..n).filter(|&i| hops[i].is_some()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(hops[i]));
    let mut packets = vec![0usize; n];
    for &v in &order {
        packets[v] += 1;
        if let Uplink::Node(p) = uplinks[v] {
            packets[p] += packets[v];
        }
    }

    let neighbor_counts: Vec<usize> = (0..n).map(|i| adjacency.degree(i)).collect();
    let anchor_based = topo.anchor_count > 0;
    let mut forward_counts = vec![None; n];
    let mut per_node_cost = vec![None; n];
    let mut unreachable = Vec::new();
    let mut total_cost = 0u64;
    for i in 0..n {
        if hops[i].is_none() {
            unreachable.push(i);
            continue;
        }
        let h = packets[i] as u64;
        let cost = if topo.is_anchor(i) { t + h } else { t * neighbor_counts[i] as u64 + h };
        forward_counts[i] = Some(packets[i]);
        per_node_cost[i] = Some(cost);
        total_cost += cost;
    }
    ComplexityReport {
        window: cfg.window,
        neighbor_counts,
        forward_counts,
        per_node_cost,
        total_cost,
        anchor_based,
        uplinks,
        hops,
        unreachable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net_sim::{compute_adjacency, generate_topology};

    fn cfg(window: usize, range: f64) -> SimConfig {
        SimConfig { window, radio_range: range, ..SimConfig::default() }
    }

    #[test]
    fn star_needs_no_relaying() {
        let positions = vec![[45.0, 50.0], [55.0, 50.0], [50.0, 45.0], [50.0, 56.0]];
        let topo = NetworkTopology::from_parts(100.0, positions, vec![false; 4]).unwrap();
        let c = cfg(5, 20.0);
        let a = compute_adjacency(&topo, c.radio_range);
        let r = route_and_count(&topo, &a, &c);
        assert!(r.forward_counts.iter().all(|h| *h == Some(1)));
        assert!(r.unreachable.is_empty());
    }

    #[test]
    fn chain_relays_through_the_near_node() {
        // central (50,50) -- B (65,50) -- C (80,50); C is 30 m from the center.
        let topo = NetworkTopology::from_parts(100.0, vec![[65.0, 50.0], [80.0, 50.0]], vec![false; 2]).unwrap();
        let c = cfg(3, 20.0);
        let a = compute_adjacency(&topo, c.radio_range);
        let r = route_and_count(&topo, &a, &c);
        assert_eq!(r.forward_counts, vec![Some(2), Some(1)]);
        assert_eq!(r.uplinks, vec![Uplink::Central, Uplink::Node(0)]);
        assert_eq!(r.total_cost, (3 + 2) + (3 + 1));
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        // Nodes 0 and 1 both reach the center and node 2.
        let positions = vec![[60.0, 55.0], [60.0, 45.0], [75.0, 50.0]];
        let topo = NetworkTopology::from_parts(100.0, positions, vec![false; 3]).unwrap();
        let c = cfg(1, 16.0);
        let a = compute_adjacency(&topo, c.radio_range);
        let r = route_and_count(&topo, &a, &c);
        assert_eq!(r.uplinks[2], Uplink::Node(0));
    }

    #[test]
    fn unreachable_nodes_are_reported() {
        let topo = NetworkTopology::from_parts(100.0, vec![[50.0, 55.0], [5.0, 5.0]], vec![false, false]).unwrap();
        let c = cfg(2, 10.0);
        let a = compute_adjacency(&topo, c.radio_range);
        let r = route_and_count(&topo, &a, &c);
        assert_eq!(r.unreachable, vec![1]);
        assert_eq!(r.forward_counts[1], None);
        // Node 0 has no neighbors, so only its own packet counts.
        assert_eq!(r.total_cost, 1);
    }

    #[test]
    fn packets_on_tree_edges_sum_to_forward_counts() {
        for seed in 0..25 {
            let c = SimConfig { node_count: 40, seed, radio_range: 25.0, ..SimConfig::default() };
            let topo = generate_topology(&c).unwrap();
            let a = compute_adjacency(&topo, c.radio_range);
            let r = route_and_count(&topo, &a, &c);
            // Walk each packet to the root, counting uplink traversals per node.
            let mut traversals = vec![0usize; topo.node_count()];
            for src in 0..topo.node_count() {
                if r.hops[src].is_none() {
                    continue;
                }
                let mut at = src;
                loop {
                    traversals[at] += 1;
                    match r.uplinks[at] {
                        Uplink::Node(p) => at = p,
                        Uplink::Central => break,
                        Uplink::Unreachable => unreachable!(),
                    }
                }
            }
            for i in 0..topo.node_count() {
                assert_eq!(r.forward_counts[i].unwrap_or(0), traversals[i]);
            }
            let total_h: usize = r.forward_counts.iter().flatten().sum();
            assert_eq!(traversals.iter().sum::<usize>(), total_h);
        }
    }
}
