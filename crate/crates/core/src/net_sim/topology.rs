use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub field_side: f64,
    pub positions: Vec<[f64; 2]>,
    pub anchor_flags: Vec<bool>,
    pub anchor_count: usize,
    pub regular_count: usize,
    pub central_unit: [f64; 2],
}

impl NetworkTopology {
    /// Builds a topology from explicit positions; the central unit sits at the
    /// field center.
    pub fn from_parts(field_side: f64, positions: Vec<[f64; 2]>, anchor_flags: Vec<bool>) -> Result<Self> {
        if positions.len() != anchor_flags.len() {
            return Err(Error::InvalidConfig(format!(
                "{} positions but {} anchor flags",
                positions.len(),
                anchor_flags.len()
            )));
        }
        let anchor_count = anchor_flags.iter().filter(|&&a| a).count();
        Ok(Self {
            field_side,
            regular_count: positions.len() - anchor_count,
            positions,
            anchor_flags,
            anchor_count,
            central_unit: [field_side / 2.0, field_side / 2.0],
        })
    }

    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        euclid(self.positions[i], self.positions[j])
    }

    pub fn distance_to_central(&self, i: usize) -> f64 {
        euclid(self.positions[i], self.central_unit)
    }

    pub fn is_anchor(&self, i: usize) -> bool {
        self.anchor_flags[i]
    }

    pub fn regular_mask(&self) -> Vec<bool> {
        self.anchor_flags.iter().map(|a| !a).collect()
    }
}

pub(crate) fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Uniform positions on the field and a uniformly chosen anchor subset of
/// size `round(alpha * N)`, seeded from `cfg.seed`.
pub fn generate_topology(cfg: &SimConfig) -> Result<NetworkTopology> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.node_count;
    let side = cfg.field_side;
    let positions: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen_range(0.0..=side), rng.gen_range(0.0..=side)]).collect();
    let mut anchor_flags = vec![false; n];
    for i in index::sample(&mut rng, n, cfg.anchor_count()) {
        anchor_flags[i] = true;
    }
    NetworkTopology::from_parts(side, positions, anchor_flags)
}

/// Symmetric 0/1 connectivity with an empty diagonal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    n: usize,
    bits: Vec<bool>,
}

impl AdjacencyMatrix {
    pub fn empty(n: usize) -> Self {
        Self { n, bits: vec![false; n * n] }
    }

    /// From an undirected edge list; self loops are ignored.
    pub fn from_edges(n: usize, edges: &[[usize; 2]]) -> Result<Self> {
        let mut a = Self::empty(n);
        for &[i, j] in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidConfig(format!("edge ({i}, {j}) outside {n} nodes")));
            }
            if i != j {
                a.set(i, j, true);
            }
        }
        Ok(a)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, connected: bool) {
        if i != j {
            self.bits[i * self.n + j] = connected;
            self.bits[j * self.n + i] = connected;
        }
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.get(i, j))
    }

    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        (0..self.n).map(|i| self.neighbors(i).collect()).collect()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).count()
    }

    /// Undirected edges `[i, j]` with `i < j`, lexicographic.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.get(i, j) {
                    out.push([i, j]);
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| !self.get(i, i) && (0..self.n).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

/// `A_ij = 1` iff `i != j` and `d_ij <= d_th`.
pub fn compute_adjacency(topo: &NetworkTopology, radio_range: f64) -> AdjacencyMatrix {
    let n = topo.node_count();
    let mut a = AdjacencyMatrix::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            if topo.distance(i, j) <= radio_range {
                a.set(i, j, true);
            }
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, alpha: f64, seed: u64) -> SimConfig {
        SimConfig { node_count: n, anchor_fraction: alpha, seed, ..SimConfig::default() }
    }

    #[test]
    fn hundred_nodes_twenty_percent_anchors() {
        let topo = generate_topology(&cfg(100, 0.2, 7)).unwrap();
        assert_eq!(topo.positions.len(), 100);
        assert!(topo.positions.iter().all(|p| (0.0..=100.0).contains(&p[0]) && (0.0..=100.0).contains(&p[1])));
        assert_eq!(topo.anchor_count, 20);
        assert_eq!(topo.regular_count, 80);
        assert_eq!(topo.anchor_flags.iter().filter(|&&a| a).count(), 20);
        assert_eq!(topo.central_unit, [50.0, 50.0]);
    }

    #[test]
    fn anchor_free_has_no_anchors() {
        let topo = generate_topology(&cfg(30, 0.0, 1)).unwrap();
        assert!(topo.anchor_flags.iter().all(|a| !a));
        assert_eq!(topo.regular_count, 30);
    }

    #[test]
    fn same_seed_same_topology() {
        let c = cfg(50, 0.3, 99);
        assert_eq!(generate_topology(&c).unwrap(), generate_topology(&c).unwrap());
        assert_ne!(generate_topology(&c).unwrap(), generate_topology(&cfg(50, 0.3, 100)).unwrap());
    }

    #[test]
    fn rejects_degenerate_configs() {
        assert!(generate_topology(&cfg(1, 0.0, 0)).is_err());
        assert!(generate_topology(&cfg(10, 0.96, 0)).is_err());
        assert!(generate_topology(&cfg(10, 1.0, 0)).is_err());
    }

    #[test]
    fn threshold_boundary_is_inclusive() {
        let topo = NetworkTopology::from_parts(100.0, vec![[10.0, 10.0], [30.0, 10.0], [10.0, 30.01]], vec![false; 3])
            .unwrap();
        let a = compute_adjacency(&topo, 20.0);
        assert!(a.get(0, 1));
        assert!(!a.get(0, 2));
        assert_eq!(a.edges(), vec![[0, 1]]);
    }

    #[test]
    fn adjacency_is_symmetric_with_zero_diagonal() {
        for seed in 0..20 {
            let topo = generate_topology(&cfg(40, 0.2, seed)).unwrap();
            let a = compute_adjacency(&topo, 25.0);
            assert!(a.is_symmetric());
        }
    }
}
