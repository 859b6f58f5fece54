use rand::Rng;
use serde::{Deserialize, Serialize};

use super::channel::sample_rssi;
use super::topology::{AdjacencyMatrix, NetworkTopology};
use super::SimConfig;
use crate::error::{Error, Result};

/// `N x (N + 2) x T` feature array. Column `k < N` of row `i` holds the RSSI
/// node `i` measured from node `k`; the last two columns hold anchor
/// coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTensor {
    nodes: usize,
    window: usize,
    values: Vec<f64>,
    missing: Vec<bool>,
}

impl FeatureTensor {
    pub fn zeros(nodes: usize, window: usize) -> Self {
        let len = nodes * (nodes + 2) * window;
        Self { nodes, window, values: vec![0.0; len], missing: vec![false; len] }
    }

    pub fn from_parts(nodes: usize, window: usize, values: Vec<f64>, missing: Vec<bool>) -> Result<Self> {
        let len = nodes * (nodes + 2) * window;
        if values.len() != len || missing.len() != len {
            return Err(Error::ShapeMismatch {
                op: "feature tensor",
                left: vec![nodes, nodes + 2, window],
                right: vec![values.len(), missing.len()],
            });
        }
        Ok(Self { nodes, window, values, missing })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn width(&self) -> usize {
        self.nodes + 2
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.nodes, self.width(), self.window]
    }

    #[inline]
    pub fn index(&self, i: usize, k: usize, t: usize) -> usize {
        (i * self.width() + k) * self.window + t
    }

    pub fn get(&self, i: usize, k: usize, t: usize) -> f64 {
        self.values[self.index(i, k, t)]
    }

    pub fn set(&mut self, i: usize, k: usize, t: usize, v: f64) {
        let idx = self.index(i, k, t);
        self.values[idx] = v;
    }

    pub fn is_missing(&self, i: usize, k: usize, t: usize) -> bool {
        self.missing[self.index(i, k, t)]
    }

    pub fn set_missing(&mut self, i: usize, k: usize, t: usize, missing: bool) {
        let idx = self.index(i, k, t);
        self.missing[idx] = missing;
    }

    /// The `(i, k)` series over time.
    pub fn series(&self, i: usize, k: usize) -> &[f64] {
        let start = self.index(i, k, 0);
        &self.values[start..start + self.window]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn missing(&self) -> &[bool] {
        &self.missing
    }

    pub fn missing_mut(&mut self) -> &mut [bool] {
        &mut self.missing
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }
}

/// Runs the acquisition window: every regular node records one RSSI per
/// neighbor per timestamp, anchors report their coordinates. Each RSSI
/// measurement is dropped (zero, flagged missing) with `cfg.miss_probability`.
///
/// Per timestamp and node, the stream draws the two channel normals and
/// then the miss coin for each neighbor in ascending index order.
pub fn acquire_features<R: Rng + ?Sized>(
    topo: &NetworkTopology,
    adjacency: &AdjacencyMatrix,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<FeatureTensor> {
    let n = topo.node_count();
    if adjacency.node_count() != n {
        return Err(Error::InvalidConfig(format!("adjacency has {} nodes, topology {}", adjacency.node_count(), n)));
    }
    let neighbors = adjacency.neighbor_lists();
    let mut features = FeatureTensor::zeros(n, cfg.window);
    for t in 0..cfg.window {
        for i in 0..n {
            if topo.is_anchor(i) {
                let [x, y] = topo.positions[i];
                features.set(i, n, t, x);
                features.set(i, n + 1, t, y);
                continue;
            }
            for &j in &neighbors[i] {
                let rssi = sample_rssi(cfg, topo.distance(i, j), rng)?;
                if rng.gen::<f64>() < cfg.miss_probability {
                    features.set_missing(i, j, t, true);
                } else {
                    features.set(i, j, t, rssi);
                }
            }
        }
    }
    Ok(features)
}
